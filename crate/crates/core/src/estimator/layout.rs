use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::panel::DesignManifest;

/// Position of every free parameter block in the flat vector.
///
/// Order: `β` for each non-base outcome (one per design column), Heckman
/// initial-equation coefficients for each non-base outcome, loadings `ρ`,
/// then the lower triangle of the Cholesky factor row by row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterLayout {
    pub n_cols: usize,
    pub n_initial_cols: usize,
    pub free_outcomes: usize,
    pub heckman: bool,
    pub random_effects: bool,
}

impl ParameterLayout {
    pub fn new(manifest: &DesignManifest, random_effects: bool, heckman: bool) -> Self {
        Self {
            n_cols: manifest.n_cols(),
            n_initial_cols: if heckman { manifest.initial_columns.len() } else { 0 },
            free_outcomes: manifest.n_outcomes() - 1,
            heckman,
            random_effects,
        }
    }

    pub fn dim(&self) -> usize {
        if self.random_effects {
            self.free_outcomes
        } else {
            0
        }
    }

    pub fn beta_offset(&self, m: usize) -> usize {
        m * self.n_cols
    }

    pub fn theta_offset(&self, m: usize) -> usize {
        self.free_outcomes * self.n_cols + m * self.n_initial_cols
    }

    pub fn rho_offset(&self) -> usize {
        self.free_outcomes * (self.n_cols + self.n_initial_cols)
    }

    pub fn n_rho(&self) -> usize {
        if self.heckman {
            self.free_outcomes
        } else {
            0
        }
    }

    pub fn chol_offset(&self) -> usize {
        self.rho_offset() + self.n_rho()
    }

    pub fn n_chol(&self) -> usize {
        let d = self.dim();
        d * (d + 1) / 2
    }

    /// Flat index of Cholesky entry `(a, b)`, `a ≥ b`.
    pub fn chol_index(&self, a: usize, b: usize) -> usize {
        debug_assert!(a >= b);
        self.chol_offset() + a * (a + 1) / 2 + b
    }

    pub fn len(&self) -> usize {
        self.chol_offset() + self.n_chol()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn names(&self, manifest: &DesignManifest) -> Vec<String> {
        let free: Vec<&str> = manifest.free_outcomes().into_iter().map(|j| manifest.outcomes[j].as_str()).collect();
        let mut out = Vec::with_capacity(self.len());
        for o in &free {
            for c in &manifest.columns {
                out.push(format!("{o}:{}", c.name));
            }
        }
        if self.heckman {
            for o in &free {
                for c in &manifest.initial_columns {
                    out.push(format!("initial:{o}:{}", c.name));
                }
            }
            for o in &free {
                out.push(format!("rho:{o}"));
            }
        }
        for a in 0..self.dim() {
            for b in 0..=a {
                out.push(format!("chol:{},{}", free[a], free[b]));
            }
        }
        out
    }

    /// Lower-triangular Cholesky factor from the flat vector.
    pub fn cholesky(&self, theta: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        let mut l = DMatrix::zeros(d, d);
        for a in 0..d {
            for b in 0..=a {
                l[(a, b)] = theta[self.chol_index(a, b)];
            }
        }
        l
    }

    pub fn sigma(&self, theta: &[f64]) -> DMatrix<f64> {
        let l = self.cholesky(theta);
        &l * l.transpose()
    }

    /// Writes the Cholesky factor of a positive semi-definite `sigma` (with
    /// zero columns where the pivot vanishes).
    pub fn set_sigma(&self, theta: &mut [f64], sigma: &DMatrix<f64>) {
        let d = self.dim();
        let mut l = DMatrix::<f64>::zeros(d, d);
        for a in 0..d {
            for b in 0..=a {
                let s: f64 = (0..b).map(|k| l[(a, k)] * l[(b, k)]).sum();
                if a == b {
                    l[(a, a)] = (sigma[(a, a)] - s).max(0.0).sqrt();
                } else if l[(b, b)] > 0.0 {
                    l[(a, b)] = (sigma[(a, b)] - s) / l[(b, b)];
                }
            }
        }
        for a in 0..d {
            for b in 0..=a {
                theta[self.chol_index(a, b)] = l[(a, b)];
            }
        }
    }

    /// Diagonal sign matrix making every Cholesky diagonal entry
    /// non-negative; the likelihood is invariant under it.
    pub fn sign_normalization(&self, theta: &[f64]) -> Vec<f64> {
        let mut d = vec![1.0; self.len()];
        for b in 0..self.dim() {
            if theta[self.chol_index(b, b)] < 0.0 {
                for a in b..self.dim() {
                    d[self.chol_index(a, b)] = -1.0;
                }
            }
        }
        d
    }
}

/// Parameter values with their layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub layout: ParameterLayout,
    pub values: Vec<f64>,
}

impl ParameterVector {
    pub fn zeros(layout: ParameterLayout) -> Self {
        let values = vec![0.0; layout.len()];
        Self { layout, values }
    }

    pub fn beta(&self, m: usize) -> &[f64] {
        let o = self.layout.beta_offset(m);
        &self.values[o..o + self.layout.n_cols]
    }

    pub fn beta_mut(&mut self, m: usize) -> &mut [f64] {
        let o = self.layout.beta_offset(m);
        let n = self.layout.n_cols;
        &mut self.values[o..o + n]
    }

    pub fn theta(&self, m: usize) -> &[f64] {
        let o = self.layout.theta_offset(m);
        &self.values[o..o + self.layout.n_initial_cols]
    }

    pub fn rho(&self) -> &[f64] {
        let o = self.layout.rho_offset();
        &self.values[o..o + self.layout.n_rho()]
    }

    pub fn sigma(&self) -> DMatrix<f64> {
        self.layout.sigma(&self.values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> ParameterLayout {
        ParameterLayout { n_cols: 4, n_initial_cols: 3, free_outcomes: 2, heckman: true, random_effects: true }
    }

    #[test]
    fn offsets_partition_the_vector() {
        let l = layout();
        assert_eq!(l.beta_offset(1), 4);
        assert_eq!(l.theta_offset(0), 8);
        assert_eq!(l.rho_offset(), 14);
        assert_eq!(l.chol_offset(), 16);
        assert_eq!(l.chol_index(1, 0), 17);
        assert_eq!(l.len(), 19);
    }

    #[test]
    fn sigma_round_trip_and_psd() {
        let l = layout();
        let mut theta = vec![0.0; l.len()];
        let s = DMatrix::from_row_slice(2, 2, &[0.8, -0.3, -0.3, 0.5]);
        l.set_sigma(&mut theta, &s);
        let back = l.sigma(&theta);
        assert!((back - &s).abs().max() < 1e-14);
        theta[l.chol_index(0, 0)] *= -1.0;
        theta[l.chol_index(1, 0)] *= -1.0;
        assert!((l.sigma(&theta) - &s).abs().max() < 1e-14);
        let d = l.sign_normalization(&theta);
        assert_eq!(d[l.chol_index(0, 0)], -1.0);
        assert_eq!(d[l.chol_index(1, 0)], -1.0);
        assert_eq!(d[l.chol_index(1, 1)], 1.0);
        let eig = nalgebra::SymmetricEigen::new(l.sigma(&theta));
        assert!(eig.eigenvalues.iter().all(|&e| e >= -1e-14));
    }
}
