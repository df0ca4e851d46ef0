//! Credit-market accessibility index.
//!
//! Four community-level components (bank presence, log distance to the
//! nearest Sberbank office, log distance to the nearest other bank, bank
//! offices per 1000 population) are combined either by averaging z-scores or
//! by the first principal component of their correlation matrix. Both results
//! are standardized to mean 0 and standard deviation 1 over the construction
//! sample, with higher values meaning better access.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CmaError {
    #[error("negative distance {0}")]
    NegativeDistance(f64),
    #[error("component `{0}` has zero variance")]
    DegenerateComponent(&'static str),
    #[error("index needs at least two rows, got {0}")]
    TooFewRows(usize),
    #[error("invalid components: {0}")]
    InvalidComponents(String),
    #[error("io: {0}")]
    Io(String),
}

pub const COMPONENT_NAMES: [&str; 4] = ["bank_presence", "dist_sber", "dist_other", "offices_per_1000"];

/// Component values for one community-year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CmaComponents {
    /// 1 = no banks, 2 = only Sberbank, 3 = other banks present.
    pub bank_presence: u8,
    pub dist_sber: f64,
    pub dist_other: f64,
    pub offices_per_1000: f64,
}

impl CmaComponents {
    pub fn new(bank_presence: u8, dist_sber: f64, dist_other: f64, offices_per_1000: f64) -> Result<Self, CmaError> {
        let c = Self { bank_presence, dist_sber, dist_other, offices_per_1000 };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), CmaError> {
        if !(1..=3).contains(&self.bank_presence) {
            return Err(CmaError::InvalidComponents(format!("bank_presence {} not in 1..=3", self.bank_presence)));
        }
        for (name, v) in [("dist_sber", self.dist_sber), ("dist_other", self.dist_other), ("offices_per_1000", self.offices_per_1000)] {
            if !v.is_finite() || v < 0.0 {
                return Err(CmaError::InvalidComponents(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        if self.bank_presence >= 2 && self.dist_sber != 0.0 {
            return Err(CmaError::InvalidComponents("dist_sber must be 0 when a Sberbank office is present".into()));
        }
        if self.bank_presence == 3 && self.dist_other != 0.0 {
            return Err(CmaError::InvalidComponents("dist_other must be 0 when other banks are present".into()));
        }
        Ok(())
    }

    /// Components as entered into the index: distances on the `ln(1+d)` scale.
    fn transformed(&self) -> [f64; 4] {
        [
            self.bank_presence as f64,
            self.dist_sber.ln_1p(),
            self.dist_other.ln_1p(),
            self.offices_per_1000,
        ]
    }
}

pub fn log_distance(d_km: f64) -> Result<f64, CmaError> {
    if d_km < 0.0 || d_km.is_nan() {
        return Err(CmaError::NegativeDistance(d_km));
    }
    Ok(d_km.ln_1p())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IndexMethod {
    #[default]
    Zscore,
    Pca,
}

impl IndexMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            IndexMethod::Zscore => "zscore",
            IndexMethod::Pca => "pca",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IndexOptions {
    /// Constant components contribute nothing instead of raising
    /// [`CmaError::DegenerateComponent`]; the index still needs one varying
    /// component.
    pub allow_constant_components: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmaIndex {
    pub method: IndexMethod,
    /// Standardized index, one per input row.
    pub values: Vec<f64>,
    /// Score before the final standardization.
    pub raw_scores: Vec<f64>,
    /// First-component loadings on the standardized components (PCA only).
    pub loadings: Option<[f64; 4]>,
    /// Share of total variance explained by the first component (PCA only).
    pub explained_share: Option<f64>,
}

struct Standardized {
    z: Vec<[f64; 4]>,
    active: [bool; 4],
}

fn mean_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn standardize_components(rows: &[CmaComponents], opts: IndexOptions) -> Result<Standardized, CmaError> {
    if rows.len() < 2 {
        return Err(CmaError::TooFewRows(rows.len()));
    }
    for r in rows {
        r.validate()?;
    }
    let raw: Vec<[f64; 4]> = rows.iter().map(CmaComponents::transformed).collect();
    let mut z = vec![[0.0; 4]; rows.len()];
    let mut active = [false; 4];
    for k in 0..4 {
        let col = raw.iter().map(|r| r[k]);
        let (mean, sd) = mean_sd(col.clone());
        let constant = raw.iter().all(|r| r[k] == raw[0][k]);
        if constant || sd <= 0.0 {
            if opts.allow_constant_components {
                continue;
            }
            return Err(CmaError::DegenerateComponent(COMPONENT_NAMES[k]));
        }
        active[k] = true;
        for (zi, ri) in z.iter_mut().zip(&raw) {
            zi[k] = (ri[k] - mean) / sd;
        }
    }
    if !active.iter().any(|&a| a) {
        return Err(CmaError::DegenerateComponent("all"));
    }
    Ok(Standardized { z, active })
}

fn restandardize(scores: &[f64]) -> Result<Vec<f64>, CmaError> {
    let (mean, sd) = mean_sd(scores.iter().copied());
    if !(sd > 0.0) {
        return Err(CmaError::DegenerateComponent("index"));
    }
    Ok(scores.iter().map(|s| (s - mean) / sd).collect())
}

/// Average of component z-scores, distance z-scores negated.
pub fn zscore_index(rows: &[CmaComponents], opts: IndexOptions) -> Result<CmaIndex, CmaError> {
    let st = standardize_components(rows, opts)?;
    let direction = [1.0, -1.0, -1.0, 1.0];
    let raw_scores: Vec<f64> = st
        .z
        .iter()
        .map(|z| (0..4).map(|k| direction[k] * z[k]).sum::<f64>() / 4.0)
        .collect();
    Ok(CmaIndex {
        method: IndexMethod::Zscore,
        values: restandardize(&raw_scores)?,
        raw_scores,
        loadings: None,
        explained_share: None,
    })
}

/// First principal component of the component correlation matrix, oriented
/// so that the bank-presence loading is positive.
pub fn pca_index(rows: &[CmaComponents], opts: IndexOptions) -> Result<CmaIndex, CmaError> {
    let st = standardize_components(rows, opts)?;
    let n = rows.len();
    let zmat = DMatrix::from_fn(n, 4, |i, k| st.z[i][k]);
    let corr = (zmat.transpose() * &zmat) / (n as f64 - 1.0);
    let eig = SymmetricEigen::try_new(corr, 1e-12, 10_000)
        .ok_or_else(|| CmaError::InvalidComponents("eigen decomposition did not converge".into()))?;
    let (lead, &lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("four eigenvalues");
    let total: f64 = eig.eigenvalues.iter().sum();
    let mut loadings = [0.0; 4];
    for (k, l) in loadings.iter_mut().enumerate() {
        *l = eig.eigenvectors[(k, lead)];
    }
    // orient on presence, falling back to the largest |loading| when presence is inactive
    let anchor = if st.active[0] && loadings[0].abs() > 1e-12 {
        loadings[0]
    } else {
        let (k, _) = loadings
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .expect("four loadings");
        if k == 1 || k == 2 {
            -loadings[k]
        } else {
            loadings[k]
        }
    };
    if anchor < 0.0 {
        loadings.iter_mut().for_each(|l| *l = -*l);
    }
    let raw_scores: Vec<f64> = st.z.iter().map(|z| (0..4).map(|k| loadings[k] * z[k]).sum()).collect();
    Ok(CmaIndex {
        method: IndexMethod::Pca,
        values: restandardize(&raw_scores)?,
        raw_scores,
        loadings: Some(loadings),
        explained_share: Some(lambda / total),
    })
}

pub fn build_index(rows: &[CmaComponents], method: IndexMethod, opts: IndexOptions) -> Result<CmaIndex, CmaError> {
    match method {
        IndexMethod::Zscore => zscore_index(rows, opts),
        IndexMethod::Pca => pca_index(rows, opts),
    }
}

/// Community-year key for index output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CommunityYear {
    pub community_id: u64,
    pub year: i32,
}

/// Writes `community_id,year,index,method`.
pub fn write_index_csv<W: Write>(
    out: W,
    keys: &[CommunityYear],
    index: &CmaIndex,
) -> Result<(), CmaError> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| CmaError::Io(e.to_string());
    w.write_record(["community_id", "year", "index", "method"]).map_err(io)?;
    for (k, v) in keys.iter().zip(&index.values) {
        w.write_record([k.community_id.to_string(), k.year.to_string(), v.to_string(), index.method.as_str().to_string()])
            .map_err(io)?;
    }
    w.flush().map_err(|e| CmaError::Io(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn comp(p: u8, ds: f64, d_o: f64, off: f64) -> CmaComponents {
        CmaComponents::new(p, ds, d_o, off).unwrap()
    }

    fn sample() -> Vec<CmaComponents> {
        vec![
            comp(1, 20.0, 35.0, 0.10),
            comp(1, 5.0, 12.0, 0.15),
            comp(2, 0.0, 8.0, 0.18),
            comp(2, 0.0, 30.0, 0.22),
            comp(3, 0.0, 0.0, 0.25),
            comp(3, 0.0, 0.0, 0.33),
        ]
    }

    #[test]
    fn log_distance_values() {
        assert_eq!(log_distance(0.0).unwrap(), 0.0);
        assert!((log_distance(std::f64::consts::E - 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((log_distance(20.0).unwrap() - 21f64.ln()).abs() < 1e-15);
        assert!((log_distance(20.0).unwrap() - 3.0445).abs() < 1e-4);
        assert_eq!(log_distance(-1.0), Err(CmaError::NegativeDistance(-1.0)));
    }

    #[test]
    fn component_coding_rules() {
        assert!(CmaComponents::new(2, 3.0, 1.0, 0.1).is_err());
        assert!(CmaComponents::new(3, 0.0, 1.0, 0.1).is_err());
        assert!(CmaComponents::new(4, 0.0, 0.0, 0.1).is_err());
        assert!(CmaComponents::new(1, -1.0, 0.0, 0.1).is_err());
    }

    #[test]
    fn two_rows_differing_in_offices() {
        let rows = [comp(1, 10.0, 10.0, 0.1), comp(1, 10.0, 10.0, 0.3)];
        let opts = IndexOptions { allow_constant_components: true };
        let idx = zscore_index(&rows, opts).unwrap();
        assert!(idx.values[1] > 0.0);
        assert!((idx.values[0] + idx.values[1]).abs() < 1e-12);
        assert_eq!(
            zscore_index(&rows, IndexOptions::default()),
            Err(CmaError::DegenerateComponent("bank_presence"))
        );
    }

    #[test]
    fn best_access_row_is_largest() {
        let mut rows = sample();
        rows.push(comp(3, 0.0, 0.0, 0.40));
        let idx = zscore_index(&rows, IndexOptions::default()).unwrap();
        let last = *idx.values.last().unwrap();
        assert!(idx.values[..rows.len() - 1].iter().all(|&v| v < last));
    }

    #[test]
    fn standardized_moments() {
        for method in [IndexMethod::Zscore, IndexMethod::Pca] {
            let idx = build_index(&sample(), method, IndexOptions::default()).unwrap();
            let (m, s) = mean_sd(idx.values.iter().copied());
            assert!(m.abs() < 1e-12);
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn copies_of_one_variable_explain_everything() {
        // every varying transformed column is affine in one variable
        let rows: Vec<CmaComponents> = (0..5)
            .map(|i| {
                let x = i as f64;
                CmaComponents {
                    bank_presence: 1,
                    dist_sber: (10.0 - x).exp() - 1.0,
                    dist_other: (12.0 - x).exp() - 1.0,
                    offices_per_1000: 0.1 + 0.05 * x,
                }
            })
            .collect();
        let opts = IndexOptions { allow_constant_components: true };
        let idx = pca_index(&rows, opts).unwrap();
        assert!((idx.explained_share.unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn pca_sign_convention() {
        let idx = pca_index(&sample(), IndexOptions::default()).unwrap();
        let l = idx.loadings.unwrap();
        assert!(l[0] > 0.0);
        assert!(l[1] < 0.0 && l[2] < 0.0);
        assert!(l[3] > 0.0);
    }

    #[test]
    fn index_csv_layout() {
        let idx = zscore_index(&sample(), IndexOptions::default()).unwrap();
        let keys: Vec<CommunityYear> = (0..6).map(|i| CommunityYear { community_id: i, year: 2006 }).collect();
        let mut buf = Vec::new();
        write_index_csv(&mut buf, &keys, &idx).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("community_id,year,index,method\n0,2006,"));
        assert_eq!(text.lines().count(), 7);
        assert!(text.lines().nth(1).unwrap().ends_with(",zscore"));
    }
}
