//! Quadrature log-likelihood of the dynamic multinomial logit and its
//! analytic score.
//!
//! The heterogeneity integral is evaluated either on a fixed rule mapped
//! through the Cholesky factor (`η = L z`), or adaptively: each unit's nodes
//! are placed at `μ_i + C_i z` from a fixed per-unit centre and scale, with
//! the normal density ratio folded into the weights.

use rayon::prelude::*;

use nalgebra::DMatrix;

use super::layout::ParameterLayout;
use super::EstimatorError;
use crate::panel::DesignMatrix;
use crate::quadrature::IntegrationRule;

/// Units per parallel work item. Fixed so that the summation order, and so
/// every total, does not depend on the number of threads.
const CHUNK: usize = 32;

/// Centre and lower-triangular scale of one unit's adaptive nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitAdaptation {
    pub mean: Vec<f64>,
    /// Row-major `d × d`.
    pub scale: Vec<f64>,
    log_det: f64,
}

impl UnitAdaptation {
    /// From a posterior mean and covariance; `None` if the covariance is
    /// not positive definite.
    pub fn from_moments(mean: Vec<f64>, cov: &DMatrix<f64>) -> Option<Self> {
        let d = mean.len();
        let ch = cov.clone().cholesky()?;
        let l = ch.l();
        let log_det = (0..d).map(|a| l[(a, a)].ln()).sum::<f64>();
        if !log_det.is_finite() {
            return None;
        }
        let scale = (0..d * d).map(|k| l[(k / d, k % d)]).collect();
        Some(Self { mean, scale, log_det })
    }
}

pub struct Model<'a> {
    pub design: &'a DesignMatrix,
    pub layout: ParameterLayout,
    pub rule: IntegrationRule,
    /// Free-outcome slot of each outcome, `None` for the base.
    slot: Vec<Option<usize>>,
    log_weights: Vec<f64>,
    adaptation: Option<Vec<UnitAdaptation>>,
}

/// Per-call quantities shared by all units.
struct Prepared {
    eta: Vec<f64>,
    /// `L⁻¹` and `ln|det L|` when the adaptive rule is usable.
    inverse: Option<(DMatrix<f64>, f64)>,
}

#[derive(Default)]
struct Scratch {
    eta: Vec<f64>,
    lw: Vec<f64>,
    a: Vec<f64>,
    y: Vec<Option<usize>>,
    probs: Vec<f64>,
    pinit: Vec<f64>,
    s: Vec<f64>,
    lq: Vec<f64>,
    omega: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `ln(1 + Σ exp v_m)` and the probabilities `exp(v_m − lse)`.
#[inline]
fn log_normalizer(v: &[f64]) -> f64 {
    let mx = v.iter().fold(0.0f64, |m, &x| m.max(x));
    let mut z = (-mx).exp();
    for &x in v {
        z += (x - mx).exp();
    }
    mx + z.ln()
}

impl<'a> Model<'a> {
    pub fn new(design: &'a DesignMatrix, layout: ParameterLayout, rule: IntegrationRule) -> Result<Self, EstimatorError> {
        if rule.dim != layout.dim() {
            return Err(EstimatorError::DimensionMismatch(format!(
                "integration rule has dimension {}, model needs {}",
                rule.dim,
                layout.dim()
            )));
        }
        if layout.n_cols != design.manifest.n_cols() {
            return Err(EstimatorError::DimensionMismatch("layout does not match design columns".into()));
        }
        let mut slot = vec![None; design.manifest.n_outcomes()];
        for (m, j) in design.manifest.free_outcomes().into_iter().enumerate() {
            slot[j] = Some(m);
        }
        let log_weights = rule.weights.iter().map(|w| w.ln()).collect();
        Ok(Self { design, layout, rule, slot, log_weights, adaptation: None })
    }

    /// Fixes per-unit adaptive nodes; `None` returns to the plain rule.
    pub fn set_adaptation(&mut self, adaptation: Option<Vec<UnitAdaptation>>) -> Result<(), EstimatorError> {
        if let Some(a) = &adaptation {
            let d = self.layout.dim();
            if a.len() != self.design.units.len() || a.iter().any(|u| u.mean.len() != d) {
                return Err(EstimatorError::DimensionMismatch("adaptation does not match units".into()));
            }
        }
        self.adaptation = adaptation;
        Ok(())
    }

    pub fn adaptation(&self) -> Option<&[UnitAdaptation]> {
        self.adaptation.as_deref()
    }

    /// Posterior mean and covariance of the heterogeneity terms for every
    /// unit under the current integration scheme, as adaptive nodes.
    /// Units whose posterior is degenerate keep a prior-shaped scale.
    pub fn posterior_adaptation(&self, theta: &[f64]) -> Result<Vec<UnitAdaptation>, EstimatorError> {
        self.check_len(theta)?;
        let d = self.layout.dim();
        let prep = self.prepare(theta);
        let prior = {
            let l = self.layout.cholesky(theta);
            &l * l.transpose() + DMatrix::identity(d, d) * 1e-8
        };
        let parts: Vec<Result<Vec<UnitAdaptation>, EstimatorError>> = self
            .chunks()
            .into_par_iter()
            .map(|(s, e)| {
                let mut sc = Scratch::default();
                (s..e)
                    .map(|u| {
                        let ll = self.eval_unit(u, theta, &prep, None, &mut sc)?;
                        let qn = sc.lq.len();
                        let mut mean = vec![0.0; d];
                        let w: Vec<f64> = sc.lq.iter().map(|l| (l - ll).exp()).collect();
                        for q in 0..qn {
                            for a in 0..d {
                                mean[a] += w[q] * sc.eta[q * d + a];
                            }
                        }
                        let mut cov = DMatrix::zeros(d, d);
                        for q in 0..qn {
                            for a in 0..d {
                                for b in 0..d {
                                    cov[(a, b)] += w[q] * (sc.eta[q * d + a] - mean[a]) * (sc.eta[q * d + b] - mean[b]);
                                }
                            }
                        }
                        Ok(UnitAdaptation::from_moments(mean.clone(), &cov)
                            .or_else(|| UnitAdaptation::from_moments(mean, &prior))
                            .unwrap_or_else(|| UnitAdaptation {
                                mean: vec![0.0; d],
                                scale: DMatrix::<f64>::identity(d, d).as_slice().to_vec(),
                                log_det: 0.0,
                            }))
                    })
                    .collect()
            })
            .collect();
        let mut out = Vec::with_capacity(self.design.units.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    /// Re-centres the adaptive nodes `rounds` times at `theta`, starting
    /// from the current scheme.
    pub fn adapt(&mut self, theta: &[f64], rounds: usize) -> Result<(), EstimatorError> {
        if self.layout.dim() == 0 || self.prepare(theta).inverse.is_none() {
            self.adaptation = None;
            return Ok(());
        }
        for _ in 0..rounds {
            let a = self.posterior_adaptation(theta)?;
            self.adaptation = Some(a);
        }
        Ok(())
    }

    fn prepare(&self, theta: &[f64]) -> Prepared {
        let eta = self.eta(theta);
        let d = self.layout.dim();
        let inverse = if d > 0 {
            let l = self.layout.cholesky(theta);
            if (0..d).all(|a| l[(a, a)].abs() > 1e-12) {
                let log_det = (0..d).map(|a| l[(a, a)].abs().ln()).sum::<f64>();
                l.try_inverse().map(|inv| (inv, log_det))
            } else {
                None
            }
        } else {
            None
        };
        Prepared { eta, inverse }
    }

    /// Heterogeneity values `η_q = L z_q`, row-major `Q × M`.
    fn eta(&self, theta: &[f64]) -> Vec<f64> {
        let m_ = self.layout.free_outcomes;
        let d = self.layout.dim();
        let qn = self.rule.len();
        let mut eta = vec![0.0; qn * m_];
        if d == 0 {
            return eta;
        }
        let l = self.layout.cholesky(theta);
        for q in 0..qn {
            let z = self.rule.point(q);
            for a in 0..d {
                eta[q * m_ + a] = (0..=a).map(|b| l[(a, b)] * z[b]).sum();
            }
        }
        eta
    }

    fn eval_unit(
        &self,
        u: usize,
        theta: &[f64],
        prep: &Prepared,
        grad: Option<&mut [f64]>,
        sc: &mut Scratch,
    ) -> Result<f64, EstimatorError> {
        let d = self.design;
        let lay = &self.layout;
        let unit = &d.units[u];
        let m_ = lay.free_outcomes;
        let p = lay.n_cols;
        let qn = self.rule.len();
        let nt = unit.end - unit.start;
        let keep = grad.is_some();
        let dim = lay.dim();
        let adaptive = match (&self.adaptation, &prep.inverse) {
            (Some(a), Some(inv)) => Some((&a[u], inv)),
            _ => None,
        };
        sc.eta.clear();
        sc.lw.clear();
        match adaptive {
            Some((ad, (linv, log_det_l))) => {
                // η_q = μ + C z_q, weight w_q |C| φ(η_q; Σ) / φ(z_q)
                let mut ucur = vec![0.0; dim];
                for q in 0..qn {
                    let z = self.rule.point(q);
                    let start = sc.eta.len();
                    for a in 0..dim {
                        let v = ad.mean[a] + (0..=a).map(|b| ad.scale[a * dim + b] * z[b]).sum::<f64>();
                        sc.eta.push(v);
                    }
                    let e = &sc.eta[start..];
                    for a in 0..dim {
                        ucur[a] = (0..=a).map(|b| linv[(a, b)] * e[b]).sum();
                    }
                    let zz: f64 = z.iter().map(|v| v * v).sum();
                    let uu: f64 = ucur.iter().map(|v| v * v).sum();
                    sc.lw.push(self.log_weights[q] + ad.log_det - log_det_l + 0.5 * (zz - uu));
                }
            }
            None => {
                sc.eta.extend_from_slice(&prep.eta);
                sc.lw.extend_from_slice(&self.log_weights);
            }
        }
        let eta = std::mem::take(&mut sc.eta);

        sc.a.clear();
        sc.y.clear();
        for r in unit.start..unit.end {
            let x = d.row(r);
            for m in 0..m_ {
                let v = dot(x, &theta[lay.beta_offset(m)..lay.beta_offset(m) + p]);
                if !v.is_finite() {
                    return Err(EstimatorError::NonFiniteLikelihood { person: unit.id, index: v });
                }
                sc.a.push(v);
            }
            sc.y.push(self.slot[d.records[r].outcome]);
        }
        let init = if lay.heckman { unit.initial_outcome.map(|y| self.slot[y]) } else { None };
        let rho_off = lay.rho_offset();
        if init.is_some() {
            let w = d.initial_row(u);
            sc.s.clear();
            for m in 0..m_ {
                let o = lay.theta_offset(m);
                let v = dot(w, &theta[o..o + lay.n_initial_cols]);
                if !v.is_finite() {
                    return Err(EstimatorError::NonFiniteLikelihood { person: unit.id, index: v });
                }
                sc.s.push(v);
            }
        }
        sc.lq.resize(qn, 0.0);
        if keep {
            sc.probs.resize(nt * qn * m_, 0.0);
            sc.pinit.resize(qn * m_, 0.0);
        }
        let mut v = vec![0.0; m_];
        for q in 0..qn {
            let e = &eta[q * m_..(q + 1) * m_];
            let mut l = 0.0;
            for k in 0..nt {
                for m in 0..m_ {
                    v[m] = sc.a[k * m_ + m] + e[m];
                }
                let lse = log_normalizer(&v);
                l += sc.y[k].map_or(0.0, |m| v[m]) - lse;
                if keep {
                    let base = (k * qn + q) * m_;
                    for m in 0..m_ {
                        sc.probs[base + m] = (v[m] - lse).exp();
                    }
                }
            }
            if let Some(y1) = init {
                for m in 0..m_ {
                    v[m] = sc.s[m] + theta[rho_off + m] * e[m];
                }
                let lse = log_normalizer(&v);
                l += y1.map_or(0.0, |m| v[m]) - lse;
                if keep {
                    for m in 0..m_ {
                        sc.pinit[q * m_ + m] = (v[m] - lse).exp();
                    }
                }
            }
            sc.lq[q] = l + sc.lw[q];
        }
        let mx = sc.lq.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let ll = mx + sc.lq.iter().map(|l| (l - mx).exp()).sum::<f64>().ln();
        if !ll.is_finite() {
            sc.eta = eta;
            let index = sc.a.iter().fold(0.0f64, |a, &b| if b.abs() > a.abs() { b } else { a });
            return Err(EstimatorError::NonFiniteLikelihood { person: unit.id, index });
        }

        let Some(g) = grad else {
            sc.eta = eta;
            return Ok(ll);
        };
        sc.omega.clear();
        sc.omega.extend(sc.lq.iter().map(|l| (l - ll).exp()));
        let ind = |y: Option<usize>, m: usize| f64::from(u8::from(y == Some(m)));
        for k in 0..nt {
            let x = d.row(unit.start + k);
            for m in 0..m_ {
                let mut rbar = ind(sc.y[k], m);
                for q in 0..qn {
                    rbar -= sc.omega[q] * sc.probs[(k * qn + q) * m_ + m];
                }
                if rbar != 0.0 {
                    let o = lay.beta_offset(m);
                    for (gi, xi) in g[o..o + p].iter_mut().zip(x) {
                        *gi += rbar * xi;
                    }
                }
            }
        }
        if let Some(y1) = init {
            let w = d.initial_row(u);
            for m in 0..m_ {
                let mut rbar = 0.0;
                let mut rho_g = 0.0;
                for q in 0..qn {
                    let r = ind(y1, m) - sc.pinit[q * m_ + m];
                    rbar += sc.omega[q] * r;
                    rho_g += sc.omega[q] * r * eta[q * m_ + m];
                }
                let o = lay.theta_offset(m);
                for (gi, wi) in g[o..o + lay.n_initial_cols].iter_mut().zip(w) {
                    *gi += rbar * wi;
                }
                g[rho_off + m] += rho_g;
            }
        }
        if let Some((_, (linv, _))) = adaptive {
            // nodes are fixed; L enters through the density ratio only
            let mut uq = vec![0.0; dim];
            let mut vq = vec![0.0; dim];
            for q in 0..qn {
                let e = &eta[q * dim..(q + 1) * dim];
                for a in 0..dim {
                    uq[a] = (0..=a).map(|b| linv[(a, b)] * e[b]).sum();
                }
                for a in 0..dim {
                    vq[a] = (a..dim).map(|b| linv[(b, a)] * uq[b]).sum();
                }
                let w = sc.omega[q];
                for a in 0..dim {
                    for b in 0..=a {
                        let mut t = vq[a] * uq[b];
                        if a == b {
                            t -= 1.0 / theta[lay.chol_index(a, a)];
                        }
                        g[lay.chol_index(a, b)] += w * t;
                    }
                }
            }
        } else if dim > 0 {
            for q in 0..qn {
                let z = self.rule.point(q);
                for a in 0..dim {
                    let mut s = 0.0;
                    for k in 0..nt {
                        s += ind(sc.y[k], a) - sc.probs[(k * qn + q) * m_ + a];
                    }
                    if let Some(y1) = init {
                        s += theta[rho_off + a] * (ind(y1, a) - sc.pinit[q * m_ + a]);
                    }
                    let ws = sc.omega[q] * s;
                    for (b, zb) in z.iter().enumerate().take(a + 1) {
                        g[lay.chol_index(a, b)] += ws * zb;
                    }
                }
            }
        }
        sc.eta = eta;
        Ok(ll)
    }

    fn chunks(&self) -> Vec<(usize, usize)> {
        let n = self.design.units.len();
        (0..n.div_ceil(CHUNK)).map(|c| (c * CHUNK, ((c + 1) * CHUNK).min(n))).collect()
    }

    /// Total log-likelihood and per-unit contributions.
    pub fn log_likelihood(&self, theta: &[f64]) -> Result<(f64, Vec<f64>), EstimatorError> {
        self.check_len(theta)?;
        let prep = self.prepare(theta);
        let parts: Vec<Result<Vec<f64>, EstimatorError>> = self
            .chunks()
            .into_par_iter()
            .map(|(s, e)| {
                let mut sc = Scratch::default();
                (s..e).map(|u| self.eval_unit(u, theta, &prep, None, &mut sc)).collect()
            })
            .collect();
        let mut per_unit = Vec::with_capacity(self.design.units.len());
        for p in parts {
            per_unit.extend(p?);
        }
        let total = per_unit.iter().sum();
        Ok((total, per_unit))
    }

    /// Total log-likelihood and its gradient.
    pub fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>), EstimatorError> {
        self.check_len(theta)?;
        let prep = self.prepare(theta);
        let n = theta.len();
        let parts: Vec<Result<(f64, Vec<f64>), EstimatorError>> = self
            .chunks()
            .into_par_iter()
            .map(|(s, e)| {
                let mut sc = Scratch::default();
                let mut g = vec![0.0; n];
                let mut ll = 0.0;
                for u in s..e {
                    ll += self.eval_unit(u, theta, &prep, Some(&mut g), &mut sc)?;
                }
                Ok((ll, g))
            })
            .collect();
        let mut total = 0.0;
        let mut grad = vec![0.0; n];
        for p in parts {
            let (ll, g) = p?;
            total += ll;
            grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        Ok((total, grad))
    }

    /// Score of each unit, in unit order.
    pub fn unit_scores(&self, theta: &[f64]) -> Result<Vec<Vec<f64>>, EstimatorError> {
        self.check_len(theta)?;
        let prep = self.prepare(theta);
        let n = theta.len();
        let parts: Vec<Result<Vec<Vec<f64>>, EstimatorError>> = self
            .chunks()
            .into_par_iter()
            .map(|(s, e)| {
                let mut sc = Scratch::default();
                (s..e)
                    .map(|u| {
                        let mut g = vec![0.0; n];
                        self.eval_unit(u, theta, &prep, Some(&mut g), &mut sc)?;
                        Ok(g)
                    })
                    .collect()
            })
            .collect();
        let mut out = Vec::with_capacity(self.design.units.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    fn check_len(&self, theta: &[f64]) -> Result<(), EstimatorError> {
        if theta.len() != self.layout.len() {
            return Err(EstimatorError::DimensionMismatch(format!(
                "parameter vector has {} entries, layout needs {}",
                theta.len(),
                self.layout.len()
            )));
        }
        Ok(())
    }
}
