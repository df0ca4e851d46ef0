use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::layout::{ParameterLayout, ParameterVector};
use super::likelihood::Model;
use super::optim::{inf_norm, minimize, OptimOptions};
use super::spec::{Heterogeneity, InitialConditions, ModelSpec};
use super::EstimatorError;
use crate::panel::loan::LoanSpec;
use crate::panel::{DesignManifest, DesignMatrix};
use crate::quadrature::IntegrationRule;

/// Coefficients beyond this magnitude are taken as evidence of separation.
const SEPARATION_BOUND: f64 = 30.0;
/// Nodes per dimension for the post-fit quadrature check.
const CHECK_NODES: usize = 15;
const CHECK_TOLERANCE: f64 = 1e-4;
/// Re-centring passes of the adaptive nodes at a trial point.
const ADAPT_ROUNDS: usize = 3;
const MAX_REFITS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub start: Option<Vec<f64>>,
    pub max_iter: usize,
    pub tol: f64,
    /// Evaluate the log-likelihood at the optimum with 15 nodes per dimension.
    pub check_quadrature: bool,
    /// Replaces the tensor Gauss–Hermite rule.
    pub rule: Option<IntegrationRule>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { start: None, max_iter: 1000, tol: 1e-6, check_quadrature: true, rule: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "spec", rename_all = "snake_case")]
pub enum ModelKind {
    Dynamic(ModelSpec),
    Loan(LoanSpec),
}

impl ModelKind {
    pub fn nodes(&self) -> usize {
        match self {
            ModelKind::Dynamic(s) => s.nodes,
            ModelKind::Loan(s) => s.nodes,
        }
    }

    pub fn random_effects(&self) -> bool {
        match self {
            ModelKind::Dynamic(s) => s.heterogeneity == Heterogeneity::RandomEffects,
            ModelKind::Loan(s) => s.random_effect,
        }
    }

    pub fn adaptive(&self) -> bool {
        match self {
            ModelKind::Dynamic(s) => s.adaptive,
            ModelKind::Loan(s) => s.adaptive,
        }
    }

    pub fn heckman(&self) -> bool {
        matches!(self, ModelKind::Dynamic(s) if s.initial_conditions == InitialConditions::Heckman)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureCheck {
    pub nodes: usize,
    pub log_likelihood: f64,
    pub difference: f64,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub gradient_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub nodes: usize,
    pub quadrature_check: Option<QuadratureCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitContribution {
    pub id: u64,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedValue {
    pub name: String,
    pub value: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: ModelKind,
    pub manifest: DesignManifest,
    pub layout: ParameterLayout,
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Row-major cluster-robust covariance.
    pub covariance: Vec<f64>,
    pub log_likelihood: f64,
    pub n_records: usize,
    pub n_units: usize,
    pub n_clusters: usize,
    /// Variances and covariances of the heterogeneity terms.
    pub heterogeneity: Vec<NamedValue>,
    pub diagnostics: Diagnostics,
    pub per_unit: Vec<UnitContribution>,
}

impl FitResult {
    pub fn params(&self) -> ParameterVector {
        ParameterVector { layout: self.layout.clone(), values: self.estimates.clone() }
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let n = self.estimates.len();
        DMatrix::from_row_slice(n, n, &self.covariance)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.index_of(name).map(|i| self.estimates[i])
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.index_of(name).map(|i| self.std_errors[i])
    }

    /// Integration rule used for estimation (tensor Gauss–Hermite).
    pub fn rule(&self) -> IntegrationRule {
        IntegrationRule::tensor_gauss_hermite(self.layout.dim(), self.model.nodes())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit result serializes")
    }
}

fn default_rule(layout: &ParameterLayout, nodes: usize) -> IntegrationRule {
    if layout.dim() == 0 {
        IntegrationRule::degenerate(0)
    } else {
        IntegrationRule::tensor_gauss_hermite(layout.dim(), nodes)
    }
}

fn spec_layout(spec: &ModelSpec, design: &DesignMatrix) -> ParameterLayout {
    ParameterLayout::new(
        &design.manifest,
        spec.heterogeneity == Heterogeneity::RandomEffects,
        spec.initial_conditions == InitialConditions::Heckman,
    )
}

/// Log-likelihood and per-unit contributions at `params` under the spec's
/// quadrature.
pub fn log_likelihood(spec: &ModelSpec, params: &ParameterVector, design: &DesignMatrix) -> Result<(f64, Vec<f64>), EstimatorError> {
    let layout = spec_layout(spec, design);
    if layout != params.layout {
        return Err(EstimatorError::DimensionMismatch("parameter layout does not match spec and design".into()));
    }
    let model = spec_model(spec, design, &layout, &params.values)?;
    model.log_likelihood(&params.values)
}

pub fn gradient(spec: &ModelSpec, params: &ParameterVector, design: &DesignMatrix) -> Result<Vec<f64>, EstimatorError> {
    let layout = spec_layout(spec, design);
    if layout != params.layout {
        return Err(EstimatorError::DimensionMismatch("parameter layout does not match spec and design".into()));
    }
    let model = spec_model(spec, design, &layout, &params.values)?;
    Ok(model.value_and_gradient(&params.values)?.1)
}

/// Model under the spec's quadrature; adaptive nodes are centred at
/// `theta` and then held fixed, so the gradient is that of the quadrature
/// sum with nodes fixed.
fn spec_model<'a>(spec: &ModelSpec, design: &'a DesignMatrix, layout: &ParameterLayout, theta: &[f64]) -> Result<Model<'a>, EstimatorError> {
    let mut model = Model::new(design, layout.clone(), default_rule(layout, spec.nodes))?;
    if spec.adaptive {
        model.adapt(theta, ADAPT_ROUNDS)?;
    }
    Ok(model)
}

/// Hessian of the log-likelihood by central differences of the analytic
/// gradient, symmetrized.
pub fn numerical_hessian(model: &Model, theta: &[f64], free: &[usize]) -> Result<DMatrix<f64>, EstimatorError> {
    let k = free.len();
    let mut h = DMatrix::zeros(k, k);
    let mut x = theta.to_vec();
    for (c, &i) in free.iter().enumerate() {
        let step = 1e-5 * theta[i].abs().max(1.0);
        x[i] = theta[i] + step;
        let (_, gp) = model.value_and_gradient(&x)?;
        x[i] = theta[i] - step;
        let (_, gm) = model.value_and_gradient(&x)?;
        x[i] = theta[i];
        for (r, &j) in free.iter().enumerate() {
            h[(r, c)] = (gp[j] - gm[j]) / (2.0 * step);
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}

struct Optimum {
    theta: Vec<f64>,
    grad_norm: f64,
    iterations: usize,
    evaluations: usize,
}

/// Root mean square of the regressor multiplying each free coefficient
/// (one for loadings and Cholesky entries, and for all-zero columns).
fn coordinate_scales(model: &Model, free: &[usize]) -> Vec<f64> {
    let layout = &model.layout;
    let d = model.design;
    let rms = |values: &[f64], p: usize, c: usize| -> f64 {
        let n = values.len() / p.max(1);
        if n == 0 {
            return 1.0;
        }
        let ss: f64 = (0..n).map(|r| values[r * p + c].powi(2)).sum();
        let v = (ss / n as f64).sqrt();
        if v > 1e-8 { v } else { 1.0 }
    };
    let p = layout.n_cols;
    let q = layout.n_initial_cols;
    let cols: Vec<f64> = (0..p).map(|c| rms(&d.x, p, c)).collect();
    let init: Vec<f64> = (0..q).map(|c| rms(&d.initial_x, q, c)).collect();
    free.iter()
        .map(|&i| {
            if i < layout.free_outcomes * p {
                cols[i % p]
            } else if i < layout.rho_offset() {
                init[(i - layout.free_outcomes * p) % q]
            } else {
                1.0
            }
        })
        .collect()
}

/// Maximizes over the `free` coordinates; the others stay at `x0`.
fn maximize(
    model: &Model,
    names: &[String],
    x0: Vec<f64>,
    free: &[usize],
    opts: &FitOptions,
) -> Result<Optimum, EstimatorError> {
    let full = |sub: &[f64]| {
        let mut x = x0.clone();
        for (&i, &v) in free.iter().zip(sub) {
            x[i] = v;
        }
        x
    };
    let objective = |sub: &[f64]| -> Result<(f64, Vec<f64>), EstimatorError> {
        match model.value_and_gradient(&full(sub)) {
            Ok((ll, g)) => Ok((-ll, free.iter().map(|&i| -g[i]).collect())),
            // trial points of the line search may overflow; treat as infeasible
            Err(EstimatorError::NonFiniteLikelihood { .. }) => Ok((f64::INFINITY, vec![0.0; free.len()])),
            Err(e) => Err(e),
        }
    };
    let guard = |sub: &[f64]| -> Result<(), EstimatorError> {
        if let Some((k, &v)) = sub.iter().enumerate().find(|(_, v)| v.abs() > SEPARATION_BOUND) {
            return Err(EstimatorError::SeparationDetected { parameter: names[free[k]].clone(), value: v });
        }
        Ok(())
    };
    // quasi-Newton runs in coordinates scaled by the regressor magnitudes
    let scale = coordinate_scales(model, free);
    let quasi_newton = |start: &[f64], o: OptimOptions| -> Result<_, EstimatorError> {
        let u0: Vec<f64> = start.iter().zip(&scale).map(|(v, s)| v * s).collect();
        let unscale = |u: &[f64]| -> Vec<f64> { u.iter().zip(&scale).map(|(v, s)| v / s).collect() };
        let scaled = |u: &[f64]| {
            let (f, g) = objective(&unscale(u))?;
            Ok((f, g.iter().zip(&scale).map(|(g, s)| g / s).collect()))
        };
        let out = minimize(scaled, u0, o, |u: &[f64]| guard(&unscale(u)))?;
        let g = out.grad.iter().zip(&scale).map(|(g, s)| g * s).collect::<Vec<f64>>();
        Ok((unscale(&out.x), out.f, g, out.iterations, out.evaluations))
    };
    let sub0: Vec<f64> = free.iter().map(|&i| x0[i]).collect();
    // quasi-Newton to a loose tolerance, then Newton steps to the target
    let loose = OptimOptions { max_iter: opts.max_iter, tol: (opts.tol * 1e3).max(1e-4), memory: 10 };
    let (mut sub, mut f, mut g, mut iterations, mut evaluations) = quasi_newton(&sub0, loose)?;
    while iterations < opts.max_iter {
        if inf_norm(&g) <= opts.tol {
            break;
        }
        let h = numerical_hessian(model, &full(&sub), free)?;
        evaluations += 2 * free.len();
        // objective Hessian is the negative log-likelihood Hessian
        let neg = -h;
        let gv = nalgebra::DVector::from_column_slice(&g);
        let dir = match neg.clone().cholesky() {
            Some(ch) => -ch.solve(&gv),
            None => {
                // not locally convex: a few more quasi-Newton steps
                let tight = OptimOptions { max_iter: 200.min(opts.max_iter - iterations), tol: opts.tol, memory: 10 };
                let (x, fx, gx, it, ev) = quasi_newton(&sub, tight)?;
                iterations += it;
                evaluations += ev;
                sub = x;
                f = fx;
                g = gx;
                continue;
            }
        };
        let mut alpha = 1.0;
        let mut moved = false;
        for _ in 0..30 {
            let trial: Vec<f64> = sub.iter().zip(dir.iter()).map(|(a, d)| a + alpha * d).collect();
            let (ft, gt) = objective(&trial)?;
            evaluations += 1;
            if ft.is_finite() && (ft <= f || inf_norm(&gt) < inf_norm(&g)) && ft <= f + 1e-8 * f.abs().max(1.0) {
                sub = trial;
                f = ft;
                g = gt;
                moved = true;
                break;
            }
            alpha *= 0.5;
        }
        iterations += 1;
        guard(&sub)?;
        if !moved {
            break;
        }
    }
    Ok(Optimum { theta: full(&sub), grad_norm: inf_norm(&g), iterations, evaluations })
}

fn check_rank(design: &DesignMatrix) -> Result<(), EstimatorError> {
    let bad = design.rank_deficient_columns();
    if !bad.is_empty() {
        return Err(EstimatorError::CollinearDesign(bad));
    }
    Ok(())
}

/// Cluster-robust sandwich `H⁻¹ B H⁻¹`, with `B` the sum over clusters of
/// outer products of cluster scores.
fn sandwich(model: &Model, theta: &[f64]) -> Result<DMatrix<f64>, EstimatorError> {
    let n = theta.len();
    let all: Vec<usize> = (0..n).collect();
    let h = numerical_hessian(model, theta, &all)?;
    let neg = -h;
    let inv = match neg.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => neg
            .try_inverse()
            .ok_or_else(|| EstimatorError::Numerical("singular Hessian at the optimum".into()))?,
    };
    let scores = model.unit_scores(theta)?;
    let mut b = DMatrix::zeros(n, n);
    let units = &model.design.units;
    let mut u = 0;
    while u < units.len() {
        let cluster = units[u].cluster;
        let mut s = nalgebra::DVector::<f64>::zeros(n);
        while u < units.len() && units[u].cluster == cluster {
            s += nalgebra::DVector::from_column_slice(&scores[u]);
            u += 1;
        }
        b += &s * s.transpose();
    }
    let v = &inv * b * &inv;
    Ok((&v + v.transpose()) * 0.5)
}

fn heterogeneity_table(layout: &ParameterLayout, manifest: &DesignManifest, theta: &[f64], cov: &DMatrix<f64>) -> Vec<NamedValue> {
    let d = layout.dim();
    if d == 0 {
        return Vec::new();
    }
    let free: Vec<&str> = manifest.free_outcomes().into_iter().map(|j| manifest.outcomes[j].as_str()).collect();
    let entries: Vec<(usize, usize)> = (0..d).flat_map(|a| (0..=a).map(move |b| (a, b))).collect();
    let value = |t: &[f64]| -> Vec<f64> {
        let s = layout.sigma(t);
        entries.iter().map(|&(a, b)| s[(a, b)]).collect()
    };
    let base = value(theta);
    // the map Σ = LL' is quadratic, so central differences are exact
    let idx: Vec<usize> = (0..layout.n_chol()).map(|k| layout.chol_offset() + k).collect();
    let mut jac = DMatrix::zeros(entries.len(), idx.len());
    let mut t = theta.to_vec();
    for (c, &i) in idx.iter().enumerate() {
        t[i] = theta[i] + 1e-4;
        let up = value(&t);
        t[i] = theta[i] - 1e-4;
        let dn = value(&t);
        t[i] = theta[i];
        for r in 0..entries.len() {
            jac[(r, c)] = (up[r] - dn[r]) / 2e-4;
        }
    }
    let sub = DMatrix::from_fn(idx.len(), idx.len(), |r, c| cov[(idx[r], idx[c])]);
    let v = &jac * sub * jac.transpose();
    entries
        .iter()
        .enumerate()
        .map(|(r, &(a, b))| NamedValue {
            name: if a == b { format!("var(eta_{})", free[a]) } else { format!("cov(eta_{},eta_{})", free[b], free[a]) },
            value: base[r],
            se: v[(r, r)].max(0.0).sqrt(),
        })
        .collect()
}

fn fit_design(kind: ModelKind, design: &DesignMatrix, opts: &FitOptions) -> Result<FitResult, EstimatorError> {
    check_rank(design)?;
    let re = kind.random_effects();
    let heckman = kind.heckman();
    let nodes = kind.nodes();
    let manifest = &design.manifest;
    if heckman && manifest.initial_columns.is_empty() {
        return Err(EstimatorError::DimensionMismatch("Heckman fit needs initial-equation columns".into()));
    }
    let layout = ParameterLayout::new(manifest, re, heckman);
    let names = layout.names(manifest);
    let rule = opts.rule.clone().unwrap_or_else(|| default_rule(&layout, nodes));
    let adaptive = re && kind.adaptive() && opts.rule.is_none();
    let mut model = Model::new(design, layout.clone(), rule)?;
    let all: Vec<usize> = (0..layout.len()).collect();

    let mut optimum = if let Some(start) = &opts.start {
        if start.len() != layout.len() {
            return Err(EstimatorError::DimensionMismatch("start vector length".into()));
        }
        if adaptive {
            model.adapt(start, ADAPT_ROUNDS)?;
        }
        maximize(&model, &names, start.clone(), &all, opts)?
    } else if re {
        // Σ = 0 warm start: coefficients (and the first-period equation)
        // from the pooled model, loadings held at zero
        let pooled_layout = ParameterLayout { random_effects: false, ..layout.clone() };
        let pooled = Model::new(design, pooled_layout.clone(), IntegrationRule::degenerate(0))?;
        let pooled_names = pooled_layout.names(manifest);
        let free: Vec<usize> = (0..pooled_layout.rho_offset()).collect();
        let warm = maximize(&pooled, &pooled_names, vec![0.0; pooled_layout.len()], &free, opts)?;
        let mut x0 = vec![0.0; layout.len()];
        x0[..pooled_layout.len()].copy_from_slice(&warm.theta);
        for a in 0..layout.dim() {
            x0[layout.chol_index(a, a)] = 0.5;
        }
        if adaptive {
            model.adapt(&x0, ADAPT_ROUNDS)?;
        }
        let mut o = maximize(&model, &names, x0, &all, opts)?;
        o.iterations += warm.iterations;
        o.evaluations += warm.evaluations;
        o
    } else {
        maximize(&model, &names, vec![0.0; layout.len()], &all, opts)?
    };
    if adaptive {
        // re-centre at the optimum and refit until the nodes settle
        for _ in 0..MAX_REFITS {
            let before = model.log_likelihood(&optimum.theta)?.0;
            model.adapt(&optimum.theta, 1)?;
            let after = model.log_likelihood(&optimum.theta)?.0;
            let (_, g) = model.value_and_gradient(&optimum.theta)?;
            if (after - before).abs() < 1e-9 && inf_norm(&g) <= opts.tol {
                optimum.grad_norm = inf_norm(&g);
                break;
            }
            let o = maximize(&model, &names, optimum.theta.clone(), &all, opts)?;
            optimum = Optimum {
                iterations: optimum.iterations + o.iterations,
                evaluations: optimum.evaluations + o.evaluations,
                ..o
            };
        }
    }
    if optimum.grad_norm > opts.tol {
        return Err(EstimatorError::NotConverged { iterations: optimum.iterations, gradient_norm: optimum.grad_norm });
    }

    let flip = layout.sign_normalization(&optimum.theta);
    let theta: Vec<f64> = optimum.theta.iter().zip(&flip).map(|(a, b)| a * b).collect();
    let (loglik, per_unit) = model.log_likelihood(&theta)?;
    let cov = sandwich(&model, &theta)?;
    let n = theta.len();
    let std_errors = (0..n).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    let heterogeneity = heterogeneity_table(&layout, manifest, &theta, &cov);

    let quadrature_check = if re && opts.check_quadrature && opts.rule.is_none() {
        let mut fine = Model::new(design, layout.clone(), IntegrationRule::tensor_gauss_hermite(layout.dim(), CHECK_NODES))?;
        if adaptive {
            fine.set_adaptation(model.adaptation().map(|a| a.to_vec()))?;
            fine.adapt(&theta, ADAPT_ROUNDS)?;
        }
        let (ll15, _) = fine.log_likelihood(&theta)?;
        let difference = (ll15 - loglik).abs();
        Some(QuadratureCheck { nodes: CHECK_NODES, log_likelihood: ll15, difference, stable: difference <= CHECK_TOLERANCE })
    } else {
        None
    };
    let mut clusters: Vec<u64> = design.units.iter().map(|u| u.cluster).collect();
    clusters.dedup();
    let n_clusters = clusters.len();
    let per_unit = design
        .units
        .iter()
        .zip(per_unit)
        .map(|(u, l)| UnitContribution { id: u.id, log_likelihood: l })
        .collect();
    Ok(FitResult {
        model: kind,
        manifest: manifest.clone(),
        layout,
        names,
        estimates: theta,
        std_errors,
        covariance: cov.transpose().as_slice().to_vec(),
        log_likelihood: loglik,
        n_records: design.n_records(),
        n_units: design.units.len(),
        n_clusters,
        heterogeneity,
        diagnostics: Diagnostics {
            gradient_norm: optimum.grad_norm,
            iterations: optimum.iterations,
            evaluations: optimum.evaluations,
            converged: true,
            nodes,
            quadrature_check,
        },
        per_unit,
    })
}

/// Fits the dynamic model described by `spec` on `design`.
pub fn fit(spec: &ModelSpec, design: &DesignMatrix, opts: &FitOptions) -> Result<FitResult, EstimatorError> {
    spec.validate()?;
    fit_design(ModelKind::Dynamic(spec.clone()), design, opts)
}

/// Fits the household loan equation; units and clusters are households.
pub fn fit_loan_model(spec: &LoanSpec, design: &DesignMatrix, opts: &FitOptions) -> Result<FitResult, EstimatorError> {
    fit_design(ModelKind::Loan(spec.clone()), design, opts)
}
