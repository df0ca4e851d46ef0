//! Post-estimation quantities: predicted probabilities, average marginal
//! effects, probability curves over a covariate grid, policy scenarios and
//! subgroup effects, each with delta-method standard errors.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{FitResult, ParameterLayout, RecordFilter};
use crate::panel::{Block, DesignManifest, DesignMatrix};
use crate::quadrature::IntegrationRule;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EffectsError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("`{0}` does not enter the fitted specification")]
    TargetNotInSpec(String),
    #[error("scenario `{scenario}` does not match the fitted specification: {reason}")]
    ScenarioSpecMismatch { scenario: String, reason: String },
    #[error("invalid scenario `{scenario}`: {reason}")]
    InvalidScenario { scenario: String, reason: String },
    #[error("subgroup `{0}` is empty")]
    EmptySubgroup(String),
    #[error("subgroups `{0}` and `{1}` overlap")]
    OverlappingSubgroups(String, String),
    #[error("unknown state `{0}`")]
    UnknownState(String),
    #[error("output failed: {0}")]
    Io(String),
}

/// How the heterogeneity terms enter predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integration {
    /// Average over the estimated distribution of the effects.
    #[default]
    PopulationAveraged,
    /// Effects set to zero.
    Conditional,
}

/// Evaluates softmax probabilities (integrated over the heterogeneity
/// distribution) and their directional derivatives at arbitrary parameters.
struct Predictor<'a> {
    manifest: &'a DesignManifest,
    layout: &'a ParameterLayout,
    rule: IntegrationRule,
    free: Vec<usize>,
}

impl<'a> Predictor<'a> {
    fn new(fit: &'a FitResult, integration: Integration) -> Self {
        let dim = fit.layout.dim();
        let rule = if dim == 0 || integration == Integration::Conditional {
            IntegrationRule::degenerate(dim)
        } else {
            fit.rule()
        };
        Self { manifest: &fit.manifest, layout: &fit.layout, rule, free: fit.manifest.free_outcomes() }
    }

    fn n_outcomes(&self) -> usize {
        self.manifest.n_outcomes()
    }

    /// Adds `scale ×` probabilities to `p` and, when `dx` is given,
    /// `scale ×` their derivative along `dx` to `dp`.
    fn accumulate(&self, theta: &[f64], x: &[f64], dx: Option<&[f64]>, scale: f64, p: &mut [f64], dp: &mut [f64]) {
        let k = self.n_outcomes();
        let nc = self.layout.n_cols;
        let mut v = vec![0.0; k];
        let mut dv = vec![0.0; k];
        for (m, &j) in self.free.iter().enumerate() {
            let beta = &theta[self.layout.beta_offset(m)..self.layout.beta_offset(m) + nc];
            v[j] = beta.iter().zip(x).map(|(b, xi)| b * xi).sum();
            if let Some(dx) = dx {
                dv[j] = beta.iter().zip(dx).map(|(b, d)| b * d).sum();
            }
        }
        let l = self.layout.cholesky(theta);
        let d = self.layout.dim();
        let mut u = vec![0.0; k];
        for q in 0..self.rule.len() {
            let z = self.rule.point(q);
            for (m, &j) in self.free.iter().enumerate() {
                let eta: f64 = if m < d { (0..=m).map(|b| l[(m, b)] * z[b]).sum() } else { 0.0 };
                u[j] = v[j] + eta;
            }
            u[self.manifest.base_outcome] = 0.0;
            let mx = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for e in u.iter_mut() {
                *e = (*e - mx).exp();
                sum += *e;
            }
            let w = scale * self.rule.weights[q];
            let mean_dv: f64 = u.iter().zip(&dv).map(|(e, dvj)| e / sum * dvj).sum();
            for j in 0..k {
                let pj = u[j] / sum;
                p[j] += w * pj;
                if dx.is_some() {
                    dp[j] += w * pj * (dv[j] - mean_dv);
                }
            }
        }
    }

    fn probabilities(&self, theta: &[f64], x: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.n_outcomes()];
        let mut dp = Vec::new();
        self.accumulate(theta, x, None, 1.0, &mut p, &mut dp);
        p
    }
}

fn check_design(fit: &FitResult, design: &DesignMatrix) -> Result<(), EffectsError> {
    if design.manifest != fit.manifest {
        return Err(EffectsError::DimensionMismatch("design manifest differs from the fitted manifest".into()));
    }
    if design.n_records() == 0 {
        return Err(EffectsError::DimensionMismatch("design has no records".into()));
    }
    Ok(())
}

/// Values of `f` at the estimates with standard errors from `J V Jᵀ`, the
/// Jacobian taken by central differences with relative step `1e-5`.
fn delta_method<F>(fit: &FitResult, f: F) -> (Vec<f64>, Vec<f64>)
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let theta = &fit.estimates;
    let value = f(theta);
    let n = theta.len();
    let mut jac = DMatrix::<f64>::zeros(value.len(), n);
    let mut t = theta.clone();
    for i in 0..n {
        let h = 1e-5 * theta[i].abs().max(1.0);
        t[i] = theta[i] + h;
        let up = f(&t);
        t[i] = theta[i] - h;
        let dn = f(&t);
        t[i] = theta[i];
        for r in 0..value.len() {
            jac[(r, i)] = (up[r] - dn[r]) / (2.0 * h);
        }
    }
    let v = &jac * fit.covariance_matrix() * jac.transpose();
    let se = (0..value.len()).map(|r| v[(r, r)].max(0.0).sqrt()).collect();
    (value, se)
}

/// Probabilities over all outcomes at a design row, for the given origin
/// (which overrides the row's lag dummies and interactions).
pub fn predict_probabilities(fit: &FitResult, point: &[f64], origin: &str) -> Result<Vec<f64>, EffectsError> {
    predict_probabilities_with(fit, point, origin, Integration::default())
}

pub fn predict_probabilities_with(
    fit: &FitResult,
    point: &[f64],
    origin: &str,
    integration: Integration,
) -> Result<Vec<f64>, EffectsError> {
    if point.len() != fit.manifest.n_cols() {
        return Err(EffectsError::DimensionMismatch(format!(
            "point has {} values, the fitted design has {} columns",
            point.len(),
            fit.manifest.n_cols()
        )));
    }
    let o = fit.manifest.origin_index(origin).ok_or_else(|| EffectsError::UnknownState(origin.to_string()))?;
    let mut x = point.to_vec();
    fit.manifest.set_origin(&mut x, o);
    Ok(Predictor::new(fit, integration).probabilities(&fit.estimates, &x))
}

/// Derivative of every design column with respect to `target` for a row:
/// one for the target's own column, the lag indicator for its interactions.
fn target_derivative(manifest: &DesignManifest, target: &str, x: &[f64]) -> Vec<f64> {
    let mut dx = vec![0.0; manifest.n_cols()];
    if let Some(c) = manifest.column(target) {
        dx[c] = 1.0;
        if let Some(k) = manifest.credit_columns.iter().position(|&cc| cc == c) {
            for (o, per) in manifest.interaction_columns.iter().enumerate() {
                if let (Some(ic), Some(lc)) = (per[k], manifest.lag_columns[o]) {
                    dx[ic] = x[lc];
                }
            }
        }
    }
    dx
}

fn check_target(manifest: &DesignManifest, target: &str) -> Result<(), EffectsError> {
    match manifest.column(target) {
        Some(c) if matches!(manifest.columns[c].block, Block::Credit | Block::Current | Block::Constant) => Ok(()),
        _ => Err(EffectsError::TargetNotInSpec(target.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectCell {
    /// `None` for the sector-share effect averaged over all origins.
    pub origin: Option<String>,
    pub destination: String,
    pub value: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectReport {
    pub target: String,
    pub integration: Integration,
    pub n_records: usize,
    /// Sample frequency of each origin state.
    pub origin_shares: Vec<(String, f64)>,
    pub cells: Vec<EffectCell>,
}

impl EffectReport {
    pub fn get(&self, origin: Option<&str>, destination: &str) -> Option<&EffectCell> {
        self.cells.iter().find(|c| c.origin.as_deref() == origin && c.destination == destination)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), EffectsError> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| EffectsError::Io(e.to_string());
        w.write_record(["target", "origin", "destination", "effect", "se"]).map_err(io)?;
        for c in &self.cells {
            w.write_record([
                self.target.as_str(),
                c.origin.as_deref().unwrap_or("all"),
                c.destination.as_str(),
                &c.value.to_string(),
                &c.se.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| EffectsError::Io(e.to_string()))
    }
}

fn origin_shares(design: &DesignMatrix, records: &[usize]) -> Vec<f64> {
    let mut s = vec![0.0; design.manifest.origins.len()];
    for &r in records {
        s[design.records[r].origin] += 1.0;
    }
    let n = records.len().max(1) as f64;
    s.iter_mut().for_each(|v| *v /= n);
    s
}

/// Mean derivative of each outcome probability over `records`, per origin
/// (origin-major, `None` when an origin is absent) and overall.
fn mean_effects(pred: &Predictor, theta: &[f64], design: &DesignMatrix, records: &[usize], target: &str) -> (Vec<Vec<f64>>, Vec<f64>) {
    let k = pred.n_outcomes();
    let n_orig = design.manifest.origins.len();
    let mut per = vec![vec![0.0; k]; n_orig];
    let mut counts = vec![0usize; n_orig];
    let mut all = vec![0.0; k];
    let mut p = vec![0.0; k];
    let mut dp = vec![0.0; k];
    for &r in records {
        let x = design.row(r);
        let dx = target_derivative(pred.manifest, target, x);
        p.iter_mut().for_each(|v| *v = 0.0);
        dp.iter_mut().for_each(|v| *v = 0.0);
        pred.accumulate(theta, x, Some(&dx), 1.0, &mut p, &mut dp);
        let o = design.records[r].origin;
        counts[o] += 1;
        for j in 0..k {
            per[o][j] += dp[j];
            all[j] += dp[j];
        }
    }
    for (o, row) in per.iter_mut().enumerate() {
        let c = counts[o].max(1) as f64;
        row.iter_mut().for_each(|v| *v /= c);
    }
    let n = records.len().max(1) as f64;
    all.iter_mut().for_each(|v| *v /= n);
    (per, all)
}

/// Average marginal effect of a continuous covariate on every outcome
/// probability, per origin state and overall.
pub fn average_marginal_effect(fit: &FitResult, design: &DesignMatrix, target: &str) -> Result<EffectReport, EffectsError> {
    average_marginal_effect_with(fit, design, target, Integration::default())
}

pub fn average_marginal_effect_with(
    fit: &FitResult,
    design: &DesignMatrix,
    target: &str,
    integration: Integration,
) -> Result<EffectReport, EffectsError> {
    check_design(fit, design)?;
    check_target(&fit.manifest, target)?;
    let pred = Predictor::new(fit, integration);
    let records: Vec<usize> = (0..design.n_records()).collect();
    let shares = origin_shares(design, &records);
    let present: Vec<usize> = (0..shares.len()).filter(|&o| shares[o] > 0.0).collect();
    let k = pred.n_outcomes();
    let (values, ses) = delta_method(fit, |theta| {
        let (per, all) = mean_effects(&pred, theta, design, &records, target);
        present.iter().flat_map(|&o| per[o].clone()).chain(all).collect()
    });
    let m = &fit.manifest;
    let mut cells = Vec::with_capacity(values.len());
    for (i, (v, se)) in values.iter().zip(&ses).enumerate() {
        let (slot, j) = (i / k, i % k);
        let origin = present.get(slot).map(|&o| m.origins[o].clone());
        cells.push(EffectCell { origin, destination: m.outcomes[j].clone(), value: *v, se: *se });
    }
    Ok(EffectReport {
        target: target.to_string(),
        integration,
        n_records: records.len(),
        origin_shares: m.origins.iter().cloned().zip(shares).collect(),
        cells,
    })
}

/// Column means over `records`, with lag dummies and interactions left for
/// the per-origin evaluation.
fn means_over(design: &DesignMatrix, records: &[usize]) -> Vec<f64> {
    let p = design.manifest.n_cols();
    let mut m = vec![0.0; p];
    for &r in records {
        for (a, b) in m.iter_mut().zip(design.row(r)) {
            *a += b;
        }
    }
    let n = records.len().max(1) as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

/// Probabilities at a covariate point, averaged over origins with the
/// given shares.
fn mixed_probabilities(pred: &Predictor, theta: &[f64], point: &[f64], shares: &[f64]) -> Vec<f64> {
    let k = pred.n_outcomes();
    let mut p = vec![0.0; k];
    let mut dp = Vec::new();
    let mut x = point.to_vec();
    for (o, &s) in shares.iter().enumerate() {
        if s > 0.0 {
            pred.manifest.set_origin(&mut x, o);
            pred.accumulate(theta, &x, None, s, &mut p, &mut dp);
        }
    }
    p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub value: f64,
    pub probabilities: Vec<f64>,
    pub se: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCurve {
    pub target: String,
    pub outcomes: Vec<String>,
    pub points: Vec<GridPoint>,
}

impl GridCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), EffectsError> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| EffectsError::Io(e.to_string());
        let mut header = vec![self.target.clone()];
        for o in &self.outcomes {
            header.extend([format!("P_{o}"), format!("se_{o}"), format!("lower_{o}"), format!("upper_{o}")]);
        }
        w.write_record(&header).map_err(io)?;
        for p in &self.points {
            let mut rec = vec![p.value.to_string()];
            for j in 0..self.outcomes.len() {
                rec.extend([p.probabilities[j], p.se[j], p.lower[j], p.upper[j]].map(|v| v.to_string()));
            }
            w.write_record(&rec).map_err(io)?;
        }
        w.flush().map_err(|e| EffectsError::Io(e.to_string()))
    }
}

/// Probabilities at the sample means of the design (origins mixed at their
/// sample frequencies).
pub fn probabilities_at_means(fit: &FitResult, design: &DesignMatrix) -> Result<Vec<f64>, EffectsError> {
    check_design(fit, design)?;
    let records: Vec<usize> = (0..design.n_records()).collect();
    let pred = Predictor::new(fit, Integration::default());
    Ok(mixed_probabilities(&pred, &fit.estimates, &means_over(design, &records), &origin_shares(design, &records)))
}

/// Probability curve at covariate means with `target` set to each grid value.
pub fn effects_at_grid(fit: &FitResult, design: &DesignMatrix, target: &str, grid: &[f64]) -> Result<GridCurve, EffectsError> {
    effects_at_grid_with(fit, design, target, grid, Integration::default())
}

pub fn effects_at_grid_with(
    fit: &FitResult,
    design: &DesignMatrix,
    target: &str,
    grid: &[f64],
    integration: Integration,
) -> Result<GridCurve, EffectsError> {
    check_design(fit, design)?;
    check_target(&fit.manifest, target)?;
    let records: Vec<usize> = (0..design.n_records()).collect();
    let means = means_over(design, &records);
    let shares = origin_shares(design, &records);
    let pred = Predictor::new(fit, integration);
    let mut points = Vec::with_capacity(grid.len());
    for &g in grid {
        let mut x = means.clone();
        fit.manifest.set_value(&mut x, target, g).map_err(|_| EffectsError::TargetNotInSpec(target.to_string()))?;
        let (p, se) = delta_method(fit, |theta| mixed_probabilities(&pred, theta, &x, &shares));
        let lower = p.iter().zip(&se).map(|(p, s)| p - 1.959_963_984_540_054 * s).collect();
        let upper = p.iter().zip(&se).map(|(p, s)| p + 1.959_963_984_540_054 * s).collect();
        points.push(GridPoint { value: g, probabilities: p, se, lower, upper });
    }
    Ok(GridCurve { target: target.to_string(), outcomes: fit.manifest.outcomes.clone(), points })
}

/// One edited covariate: a design column, or a categorical variable whose
/// dummies are set for the given level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateEdit {
    pub column: String,
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "rule", content = "filters", rename_all = "snake_case")]
pub enum EvaluationPoint {
    #[default]
    SampleMeans,
    /// Means over records satisfying every filter.
    SubsetMeans(Vec<RecordFilter>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyScenario {
    pub name: String,
    pub edits: Vec<CovariateEdit>,
    #[serde(default)]
    pub evaluation: EvaluationPoint,
}

impl PolicyScenario {
    pub fn validate(&self) -> Result<(), EffectsError> {
        let invalid = |reason: String| EffectsError::InvalidScenario { scenario: self.name.clone(), reason };
        if self.edits.is_empty() {
            return Err(invalid("no covariate edits".into()));
        }
        for e in &self.edits {
            if !e.before.is_finite() || !e.after.is_finite() {
                return Err(invalid(format!("edit of `{}` has non-finite values", e.column)));
            }
            if e.before == e.after {
                return Err(invalid(format!("edit of `{}` leaves the value unchanged", e.column)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyResult {
    pub scenario: String,
    pub outcomes: Vec<String>,
    pub before: Vec<f64>,
    pub after: Vec<f64>,
    pub change: Vec<f64>,
    pub se_before: Vec<f64>,
    pub se_after: Vec<f64>,
    pub se_change: Vec<f64>,
    pub n_records: usize,
}

impl PolicyResult {
    fn index(&self, outcome: &str) -> Option<usize> {
        self.outcomes.iter().position(|o| o == outcome)
    }

    /// `(before, after, change)` for one outcome.
    pub fn outcome(&self, outcome: &str) -> Option<(f64, f64, f64)> {
        self.index(outcome).map(|j| (self.before[j], self.after[j], self.change[j]))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), EffectsError> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| EffectsError::Io(e.to_string());
        w.write_record(["scenario", "outcome", "before", "se_before", "after", "se_after", "change", "se_change"])
            .map_err(io)?;
        for (j, o) in self.outcomes.iter().enumerate() {
            let nums = [self.before[j], self.se_before[j], self.after[j], self.se_after[j], self.change[j], self.se_change[j]];
            let mut rec = vec![self.scenario.clone(), o.clone()];
            rec.extend(nums.map(|v| v.to_string()));
            w.write_record(&rec).map_err(io)?;
        }
        w.flush().map_err(|e| EffectsError::Io(e.to_string()))
    }
}

fn apply_edit(manifest: &DesignManifest, scenario: &str, x: &mut [f64], column: &str, value: f64) -> Result<(), EffectsError> {
    let mismatch = |reason: String| EffectsError::ScenarioSpecMismatch { scenario: scenario.to_string(), reason };
    if manifest.column(column).is_some() {
        return manifest.set_value(x, column, value).map_err(|e| mismatch(e.to_string()));
    }
    let Some((_, levels)) = manifest.levels.categorical.iter().find(|(v, _)| v == column) else {
        return Err(mismatch(format!("`{column}` is not a fitted column or categorical variable")));
    };
    if value.fract() != 0.0 || !levels.contains(&(value as i64)) {
        return Err(mismatch(format!("`{column}` has no level {value}")));
    }
    for l in levels.iter().skip(1) {
        if let Some(c) = manifest.column(&format!("cat:{column}={l}")) {
            x[c] = f64::from(u8::from(*l == value as i64));
        }
    }
    Ok(())
}

/// A filter column names either a design column (e.g. `lag:I`) or a
/// variable of the origin-wave observation.
fn record_value(design: &DesignMatrix, r: usize, name: &str) -> Option<f64> {
    match design.manifest.column(name) {
        Some(c) => Some(design.row(r)[c]),
        None => design.records[r].row.resolve(name),
    }
}

fn select(design: &DesignMatrix, filters: &[RecordFilter]) -> Vec<usize> {
    (0..design.n_records())
        .filter(|&r| filters.iter().all(|f| f.matches(record_value(design, r, &f.column))))
        .collect()
}

/// Probabilities before and after a covariate edit, evaluated at (subset)
/// means of every other covariate with origins at their frequencies.
pub fn policy_simulation(fit: &FitResult, design: &DesignMatrix, scenario: &PolicyScenario) -> Result<PolicyResult, EffectsError> {
    check_design(fit, design)?;
    scenario.validate()?;
    let records = match &scenario.evaluation {
        EvaluationPoint::SampleMeans => (0..design.n_records()).collect(),
        EvaluationPoint::SubsetMeans(filters) => select(design, filters),
    };
    if records.is_empty() {
        return Err(EffectsError::EmptySubgroup(scenario.name.clone()));
    }
    let means = means_over(design, &records);
    let shares = origin_shares(design, &records);
    let mut before = means.clone();
    let mut after = means;
    for e in &scenario.edits {
        apply_edit(&fit.manifest, &scenario.name, &mut before, &e.column, e.before)?;
        apply_edit(&fit.manifest, &scenario.name, &mut after, &e.column, e.after)?;
    }
    let pred = Predictor::new(fit, Integration::default());
    let k = pred.n_outcomes();
    let (v, se) = delta_method(fit, |theta| {
        let b = mixed_probabilities(&pred, theta, &before, &shares);
        let a = mixed_probabilities(&pred, theta, &after, &shares);
        let c: Vec<f64> = a.iter().zip(&b).map(|(a, b)| a - b).collect();
        b.into_iter().chain(a).chain(c).collect()
    });
    Ok(PolicyResult {
        scenario: scenario.name.clone(),
        outcomes: fit.manifest.outcomes.clone(),
        before: v[..k].to_vec(),
        after: v[k..2 * k].to_vec(),
        change: v[2 * k..].to_vec(),
        se_before: se[..k].to_vec(),
        se_after: se[k..2 * k].to_vec(),
        se_change: se[2 * k..].to_vec(),
        n_records: records.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subgroup {
    pub name: String,
    pub filters: Vec<RecordFilter>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupEffect {
    pub name: String,
    pub n_records: usize,
    pub effect: f64,
    pub se: f64,
    /// Observed share of the outcome at t+1 within the subgroup.
    pub mean_share: f64,
}

/// Average marginal effect of `target` on the probability of `outcome`
/// within each subgroup.
pub fn heterogeneous_effects(
    fit: &FitResult,
    design: &DesignMatrix,
    target: &str,
    outcome: &str,
    partition: &[Subgroup],
) -> Result<Vec<SubgroupEffect>, EffectsError> {
    check_design(fit, design)?;
    check_target(&fit.manifest, target)?;
    let j = fit.manifest.outcome_index(outcome).ok_or_else(|| EffectsError::UnknownState(outcome.to_string()))?;
    let members: Vec<Vec<usize>> = partition.iter().map(|g| select(design, &g.filters)).collect();
    for (g, m) in partition.iter().zip(&members) {
        if m.is_empty() {
            return Err(EffectsError::EmptySubgroup(g.name.clone()));
        }
    }
    let mut owner = vec![usize::MAX; design.n_records()];
    for (gi, m) in members.iter().enumerate() {
        for &r in m {
            if owner[r] != usize::MAX {
                return Err(EffectsError::OverlappingSubgroups(partition[owner[r]].name.clone(), partition[gi].name.clone()));
            }
            owner[r] = gi;
        }
    }
    let pred = Predictor::new(fit, Integration::default());
    let (values, ses) = delta_method(fit, |theta| {
        members.iter().map(|m| mean_effects(&pred, theta, design, m, target).1[j]).collect()
    });
    Ok(partition
        .iter()
        .zip(&members)
        .enumerate()
        .map(|(gi, (g, m))| SubgroupEffect {
            name: g.name.clone(),
            n_records: m.len(),
            effect: values[gi],
            se: ses[gi],
            mean_share: m.iter().filter(|&&r| design.records[r].outcome == j).count() as f64 / m.len() as f64,
        })
        .collect())
}
