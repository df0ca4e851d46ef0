//! Model-free evidence: transition matrices, grouped summary statistics and
//! event studies of switching around the first household loan.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::{ObservationRow, PanelDataset, Sector, StateCoding};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DescriptivesError {
    #[error("no person has an observed first loan")]
    InsufficientEvents,
    #[error("no observations for the regression")]
    NoObservations,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("output failed: {0}")]
    Io(String),
}

/// How transitions are grouped into separate matrices.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionSplit {
    #[default]
    None,
    /// `loan_taken` reported at t+1.
    BorrowerAtNext,
    /// Value of a variable at t.
    Variable(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub label: String,
    pub states: Vec<String>,
    /// `counts[from][to]`.
    pub counts: Vec<Vec<u64>>,
    /// Row-normalized counts; `None` for origins never observed.
    pub probabilities: Vec<Option<Vec<f64>>>,
    pub n: u64,
}

impl TransitionMatrix {
    fn from_counts(label: String, states: Vec<String>, counts: Vec<Vec<u64>>) -> Self {
        let probabilities = counts
            .iter()
            .map(|row| {
                let tot: u64 = row.iter().sum();
                (tot > 0).then(|| row.iter().map(|&c| c as f64 / tot as f64).collect())
            })
            .collect();
        let n = counts.iter().flatten().sum();
        Self { label, states, counts, probabilities, n }
    }

    pub fn probability(&self, from: &str, to: &str) -> Option<f64> {
        let i = self.states.iter().position(|s| s == from)?;
        let j = self.states.iter().position(|s| s == to)?;
        self.probabilities[i].as_ref().map(|r| r[j])
    }

    pub fn write_csv<W: Write>(&self, w: &mut csv::Writer<W>) -> Result<(), DescriptivesError> {
        let io = |e: csv::Error| DescriptivesError::Io(e.to_string());
        for (i, from) in self.states.iter().enumerate() {
            for (j, to) in self.states.iter().enumerate() {
                let p = self.probabilities[i].as_ref().map_or(String::new(), |r| r[j].to_string());
                w.write_record([self.label.as_str(), from, to, &self.counts[i][j].to_string(), &p]).map_err(io)?;
            }
        }
        Ok(())
    }

    /// Plain-text table with row shares in percent and row counts.
    pub fn render(&self) -> String {
        let mut out = format!("{}\n{:>8}", self.label, "t \\ t+1");
        for s in &self.states {
            out.push_str(&format!("{s:>9}"));
        }
        out.push_str(&format!("{:>9}\n", "N"));
        for (i, from) in self.states.iter().enumerate() {
            let Some(row) = &self.probabilities[i] else { continue };
            out.push_str(&format!("{from:>8}"));
            for p in row {
                out.push_str(&format!("{:>9.1}", 100.0 * p));
            }
            out.push_str(&format!("{:>9}\n", self.counts[i].iter().sum::<u64>()));
        }
        out
    }
}

pub fn write_matrices_csv<W: Write>(matrices: &[TransitionMatrix], out: W) -> Result<(), DescriptivesError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["group", "origin", "destination", "count", "probability"])
        .map_err(|e| DescriptivesError::Io(e.to_string()))?;
    for m in matrices {
        m.write_csv(&mut w)?;
    }
    w.flush().map_err(|e| DescriptivesError::Io(e.to_string()))
}

/// One matrix per group label returned by `group` (pairs mapped to `None`
/// are skipped), in label order.
pub fn transition_matrices_by<F>(ds: &PanelDataset, coding: StateCoding, group: F) -> Vec<TransitionMatrix>
where
    F: Fn(&ObservationRow, &ObservationRow) -> Option<String>,
{
    let states: Vec<String> = coding.categories().iter().map(|s| s.to_string()).collect();
    let k = states.len();
    let mut cells: BTreeMap<String, Vec<Vec<u64>>> = BTreeMap::new();
    for (a, b) in ds.transitions() {
        let (Some(from), Some(to)) = (a.category(coding), b.category(coding)) else { continue };
        let Some(label) = group(a, b) else { continue };
        let i = states.iter().position(|s| s == from).expect("category in coding");
        let j = states.iter().position(|s| s == to).expect("category in coding");
        cells.entry(label).or_insert_with(|| vec![vec![0; k]; k])[i][j] += 1;
    }
    cells.into_iter().map(|(label, c)| TransitionMatrix::from_counts(label, states.clone(), c)).collect()
}

pub fn transition_matrix(ds: &PanelDataset, coding: StateCoding, split: &TransitionSplit) -> Vec<TransitionMatrix> {
    match split {
        TransitionSplit::None => transition_matrices_by(ds, coding, |_, _| Some("all".into())),
        TransitionSplit::BorrowerAtNext => transition_matrices_by(ds, coding, |_, b| {
            b.get("loan_taken").map(|l| if l == 1.0 { "borrower".into() } else { "non-borrower".into() })
        }),
        TransitionSplit::Variable(v) => transition_matrices_by(ds, coding, |a, _| a.resolve(v).map(|x| format!("{v}={x}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub n: usize,
    pub mean: f64,
    /// Omitted for binary variables.
    pub sd: Option<f64>,
    /// Welch t-statistic against the reference group.
    pub welch_t: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variable: String,
    pub binary: bool,
    /// One entry per group; `None` when the group has no values.
    pub groups: Vec<Option<GroupStat>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub groups: Vec<String>,
    pub reference: String,
    pub n: Vec<usize>,
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn render(&self) -> String {
        let mut out = format!("{:<18}", "");
        for g in &self.groups {
            out.push_str(&format!("{g:>24}"));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{:<18}", r.variable));
            for s in &r.groups {
                let cell = match s {
                    None => String::new(),
                    Some(s) => {
                        let mut c = format!("{:.3}", s.mean);
                        if let Some(sd) = s.sd {
                            c.push_str(&format!(" ({sd:.3})"));
                        }
                        if let Some(t) = s.welch_t {
                            c.push_str(&format!(" [{t:.2}]"));
                        }
                        c
                    }
                };
                out.push_str(&format!("{cell:>24}"));
            }
            out.push('\n');
        }
        out.push_str(&format!("{:<18}", "N"));
        for n in &self.n {
            out.push_str(&format!("{n:>24}"));
        }
        out.push('\n');
        out
    }
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { f64::NAN };
    (m, var)
}

/// Welch two-sample t-statistic of `a` against `b`.
pub fn welch_t(a: &[f64], b: &[f64]) -> f64 {
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    (ma - mb) / (va / a.len() as f64 + vb / b.len() as f64).sqrt()
}

/// Means and SDs of `variables` by current state, with Welch tests against
/// the first category of the coding.
pub fn summary_stats(ds: &PanelDataset, coding: StateCoding, variables: &[String]) -> SummaryTable {
    let cats = coding.categories();
    let reference = cats[0].to_string();
    let mut by_state: Vec<Vec<&ObservationRow>> = vec![Vec::new(); cats.len()];
    for r in ds.rows() {
        if let Some(c) = r.category(coding) {
            by_state[cats.iter().position(|s| *s == c).expect("category in coding")].push(r);
        }
    }
    let present: Vec<usize> = (0..cats.len()).filter(|&g| !by_state[g].is_empty()).collect();
    let compare = present.len() > 1 && present.contains(&0);
    let rows = variables
        .iter()
        .map(|v| {
            let values: Vec<Vec<f64>> =
                present.iter().map(|&g| by_state[g].iter().filter_map(|r| r.resolve(v)).collect()).collect();
            let binary = values.iter().flatten().all(|x| *x == 0.0 || *x == 1.0);
            let groups = present
                .iter()
                .zip(&values)
                .map(|(&g, vals)| {
                    if vals.is_empty() {
                        return None;
                    }
                    let (mean, var) = mean_var(vals);
                    let welch = (compare && g != 0 && !values[0].is_empty()).then(|| welch_t(vals, &values[0]));
                    Some(GroupStat { n: vals.len(), mean, sd: (!binary).then(|| var.sqrt()), welch_t: welch })
                })
                .collect();
            SummaryRow { variable: v.clone(), binary, groups }
        })
        .collect();
    SummaryTable {
        groups: present.iter().map(|&g| cats[g].to_string()).collect(),
        reference,
        n: present.iter().map(|&g| by_state[g].len()).collect(),
        rows,
    }
}

/// Least-squares fit with cluster-robust covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coefficients: DVector<f64>,
    pub residuals: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub rank: usize,
}

/// Least squares by singular value decomposition (minimum-norm solution
/// when rank deficient); sandwich covariance clustered on `clusters`.
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>, clusters: &[u64]) -> Result<OlsFit, DescriptivesError> {
    let (n, p) = x.shape();
    if n == 0 {
        return Err(DescriptivesError::NoObservations);
    }
    if y.len() != n || clusters.len() != n {
        return Err(DescriptivesError::DimensionMismatch(format!("{n} rows, {} outcomes, {} clusters", y.len(), clusters.len())));
    }
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * 1e-10 * n.max(p) as f64;
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    let beta = svd.solve(y, eps).map_err(|e| DescriptivesError::DimensionMismatch(e.to_string()))?;
    let residuals = y - x * &beta;
    let v_t = svd.v_t.as_ref().expect("computed");
    // (X'X)^+ = V S^-2 V'
    let mut bread = DMatrix::<f64>::zeros(p, p);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > eps {
            let v = v_t.row(k).transpose();
            bread += (&v * v.transpose()) / (s * s);
        }
    }
    let mut scores: HashMap<u64, DVector<f64>> = HashMap::new();
    for i in 0..n {
        let e = scores.entry(clusters[i]).or_insert_with(|| DVector::zeros(p));
        *e += x.row(i).transpose() * residuals[i];
    }
    let mut meat = DMatrix::<f64>::zeros(p, p);
    let mut keys: Vec<&u64> = scores.keys().collect();
    keys.sort();
    for k in keys {
        let s = &scores[k];
        meat += s * s.transpose();
    }
    let covariance = &bread * meat * &bread;
    Ok(OlsFit { coefficients: beta, residuals, covariance, rank })
}

/// One person-year entering an event-study regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventObservation {
    pub cluster: u64,
    pub year: i32,
    /// Years relative to the event.
    pub k: i32,
    pub age: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventPoint {
    pub k: i32,
    pub n: usize,
    /// `None` when no observation falls at this relative year.
    pub coefficient: Option<f64>,
    pub se: Option<f64>,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventStudyResult {
    pub outcome: String,
    pub window: usize,
    /// Mean fitted outcome among observations at k = 0.
    pub base_level: f64,
    pub n_obs: usize,
    pub n_clusters: usize,
    pub rank: usize,
    pub points: Vec<EventPoint>,
}

impl EventStudyResult {
    pub fn point(&self, k: i32) -> Option<&EventPoint> {
        self.points.iter().find(|p| p.k == k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventStudy {
    pub n_events: usize,
    /// Among formal workers at t: share that were informal at t-1.
    pub entry: EventStudyResult,
    /// Among informal workers at t-1: share that are formal at t.
    pub switching: EventStudyResult,
}

impl EventStudy {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DescriptivesError> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| DescriptivesError::Io(e.to_string());
        w.write_record(["panel", "k", "n", "coefficient", "se", "value"]).map_err(io)?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        for r in [&self.entry, &self.switching] {
            for p in &r.points {
                w.write_record([r.outcome.clone(), p.k.to_string(), p.n.to_string(), opt(p.coefficient), opt(p.se), opt(p.value)])
                    .map_err(io)?;
            }
        }
        w.flush().map_err(|e| DescriptivesError::Io(e.to_string()))
    }
}

/// Linear probability regression on relative-year dummies (k = 0 omitted),
/// a quartic in age and calendar-year dummies, with SEs clustered on
/// `cluster`. Observations outside `[-window, window]` are dropped.
pub fn fit_event_study(outcome: &str, obs: &[EventObservation], window: usize) -> Result<EventStudyResult, DescriptivesError> {
    let w = window as i32;
    let obs: Vec<&EventObservation> = obs.iter().filter(|o| o.k.abs() <= w).collect();
    if obs.is_empty() {
        return Err(DescriptivesError::NoObservations);
    }
    let ks: Vec<i32> = (-w..=w).filter(|&k| k != 0 && obs.iter().any(|o| o.k == k)).collect();
    let mut years: Vec<i32> = obs.iter().map(|o| o.year).collect();
    years.sort_unstable();
    years.dedup();
    let p = 1 + ks.len() + 4 + years.len().saturating_sub(1);
    let mut x = DMatrix::<f64>::zeros(obs.len(), p);
    for (i, o) in obs.iter().enumerate() {
        x[(i, 0)] = 1.0;
        if let Some(c) = ks.iter().position(|&k| k == o.k) {
            x[(i, 1 + c)] = 1.0;
        }
        let a = (o.age - 40.0) / 10.0;
        for d in 0..4 {
            x[(i, 1 + ks.len() + d)] = a.powi(d as i32 + 1);
        }
        if let Some(c) = years.iter().skip(1).position(|&y| y == o.year) {
            x[(i, 5 + ks.len() + c)] = 1.0;
        }
    }
    let y = DVector::from_iterator(obs.len(), obs.iter().map(|o| o.y));
    let clusters: Vec<u64> = obs.iter().map(|o| o.cluster).collect();
    let fit = ols(&x, &y, &clusters)?;
    let fitted = &y - &fit.residuals;
    let at0: Vec<usize> = (0..obs.len()).filter(|&i| obs[i].k == 0).collect();
    let base_level = if at0.is_empty() { f64::NAN } else { at0.iter().map(|&i| fitted[i]).sum::<f64>() / at0.len() as f64 };
    let points = (-w..=w)
        .map(|k| {
            let n = obs.iter().filter(|o| o.k == k).count();
            if k == 0 {
                return EventPoint { k, n, coefficient: Some(0.0), se: Some(0.0), value: Some(base_level) };
            }
            match ks.iter().position(|&kk| kk == k) {
                Some(c) => {
                    let b = fit.coefficients[1 + c];
                    let se = fit.covariance[(1 + c, 1 + c)].max(0.0).sqrt();
                    EventPoint { k, n, coefficient: Some(b), se: Some(se), value: Some(b + base_level) }
                }
                None => EventPoint { k, n, coefficient: None, se: None, value: None },
            }
        })
        .collect();
    let mut cl = clusters.clone();
    cl.sort_unstable();
    cl.dedup();
    Ok(EventStudyResult { outcome: outcome.to_string(), window, base_level, n_obs: obs.len(), n_clusters: cl.len(), rank: fit.rank, points })
}

/// Year of the first observed loan of each household.
fn first_loans(ds: &PanelDataset) -> (HashMap<u64, i32>, HashMap<u64, i32>) {
    let mut first_seen: HashMap<u64, i32> = HashMap::new();
    let mut first_loan: HashMap<u64, i32> = HashMap::new();
    for r in ds.rows() {
        let h = r.household();
        let e = first_seen.entry(h).or_insert(r.year);
        *e = (*e).min(r.year);
        if r.get("loan_taken") == Some(1.0) {
            let e = first_loan.entry(h).or_insert(r.year);
            *e = (*e).min(r.year);
        }
    }
    (first_seen, first_loan)
}

/// Event studies of informal-to-formal movement around the first household
/// loan, over consecutive-year pairs of persons in borrowing households.
pub fn event_study(ds: &PanelDataset, window: usize) -> Result<EventStudy, DescriptivesError> {
    let (first_seen, first_loan) = first_loans(ds);
    if first_loan.is_empty() {
        return Err(DescriptivesError::InsufficientEvents);
    }
    let mut entry = Vec::new();
    let mut switching = Vec::new();
    for (a, b) in ds.transitions() {
        if b.year != a.year + 1 {
            continue;
        }
        let h = b.household();
        let (Some(&event), Some(age)) = (first_loan.get(&h), b.get("age")) else { continue };
        let (Some(sa), Some(sb)) = (a.state, b.state) else { continue };
        let k = b.year - event;
        // loans already held when the household is first seen: no pre-period
        if first_seen[&h] == event && k < 0 {
            continue;
        }
        let (from, to) = (sa.sector_of(), sb.sector_of());
        let make = |y: bool| EventObservation { cluster: h, year: b.year, k, age, y: f64::from(u8::from(y)) };
        if to == Sector::Formal {
            entry.push(make(from == Sector::Informal));
        }
        if from == Sector::Informal {
            switching.push(make(to == Sector::Formal));
        }
    }
    Ok(EventStudy {
        n_events: first_loan.len(),
        entry: fit_event_study("entry", &entry, window)?,
        switching: fit_event_study("switching", &switching, window)?,
    })
}
