use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::fit::FitResult;

/// Exponentiated coefficient with its first-order delta-method error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RrrRow {
    pub name: String,
    pub coefficient: f64,
    pub se: f64,
    pub rrr: f64,
    pub rrr_se: f64,
}

impl RrrRow {
    pub fn new(name: &str, coefficient: f64, se: f64) -> Self {
        let rrr = coefficient.exp();
        Self { name: name.to_string(), coefficient, se, rrr, rrr_se: rrr * se }
    }
}

/// Relative risk ratios of every outcome-equation and first-period
/// coefficient; loadings and Cholesky entries are not exponentiated.
pub fn relative_risk_ratios(fit: &FitResult) -> Vec<RrrRow> {
    let end = fit.layout.rho_offset();
    (0..end).map(|i| RrrRow::new(&fit.names[i], fit.estimates[i], fit.std_errors[i])).collect()
}

/// Plain-text table: one row per design column, one column per non-base
/// outcome, entries `RRR (SE)`.
pub fn render_rrr_table(fit: &FitResult) -> String {
    let man = &fit.manifest;
    let free: Vec<&str> = man.free_outcomes().into_iter().map(|j| man.outcomes[j].as_str()).collect();
    let rows = relative_risk_ratios(fit);
    let width = man.columns.iter().map(|c| c.name.len()).max().unwrap_or(8).max(12);
    let mut out = String::new();
    let base = &man.outcomes[man.base_outcome];
    let omitted = &man.origins[man.lag_omitted];
    let _ = writeln!(out, "Relative risk ratios (base outcome {base}, omitted lag {omitted})");
    let _ = write!(out, "{:width$}", "");
    for o in &free {
        let _ = write!(out, "  {:>20}", format!("{o} vs {base}"));
    }
    out.push('\n');
    let p = man.n_cols();
    for (c, col) in man.columns.iter().enumerate() {
        let _ = write!(out, "{:width$}", col.name);
        for m in 0..free.len() {
            let r = &rows[m * p + c];
            let _ = write!(out, "  {:>20}", format!("{:.3} ({:.3})", r.rrr, r.rrr_se));
        }
        out.push('\n');
    }
    if fit.layout.heckman {
        let q = man.initial_columns.len();
        let _ = writeln!(out, "First-period equation");
        for (c, col) in man.initial_columns.iter().enumerate() {
            let _ = write!(out, "{:width$}", col.name);
            for m in 0..free.len() {
                let r = &rows[free.len() * p + m * q + c];
                let _ = write!(out, "  {:>20}", format!("{:.3} ({:.3})", r.rrr, r.rrr_se));
            }
            out.push('\n');
        }
        for (m, o) in free.iter().enumerate() {
            let i = fit.layout.rho_offset() + m;
            let _ = writeln!(out, "{:width$}  {:>20}", format!("rho:{o}"), format!("{:.3} ({:.3})", fit.estimates[i], fit.std_errors[i]));
        }
    }
    for h in &fit.heterogeneity {
        let _ = writeln!(out, "{:width$}  {:>20}", h.name, format!("{:.3} ({:.3})", h.value, h.se));
    }
    let _ = writeln!(
        out,
        "Log-likelihood {:.4}; records {}; units {}; clusters {}",
        fit.log_likelihood, fit.n_records, fit.n_units, fit.n_clusters
    );
    out
}
