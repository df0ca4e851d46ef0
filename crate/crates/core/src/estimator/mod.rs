//! Maximum-likelihood estimation of dynamic multinomial logit models with
//! correlated random effects, and of static random-effects loan equations.

mod fit;
pub mod layout;
pub mod likelihood;
pub mod optim;
mod report;
pub mod spec;

use thiserror::Error;

use crate::panel::PanelError;

pub use fit::{
    fit, fit_loan_model, gradient, log_likelihood, numerical_hessian, Diagnostics, FitOptions, FitResult, ModelKind,
    NamedValue, QuadratureCheck, UnitContribution,
};
pub use layout::{ParameterLayout, ParameterVector};
pub use likelihood::Model;
pub use report::{relative_risk_ratios, render_rrr_table, RrrRow};
pub use spec::{FilterOp, Heterogeneity, InitialConditions, Mode, ModelSpec, RecordFilter};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("non-finite likelihood for person {person} (linear index {index})")]
    NonFiniteLikelihood { person: u64, index: f64 },
    #[error("no convergence after {iterations} iterations (gradient norm {gradient_norm:.3e})")]
    NotConverged { iterations: usize, gradient_norm: f64 },
    #[error("collinear design columns: {}", .0.join(", "))]
    CollinearDesign(Vec<String>),
    #[error("separation detected: `{parameter}` reached {value:.2}")]
    SeparationDetected { parameter: String, value: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Design(#[from] PanelError),
}
