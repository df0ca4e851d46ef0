//! Dynamic multinomial logit estimation with correlated random effects for
//! labour-market transition panels, with credit-access index construction,
//! descriptives, post-estimation effects and a synthetic data generator.

pub mod cli;
pub mod cma;
pub mod descriptives;
pub mod effects;
pub mod estimator;
pub mod panel;
pub mod quadrature;
pub mod simulate;
pub mod theory;
