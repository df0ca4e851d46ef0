//! Two-period household borrowing model.
//!
//! A household with current income `y` and expected growth `g` chooses a loan
//! `b` under quadratic utility with `β(1+r) = 1`. Lenders cap the loan at a
//! multiple of verifiable income, which yields the minimum share of income
//! that must be formal for the desired loan to be attainable.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TheoryError {
    #[error("invalid household parameter `{field}`: {reason}")]
    InvalidParams { field: &'static str, reason: String },
    #[error("derivatives undefined at the boundary g·y = κ·(1+r)")]
    BoundaryPoint,
    #[error("point outside the admissible region: {0}")]
    Inadmissible(String),
}

/// How the non-interest cost of borrowing enters the repayment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostForm {
    /// Repayment `(b + κ)(1 + r)`.
    #[default]
    FixedFee,
    /// Repayment `b(1 + r + κ)`: the cost acts as a rate surcharge.
    RateSurcharge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HouseholdParams {
    pub income_now: f64,
    pub growth: f64,
    pub interest: f64,
    pub fixed_cost: f64,
    pub verify_share: f64,
    pub limit_slope: f64,
    pub discount: f64,
    pub bliss: f64,
}

impl Default for HouseholdParams {
    fn default() -> Self {
        Self {
            income_now: 100.0,
            growth: 0.0,
            interest: 0.0,
            fixed_cost: 0.0,
            verify_share: 1.0,
            limit_slope: 1.0,
            discount: 1.0,
            bliss: 1.0e4,
        }
    }
}

impl HouseholdParams {
    pub fn validate(&self) -> Result<(), TheoryError> {
        fn bad(field: &'static str, reason: &str) -> TheoryError {
            TheoryError::InvalidParams { field, reason: reason.to_string() }
        }
        let all = [
            self.income_now,
            self.growth,
            self.interest,
            self.fixed_cost,
            self.verify_share,
            self.limit_slope,
            self.discount,
            self.bliss,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(bad("*", "all parameters must be finite"));
        }
        if self.income_now <= 0.0 {
            return Err(bad("income_now", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.verify_share) {
            return Err(bad("verify_share", "must lie in [0, 1]"));
        }
        if self.interest < 0.0 {
            return Err(bad("interest", "must be >= 0"));
        }
        if self.limit_slope <= 0.0 {
            return Err(bad("limit_slope", "must be > 0"));
        }
        if self.fixed_cost < 0.0 {
            return Err(bad("fixed_cost", "must be >= 0"));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(bad("discount", "must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Expected next-period income `(1+g)·y`.
    pub fn expected_income_next(&self) -> f64 {
        (1.0 + self.growth) * self.income_now
    }
}

/// Consumption in both periods for a given loan (negative `borrow` = saving).
/// Savers pay no fixed cost.
pub fn consumption_path(p: &HouseholdParams, borrow: f64, form: CostForm) -> (f64, f64) {
    let c_now = p.income_now + borrow;
    let y_next = p.expected_income_next();
    let c_next = if borrow > 0.0 {
        match form {
            CostForm::FixedFee => y_next - (borrow + p.fixed_cost) * (1.0 + p.interest),
            CostForm::RateSurcharge => y_next - borrow * (1.0 + p.interest + p.fixed_cost),
        }
    } else {
        y_next - borrow * (1.0 + p.interest)
    };
    (c_now, c_next)
}

/// Desired loan `b* = (g·y − κ(1+r)) / (2+r)` under the fixed-fee form, or
/// `g·y / (2+r+κ)` under the surcharge form.
pub fn desired_borrowing(p: &HouseholdParams, form: CostForm) -> f64 {
    let (g, y, k, r) = (p.growth, p.income_now, p.fixed_cost, p.interest);
    match form {
        CostForm::FixedFee => (g * y - k * (1.0 + r)) / (2.0 + r),
        CostForm::RateSurcharge => g * y / (2.0 + r + k),
    }
}

/// Lender's credit limit `π·θ·y`.
pub fn credit_limit(p: &HouseholdParams) -> f64 {
    p.limit_slope * p.verify_share * p.income_now
}

/// Share of verifiable income at which the desired loan equals the credit
/// limit. Values `<= 0` mean the constraint never binds; values `> 1` mean the
/// desired loan is out of reach even with fully formal income.
pub fn min_verifiable_share(p: &HouseholdParams, form: CostForm) -> f64 {
    desired_borrowing(p, form) / (p.limit_slope * p.income_now)
}

/// Expected two-period utility under Hall's quadratic form `−½(č − c)²`.
pub fn quadratic_utility(p: &HouseholdParams, borrow: f64, form: CostForm) -> f64 {
    let (c0, c1) = consumption_path(p, borrow, form);
    let u = |c: f64| -0.5 * (p.bliss - c).powi(2);
    u(c0) + p.discount * u(c1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Partial {
    pub value: f64,
    pub sign: i8,
}

impl Partial {
    fn new(value: f64) -> Self {
        let sign = if value > 0.0 {
            1
        } else if value < 0.0 {
            -1
        } else {
            0
        };
        Self { value, sign }
    }
}

/// Analytic partial derivatives of `b*` and `θ_min` (fixed-fee form).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignReport {
    pub db_dg: Partial,
    pub db_dy: Partial,
    pub db_dr: Partial,
    pub db_dk: Partial,
    pub dtheta_dk: Partial,
    pub dtheta_dr: Partial,
    pub d2theta_dk_dr: Partial,
    pub d2theta_dk_dy: Partial,
}

impl SignReport {
    pub const EXPECTED_SIGNS: [i8; 8] = [1, 1, -1, -1, -1, -1, -1, 1];

    pub fn signs(&self) -> [i8; 8] {
        self.partials().map(|p| p.sign)
    }

    pub fn partials(&self) -> [Partial; 8] {
        [
            self.db_dg,
            self.db_dy,
            self.db_dr,
            self.db_dk,
            self.dtheta_dk,
            self.dtheta_dr,
            self.d2theta_dk_dr,
            self.d2theta_dk_dy,
        ]
    }

    pub fn matches_predictions(&self) -> bool {
        self.signs() == Self::EXPECTED_SIGNS
    }
}

/// Whether the point lies in the region where the model's sign predictions
/// apply: positive growth and a strictly positive desired loan.
pub fn is_admissible(p: &HouseholdParams) -> bool {
    p.validate().is_ok() && p.growth > 0.0 && desired_borrowing(p, CostForm::FixedFee) > 0.0
}

pub fn comparative_statics(p: &HouseholdParams) -> Result<SignReport, TheoryError> {
    p.validate()?;
    let (g, y, k, r, pi) = (p.growth, p.income_now, p.fixed_cost, p.interest, p.limit_slope);
    let numerator = g * y - k * (1.0 + r);
    if numerator == 0.0 {
        return Err(TheoryError::BoundaryPoint);
    }
    let d = 2.0 + r;
    Ok(SignReport {
        db_dg: Partial::new(y / d),
        db_dy: Partial::new(g / d),
        db_dr: Partial::new(-(k + g * y) / (d * d)),
        db_dk: Partial::new(-(1.0 + r) / d),
        dtheta_dk: Partial::new(-(1.0 + r) / (d * pi * y)),
        dtheta_dr: Partial::new(-(k + g * y) / (d * d * pi * y)),
        d2theta_dk_dr: Partial::new(-1.0 / (d * d * pi * y)),
        d2theta_dk_dy: Partial::new((1.0 + r) / (d * pi * y * y)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hh(y: f64, g: f64, r: f64, k: f64) -> HouseholdParams {
        HouseholdParams { income_now: y, growth: g, interest: r, fixed_cost: k, ..Default::default() }
    }

    #[test]
    fn consumption_examples() {
        assert_eq!(consumption_path(&hh(100.0, 0.0, 0.0, 0.0), 0.0, CostForm::FixedFee), (100.0, 100.0));
        let (c0, c1) = consumption_path(&hh(100.0, 0.1, 0.05, 2.0), 10.0, CostForm::FixedFee);
        assert_eq!(c0, 110.0);
        assert!((c1 - (110.0 - 12.0 * 1.05)).abs() < 1e-12);
        assert!((c1 - 97.4).abs() < 1e-12);
        // saver: no fixed cost charged
        assert_eq!(consumption_path(&hh(100.0, 0.0, 0.0, 5.0), -10.0, CostForm::FixedFee), (90.0, 110.0));
    }

    #[test]
    fn desired_borrowing_examples() {
        assert!((desired_borrowing(&hh(100.0, 0.1, 0.0, 0.0), CostForm::FixedFee) - 5.0).abs() < 1e-12);
        // g·y = κ(1+r)
        assert_eq!(desired_borrowing(&hh(100.0, 0.5, 1.0, 25.0), CostForm::FixedFee), 0.0);
        let b = desired_borrowing(&hh(200.0, 0.05, 0.1, 3.0), CostForm::FixedFee);
        assert!((b - 6.7 / 2.1).abs() < 1e-12);
        assert!((b - 3.190476190476).abs() < 1e-9);
    }

    #[test]
    fn surcharge_form() {
        let p = hh(100.0, 0.1, 0.05, 0.02);
        let b = desired_borrowing(&p, CostForm::RateSurcharge);
        assert!((b - 10.0 / 2.07).abs() < 1e-12);
        // c_now = c_next at b*
        let (c0, c1) = consumption_path(&p, b, CostForm::RateSurcharge);
        assert!((c0 - c1).abs() < 1e-10);
    }

    #[test]
    fn credit_limit_examples() {
        let mut p = hh(100.0, 0.0, 0.0, 0.0);
        assert_eq!(credit_limit(&p), 100.0);
        p.verify_share = 0.0;
        assert_eq!(credit_limit(&p), 0.0);
        p = HouseholdParams { income_now: 150.0, limit_slope: 0.5, verify_share: 0.4, ..Default::default() };
        assert!((credit_limit(&p) - 30.0).abs() < 1e-12);
    }

    #[test]
    fn min_share_examples() {
        assert_eq!(min_verifiable_share(&hh(100.0, 0.0, 0.0, 0.0), CostForm::FixedFee), 0.0);
        let p = HouseholdParams { limit_slope: 0.05, ..hh(100.0, 0.1, 0.0, 0.0) };
        assert!((min_verifiable_share(&p, CostForm::FixedFee) - 1.0).abs() < 1e-12);
        let lo = min_verifiable_share(&HouseholdParams { fixed_cost: 1.0, ..p }, CostForm::FixedFee);
        let hi = min_verifiable_share(&HouseholdParams { fixed_cost: 2.0, ..p }, CostForm::FixedFee);
        assert!(hi < lo);
    }

    #[test]
    fn statics_signs_and_errors() {
        let p = hh(200.0, 0.05, 0.1, 3.0);
        let rep = comparative_statics(&p).unwrap();
        assert_eq!(rep.db_dg.sign, 1);
        assert_eq!(rep.dtheta_dk.sign, -1);
        assert!(rep.matches_predictions());
        assert_eq!(comparative_statics(&hh(100.0, 0.5, 1.0, 25.0)), Err(TheoryError::BoundaryPoint));
        assert!(matches!(
            comparative_statics(&hh(-1.0, 0.1, 0.0, 0.0)),
            Err(TheoryError::InvalidParams { field: "income_now", .. })
        ));
    }

    #[test]
    fn validation_rejects_out_of_range() {
        let mut p = HouseholdParams::default();
        p.verify_share = 1.5;
        assert!(p.validate().is_err());
        p.verify_share = 0.5;
        p.limit_slope = 0.0;
        assert!(p.validate().is_err());
    }
}
