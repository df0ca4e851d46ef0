use serde::{Deserialize, Serialize};

use crate::panel::{is_known_variable, PanelError, StateCoding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heterogeneity {
    /// Pooled model, no unobserved effects.
    None,
    /// One correlated normal effect per non-base outcome.
    #[default]
    RandomEffects,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialConditions {
    Exogenous,
    /// Heterogeneity conditioned on initial state, initial covariates and
    /// within-person means over later waves.
    #[default]
    Wrs,
    /// Joint first-period equation linked through factor loadings.
    Heckman,
}

/// Command-line shorthand for a heterogeneity and initial-conditions pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Pooled,
    Exogenous,
    Wrs,
    Heckman,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pooled" => Ok(Mode::Pooled),
            "exogenous" => Ok(Mode::Exogenous),
            "wrs" => Ok(Mode::Wrs),
            "heckman" => Ok(Mode::Heckman),
            _ => Err(format!("unknown mode `{s}` (expected pooled, exogenous, wrs or heckman)")),
        }
    }
}

/// Row filter applied to the origin wave of each transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordFilter {
    pub column: String,
    pub op: FilterOp,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterOp {
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl RecordFilter {
    pub fn new(column: &str, op: FilterOp, value: f64) -> Self {
        Self { column: column.to_string(), op, value }
    }

    /// Missing values never satisfy a filter.
    pub fn matches(&self, v: Option<f64>) -> bool {
        let Some(x) = v else { return false };
        match self.op {
            FilterOp::Eq => x == self.value,
            FilterOp::Ne => x != self.value,
            FilterOp::Lt => x < self.value,
            FilterOp::Le => x <= self.value,
            FilterOp::Gt => x > self.value,
            FilterOp::Ge => x >= self.value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub outcome_coding: StateCoding,
    /// Defaults to `I` (registration) or `unofficial` (pay type).
    pub base_outcome: Option<String>,
    pub lag_coding: StateCoding,
    /// Defaults to `F` (registration, subtypes) or `official` (pay type).
    pub lag_omitted: Option<String>,
    /// Adds leaving the survey before the last wave as an outcome.
    pub exit_outcome: bool,
    pub intercept: bool,
    /// Credit-market variables entering directly and interacted with the lag.
    pub credit: Vec<String>,
    pub interactions: bool,
    pub current: Vec<String>,
    pub constant: Vec<String>,
    pub categorical: Vec<String>,
    pub year_dummies: bool,
    pub entry_wave_dummies: bool,
    pub time_means: Vec<String>,
    pub initial: Vec<String>,
    pub instruments: Vec<String>,
    /// First-wave covariates of the Heckman initial equation; `None` uses `current`.
    pub initial_equation: Option<Vec<String>>,
    pub heterogeneity: Heterogeneity,
    pub initial_conditions: InitialConditions,
    pub nodes: usize,
    /// Centre and scale each unit's nodes at its posterior (mean–variance
    /// adaptive quadrature); otherwise the plain rule `η = L z`.
    pub adaptive: bool,
    pub sample: Vec<RecordFilter>,
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            outcome_coding: StateCoding::Registration,
            base_outcome: None,
            lag_coding: StateCoding::Registration,
            lag_omitted: None,
            exit_outcome: false,
            intercept: true,
            credit: strings(&["cma_index"]),
            interactions: true,
            current: strings(&["age", "age_sq", "school_years", "married", "hh_size", "kids", "log_consumption", "interval_days"]),
            constant: strings(&["female", "russian", "urban", "pop_log"]),
            categorical: strings(&["parent_educ", "district"]),
            year_dummies: true,
            entry_wave_dummies: true,
            time_means: strings(&["school_years", "married", "hh_size", "kids", "log_consumption"]),
            initial: strings(&["school_years", "married", "hh_size", "kids", "log_consumption"]),
            instruments: strings(&["rel_earn_17", "govt_share", "informal_share"]),
            initial_equation: None,
            heterogeneity: Heterogeneity::RandomEffects,
            initial_conditions: InitialConditions::Wrs,
            nodes: 7,
            adaptive: false,
            sample: Vec::new(),
        }
    }
}

impl ModelSpec {
    pub fn base_outcome_label(&self) -> String {
        self.base_outcome.clone().unwrap_or_else(|| match self.outcome_coding {
            StateCoding::PayType => "unofficial".into(),
            _ => "I".into(),
        })
    }

    pub fn lag_omitted_label(&self) -> String {
        self.lag_omitted.clone().unwrap_or_else(|| match self.lag_coding {
            StateCoding::PayType => "official".into(),
            _ => "F".into(),
        })
    }

    /// Applies a mode. Outside WRS the mean and initial-value blocks are
    /// cleared, since they are the WRS conditioning set.
    pub fn with_mode(mut self, mode: Mode) -> Self {
        let (h, ic) = match mode {
            Mode::Pooled => (Heterogeneity::None, InitialConditions::Exogenous),
            Mode::Exogenous => (Heterogeneity::RandomEffects, InitialConditions::Exogenous),
            Mode::Wrs => (Heterogeneity::RandomEffects, InitialConditions::Wrs),
            Mode::Heckman => (Heterogeneity::RandomEffects, InitialConditions::Heckman),
        };
        self.heterogeneity = h;
        self.initial_conditions = ic;
        if ic != InitialConditions::Wrs {
            self.time_means.clear();
            self.initial.clear();
        }
        self
    }

    pub fn initial_equation_vars(&self) -> Vec<String> {
        self.initial_equation.clone().unwrap_or_else(|| {
            self.current.iter().filter(|v| v.as_str() != "interval_days").cloned().collect()
        })
    }

    pub fn validate(&self) -> Result<(), PanelError> {
        let bad = |m: String| Err(PanelError::InvalidSpec(m));
        if self.nodes == 0 {
            return bad("nodes must be at least 1".into());
        }
        if self.initial_conditions == InitialConditions::Wrs && (self.time_means.is_empty() || self.initial.is_empty()) {
            return bad("WRS initial conditions need time_means and initial blocks".into());
        }
        if self.initial_conditions == InitialConditions::Heckman {
            if self.instruments.is_empty() {
                return bad("Heckman initial conditions need an instruments block".into());
            }
            if self.heterogeneity == Heterogeneity::None {
                return bad("Heckman initial conditions need random effects".into());
            }
        }
        if self.interactions && self.credit.is_empty() {
            return bad("interactions requested without credit variables".into());
        }
        if self.exit_outcome && self.outcome_coding != StateCoding::Registration {
            return bad("exit outcome is only defined for the registration coding".into());
        }
        if !self.outcome_coding.categories().contains(&self.base_outcome_label().as_str())
            && !(self.exit_outcome && self.base_outcome_label() == crate::panel::EXIT_OUTCOME)
        {
            return bad(format!("base outcome `{}` is not a category", self.base_outcome_label()));
        }
        if !self.lag_coding.categories().contains(&self.lag_omitted_label().as_str()) {
            return bad(format!("omitted lag `{}` is not a category", self.lag_omitted_label()));
        }
        let lists = [
            &self.credit,
            &self.current,
            &self.constant,
            &self.categorical,
            &self.time_means,
            &self.initial,
            &self.instruments,
        ];
        for name in lists.iter().flat_map(|l| l.iter()).chain(self.initial_equation.iter().flatten()) {
            if !is_known_variable(name) {
                return Err(PanelError::UnknownVariable(name.clone()));
            }
        }
        for f in &self.sample {
            if !is_known_variable(&f.column) && f.column != "year" && f.column != "earnings" {
                return Err(PanelError::UnknownVariable(f.column.clone()));
            }
        }
        for block in lists {
            let mut seen = std::collections::HashSet::new();
            if let Some(d) = block.iter().find(|v| !seen.insert(v.as_str())) {
                return bad(format!("`{d}` listed twice in one block"));
            }
        }
        Ok(())
    }
}
