//! Unbalanced person×wave panels: observation rows, CSV ingestion, sample
//! selection and construction of estimation designs.

mod csv_io;
pub mod design;
pub mod loan;
pub mod selection;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use csv_io::{load_panel, load_panel_path, write_panel, SCHEMA_COLUMNS};
pub use design::{build_design, Block, ColumnInfo, DesignManifest, DesignMatrix, TransitionRecord, UnitInfo};
pub use selection::{apply_selection_rules, apply_selection_rules_with, AgeRange, ExclusionEntry, SelectionOptions, SelectionRule};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PanelError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("line {line}, column `{column}`: {message}")]
    TypeError { line: u64, column: String, message: String },
    #[error("duplicate key (person {person}, year {year})")]
    DuplicateKey { person: u64, year: i32 },
    #[error("io: {0}")]
    Io(String),
    #[error("no transitions left after selection")]
    EmptyAfterSelection,
    #[error("person {person}, year {year}: missing value for `{column}`")]
    MissingValue { person: u64, year: i32, column: String },
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sector {
    Formal,
    Informal,
    NoJob,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InformalSubtype {
    UnregisteredEmployee,
    SelfEmployed,
    PrivatePerson,
    Iea,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PayType {
    OfficialOnly,
    PartlyUnofficial,
    UnofficialOnly,
    NoJob,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EmploymentState {
    sector: Sector,
    subtype: Option<InformalSubtype>,
    pay: Option<PayType>,
}

impl EmploymentState {
    pub fn new(sector: Sector, subtype: Option<InformalSubtype>, pay: Option<PayType>) -> Result<Self, String> {
        if subtype.is_some() && sector != Sector::Informal {
            return Err("informal subtype set on a non-informal state".into());
        }
        if subtype == Some(InformalSubtype::Iea) && pay.is_some() {
            return Err("pay type is not defined for IEA workers".into());
        }
        match (sector, pay) {
            (Sector::NoJob, Some(p)) if p != PayType::NoJob => {
                return Err("non-employed state with a pay type other than nojob".into())
            }
            (Sector::Formal | Sector::Informal, Some(PayType::NoJob)) => {
                return Err("employed state with pay type nojob".into())
            }
            _ => {}
        }
        Ok(Self { sector, subtype, pay })
    }

    pub fn sector(sector: Sector) -> Self {
        Self { sector, subtype: None, pay: None }
    }

    pub fn sector_of(&self) -> Sector {
        self.sector
    }

    pub fn subtype(&self) -> Option<InformalSubtype> {
        self.subtype
    }

    pub fn pay(&self) -> Option<PayType> {
        self.pay
    }

    /// Category label under a coding, `None` when the coding does not cover
    /// this state (e.g. no reported pay type).
    pub fn category(&self, coding: StateCoding) -> Option<&'static str> {
        match coding {
            StateCoding::Registration => Some(match self.sector {
                Sector::Formal => "F",
                Sector::Informal => "I",
                Sector::NoJob => "O",
            }),
            StateCoding::InformalSubtypes => Some(match (self.sector, self.subtype) {
                (Sector::Formal, _) => "F",
                (Sector::NoJob, _) => "O",
                (Sector::Informal, Some(InformalSubtype::UnregisteredEmployee)) => "UE",
                (Sector::Informal, Some(InformalSubtype::SelfEmployed)) => "SE",
                (Sector::Informal, Some(InformalSubtype::PrivatePerson)) => "PP",
                (Sector::Informal, Some(InformalSubtype::Iea)) => "IEA",
                (Sector::Informal, Some(InformalSubtype::Unknown) | None) => "IU",
            }),
            StateCoding::PayType => match self.sector {
                Sector::NoJob if self.subtype.is_none() => Some("nojob"),
                _ => self.pay.map(|p| match p {
                    PayType::OfficialOnly => "official",
                    PayType::PartlyUnofficial => "partial",
                    PayType::UnofficialOnly => "unofficial",
                    PayType::NoJob => "nojob",
                }),
            },
        }
    }
}

/// How employment states map to model categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateCoding {
    /// Formal / informal / no job.
    #[default]
    Registration,
    /// Informal split into unregistered, self-employed, private-person, IEA, unknown.
    InformalSubtypes,
    /// Official / partly unofficial / unofficial pay, plus no job.
    PayType,
}

impl StateCoding {
    pub fn categories(&self) -> &'static [&'static str] {
        match self {
            StateCoding::Registration => &["F", "I", "O"],
            StateCoding::InformalSubtypes => &["F", "UE", "SE", "PP", "IEA", "IU", "O"],
            StateCoding::PayType => &["official", "partial", "unofficial", "nojob"],
        }
    }
}

pub const EXIT_OUTCOME: &str = "X";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoanType {
    None,
    MortgageAuto,
    Consumer,
}

impl LoanType {
    pub fn label(&self) -> &'static str {
        match self {
            LoanType::None => "none",
            LoanType::MortgageAuto => "mortgage_auto",
            LoanType::Consumer => "consumer",
        }
    }
}

/// Numeric schema columns, in CSV order.
pub const NUMERIC_COLUMNS: [&str; 24] = [
    "age",
    "female",
    "russian",
    "parent_educ",
    "school_years",
    "married",
    "hh_size",
    "kids",
    "log_consumption",
    "pop_log",
    "urban",
    "district",
    "interval_days",
    "cma_index",
    "bank_presence",
    "dist_sber_km",
    "dist_other_km",
    "offices_per_1000",
    "loan_taken",
    "loan_intent",
    "rel_earn_17",
    "govt_share",
    "informal_share",
    "soe_closed",
];

pub(crate) const BINARY_COLUMNS: [&str; 7] = ["female", "russian", "married", "urban", "loan_taken", "loan_intent", "soe_closed"];
pub(crate) const INTEGER_COLUMNS: [&str; 3] = ["parent_educ", "district", "bank_presence"];

/// Names accepted by [`ObservationRow::resolve`] beyond the raw columns.
pub const DERIVED_VARIABLES: [&str; 5] = ["age_sq", "log_dist_sber", "log_dist_other", "no_banks", "only_sber"];

pub fn column_index(name: &str) -> Option<usize> {
    NUMERIC_COLUMNS.iter().position(|c| *c == name)
}

pub fn is_known_variable(name: &str) -> bool {
    column_index(name).is_some() || DERIVED_VARIABLES.contains(&name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRow {
    pub person_id: u64,
    pub year: i32,
    pub state: Option<EmploymentState>,
    pub values: [Option<f64>; 24],
    pub household_id: Option<u64>,
    pub community_id: Option<u64>,
    pub earnings: Option<f64>,
    pub loan_type: Option<LoanType>,
}

impl ObservationRow {
    pub fn new(person_id: u64, year: i32, state: Option<EmploymentState>) -> Self {
        Self {
            person_id,
            year,
            state,
            values: [None; 24],
            household_id: None,
            community_id: None,
            earnings: None,
            loan_type: None,
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        column_index(name).and_then(|i| self.values[i])
    }

    pub fn set(&mut self, name: &str, value: Option<f64>) {
        let i = column_index(name).unwrap_or_else(|| panic!("unknown column `{name}`"));
        self.values[i] = value;
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.set(name, Some(value));
        self
    }

    /// Raw column or derived variable.
    pub fn resolve(&self, name: &str) -> Option<f64> {
        match name {
            "age_sq" => self.get("age").map(|a| a * a / 100.0),
            "log_dist_sber" => self.get("dist_sber_km").map(f64::ln_1p),
            "log_dist_other" => self.get("dist_other_km").map(f64::ln_1p),
            "no_banks" => self.get("bank_presence").map(|p| f64::from(u8::from(p == 1.0))),
            "only_sber" => self.get("bank_presence").map(|p| f64::from(u8::from(p == 2.0))),
            "year" => Some(self.year as f64),
            "household_id" => Some(self.household() as f64),
            "earnings" => self.earnings,
            _ => self.get(name),
        }
    }

    pub fn household(&self) -> u64 {
        self.household_id.unwrap_or(self.person_id)
    }

    pub fn category(&self, coding: StateCoding) -> Option<&'static str> {
        self.state.and_then(|s| s.category(coding))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonPanel {
    pub id: u64,
    pub rows: Vec<ObservationRow>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PanelDataset {
    pub persons: Vec<PersonPanel>,
    pub exclusion_log: Vec<ExclusionEntry>,
}

impl PanelDataset {
    /// Groups rows by person and sorts by (person, year).
    pub fn from_rows(rows: Vec<ObservationRow>) -> Result<Self, PanelError> {
        let mut rows = rows;
        rows.sort_by_key(|r| (r.person_id, r.year));
        let mut persons: Vec<PersonPanel> = Vec::new();
        for r in rows {
            match persons.last_mut() {
                Some(p) if p.id == r.person_id => {
                    if p.rows.last().map(|l| l.year) == Some(r.year) {
                        return Err(PanelError::DuplicateKey { person: r.person_id, year: r.year });
                    }
                    p.rows.push(r);
                }
                _ => persons.push(PersonPanel { id: r.person_id, rows: vec![r] }),
            }
        }
        Ok(Self { persons, exclusion_log: Vec::new() })
    }

    pub fn n_persons(&self) -> usize {
        self.persons.len()
    }

    pub fn n_rows(&self) -> usize {
        self.persons.iter().map(|p| p.rows.len()).sum()
    }

    pub fn rows(&self) -> impl Iterator<Item = &ObservationRow> {
        self.persons.iter().flat_map(|p| p.rows.iter())
    }

    /// Consecutive (t, t+1) row pairs within person.
    pub fn transitions(&self) -> impl Iterator<Item = (&ObservationRow, &ObservationRow)> {
        self.persons.iter().flat_map(|p| p.rows.windows(2).map(|w| (&w[0], &w[1])))
    }

    pub fn max_year(&self) -> Option<i32> {
        self.rows().map(|r| r.year).max()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_invariants() {
        assert!(EmploymentState::new(Sector::Formal, Some(InformalSubtype::SelfEmployed), None).is_err());
        assert!(EmploymentState::new(Sector::Informal, Some(InformalSubtype::Iea), Some(PayType::UnofficialOnly)).is_err());
        assert!(EmploymentState::new(Sector::Informal, Some(InformalSubtype::UnregisteredEmployee), Some(PayType::UnofficialOnly)).is_ok());
        assert!(EmploymentState::new(Sector::Formal, None, Some(PayType::NoJob)).is_err());
    }

    #[test]
    fn categories_under_codings() {
        let s = EmploymentState::new(Sector::Informal, Some(InformalSubtype::PrivatePerson), Some(PayType::PartlyUnofficial)).unwrap();
        assert_eq!(s.category(StateCoding::Registration), Some("I"));
        assert_eq!(s.category(StateCoding::InformalSubtypes), Some("PP"));
        assert_eq!(s.category(StateCoding::PayType), Some("partial"));
        let f = EmploymentState::sector(Sector::Formal);
        assert_eq!(f.category(StateCoding::PayType), None);
        let o = EmploymentState::sector(Sector::NoJob);
        assert_eq!(o.category(StateCoding::PayType), Some("nojob"));
    }

    #[test]
    fn derived_variables() {
        let r = ObservationRow::new(1, 2006, None)
            .with("age", 40.0)
            .with("dist_sber_km", 20.0)
            .with("bank_presence", 1.0);
        assert_eq!(r.resolve("age_sq"), Some(16.0));
        assert!((r.resolve("log_dist_sber").unwrap() - 21f64.ln()).abs() < 1e-15);
        assert_eq!(r.resolve("no_banks"), Some(1.0));
        assert_eq!(r.resolve("only_sber"), Some(0.0));
        assert_eq!(r.resolve("kids"), None);
    }

    #[test]
    fn duplicate_key_detected() {
        let rows = vec![ObservationRow::new(1, 2006, None), ObservationRow::new(1, 2006, None)];
        assert_eq!(PanelDataset::from_rows(rows), Err(PanelError::DuplicateKey { person: 1, year: 2006 }));
    }
}
