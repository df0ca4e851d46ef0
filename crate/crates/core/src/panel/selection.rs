use serde::{Deserialize, Serialize};

use super::{ObservationRow, PanelDataset, PersonPanel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgeRange {
    pub min: f64,
    pub max: f64,
}

impl Default for AgeRange {
    fn default() -> Self {
        Self { min: 20.0, max: 59.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    AgeRange,
    MissingStatusT,
    MissingStatusNext,
    MissingCovariates,
    SingleObservation,
}

impl SelectionRule {
    pub const ORDER: [SelectionRule; 5] = [
        SelectionRule::AgeRange,
        SelectionRule::MissingStatusT,
        SelectionRule::MissingStatusNext,
        SelectionRule::MissingCovariates,
        SelectionRule::SingleObservation,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            SelectionRule::AgeRange => "outside age range",
            SelectionRule::MissingStatusT => "missing employment status at t",
            SelectionRule::MissingStatusNext => "missing employment status at t+1",
            SelectionRule::MissingCovariates => "missing covariates",
            SelectionRule::SingleObservation => "only one valid observation per person",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionEntry {
    pub rule: SelectionRule,
    pub removed: usize,
}

/// Core covariates that must be present on every retained row.
pub const REQUIRED_COVARIATES: [&str; 13] = [
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
    "cma_index",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOptions {
    pub age_range: AgeRange,
    pub required: Vec<String>,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        Self { age_range: AgeRange::default(), required: REQUIRED_COVARIATES.iter().map(|s| s.to_string()).collect() }
    }
}

pub fn apply_selection_rules(ds: PanelDataset, age_range: AgeRange) -> PanelDataset {
    apply_selection_rules_with(ds, &SelectionOptions { age_range, ..SelectionOptions::default() })
}

/// Applies the five selection steps in order, appending one log entry per
/// step. Step 3 drops a row when the person's next recorded wave exists but
/// has no employment status; step 5 drops persons left with one row.
pub fn apply_selection_rules_with(ds: PanelDataset, opts: &SelectionOptions) -> PanelDataset {
    let mut log = ds.exclusion_log;
    // each row carries whether its raw successor lacks a status
    let mut persons: Vec<(u64, Vec<(ObservationRow, bool)>)> = ds
        .persons
        .into_iter()
        .map(|p| {
            let flags: Vec<bool> =
                (0..p.rows.len()).map(|i| p.rows.get(i + 1).is_some_and(|n| n.state.is_none())).collect();
            (p.id, p.rows.into_iter().zip(flags).collect())
        })
        .collect();

    let mut step = |rule: SelectionRule, keep: &dyn Fn(&[(ObservationRow, bool)], usize) -> bool| {
        let mut removed = 0;
        for (_, rows) in persons.iter_mut() {
            let flags: Vec<bool> = (0..rows.len()).map(|i| keep(rows, i)).collect();
            let before = rows.len();
            let mut it = flags.iter();
            rows.retain(|_| *it.next().unwrap());
            removed += before - rows.len();
        }
        persons.retain(|(_, rows)| !rows.is_empty());
        log.push(ExclusionEntry { rule, removed });
    };

    let ar = opts.age_range;
    step(SelectionRule::AgeRange, &|rows, i| rows[i].0.get("age").is_none_or(|a| a >= ar.min && a <= ar.max));
    step(SelectionRule::MissingStatusT, &|rows, i| rows[i].0.state.is_some());
    step(SelectionRule::MissingStatusNext, &|rows, i| !rows[i].1);
    let required = &opts.required;
    step(SelectionRule::MissingCovariates, &|rows, i| required.iter().all(|c| rows[i].0.resolve(c).is_some()));
    step(SelectionRule::SingleObservation, &|rows, _| rows.len() >= 2);

    let persons = persons
        .into_iter()
        .map(|(id, rows)| PersonPanel { id, rows: rows.into_iter().map(|(r, _)| r).collect() })
        .collect();
    PanelDataset { persons, exclusion_log: log }
}
