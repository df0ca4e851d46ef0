//! Household-level loan incidence records.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::design::{DesignManifest, DesignMatrix, LevelSets, PersonContext, TransitionRecord, UnitInfo};
use super::{LoanType, ObservationRow, PanelDataset, PanelError, PersonPanel, StateCoding};
use crate::estimator::spec::{InitialConditions, ModelSpec, RecordFilter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum HeadRule {
    RandomMember { seed: u64 },
    OldestMale,
    HighestEarner,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoanOutcome {
    /// Any loan taken in (t, t+1].
    #[default]
    Binary,
    /// No loan, mortgage or auto loan, consumer loan.
    ByType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoanSpec {
    pub head_rule: HeadRule,
    pub outcome: LoanOutcome,
    pub intercept: bool,
    pub credit: Vec<String>,
    pub current: Vec<String>,
    pub constant: Vec<String>,
    pub categorical: Vec<String>,
    pub year_dummies: bool,
    pub random_effect: bool,
    pub nodes: usize,
    pub adaptive: bool,
    pub sample: Vec<RecordFilter>,
}

impl Default for LoanSpec {
    fn default() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect();
        Self {
            head_rule: HeadRule::RandomMember { seed: 1 },
            outcome: LoanOutcome::Binary,
            intercept: true,
            credit: s(&["cma_index"]),
            current: s(&["age", "age_sq", "school_years", "married", "hh_size", "kids", "log_consumption"]),
            constant: s(&["female", "russian", "urban", "pop_log"]),
            categorical: s(&["parent_educ", "district"]),
            year_dummies: true,
            random_effect: true,
            nodes: 7,
            adaptive: false,
            sample: Vec::new(),
        }
    }
}

impl LoanSpec {
    /// Equivalent dynamic-model specification used for column layout.
    pub fn layout_spec(&self) -> ModelSpec {
        ModelSpec {
            base_outcome: Some(self.outcomes()[0].to_string()),
            intercept: self.intercept,
            credit: self.credit.clone(),
            interactions: false,
            current: self.current.clone(),
            constant: self.constant.clone(),
            categorical: self.categorical.clone(),
            year_dummies: self.year_dummies,
            entry_wave_dummies: false,
            time_means: Vec::new(),
            initial: Vec::new(),
            instruments: Vec::new(),
            initial_conditions: InitialConditions::Exogenous,
            nodes: self.nodes,
            adaptive: self.adaptive,
            sample: self.sample.clone(),
            ..ModelSpec::default()
        }
    }

    pub fn outcomes(&self) -> &'static [&'static str] {
        match self.outcome {
            LoanOutcome::Binary => &["no_loan", "loan"],
            LoanOutcome::ByType => &["none", "mortgage_auto", "consumer"],
        }
    }

    fn outcome_of(&self, next: &ObservationRow) -> Option<usize> {
        let taken = next.get("loan_taken");
        match self.outcome {
            LoanOutcome::Binary => taken.map(|v| v as usize),
            LoanOutcome::ByType => match (next.loan_type, taken) {
                (Some(LoanType::None), _) | (None, Some(0.0)) => Some(0),
                (Some(LoanType::MortgageAuto), _) => Some(1),
                (Some(LoanType::Consumer), _) => Some(2),
                _ => None,
            },
        }
    }
}

struct Member<'a> {
    person: &'a PersonPanel,
    t: usize,
    outcome: usize,
}

fn pick_head<'m>(rule: HeadRule, household: u64, year: i32, members: &'m [Member<'m>]) -> &'m Member<'m> {
    let age = |m: &Member| m.person.rows[m.t].get("age").unwrap_or(f64::NEG_INFINITY);
    let oldest = |female: f64| {
        members
            .iter()
            .filter(|m| m.person.rows[m.t].get("female") == Some(female))
            .fold(None::<&Member>, |best, m| match best {
                Some(b) if age(b) >= age(m) => Some(b),
                _ => Some(m),
            })
    };
    let oldest_male = || oldest(0.0).or_else(|| oldest(1.0)).unwrap_or(&members[0]);
    match rule {
        HeadRule::RandomMember { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(household);
            rng.set_word_pos(u128::from(year as u32) << 8);
            &members[rng.random_range(0..members.len())]
        }
        HeadRule::OldestMale => oldest_male(),
        HeadRule::HighestEarner => {
            let earn = |m: &Member| m.person.rows[m.t].earnings;
            if members.iter().all(|m| earn(m).is_none()) {
                return oldest_male();
            }
            members.iter().fold(&members[0], |b, m| {
                if earn(m).unwrap_or(f64::NEG_INFINITY) > earn(b).unwrap_or(f64::NEG_INFINITY) {
                    m
                } else {
                    b
                }
            })
        }
    }
}

/// One record per household and wave: the head's origin wave, the
/// household's loan outcome by the next wave. Rows with loan intent at t
/// are dropped after the head is chosen.
pub fn build_loan_design(ds: &PanelDataset, spec: &LoanSpec) -> Result<DesignMatrix, PanelError> {
    let layout = spec.layout_spec();
    let mut groups: BTreeMap<(u64, i32), Vec<Member>> = BTreeMap::new();
    for p in &ds.persons {
        for t in 0..p.rows.len().saturating_sub(1) {
            let r = &p.rows[t];
            if r.category(StateCoding::Registration).is_none() {
                continue;
            }
            if let Some(outcome) = spec.outcome_of(&p.rows[t + 1]) {
                groups.entry((r.household(), r.year)).or_default().push(Member { person: p, t, outcome });
            }
        }
    }
    let mut chosen: Vec<&Member> = Vec::new();
    for ((hh, year), members) in &groups {
        let head = pick_head(spec.head_rule, *hh, *year, members);
        let r = &head.person.rows[head.t];
        if r.get("loan_intent") == Some(0.0) && spec.sample.iter().all(|f| f.matches(r.resolve(&f.column))) {
            chosen.push(head);
        }
    }
    if chosen.is_empty() {
        return Err(PanelError::EmptyAfterSelection);
    }

    let origin_set: BTreeSet<&str> =
        chosen.iter().filter_map(|m| m.person.rows[m.t].category(StateCoding::Registration)).collect();
    let origins: Vec<String> =
        StateCoding::Registration.categories().iter().filter(|c| origin_set.contains(**c)).map(|c| c.to_string()).collect();
    let mut categorical = Vec::new();
    for v in &spec.categorical {
        let mut set = BTreeSet::new();
        for m in &chosen {
            let r = &m.person.rows[m.t];
            let x = r.resolve(v).ok_or_else(|| PanelError::MissingValue {
                person: r.person_id,
                year: r.year,
                column: v.clone(),
            })?;
            set.insert(x as i64);
        }
        categorical.push((v.clone(), set.into_iter().collect()));
    }
    let levels = LevelSets {
        categorical,
        years: chosen.iter().map(|m| m.person.rows[m.t].year).collect::<BTreeSet<_>>().into_iter().collect(),
        entry: Vec::new(),
    };
    let outcomes = spec.outcomes().iter().map(|s| s.to_string()).collect();
    let manifest = DesignManifest::from_levels(&layout, outcomes, origins, Vec::new(), levels)?;

    let p = manifest.n_cols();
    let mut x = vec![0.0; chosen.len() * p];
    let mut records = Vec::with_capacity(chosen.len());
    let mut units: Vec<UnitInfo> = Vec::new();
    for (i, m) in chosen.iter().enumerate() {
        let r = &m.person.rows[m.t];
        let ctx = PersonContext::new(&layout, &manifest, &m.person.rows)?;
        let origin = manifest.origin_index(r.category(StateCoding::Registration).unwrap()).unwrap();
        ctx.fill(&manifest, m.t, origin, &mut x[i * p..(i + 1) * p])?;
        let hh = r.household();
        if units.last().map(|u| u.id) != Some(hh) {
            units.push(UnitInfo { id: hh, cluster: hh, start: i, end: i, initial_outcome: None });
        }
        let u = units.len() - 1;
        units[u].end = i + 1;
        records.push(TransitionRecord { unit: u, origin, outcome: m.outcome, year: r.year, row: r.clone() });
    }
    Ok(DesignMatrix { manifest, x, records, units, initial_x: Vec::new() })
}
