//! Transition records and regressor blocks for the dynamic model.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{ObservationRow, PanelDataset, PanelError, PersonPanel, StateCoding, EXIT_OUTCOME};
use crate::estimator::spec::{InitialConditions, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Intercept,
    Lag,
    Credit,
    Interaction,
    Current,
    Constant,
    Categorical,
    Year,
    EntryWave,
    TimeMean,
    Initial,
    InitialState,
    Instrument,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnInfo {
    pub name: String,
    pub block: Block,
}

/// Levels of every dummy-coded variable; the first level of each is omitted.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LevelSets {
    pub categorical: Vec<(String, Vec<i64>)>,
    pub years: Vec<i32>,
    pub entry: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignManifest {
    pub outcomes: Vec<String>,
    pub base_outcome: usize,
    pub origins: Vec<String>,
    pub lag_omitted: usize,
    pub init_states: Vec<String>,
    pub init_omitted: usize,
    pub credit: Vec<String>,
    pub columns: Vec<ColumnInfo>,
    /// Heckman first-period equation columns (empty otherwise).
    pub initial_columns: Vec<ColumnInfo>,
    pub levels: LevelSets,
    /// Column of each origin's lag dummy, `None` for the omitted origin.
    pub lag_columns: Vec<Option<usize>>,
    /// Column of each credit variable.
    pub credit_columns: Vec<usize>,
    /// `interaction_columns[origin][k]`: column of origin × credit variable k.
    pub interaction_columns: Vec<Vec<Option<usize>>>,
}

impl DesignManifest {
    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn n_outcomes(&self) -> usize {
        self.outcomes.len()
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn outcome_index(&self, label: &str) -> Option<usize> {
        self.outcomes.iter().position(|o| o == label)
    }

    pub fn origin_index(&self, label: &str) -> Option<usize> {
        self.origins.iter().position(|o| o == label)
    }

    /// Non-base outcomes in order.
    pub fn free_outcomes(&self) -> Vec<usize> {
        (0..self.outcomes.len()).filter(|&j| j != self.base_outcome).collect()
    }

    /// Rewrites the lag dummies and interactions of `row` for `origin`.
    pub fn set_origin(&self, row: &mut [f64], origin: usize) {
        for (o, c) in self.lag_columns.iter().enumerate() {
            if let Some(c) = c {
                row[*c] = f64::from(u8::from(o == origin));
            }
        }
        self.refresh_interactions(row);
    }

    /// Origin encoded in `row`'s lag dummies.
    pub fn origin_of(&self, row: &[f64]) -> usize {
        self.lag_columns
            .iter()
            .enumerate()
            .find(|(_, c)| c.is_some_and(|c| row[c] == 1.0))
            .map_or(self.lag_omitted, |(o, _)| o)
    }

    /// Sets a column by name; editing a credit variable also updates its
    /// interactions.
    pub fn set_value(&self, row: &mut [f64], name: &str, value: f64) -> Result<(), PanelError> {
        let c = self.column(name).ok_or_else(|| PanelError::UnknownVariable(name.to_string()))?;
        row[c] = value;
        if self.credit_columns.contains(&c) {
            self.refresh_interactions(row);
        }
        Ok(())
    }

    fn refresh_interactions(&self, row: &mut [f64]) {
        for (o, per) in self.interaction_columns.iter().enumerate() {
            let lag = self.lag_columns[o].map_or(0.0, |c| row[c]);
            for (k, c) in per.iter().enumerate() {
                if let Some(c) = c {
                    row[*c] = lag * row[self.credit_columns[k]];
                }
            }
        }
    }

    /// Builds the column layout from category and level sets.
    pub fn from_levels(
        spec: &ModelSpec,
        outcomes: Vec<String>,
        origins: Vec<String>,
        init_states: Vec<String>,
        levels: LevelSets,
    ) -> Result<Self, PanelError> {
        let base_label = spec.base_outcome_label();
        let base_outcome = outcomes
            .iter()
            .position(|o| *o == base_label)
            .ok_or_else(|| PanelError::InvalidSpec(format!("base outcome `{base_label}` not observed")))?;
        let omitted_label = spec.lag_omitted_label();
        let lag_omitted = origins
            .iter()
            .position(|o| *o == omitted_label)
            .ok_or_else(|| PanelError::InvalidSpec(format!("omitted lag `{omitted_label}` not observed")))?;
        let wrs = spec.initial_conditions == InitialConditions::Wrs;
        let init_omitted = if wrs {
            init_states.iter().position(|o| *o == omitted_label).unwrap_or(0)
        } else {
            0
        };

        let mut columns = Vec::new();
        let push = |columns: &mut Vec<ColumnInfo>, name: String, block| {
            columns.push(ColumnInfo { name, block });
            columns.len() - 1
        };
        if spec.intercept {
            push(&mut columns, "_cons".into(), Block::Intercept);
        }
        let lag_columns: Vec<Option<usize>> = origins
            .iter()
            .enumerate()
            .map(|(o, name)| (o != lag_omitted).then(|| push(&mut columns, format!("lag:{name}"), Block::Lag)))
            .collect();
        let credit_columns: Vec<usize> =
            spec.credit.iter().map(|c| push(&mut columns, c.clone(), Block::Credit)).collect();
        let interaction_columns: Vec<Vec<Option<usize>>> = origins
            .iter()
            .enumerate()
            .map(|(o, name)| {
                spec.credit
                    .iter()
                    .map(|c| {
                        (spec.interactions && o != lag_omitted)
                            .then(|| push(&mut columns, format!("lag:{name}*{c}"), Block::Interaction))
                    })
                    .collect()
            })
            .collect();
        for v in &spec.current {
            push(&mut columns, v.clone(), Block::Current);
        }
        for v in &spec.constant {
            push(&mut columns, v.clone(), Block::Constant);
        }
        for (v, lv) in &levels.categorical {
            for l in lv.iter().skip(1) {
                push(&mut columns, format!("cat:{v}={l}"), Block::Categorical);
            }
        }
        if spec.year_dummies {
            for y in levels.years.iter().skip(1) {
                push(&mut columns, format!("year={y}"), Block::Year);
            }
        }
        if spec.entry_wave_dummies {
            for y in levels.entry.iter().skip(1) {
                push(&mut columns, format!("entry={y}"), Block::EntryWave);
            }
        }
        if wrs {
            for v in &spec.time_means {
                push(&mut columns, format!("mean:{v}"), Block::TimeMean);
            }
            for v in &spec.initial {
                push(&mut columns, format!("init:{v}"), Block::Initial);
            }
            for (s, name) in init_states.iter().enumerate() {
                if s != init_omitted {
                    push(&mut columns, format!("init_state:{name}"), Block::InitialState);
                }
            }
        }

        let mut initial_columns = Vec::new();
        if spec.initial_conditions == InitialConditions::Heckman {
            let mut ipush = |name: String, block| initial_columns.push(ColumnInfo { name, block });
            ipush("_cons".into(), Block::Intercept);
            for v in spec.initial_equation_vars() {
                ipush(v, Block::Current);
            }
            for v in &spec.constant {
                ipush(v.clone(), Block::Constant);
            }
            for (v, lv) in &levels.categorical {
                for l in lv.iter().skip(1) {
                    ipush(format!("cat:{v}={l}"), Block::Categorical);
                }
            }
            if spec.entry_wave_dummies {
                for y in levels.entry.iter().skip(1) {
                    ipush(format!("entry={y}"), Block::EntryWave);
                }
            }
            for v in &spec.instruments {
                ipush(v.clone(), Block::Instrument);
            }
        }

        Ok(Self {
            outcomes,
            base_outcome,
            origins,
            lag_omitted,
            init_states,
            init_omitted,
            credit: spec.credit.clone(),
            columns,
            initial_columns,
            levels,
            lag_columns,
            credit_columns,
            interaction_columns,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub unit: usize,
    pub origin: usize,
    pub outcome: usize,
    pub year: i32,
    /// Origin wave as loaded, for subgroup predicates.
    pub row: ObservationRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitInfo {
    pub id: u64,
    pub cluster: u64,
    pub start: usize,
    pub end: usize,
    /// First-period outcome for the Heckman equation.
    pub initial_outcome: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    pub manifest: DesignManifest,
    /// Row-major, one row per record.
    pub x: Vec<f64>,
    pub records: Vec<TransitionRecord>,
    pub units: Vec<UnitInfo>,
    /// Row-major Heckman first-period regressors, one row per unit.
    pub initial_x: Vec<f64>,
}

impl DesignMatrix {
    pub fn n_records(&self) -> usize {
        self.records.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let p = self.manifest.n_cols();
        &self.x[r * p..(r + 1) * p]
    }

    pub fn initial_row(&self, u: usize) -> &[f64] {
        let q = self.manifest.initial_columns.len();
        &self.initial_x[u * q..(u + 1) * q]
    }

    /// Column means over records.
    pub fn column_means(&self) -> Vec<f64> {
        let p = self.manifest.n_cols();
        let mut m = vec![0.0; p];
        for r in 0..self.n_records() {
            for (a, b) in m.iter_mut().zip(self.row(r)) {
                *a += b;
            }
        }
        let n = self.n_records().max(1) as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Columns that are identically zero or involved in an exact linear
    /// dependence (near-zero eigenvalue of the scaled Gram matrix).
    pub fn rank_deficient_columns(&self) -> Vec<String> {
        let p = self.manifest.n_cols();
        let n = self.n_records();
        if n == 0 || p == 0 {
            return Vec::new();
        }
        // Gram matrix is small (p×p); eigen-decompose the scaled version
        let mut g = nalgebra::DMatrix::<f64>::zeros(p, p);
        for r in 0..n {
            let x = self.row(r);
            for a in 0..p {
                if x[a] == 0.0 {
                    continue;
                }
                for b in a..p {
                    g[(a, b)] += x[a] * x[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                g[(a, b)] = g[(b, a)];
            }
        }
        let scale: Vec<f64> = (0..p).map(|a| g[(a, a)].sqrt()).collect();
        let mut out = Vec::new();
        for (a, &s) in scale.iter().enumerate() {
            if s == 0.0 {
                out.push(self.manifest.columns[a].name.clone());
            }
        }
        if !out.is_empty() {
            return out;
        }
        for a in 0..p {
            for b in 0..p {
                g[(a, b)] /= scale[a] * scale[b];
            }
        }
        let eig = nalgebra::SymmetricEigen::new(g);
        for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
            if lambda < 1e-10 {
                let v = eig.eigenvectors.column(k);
                for a in 0..p {
                    if v[a].abs() > 0.1 && !out.contains(&self.manifest.columns[a].name) {
                        out.push(self.manifest.columns[a].name.clone());
                    }
                }
            }
        }
        out
    }
}

/// Per-person quantities that do not depend on the wave: first-wave values,
/// means over later waves, entry year and initial state.
pub struct PersonContext<'a> {
    pub rows: &'a [ObservationRow],
    means: Vec<f64>,
    initial: Vec<f64>,
    constant: Vec<f64>,
    init_state: usize,
}

fn missing(r: &ObservationRow, column: &str) -> PanelError {
    PanelError::MissingValue { person: r.person_id, year: r.year, column: column.to_string() }
}

fn value(r: &ObservationRow, name: &str) -> Result<f64, PanelError> {
    r.resolve(name).ok_or_else(|| missing(r, name))
}

impl<'a> PersonContext<'a> {
    pub fn new(spec: &ModelSpec, manifest: &DesignManifest, rows: &'a [ObservationRow]) -> Result<Self, PanelError> {
        let first = &rows[0];
        let wrs = spec.initial_conditions == InitialConditions::Wrs;
        let mut means = Vec::new();
        let mut initial = Vec::new();
        let mut init_state = 0;
        if wrs {
            if rows.len() < 2 && !spec.time_means.is_empty() {
                return Err(missing(first, "time means need two waves"));
            }
            for v in &spec.time_means {
                let mut s = 0.0;
                for r in &rows[1..] {
                    s += value(r, v)?;
                }
                means.push(s / (rows.len() - 1) as f64);
            }
            for v in &spec.initial {
                initial.push(value(first, v)?);
            }
            let label = first.category(spec.lag_coding).ok_or_else(|| missing(first, "state"))?;
            init_state = manifest
                .init_states
                .iter()
                .position(|s| s == label)
                .ok_or_else(|| PanelError::InvalidSpec(format!("initial state `{label}` not in manifest")))?;
        }
        let constant = spec.constant.iter().map(|v| value(first, v)).collect::<Result<_, _>>()?;
        Ok(Self { rows, means, initial, constant, init_state })
    }

    pub fn entry_year(&self) -> i32 {
        self.rows[0].year
    }

    /// Fills one design row for the transition out of wave `t` from `origin`.
    pub fn fill(&self, manifest: &DesignManifest, t: usize, origin: usize, out: &mut [f64]) -> Result<(), PanelError> {
        let r = &self.rows[t];
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut mean_k = 0;
        let mut init_k = 0;
        let mut const_k = 0;
        for (c, col) in manifest.columns.iter().enumerate() {
            out[c] = match col.block {
                Block::Intercept => 1.0,
                Block::Lag | Block::Interaction => continue,
                Block::Credit | Block::Current => value(r, &col.name)?,
                Block::Constant => {
                    const_k += 1;
                    self.constant[const_k - 1]
                }
                Block::Categorical => {
                    let (var, level) = parse_level(&col.name);
                    f64::from(u8::from(value(r, var)? as i64 == level))
                }
                Block::Year => f64::from(u8::from(col.name[5..].parse::<i32>().ok() == Some(r.year))),
                Block::EntryWave => f64::from(u8::from(col.name[6..].parse::<i32>().ok() == Some(self.entry_year()))),
                Block::TimeMean => {
                    mean_k += 1;
                    self.means[mean_k - 1]
                }
                Block::Initial => {
                    init_k += 1;
                    self.initial[init_k - 1]
                }
                Block::InitialState => {
                    let label = &col.name["init_state:".len()..];
                    f64::from(u8::from(manifest.init_states[self.init_state] == label))
                }
                Block::Instrument => unreachable!("instruments only enter the first-period equation"),
            };
        }
        manifest.set_origin(out, origin);
        Ok(())
    }

    /// First-period regressors of the Heckman equation.
    pub fn fill_initial(&self, manifest: &DesignManifest, out: &mut [f64]) -> Result<(), PanelError> {
        let r = &self.rows[0];
        for (c, col) in manifest.initial_columns.iter().enumerate() {
            out[c] = match col.block {
                Block::Intercept => 1.0,
                Block::Categorical => {
                    let (var, level) = parse_level(&col.name);
                    f64::from(u8::from(value(r, var)? as i64 == level))
                }
                Block::EntryWave => f64::from(u8::from(col.name[6..].parse::<i32>().ok() == Some(r.year))),
                _ => value(r, &col.name)?,
            };
        }
        Ok(())
    }
}

fn parse_level(name: &str) -> (&str, i64) {
    let body = &name[4..];
    let (var, level) = body.rsplit_once('=').expect("categorical column name");
    (var, level.parse().expect("integer level"))
}

fn ordered_present(coding: StateCoding, present: &BTreeSet<&str>) -> Vec<String> {
    coding.categories().iter().filter(|c| present.contains(**c)).map(|c| c.to_string()).collect()
}

struct Candidate<'a> {
    person: &'a PersonPanel,
    t: usize,
    origin: &'static str,
    outcome: &'static str,
}

/// Builds transition records and all regressor blocks requested by `spec`.
pub fn build_design(ds: &PanelDataset, spec: &ModelSpec) -> Result<DesignMatrix, PanelError> {
    spec.validate()?;
    let max_year = ds.max_year();
    let mut candidates: Vec<Candidate> = Vec::new();
    for p in &ds.persons {
        let keep = |r: &ObservationRow| spec.sample.iter().all(|f| f.matches(r.resolve(&f.column)));
        for t in 0..p.rows.len().saturating_sub(1) {
            let (Some(origin), Some(outcome)) =
                (p.rows[t].category(spec.lag_coding), p.rows[t + 1].category(spec.outcome_coding))
            else {
                continue;
            };
            if keep(&p.rows[t]) {
                candidates.push(Candidate { person: p, t, origin, outcome });
            }
        }
        if spec.exit_outcome {
            let last = p.rows.len() - 1;
            if Some(p.rows[last].year) < max_year && keep(&p.rows[last]) {
                if let Some(origin) = p.rows[last].category(spec.lag_coding) {
                    candidates.push(Candidate { person: p, t: last, origin, outcome: EXIT_OUTCOME });
                }
            }
        }
    }
    if candidates.is_empty() {
        return Err(PanelError::EmptyAfterSelection);
    }

    let mut outcomes: Vec<String> = spec.outcome_coding.categories().iter().map(|s| s.to_string()).collect();
    if spec.exit_outcome {
        outcomes.push(EXIT_OUTCOME.to_string());
    }
    let origin_set: BTreeSet<&str> = candidates.iter().map(|c| c.origin).collect();
    let origins = ordered_present(spec.lag_coding, &origin_set);

    let mut unit_persons: Vec<&PersonPanel> = Vec::new();
    for c in &candidates {
        if unit_persons.last().map(|p| p.id) != Some(c.person.id) {
            unit_persons.push(c.person);
        }
    }
    let init_states = if spec.initial_conditions == InitialConditions::Wrs {
        let mut set = BTreeSet::new();
        for p in &unit_persons {
            set.insert(p.rows[0].category(spec.lag_coding).ok_or_else(|| missing(&p.rows[0], "state"))?);
        }
        ordered_present(spec.lag_coding, &set)
    } else {
        Vec::new()
    };

    let mut cat_levels: BTreeMap<&str, BTreeSet<i64>> = BTreeMap::new();
    for v in &spec.categorical {
        let set = cat_levels.entry(v.as_str()).or_default();
        for c in &candidates {
            set.insert(value(&c.person.rows[c.t], v)? as i64);
        }
        if spec.initial_conditions == InitialConditions::Heckman {
            for p in &unit_persons {
                set.insert(value(&p.rows[0], v)? as i64);
            }
        }
    }
    let levels = LevelSets {
        categorical: spec
            .categorical
            .iter()
            .map(|v| (v.clone(), cat_levels[v.as_str()].iter().copied().collect()))
            .collect(),
        years: candidates.iter().map(|c| c.person.rows[c.t].year).collect::<BTreeSet<_>>().into_iter().collect(),
        entry: unit_persons.iter().map(|p| p.rows[0].year).collect::<BTreeSet<_>>().into_iter().collect(),
    };
    let manifest = DesignManifest::from_levels(spec, outcomes, origins, init_states, levels)?;

    let p = manifest.n_cols();
    let q = manifest.initial_columns.len();
    let mut x = vec![0.0; candidates.len() * p];
    let mut initial_x = vec![0.0; unit_persons.len() * q];
    let mut records = Vec::with_capacity(candidates.len());
    let mut units: Vec<UnitInfo> = Vec::with_capacity(unit_persons.len());
    let mut ctx: Option<PersonContext> = None;
    for (i, c) in candidates.iter().enumerate() {
        if units.last().map(|u| u.id) != Some(c.person.id) {
            let pc = PersonContext::new(spec, &manifest, &c.person.rows)?;
            let u = units.len();
            let mut initial_outcome = None;
            if q > 0 {
                pc.fill_initial(&manifest, &mut initial_x[u * q..(u + 1) * q])?;
                initial_outcome = c.person.rows[0].category(spec.outcome_coding).and_then(|l| manifest.outcome_index(l));
            }
            units.push(UnitInfo { id: c.person.id, cluster: c.person.id, start: i, end: i, initial_outcome });
            ctx = Some(pc);
        }
        let pc = ctx.as_ref().expect("context set above");
        let origin = manifest.origin_index(c.origin).expect("origin collected above");
        pc.fill(&manifest, c.t, origin, &mut x[i * p..(i + 1) * p])?;
        let u = units.len() - 1;
        units[u].end = i + 1;
        records.push(TransitionRecord {
            unit: u,
            origin,
            outcome: manifest.outcome_index(c.outcome).expect("outcome in coding"),
            year: c.person.rows[c.t].year,
            row: c.person.rows[c.t].clone(),
        });
    }
    Ok(DesignMatrix { manifest, x, records, units, initial_x })
}
