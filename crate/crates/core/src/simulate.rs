//! Synthetic panels from the dynamic multinomial logit, with known truth.
//!
//! Randomness comes from ChaCha8 seeded with `seed_from_u64(seed)`; each
//! person draws from its own stream (`set_stream(person index)`) and the
//! community process from stream `u64::MAX`, so output does not depend on
//! evaluation order or thread count.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cma::{build_index, CmaComponents, IndexMethod, IndexOptions};
use crate::estimator::spec::{InitialConditions, ModelSpec};
use crate::estimator::{ParameterLayout, ParameterVector};
use crate::panel::design::{DesignManifest, LevelSets, PersonContext};
use crate::panel::{
    write_panel, DesignMatrix, EmploymentState, InformalSubtype, LoanType, ObservationRow, PanelDataset, PayType,
    Sector, StateCoding,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulateError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("invalid heterogeneity support: {0}")]
    SupportInvalid(String),
    #[error("io: {0}")]
    Io(String),
}

pub const OUTCOMES: [&str; 3] = ["F", "I", "O"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    #[default]
    Softmax,
    /// Argmax of linear indices plus Type-1 extreme-value shocks.
    GumbelMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "law")]
pub enum InitialStateLaw {
    /// Probabilities over F, I, O, independent of everything else.
    Exogenous { probs: [f64; 3] },
    /// `P(Y1 = j) ∝ exp(a_j + θ_j·R + c·η_j)` for non-base `j`, base 1.
    Correlated {
        intercepts: BTreeMap<String, f64>,
        mixing: f64,
        #[serde(default)]
        instruments: BTreeMap<String, BTreeMap<String, f64>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Continuous {
    pub mean: f64,
    pub sd_between: f64,
    pub sd_within: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CovariateLaws {
    pub entry_age: (f64, f64),
    pub female: f64,
    pub russian: f64,
    pub parent_educ: Vec<f64>,
    pub school_years: Continuous,
    pub married: f64,
    pub married_switch: f64,
    pub hh_size: Continuous,
    pub kids: Continuous,
    pub log_consumption: Continuous,
    pub interval_days: Continuous,
    pub rel_earn_17: Continuous,
    pub govt_share: Continuous,
    pub informal_share: Continuous,
    pub soe_closed: f64,
    /// Shares of UE, SE, PP, IEA among informal workers.
    pub informal_subtypes: [f64; 4],
    /// Share of partly unofficial pay among non-IEA informal workers.
    pub partial_pay: f64,
}

impl Default for CovariateLaws {
    fn default() -> Self {
        let c = |mean, sd_between, sd_within| Continuous { mean, sd_between, sd_within };
        Self {
            entry_age: (20.0, 50.0),
            female: 0.5,
            russian: 0.85,
            parent_educ: vec![0.5, 0.25, 0.15, 0.1],
            school_years: c(12.0, 2.0, 0.3),
            married: 0.6,
            married_switch: 0.08,
            hh_size: c(3.0, 1.2, 0.4),
            kids: c(1.0, 0.8, 0.3),
            log_consumption: c(0.0, 0.6, 0.5),
            interval_days: c(365.0, 0.0, 20.0),
            rel_earn_17: c(1.0, 0.2, 0.0),
            govt_share: c(35.0, 8.0, 0.0),
            informal_share: c(15.0, 5.0, 0.0),
            soe_closed: 0.05,
            informal_subtypes: [0.45, 0.3, 0.15, 0.1],
            partial_pay: 0.3,
        }
    }
}

/// Community-level one-factor model for the index components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CmaProcess {
    pub communities: usize,
    pub method: IndexMethod,
    /// Per-wave drift of the latent access factor.
    pub trend: f64,
    pub sd_time: f64,
    pub districts: usize,
    pub urban: f64,
}

impl Default for CmaProcess {
    fn default() -> Self {
        Self { communities: 60, method: IndexMethod::Zscore, trend: 0.05, sd_time: 0.3, districts: 7, urban: 0.7 }
    }
}

/// Loan incidence between waves: logit in the origin state, the index and a
/// household effect `λ ~ N(0, σ²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoanLaw {
    pub intercept: f64,
    /// Origin-state coefficients relative to formal employment.
    pub lag: BTreeMap<String, f64>,
    pub credit: f64,
    pub sigma: f64,
    pub intent_prob: f64,
    /// Share of mortgage or auto loans among loans taken.
    pub mortgage_share: f64,
}

impl Default for LoanLaw {
    fn default() -> Self {
        Self {
            intercept: -1.5,
            lag: [("I".to_string(), 0.84f64.ln()), ("O".to_string(), 0.642f64.ln())].into_iter().collect(),
            credit: 1.32f64.ln(),
            sigma: 0.8,
            intent_prob: 0.1,
            mortgage_share: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpConfig {
    pub persons: usize,
    pub waves: usize,
    pub first_year: i32,
    pub seed: u64,
    /// Regressor layout of the generating equation.
    pub spec: ModelSpec,
    /// Outcome (F or O) → column name → coefficient; absent entries are 0.
    pub coefficients: BTreeMap<String, BTreeMap<String, f64>>,
    /// Covariance of (η_F, η_O).
    pub sigma: [[f64; 2]; 2],
    pub initial_state: InitialStateLaw,
    /// Probability of entering at each wave; later waves get zero.
    pub entry: Vec<f64>,
    /// Per-wave probability of leaving, from the third observed wave on.
    pub attrition: f64,
    pub household_size: usize,
    pub covariates: CovariateLaws,
    pub cma: CmaProcess,
    pub loans: Option<LoanLaw>,
    pub sampling: Sampling,
}

impl Default for DgpConfig {
    fn default() -> Self {
        let coef = |pairs: &[(&str, f64)]| pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>();
        let spec = ModelSpec {
            current: vec!["log_consumption".into()],
            constant: vec![],
            categorical: vec![],
            year_dummies: false,
            entry_wave_dummies: false,
            time_means: vec!["log_consumption".into()],
            initial: vec!["log_consumption".into()],
            ..ModelSpec::default()
        };
        let mut coefficients = BTreeMap::new();
        coefficients.insert(
            "F".to_string(),
            coef(&[
                ("_cons", 0.5),
                ("lag:I", -1.5),
                ("lag:O", -2.0),
                ("cma_index", 0.1),
                ("lag:I*cma_index", 0.4),
                ("lag:O*cma_index", 0.2),
                ("log_consumption", 0.3),
                ("mean:log_consumption", 0.3),
                ("init:log_consumption", 0.2),
                ("init_state:I", -0.5),
                ("init_state:O", -0.3),
            ]),
        );
        coefficients.insert(
            "O".to_string(),
            coef(&[
                ("_cons", -0.5),
                ("lag:I", -0.2),
                ("lag:O", 1.5),
                ("cma_index", -0.1),
                ("lag:I*cma_index", 0.3),
                ("lag:O*cma_index", -0.2),
                ("log_consumption", -0.2),
                ("mean:log_consumption", -0.2),
                ("init:log_consumption", 0.1),
                ("init_state:I", 0.2),
                ("init_state:O", 0.6),
            ]),
        );
        Self {
            persons: 1000,
            waves: 6,
            first_year: 2006,
            seed: 1,
            spec,
            coefficients,
            sigma: [[1.0, 0.3], [0.3, 0.8]],
            initial_state: InitialStateLaw::Exogenous { probs: [0.5, 0.25, 0.25] },
            entry: vec![0.7, 0.1, 0.1, 0.1],
            attrition: 0.05,
            household_size: 1,
            covariates: CovariateLaws::default(),
            cma: CmaProcess::default(),
            loans: None,
            sampling: Sampling::Softmax,
        }
    }
}

fn invalid(m: impl Into<String>) -> SimulateError {
    SimulateError::ConfigInvalid(m.into())
}

impl DgpConfig {
    pub fn validate(&self) -> Result<(), SimulateError> {
        if self.persons == 0 || self.waves < 2 {
            return Err(invalid("need at least one person and two waves"));
        }
        if self.spec.outcome_coding != StateCoding::Registration || self.spec.lag_coding != StateCoding::Registration {
            return Err(invalid("generation uses the registration coding"));
        }
        if self.spec.base_outcome_label() != "I" || self.spec.lag_omitted_label() != "F" {
            return Err(invalid("generation uses base outcome I and omitted lag F"));
        }
        if self.spec.exit_outcome || self.spec.initial_conditions == InitialConditions::Heckman {
            return Err(invalid("generating spec must be exogenous or WRS without an exit outcome"));
        }
        self.spec.validate().map_err(|e| invalid(e.to_string()))?;
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.attrition) || !self.entry.iter().all(|&p| prob(p)) || self.entry.iter().sum::<f64>() <= 0.0 {
            return Err(invalid("entry and attrition must be probabilities"));
        }
        if self.entry.len() > self.waves - 1 && self.entry[self.waves - 1..].iter().any(|&p| p > 0.0) {
            return Err(invalid("entry is only allowed up to the second-to-last wave"));
        }
        let s = self.sigma;
        if s[0][1] != s[1][0] || s[0][0] < 0.0 || s[1][1] < 0.0 || s[0][0] * s[1][1] - s[0][1] * s[1][0] < -1e-12 {
            return Err(invalid("sigma must be symmetric positive semi-definite"));
        }
        if let InitialStateLaw::Exogenous { probs } = &self.initial_state {
            if !probs.iter().all(|&p| prob(p)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(invalid("initial-state probabilities must sum to one"));
            }
        }
        if self.household_size == 0 || self.cma.communities < 2 || self.cma.districts == 0 {
            return Err(invalid("household size, communities and districts must be positive"));
        }
        let manifest = self.manifest()?;
        for (o, m) in &self.coefficients {
            if o != "F" && o != "O" {
                return Err(invalid(format!("coefficients for non-free outcome `{o}`")));
            }
            for c in m.keys() {
                if manifest.column(c).is_none() {
                    return Err(invalid(format!("coefficient on unknown column `{c}`")));
                }
            }
        }
        Ok(())
    }

    fn entry_waves(&self) -> Vec<usize> {
        (0..self.waves - 1).filter(|&e| self.entry.get(e).copied().unwrap_or(0.0) > 0.0).collect()
    }

    /// Regressor layout used for generation.
    pub fn manifest(&self) -> Result<DesignManifest, SimulateError> {
        let cats: Vec<(String, Vec<i64>)> = self
            .spec
            .categorical
            .iter()
            .map(|v| {
                let n = match v.as_str() {
                    "parent_educ" => self.covariates.parent_educ.len(),
                    "district" => self.cma.districts,
                    "bank_presence" => 3,
                    _ => 2,
                };
                let start = if matches!(v.as_str(), "parent_educ" | "district" | "bank_presence") { 1 } else { 0 };
                (v.clone(), (start..start + n as i64).collect())
            })
            .collect();
        let levels = LevelSets {
            categorical: cats,
            years: (0..self.waves - 1).map(|w| self.first_year + w as i32).collect(),
            entry: self.entry_waves().iter().map(|&e| self.first_year + e as i32).collect(),
        };
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        DesignManifest::from_levels(&self.spec, s(&OUTCOMES), s(&OUTCOMES), s(&OUTCOMES), levels)
            .map_err(|e| invalid(e.to_string()))
    }

    fn beta(&self, manifest: &DesignManifest) -> [Vec<f64>; 2] {
        let get = |o: &str| {
            let mut b = vec![0.0; manifest.n_cols()];
            if let Some(m) = self.coefficients.get(o) {
                for (c, v) in m {
                    b[manifest.column(c).expect("validated")] = *v;
                }
            }
            b
        };
        [get("F"), get("O")]
    }

    fn cholesky(&self) -> [[f64; 2]; 2] {
        let s = self.sigma;
        let l00 = s[0][0].max(0.0).sqrt();
        let l10 = if l00 > 0.0 { s[1][0] / l00 } else { 0.0 };
        let l11 = (s[1][1] - l10 * l10).max(0.0).sqrt();
        [[l00, 0.0], [l10, l11]]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub config: DgpConfig,
    /// Parameter name → true value, names as in fitted results.
    pub parameters: BTreeMap<String, f64>,
}

impl GroundTruth {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.parameters.get(name).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPanel {
    pub dataset: PanelDataset,
    pub truth: GroundTruth,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn bern(rng: &mut ChaCha8Rng, p: f64) -> bool {
    rng.random::<f64>() < p
}

fn categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let total: f64 = probs.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// Probabilities over (F, I, O) from free-outcome indices (F, O).
pub fn softmax3(vf: f64, vo: f64) -> [f64; 3] {
    let mx = vf.max(vo).max(0.0);
    let (ef, ei, eo) = ((vf - mx).exp(), (-mx).exp(), (vo - mx).exp());
    let z = ef + ei + eo;
    [ef / z, ei / z, eo / z]
}

fn draw_state(rng: &mut ChaCha8Rng, vf: f64, vo: f64, sampling: Sampling) -> usize {
    match sampling {
        Sampling::Softmax => categorical(rng, &softmax3(vf, vo)),
        Sampling::GumbelMax => {
            let mut gumbel = || -(-rng.random::<f64>().max(f64::MIN_POSITIVE).ln()).ln();
            let u = [vf + gumbel(), gumbel(), vo + gumbel()];
            (0..3).fold(0, |b, k| if u[k] > u[b] { k } else { b })
        }
    }
}

struct Community {
    district: f64,
    urban: f64,
    pop_log: f64,
    components: Vec<CmaComponents>,
    index: Vec<f64>,
}

fn communities(cfg: &DgpConfig) -> Result<Vec<Community>, SimulateError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::MAX);
    let p = &cfg.cma;
    let mut out = Vec::with_capacity(p.communities);
    for _ in 0..p.communities {
        let f = normal(&mut rng);
        let district = 1.0 + rng.random_range(0..p.districts) as f64;
        let urban = f64::from(u8::from(bern(&mut rng, p.urban)));
        let pop_log = 9.0 + 1.5 * normal(&mut rng) + urban;
        let mut components = Vec::with_capacity(cfg.waves);
        for w in 0..cfg.waves {
            let a = f + p.trend * w as f64 + p.sd_time * normal(&mut rng);
            let score = a + 0.5 * normal(&mut rng);
            let presence: u8 = if score < -0.8 {
                1
            } else if score < 0.2 {
                2
            } else {
                3
            };
            let dist_sber = if presence >= 2 { 0.0 } else { (2.5 - 0.5 * a + 0.3 * normal(&mut rng)).exp() };
            let dist_other = if presence == 3 { 0.0 } else { (3.0 - 0.5 * a + 0.3 * normal(&mut rng)).exp() };
            let offices = (0.3 + 0.1 * a + 0.05 * normal(&mut rng)).max(0.0);
            components.push(CmaComponents { bank_presence: presence, dist_sber, dist_other, offices_per_1000: offices });
        }
        out.push(Community { district, urban, pop_log, components, index: Vec::new() });
    }
    let flat: Vec<CmaComponents> = out.iter().flat_map(|c| c.components.iter().copied()).collect();
    let idx = build_index(&flat, p.method, IndexOptions { allow_constant_components: true })
        .map_err(|e| invalid(format!("index construction failed: {e}")))?;
    for (k, c) in out.iter_mut().enumerate() {
        c.index = idx.values[k * cfg.waves..(k + 1) * cfg.waves].to_vec();
    }
    Ok(out)
}

fn state_of(rng: &mut ChaCha8Rng, k: usize, laws: &CovariateLaws) -> EmploymentState {
    match k {
        0 => EmploymentState::new(Sector::Formal, None, Some(PayType::OfficialOnly)).expect("valid"),
        2 => EmploymentState::new(Sector::NoJob, None, Some(PayType::NoJob)).expect("valid"),
        _ => {
            let sub = match categorical(rng, &laws.informal_subtypes) {
                0 => InformalSubtype::UnregisteredEmployee,
                1 => InformalSubtype::SelfEmployed,
                2 => InformalSubtype::PrivatePerson,
                _ => InformalSubtype::Iea,
            };
            let pay = if sub == InformalSubtype::Iea {
                None
            } else if bern(rng, laws.partial_pay) {
                Some(PayType::PartlyUnofficial)
            } else {
                Some(PayType::UnofficialOnly)
            };
            EmploymentState::new(Sector::Informal, Some(sub), pay).expect("valid")
        }
    }
}

fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

struct PersonDraw {
    rows: Vec<ObservationRow>,
}

fn generate_person(
    cfg: &DgpConfig,
    i: usize,
    comms: &[Community],
    manifest: &DesignManifest,
    beta: &[Vec<f64>; 2],
    chol: [[f64; 2]; 2],
    lambda_hh: f64,
) -> Result<PersonDraw, SimulateError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(i as u64);
    let laws = &cfg.covariates;
    let pid = i as u64 + 1;
    let entry = categorical(&mut rng, &cfg.entry);
    let mut last = entry + 1;
    while last + 1 < cfg.waves && !bern(&mut rng, cfg.attrition) {
        last += 1;
    }
    let comm_id = rng.random_range(0..comms.len());
    let comm = &comms[comm_id];

    let age0 = laws.entry_age.0 + (laws.entry_age.1 - laws.entry_age.0) * rng.random::<f64>();
    let female = f64::from(u8::from(bern(&mut rng, laws.female)));
    let russian = f64::from(u8::from(bern(&mut rng, laws.russian)));
    let parent_educ = 1.0 + categorical(&mut rng, &laws.parent_educ) as f64;
    let person_mean = |rng: &mut ChaCha8Rng, c: Continuous| c.mean + c.sd_between * normal(rng);
    let school = person_mean(&mut rng, laws.school_years);
    let hh = person_mean(&mut rng, laws.hh_size);
    let kids = person_mean(&mut rng, laws.kids);
    let cons = person_mean(&mut rng, laws.log_consumption);
    let mut married = bern(&mut rng, laws.married);
    let instruments = [
        person_mean(&mut rng, laws.rel_earn_17),
        person_mean(&mut rng, laws.govt_share),
        person_mean(&mut rng, laws.informal_share),
        f64::from(u8::from(bern(&mut rng, laws.soe_closed))),
    ];
    let z = [normal(&mut rng), normal(&mut rng)];
    let eta = [chol[0][0] * z[0], chol[1][0] * z[0] + chol[1][1] * z[1]];

    let mut rows = Vec::with_capacity(last - entry + 1);
    for w in entry..=last {
        let year = cfg.first_year + w as i32;
        let mut r = ObservationRow::new(pid, year, None);
        let within = |rng: &mut ChaCha8Rng, m: f64, c: Continuous| m + c.sd_within * normal(rng);
        if w > entry && bern(&mut rng, laws.married_switch) {
            married = !married;
        }
        r.set("age", Some((age0 + (w - entry) as f64).floor()));
        r.set("female", Some(female));
        r.set("russian", Some(russian));
        r.set("parent_educ", Some(parent_educ));
        r.set("school_years", Some(within(&mut rng, school, laws.school_years)));
        r.set("married", Some(f64::from(u8::from(married))));
        r.set("hh_size", Some(within(&mut rng, hh, laws.hh_size).round().max(1.0)));
        r.set("kids", Some(within(&mut rng, kids, laws.kids).round().max(0.0)));
        r.set("log_consumption", Some(within(&mut rng, cons, laws.log_consumption)));
        r.set("pop_log", Some(comm.pop_log));
        r.set("urban", Some(comm.urban));
        r.set("district", Some(comm.district));
        r.set("interval_days", Some(within(&mut rng, laws.interval_days.mean, laws.interval_days).round().max(1.0)));
        r.set("cma_index", Some(comm.index[w]));
        let c = comm.components[w];
        r.set("bank_presence", Some(c.bank_presence as f64));
        r.set("dist_sber_km", Some(c.dist_sber));
        r.set("dist_other_km", Some(c.dist_other));
        r.set("offices_per_1000", Some(c.offices_per_1000));
        r.set("loan_taken", Some(0.0));
        r.set("loan_intent", Some(0.0));
        if w == entry {
            for (name, v) in ["rel_earn_17", "govt_share", "informal_share", "soe_closed"].iter().zip(instruments) {
                r.set(name, Some(v));
            }
        }
        r.household_id = Some(i as u64 / cfg.household_size as u64 + 1);
        r.community_id = Some(comm_id as u64 + 1);
        rows.push(r);
    }

    // initial state
    let first = match &cfg.initial_state {
        InitialStateLaw::Exogenous { probs } => categorical(&mut rng, probs),
        InitialStateLaw::Correlated { intercepts, mixing, instruments: coefs } => {
            let v = |o: &str, e: f64| {
                let mut v = intercepts.get(o).copied().unwrap_or(0.0) + mixing * e;
                if let Some(m) = coefs.get(o) {
                    for (name, b) in m {
                        v += b * rows[0].resolve(name).unwrap_or(0.0);
                    }
                }
                v
            };
            categorical(&mut rng, &softmax3(v("F", eta[0]), v("O", eta[1])))
        }
    };
    let mut states = vec![first];
    rows[0].state = Some(state_of(&mut rng, first, laws));
    let ctx = PersonContext::new(&cfg.spec, manifest, &rows).map_err(|e| invalid(e.to_string()))?;
    let mut x = vec![0.0; manifest.n_cols()];
    let mut loans = Vec::new();
    for t in 0..rows.len() - 1 {
        let origin = states[t];
        ctx.fill(manifest, t, origin, &mut x).map_err(|e| invalid(e.to_string()))?;
        let vf: f64 = x.iter().zip(&beta[0]).map(|(a, b)| a * b).sum::<f64>() + eta[0];
        let vo: f64 = x.iter().zip(&beta[1]).map(|(a, b)| a * b).sum::<f64>() + eta[1];
        states.push(draw_state(&mut rng, vf, vo, cfg.sampling));
        if let Some(law) = &cfg.loans {
            let lag = match origin {
                1 => law.lag.get("I").copied().unwrap_or(0.0),
                2 => law.lag.get("O").copied().unwrap_or(0.0),
                _ => 0.0,
            };
            let c = rows[t].get("cma_index").unwrap_or(0.0);
            loans.push(bern(&mut rng, logistic(law.intercept + lag + law.credit * c + lambda_hh)));
        }
    }
    drop(ctx);
    for t in 1..rows.len() {
        rows[t].state = Some(state_of(&mut rng, states[t], laws));
    }
    if let Some(law) = &cfg.loans {
        let first_loan = bern(&mut rng, logistic(law.intercept + lambda_hh));
        let mut taken = vec![first_loan];
        taken.extend(loans);
        for (r, l) in rows.iter_mut().zip(taken) {
            r.set("loan_taken", Some(f64::from(u8::from(l))));
            r.loan_type = Some(if !l {
                LoanType::None
            } else if bern(&mut rng, law.mortgage_share) {
                LoanType::MortgageAuto
            } else {
                LoanType::Consumer
            });
            r.set("loan_intent", Some(f64::from(u8::from(bern(&mut rng, law.intent_prob)))));
        }
    }
    Ok(PersonDraw { rows })
}

/// True parameter values under the names a fit of the generating spec
/// reports.
fn truth(cfg: &DgpConfig, manifest: &DesignManifest) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    let beta = cfg.beta(manifest);
    for (m, o) in ["F", "O"].iter().enumerate() {
        for (c, col) in manifest.columns.iter().enumerate() {
            out.insert(format!("{o}:{}", col.name), beta[m][c]);
        }
    }
    let l = cfg.cholesky();
    out.insert("chol:F,F".into(), l[0][0]);
    out.insert("chol:O,F".into(), l[1][0]);
    out.insert("chol:O,O".into(), l[1][1]);
    out.insert("var(eta_F)".into(), cfg.sigma[0][0]);
    out.insert("var(eta_O)".into(), cfg.sigma[1][1]);
    out.insert("cov(eta_F,eta_O)".into(), cfg.sigma[0][1]);
    if let InitialStateLaw::Correlated { intercepts, mixing, instruments } = &cfg.initial_state {
        for o in ["F", "O"] {
            out.insert(format!("initial:{o}:_cons"), intercepts.get(o).copied().unwrap_or(0.0));
            out.insert(format!("rho:{o}"), *mixing);
            if let Some(m) = instruments.get(o) {
                for (k, v) in m {
                    out.insert(format!("initial:{o}:{k}"), *v);
                }
            }
        }
    }
    if let Some(law) = &cfg.loans {
        out.insert("loan:_cons".into(), law.intercept);
        for (k, v) in &law.lag {
            out.insert(format!("loan:lag:{k}"), *v);
        }
        out.insert("loan:cma_index".into(), law.credit);
        out.insert("chol:loan,loan".into(), law.sigma);
    }
    out
}

/// Generates a panel and its ground truth; identical configs give
/// bitwise-identical output.
pub fn generate_panel(cfg: &DgpConfig) -> Result<SimulatedPanel, SimulateError> {
    cfg.validate()?;
    let manifest = cfg.manifest()?;
    let comms = communities(cfg)?;
    let beta = cfg.beta(&manifest);
    let chol = cfg.cholesky();
    let n_households = cfg.persons.div_ceil(cfg.household_size);
    let lambdas: Vec<f64> = (0..n_households)
        .map(|h| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(u64::MAX - 1 - h as u64);
            cfg.loans.as_ref().map_or(0.0, |l| l.sigma * normal(&mut rng))
        })
        .collect();
    let people: Vec<Result<PersonDraw, SimulateError>> = (0..cfg.persons)
        .into_par_iter()
        .map(|i| generate_person(cfg, i, &comms, &manifest, &beta, chol, lambdas[i / cfg.household_size]))
        .collect();
    let mut rows = Vec::new();
    for p in people {
        rows.extend(p?.rows);
    }
    let dataset = PanelDataset::from_rows(rows).map_err(|e| invalid(e.to_string()))?;
    Ok(SimulatedPanel { dataset, truth: GroundTruth { seed: cfg.seed, config: cfg.clone(), parameters: truth(cfg, &manifest) } })
}

/// Writes `panel.csv` and `truth.json` into `dir`.
pub fn write_outputs(dir: &Path, sim: &SimulatedPanel) -> Result<(), SimulateError> {
    let io = |e: std::io::Error| SimulateError::Io(e.to_string());
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut buf = Vec::new();
    write_panel(&sim.dataset, &mut buf).map_err(|e| SimulateError::Io(e.to_string()))?;
    std::fs::write(dir.join("panel.csv"), buf).map_err(io)?;
    let json = serde_json::to_string_pretty(&sim.truth).map_err(|e| SimulateError::Io(e.to_string()))?;
    std::fs::write(dir.join("truth.json"), json).map_err(io)?;
    Ok(())
}

/// One support point of a discrete heterogeneity distribution: values of
/// the free-outcome effects and a probability.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportPoint {
    pub eta: Vec<f64>,
    pub weight: f64,
}

/// Exhaustive-enumeration likelihood of a small design under a discrete
/// heterogeneity distribution: `Σ_i ln Σ_s w_s Π_t P(y_it | η_s)`, with the
/// first-period factor when the layout has one.
pub fn brute_force_likelihood(
    design: &DesignMatrix,
    params: &ParameterVector,
    support: &[SupportPoint],
) -> Result<f64, SimulateError> {
    let lay: &ParameterLayout = &params.layout;
    let m_ = lay.free_outcomes;
    if design.units.len() > 3 || design.units.iter().any(|u| u.end - u.start > 3) {
        return Err(invalid("brute-force oracle is limited to 3 persons with 3 transitions"));
    }
    if support.is_empty() {
        return Err(SimulateError::SupportInvalid("empty support".into()));
    }
    if support.iter().any(|s| s.eta.len() != m_ || !(s.weight >= 0.0)) {
        return Err(SimulateError::SupportInvalid("each point needs one value per free outcome and a weight ≥ 0".into()));
    }
    let total: f64 = support.iter().map(|s| s.weight).sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(SimulateError::SupportInvalid(format!("weights sum to {total}")));
    }
    let free = design.manifest.free_outcomes();
    let mut ll = 0.0;
    for (u, unit) in design.units.iter().enumerate() {
        let mut li = 0.0;
        for s in support {
            let mut prod = 1.0;
            for r in unit.start..unit.end {
                let x = design.row(r);
                let mut expv = vec![1.0; design.manifest.n_outcomes()];
                for (m, &j) in free.iter().enumerate() {
                    let v: f64 = x.iter().zip(params.beta(m)).map(|(a, b)| a * b).sum::<f64>() + s.eta[m];
                    expv[j] = v.exp();
                }
                prod *= expv[design.records[r].outcome] / expv.iter().sum::<f64>();
            }
            if lay.heckman {
                if let Some(y) = unit.initial_outcome {
                    let w = design.initial_row(u);
                    let mut expv = vec![1.0; design.manifest.n_outcomes()];
                    for (m, &j) in free.iter().enumerate() {
                        let v: f64 =
                            w.iter().zip(params.theta(m)).map(|(a, b)| a * b).sum::<f64>() + params.rho()[m] * s.eta[m];
                        expv[j] = v.exp();
                    }
                    prod *= expv[y] / expv.iter().sum::<f64>();
                }
            }
            li += s.weight * prod;
        }
        ll += li.ln();
    }
    Ok(ll)
}

/// Support points `L z_s` for a discrete rule under the Cholesky factor in
/// `params`.
pub fn support_from_rule(params: &ParameterVector, points: &[Vec<f64>], weights: &[f64]) -> Vec<SupportPoint> {
    let l: DMatrix<f64> = params.layout.cholesky(&params.values);
    points
        .iter()
        .zip(weights)
        .map(|(z, &w)| {
            let zv = nalgebra::DVector::from_column_slice(z);
            SupportPoint { eta: (&l * zv).iter().copied().collect(), weight: w }
        })
        .collect()
}
