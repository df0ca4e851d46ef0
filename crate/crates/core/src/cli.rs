//! Command-line pipelines. Every run writes its results plus a
//! `manifest.json` with the arguments, resolved configuration, tool version
//! and SHA-256 hashes of inputs and outputs.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::cma::{build_index, write_index_csv, CmaComponents, CmaError, CommunityYear, IndexMethod, IndexOptions};
use crate::descriptives::{
    event_study, summary_stats, transition_matrix, write_matrices_csv, DescriptivesError, TransitionSplit,
};
use crate::effects::{
    average_marginal_effect_with, effects_at_grid_with, policy_simulation, EffectsError, Integration, PolicyScenario,
};
use crate::estimator::{fit, fit_loan_model, render_rrr_table, EstimatorError, FitOptions, FitResult, Mode, ModelKind, ModelSpec};
use crate::panel::loan::{build_loan_design, LoanSpec};
use crate::panel::selection::REQUIRED_COVARIATES;
use crate::panel::{
    apply_selection_rules_with, build_design, write_panel, DesignMatrix, PanelDataset, PanelError,
    SelectionOptions, StateCoding,
};
use crate::simulate::{generate_panel, write_outputs, DgpConfig, SimulateError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Usage(String),
    Data(String),
    NotConverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::NotConverged(_) => EXIT_NOT_CONVERGED,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::NotConverged(m) => write!(f, "estimation did not converge: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<PanelError> for CliError {
    fn from(e: PanelError) -> Self {
        match e {
            PanelError::UnknownVariable(_) | PanelError::InvalidSpec(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        match e {
            EstimatorError::NotConverged { .. } => CliError::NotConverged(e.to_string()),
            EstimatorError::Design(p) => p.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EffectsError> for CliError {
    fn from(e: EffectsError) -> Self {
        match e {
            EffectsError::Io(_) | EffectsError::EmptySubgroup(_) | EffectsError::DimensionMismatch(_) => {
                CliError::Data(e.to_string())
            }
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<SimulateError> for CliError {
    fn from(e: SimulateError) -> Self {
        match e {
            SimulateError::ConfigInvalid(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<CmaError> for CliError {
    fn from(e: CmaError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<DescriptivesError> for CliError {
    fn from(e: DescriptivesError) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "dynlab", version, about = "Dynamic multinomial logit panels: simulate, describe, estimate, post-estimate")]
struct Cli {
    /// Worker threads (falls back to DYNLAB_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress the summary on standard error.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic panel with known parameters.
    Simulate(SimulateArgs),
    /// Build the credit-market accessibility index per community-year.
    Index(IndexArgs),
    /// Transition matrices and summary statistics.
    Describe(DescribeArgs),
    /// Switching around the first household loan.
    EventStudy(EventArgs),
    /// Estimate a dynamic or loan model.
    Fit(FitArgs),
    /// Average marginal effects and probability curves from a fit.
    Effects(EffectsArgs),
    /// Before/after policy scenarios from a fit.
    Policy(PolicyArgs),
}

#[derive(Debug, Args)]
struct PanelInput {
    /// Panel CSV.
    #[arg(long)]
    panel: PathBuf,
    /// Apply the sample-selection rules before the analysis.
    #[arg(long)]
    select: bool,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Generator configuration (JSON); defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Zscore,
    Pca,
}

#[derive(Debug, Args)]
struct IndexArgs {
    #[command(flatten)]
    input: PanelInput,
    #[arg(long, value_enum, default_value = "zscore")]
    method: MethodArg,
    /// Skip constant components instead of failing.
    #[arg(long)]
    allow_constant: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CodingArg {
    Registration,
    Subtypes,
    PayType,
}

impl From<CodingArg> for StateCoding {
    fn from(c: CodingArg) -> Self {
        match c {
            CodingArg::Registration => StateCoding::Registration,
            CodingArg::Subtypes => StateCoding::InformalSubtypes,
            CodingArg::PayType => StateCoding::PayType,
        }
    }
}

#[derive(Debug, Args)]
struct DescribeArgs {
    #[command(flatten)]
    input: PanelInput,
    #[arg(long, value_enum, default_value = "registration")]
    coding: CodingArg,
    /// Variables for the summary table (comma separated).
    #[arg(long, value_delimiter = ',')]
    variables: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EventArgs {
    #[command(flatten)]
    input: PanelInput,
    /// Relative years shown on each side of the event.
    #[arg(long, default_value_t = 5)]
    window: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    input: PanelInput,
    /// Model specification (JSON); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    nodes: Option<usize>,
    /// Estimate the loan equation; the configuration is a loan specification.
    #[arg(long)]
    loan: bool,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EffectsArgs {
    #[command(flatten)]
    input: PanelInput,
    /// `fit.json` from the fit subcommand.
    #[arg(long)]
    fit: PathBuf,
    #[arg(long, default_value = "cma_index")]
    target: String,
    /// Grid `lo:hi:n` for the probability curve.
    #[arg(long)]
    grid: Option<String>,
    /// Set the heterogeneity terms to zero instead of averaging over them.
    #[arg(long)]
    conditional: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PolicyArgs {
    #[command(flatten)]
    input: PanelInput,
    #[arg(long)]
    fit: PathBuf,
    /// Scenario list (JSON array, or a single scenario).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Runs the tool on `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(&cli, &args) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("dynlab: {e}");
            e.exit_code()
        }
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if let Some(n) = flag {
        return if n == 0 { Err(CliError::Usage("--threads must be positive".into())) } else { Ok(Some(n)) };
    }
    match std::env::var("DYNLAB_THREADS") {
        Ok(v) if !v.trim().is_empty() => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!("DYNLAB_THREADS=`{v}` is not a positive integer"))),
        },
        _ => Ok(None),
    }
}

fn execute(cli: &Cli, args: &[String]) -> Result<(), CliError> {
    let threads = thread_count(cli.threads)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    pool.install(|| {
        let mut run = Run::new(args, threads, cli.quiet);
        match &cli.command {
            Command::Simulate(a) => simulate(&mut run, a),
            Command::Index(a) => index(&mut run, a),
            Command::Describe(a) => describe(&mut run, a),
            Command::EventStudy(a) => events(&mut run, a),
            Command::Fit(a) => fit_cmd(&mut run, a),
            Command::Effects(a) => effects(&mut run, a),
            Command::Policy(a) => policy(&mut run, a),
        }
    })
}

#[derive(Debug, Serialize)]
struct FileHash {
    path: String,
    sha256: String,
}

/// Collects the inputs and outputs of one run for the manifest.
struct Run {
    args: Vec<String>,
    threads: Option<usize>,
    quiet: bool,
    inputs: Vec<FileHash>,
    outputs: Vec<FileHash>,
    config: Value,
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

impl Run {
    fn new(args: &[String], threads: Option<usize>, quiet: bool) -> Self {
        Self { args: args.to_vec(), threads, quiet, inputs: Vec::new(), outputs: Vec::new(), config: Value::Null }
    }

    fn read(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        self.inputs.push(FileHash { path: path.display().to_string(), sha256: sha256_hex(&bytes) });
        Ok(bytes)
    }

    fn read_json<T: DeserializeOwned>(&mut self, path: &Path) -> Result<T, CliError> {
        let bytes = self.read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    fn panel(&mut self, input: &PanelInput) -> Result<PanelDataset, CliError> {
        let bytes = self.read(&input.panel)?;
        let ds = crate::panel::load_panel(bytes.as_slice())?;
        Ok(if input.select { apply_selection_rules_with(ds, &SelectionOptions::default()) } else { ds })
    }

    fn write(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))?;
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))?;
        self.outputs.push(FileHash { path: name.to_string(), sha256: sha256_hex(bytes) });
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
        self.write(dir, name, text.as_bytes())
    }

    fn finish(&mut self, dir: &Path, command: &str) -> Result<(), CliError> {
        let manifest = json!({
            "tool": "dynlab",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "args": self.args,
            "threads": self.threads,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
        });
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Data(e.to_string()))?;
        self.outputs.clear();
        self.write(dir, "manifest.json", text.as_bytes())
    }

    fn note(&self, msg: &str) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }
}

fn simulate(run: &mut Run, a: &SimulateArgs) -> Result<(), CliError> {
    let mut cfg: DgpConfig = match &a.config {
        Some(p) => run.read_json(p)?,
        None => DgpConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    run.config = serde_json::to_value(&cfg).map_err(|e| CliError::Data(e.to_string()))?;
    let sim = generate_panel(&cfg)?;
    write_outputs(&a.out, &sim)?;
    for name in ["panel.csv", "truth.json"] {
        let bytes = fs::read(a.out.join(name)).map_err(|e| CliError::Data(e.to_string()))?;
        run.outputs.push(FileHash { path: name.to_string(), sha256: sha256_hex(&bytes) });
    }
    run.note(&format!("simulated {} persons, {} rows -> {}", sim.dataset.n_persons(), sim.dataset.n_rows(), a.out.display()));
    run.finish(&a.out, "simulate")
}

fn index(run: &mut Run, a: &IndexArgs) -> Result<(), CliError> {
    let mut ds = run.panel(&a.input)?;
    let method = match a.method {
        MethodArg::Zscore => IndexMethod::Zscore,
        MethodArg::Pca => IndexMethod::Pca,
    };
    let mut cells: BTreeMap<CommunityYear, CmaComponents> = BTreeMap::new();
    for r in ds.rows() {
        let Some(c) = r.community_id else { continue };
        let vals = ["bank_presence", "dist_sber_km", "dist_other_km", "offices_per_1000"].map(|v| r.get(v));
        let [Some(p), Some(s), Some(o), Some(off)] = vals else { continue };
        let comp = CmaComponents::new(p as u8, s, o, off)?;
        let key = CommunityYear { community_id: c, year: r.year };
        if let Some(prev) = cells.insert(key, comp) {
            if prev != comp {
                return Err(CliError::Data(format!("community {c}, year {}: components differ across rows", r.year)));
            }
        }
    }
    let keys: Vec<CommunityYear> = cells.keys().copied().collect();
    let comps: Vec<CmaComponents> = cells.values().copied().collect();
    let idx = build_index(&comps, method, IndexOptions { allow_constant_components: a.allow_constant })?;
    let lookup: BTreeMap<CommunityYear, f64> = keys.iter().copied().zip(idx.values.iter().copied()).collect();
    for p in &mut ds.persons {
        for r in &mut p.rows {
            let v = r.community_id.and_then(|c| lookup.get(&CommunityYear { community_id: c, year: r.year }).copied());
            r.set("cma_index", v);
        }
    }
    run.config = json!({ "method": method.as_str(), "allow_constant_components": a.allow_constant, "select": a.input.select });
    let mut buf = Vec::new();
    write_index_csv(&mut buf, &keys, &idx)?;
    run.write(&a.out, "cma_index.csv", &buf)?;
    let mut buf = Vec::new();
    write_panel(&ds, &mut buf)?;
    run.write(&a.out, "panel_indexed.csv", &buf)?;
    run.write_json(&a.out, "index_summary.json", &json!({
        "method": method.as_str(),
        "community_years": keys.len(),
        "loadings": idx.loadings,
        "explained_share": idx.explained_share,
    }))?;
    run.note(&format!("index over {} community-years -> {}", keys.len(), a.out.display()));
    run.finish(&a.out, "index")
}

fn describe(run: &mut Run, a: &DescribeArgs) -> Result<(), CliError> {
    let ds = run.panel(&a.input)?;
    let coding: StateCoding = a.coding.into();
    let variables: Vec<String> = if a.variables.is_empty() {
        REQUIRED_COVARIATES.iter().map(|s| s.to_string()).chain(["loan_taken".to_string()]).collect()
    } else {
        a.variables.clone()
    };
    for v in &variables {
        if !crate::panel::is_known_variable(v) {
            return Err(CliError::Usage(format!("unknown variable `{v}`")));
        }
    }
    run.config = json!({ "coding": coding, "variables": variables, "select": a.input.select });
    let mut matrices = transition_matrix(&ds, coding, &TransitionSplit::None);
    matrices.extend(transition_matrix(&ds, coding, &TransitionSplit::BorrowerAtNext));
    let mut buf = Vec::new();
    write_matrices_csv(&matrices, &mut buf)?;
    run.write(&a.out, "transitions.csv", &buf)?;
    let text: String = matrices.iter().map(|m| m.render() + "\n").collect();
    run.write(&a.out, "transitions.txt", text.as_bytes())?;
    let table = summary_stats(&ds, coding, &variables);
    run.write_json(&a.out, "summary.json", &table)?;
    run.write(&a.out, "summary.txt", table.render().as_bytes())?;
    run.note(&text);
    run.finish(&a.out, "describe")
}

fn events(run: &mut Run, a: &EventArgs) -> Result<(), CliError> {
    let ds = run.panel(&a.input)?;
    run.config = json!({ "window": a.window, "select": a.input.select });
    let es = event_study(&ds, a.window)?;
    let mut buf = Vec::new();
    es.write_csv(&mut buf).map_err(CliError::from)?;
    run.write(&a.out, "event_study.csv", &buf)?;
    run.write_json(&a.out, "event_study.json", &es)?;
    run.note(&format!("event study over {} borrowing households -> {}", es.n_events, a.out.display()));
    run.finish(&a.out, "event-study")
}

fn fit_cmd(run: &mut Run, a: &FitArgs) -> Result<(), CliError> {
    let opts = FitOptions { max_iter: a.max_iter.unwrap_or(FitOptions::default().max_iter), ..Default::default() };
    let (result, kind_config) = if a.loan {
        if a.mode.is_some() {
            return Err(CliError::Usage("--mode does not apply to the loan model".into()));
        }
        let mut spec: LoanSpec = match &a.config {
            Some(p) => run.read_json(p)?,
            None => LoanSpec::default(),
        };
        if let Some(n) = a.nodes {
            spec.nodes = n;
        }
        check_nodes(spec.nodes)?;
        let ds = run.panel(&a.input)?;
        let design = build_loan_design(&ds, &spec)?;
        let value = serde_json::to_value(&spec).map_err(|e| CliError::Data(e.to_string()))?;
        (fit_loan_model(&spec, &design, &opts)?, value)
    } else {
        let mut spec: ModelSpec = match &a.config {
            Some(p) => run.read_json(p)?,
            None => ModelSpec::default(),
        };
        if let Some(m) = a.mode {
            spec = spec.with_mode(m);
        }
        if let Some(n) = a.nodes {
            spec.nodes = n;
        }
        check_nodes(spec.nodes)?;
        spec.validate()?;
        let ds = run.panel(&a.input)?;
        let design = build_design(&ds, &spec)?;
        let value = serde_json::to_value(&spec).map_err(|e| CliError::Data(e.to_string()))?;
        (fit(&spec, &design, &opts)?, value)
    };
    run.config = json!({ "spec": kind_config, "loan": a.loan, "select": a.input.select, "max_iter": opts.max_iter });
    run.write(&a.out, "fit.json", result.to_json().as_bytes())?;
    let table = render_rrr_table(&result);
    run.write(&a.out, "rrr.txt", table.as_bytes())?;
    run.note(&format!(
        "log-likelihood {:.4} over {} records, {} units; {} iterations",
        result.log_likelihood, result.n_records, result.n_units, result.diagnostics.iterations
    ));
    if let Some(q) = &result.diagnostics.quadrature_check {
        if !q.stable {
            run.note(&format!("warning: log-likelihood moved by {:.2e} at {} nodes", q.difference, q.nodes));
        }
    }
    run.finish(&a.out, "fit")
}

fn check_nodes(n: usize) -> Result<(), CliError> {
    if n == 0 || n > 40 {
        return Err(CliError::Usage(format!("--nodes {n} outside 1..=40")));
    }
    Ok(())
}

/// Loads a fit and rebuilds its design from the panel.
fn fitted_design(run: &mut Run, input: &PanelInput, path: &Path) -> Result<(FitResult, DesignMatrix), CliError> {
    let result: FitResult = run.read_json(path)?;
    let ds = run.panel(input)?;
    let design = match &result.model {
        ModelKind::Dynamic(spec) => build_design(&ds, spec)?,
        ModelKind::Loan(spec) => build_loan_design(&ds, spec)?,
    };
    if design.manifest != result.manifest {
        return Err(CliError::Usage("panel does not reproduce the fitted design".into()));
    }
    Ok((result, design))
}

fn parse_grid(s: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Usage(format!("--grid `{s}` is not lo:hi:n"));
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, n] = parts.as_slice() else { return Err(bad()) };
    let lo: f64 = lo.parse().map_err(|_| bad())?;
    let hi: f64 = hi.parse().map_err(|_| bad())?;
    let n: usize = n.parse().map_err(|_| bad())?;
    if n == 0 || !(lo.is_finite() && hi.is_finite()) {
        return Err(bad());
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
}

fn effects(run: &mut Run, a: &EffectsArgs) -> Result<(), CliError> {
    let grid = a.grid.as_deref().map(parse_grid).transpose()?;
    let integration = if a.conditional { Integration::Conditional } else { Integration::PopulationAveraged };
    let (result, design) = fitted_design(run, &a.input, &a.fit)?;
    run.config = json!({ "target": a.target, "grid": grid, "integration": integration, "select": a.input.select });
    let report = average_marginal_effect_with(&result, &design, &a.target, integration)?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    run.write(&a.out, "ame.csv", &buf)?;
    run.write(&a.out, "ame.json", report.to_json().as_bytes())?;
    if let Some(g) = grid {
        let curve = effects_at_grid_with(&result, &design, &a.target, &g, integration)?;
        let mut buf = Vec::new();
        curve.write_csv(&mut buf)?;
        run.write(&a.out, "grid.csv", &buf)?;
    }
    run.note(&format!("marginal effects of `{}` over {} records -> {}", a.target, report.n_records, a.out.display()));
    run.finish(&a.out, "effects")
}

fn policy(run: &mut Run, a: &PolicyArgs) -> Result<(), CliError> {
    let raw: Value = run.read_json(&a.config)?;
    let scenarios: Vec<PolicyScenario> = match raw {
        Value::Array(_) => serde_json::from_value(raw),
        other => serde_json::from_value(other).map(|s| vec![s]),
    }
    .map_err(|e| CliError::Usage(format!("{}: {e}", a.config.display())))?;
    for s in &scenarios {
        s.validate()?;
    }
    let (result, design) = fitted_design(run, &a.input, &a.fit)?;
    run.config = json!({ "scenarios": scenarios, "select": a.input.select });
    let mut results = Vec::with_capacity(scenarios.len());
    let mut csv_text = Vec::new();
    for (i, s) in scenarios.iter().enumerate() {
        let r = policy_simulation(&result, &design, s)?;
        let mut buf = Vec::new();
        r.write_csv(&mut buf)?;
        // one header for the combined file
        let text = String::from_utf8(buf).expect("csv is utf-8");
        let body = if i == 0 { text.as_str() } else { text.split_once('\n').map_or("", |(_, b)| b) };
        csv_text.extend_from_slice(body.as_bytes());
        results.push(r);
    }
    run.write(&a.out, "policy.csv", &csv_text)?;
    run.write_json(&a.out, "policy.json", &results)?;
    run.note(&format!("{} scenarios -> {}", results.len(), a.out.display()));
    run.finish(&a.out, "policy")
}
