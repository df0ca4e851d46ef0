use std::path::PathBuf;

use dynlab::estimator::{fit, FitOptions, Heterogeneity, InitialConditions, ModelSpec};
use dynlab::panel::build_design;
use dynlab::simulate::{generate_panel, DgpConfig, LoanLaw};

fn load(n: usize) -> ModelSpec {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../../configs/table6/spec{n}.json"));
    let text = std::fs::read_to_string(&path).unwrap();
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn robustness_configs_build_designs() {
    let cfg = DgpConfig { persons: 300, waves: 5, seed: 12, loans: Some(LoanLaw::default()), household_size: 2, ..DgpConfig::default() };
    let ds = generate_panel(&cfg).unwrap().dataset;
    let specs: Vec<ModelSpec> = (1..=7).map(load).collect();
    for (i, s) in specs.iter().enumerate() {
        s.validate().unwrap_or_else(|e| panic!("spec{}: {e}", i + 1));
    }
    assert_eq!(specs[0].heterogeneity, Heterogeneity::None);
    assert_eq!(specs[1].initial_conditions, InitialConditions::Exogenous);
    assert!(specs[1].time_means.is_empty() && specs[1].initial.is_empty());
    assert_eq!(specs[2].initial_conditions, InitialConditions::Heckman);
    for s in &specs[3..] {
        assert_eq!(s.initial_conditions, InitialConditions::Wrs);
    }

    let designs: Vec<_> = specs.iter().map(|s| build_design(&ds, s).unwrap()).collect();
    let main = build_design(&ds, &ModelSpec::default()).unwrap();
    assert!(!designs[2].manifest.initial_columns.is_empty());
    assert!(designs[3].manifest.n_cols() > main.manifest.n_cols());
    assert!(designs[4].n_records() <= main.n_records());
    assert!(designs[5].n_records() < main.n_records());
    assert_eq!(designs[6].manifest.outcomes.len(), 4);
    assert!(designs[6].n_records() > main.n_records());

    let f = fit(&specs[0], &designs[0], &FitOptions::default()).unwrap();
    assert!(f.diagnostics.converged);
}
