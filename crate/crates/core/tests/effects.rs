use std::sync::OnceLock;

use dynlab::effects::*;
use dynlab::estimator::*;
use dynlab::panel::{build_design, DesignMatrix};
use dynlab::simulate::{generate_panel, softmax3, DgpConfig};

fn small_spec() -> ModelSpec {
    ModelSpec {
        credit: vec!["cma_index".into()],
        interactions: true,
        current: vec!["log_consumption".into()],
        constant: vec![],
        categorical: vec![],
        year_dummies: false,
        entry_wave_dummies: false,
        time_means: vec![],
        initial: vec![],
        initial_conditions: InitialConditions::Exogenous,
        ..ModelSpec::default()
    }
}

fn fitted(cfg: &DgpConfig, spec: &ModelSpec) -> (FitResult, DesignMatrix) {
    let ds = generate_panel(cfg).unwrap().dataset;
    let d = build_design(&ds, spec).unwrap();
    let f = fit(spec, &d, &FitOptions { check_quadrature: false, ..Default::default() }).unwrap();
    (f, d)
}

fn shared() -> &'static (FitResult, DesignMatrix) {
    static CELL: OnceLock<(FitResult, DesignMatrix)> = OnceLock::new();
    CELL.get_or_init(|| fitted(&DgpConfig { persons: 400, waves: 5, seed: 31, entry: vec![1.0], ..DgpConfig::default() }, &small_spec()))
}

fn with_estimates(fit: &FitResult, edit: impl Fn(&str, &mut f64)) -> FitResult {
    let mut f = fit.clone();
    for (name, v) in f.names.clone().iter().zip(f.estimates.iter_mut()) {
        edit(name, v);
    }
    f
}

fn zero_sigma(name: &str, v: &mut f64) {
    if name.starts_with("chol:") {
        *v = 0.0;
    }
}

fn sum(v: &[f64]) -> f64 {
    v.iter().sum()
}

fn linear_index(fit: &FitResult, outcome: &str, x: &[f64]) -> f64 {
    fit.manifest.columns.iter().zip(x).map(|(c, xi)| fit.estimate(&format!("{outcome}:{}", c.name)).unwrap() * xi).sum()
}

#[test]
fn zero_coefficients_give_uniform_probabilities() {
    let (f, d) = shared();
    let z = with_estimates(f, |_, v| *v = 0.0);
    let p = predict_probabilities(&z, d.row(0), "I").unwrap();
    for pj in p {
        assert!((pj - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn degenerate_heterogeneity_is_plain_softmax() {
    let (f, d) = shared();
    let z = with_estimates(f, zero_sigma);
    for r in [0, 7, 100] {
        let mut x = d.row(r).to_vec();
        for origin in ["F", "I", "O"] {
            z.manifest.set_origin(&mut x, z.manifest.origin_index(origin).unwrap());
            let p = predict_probabilities(&z, &x, origin).unwrap();
            let want = softmax3(linear_index(&z, "F", &x), linear_index(&z, "O", &x));
            for j in 0..3 {
                assert!((p[j] - want[j]).abs() < 1e-14, "{p:?} vs {want:?}");
            }
        }
    }
    let c = predict_probabilities_with(f, d.row(0), "F", Integration::Conditional).unwrap();
    let p = predict_probabilities(&z, d.row(0), "F").unwrap();
    for j in 0..3 {
        assert!((c[j] - p[j]).abs() < 1e-14);
    }
}

/// Fine rectangle-rule integral of the softmax over the bivariate normal.
fn grid_oracle(vf: f64, vo: f64, l: [[f64; 2]; 2]) -> [f64; 3] {
    let n = 400;
    let (lo, hi) = (-8.0, 8.0);
    let h = (hi - lo) / n as f64;
    let mut acc = [0.0; 3];
    let mut wsum = 0.0;
    for a in 0..=n {
        for b in 0..=n {
            let (z1, z2) = (lo + a as f64 * h, lo + b as f64 * h);
            let w = (-(z1 * z1 + z2 * z2) / 2.0).exp();
            let p = softmax3(vf + l[0][0] * z1, vo + l[1][0] * z1 + l[1][1] * z2);
            for j in 0..3 {
                acc[j] += w * p[j];
            }
            wsum += w;
        }
    }
    acc.map(|v| v / wsum)
}

#[test]
fn integrated_probabilities_match_dense_grid() {
    let (f, d) = shared();
    let g = with_estimates(f, |name, v| match name {
        "chol:F,F" => *v = 0.9,
        "chol:O,F" => *v = 0.3,
        "chol:O,O" => *v = 0.7,
        _ => {}
    });
    let mut x = d.row(3).to_vec();
    g.manifest.set_origin(&mut x, g.manifest.origin_index("I").unwrap());
    let p = predict_probabilities(&g, &x, "I").unwrap();
    let want = grid_oracle(linear_index(&g, "F", &x), linear_index(&g, "O", &x), [[0.9, 0.0], [0.3, 0.7]]);
    assert!((sum(&p) - 1.0).abs() < 1e-12);
    for j in 0..3 {
        assert!((p[j] - want[j]).abs() < 1e-4, "{p:?} vs {want:?}");
    }
}

#[test]
fn point_dimension_checked() {
    let (f, _) = shared();
    assert!(matches!(predict_probabilities(f, &[0.0; 2], "F"), Err(EffectsError::DimensionMismatch(_))));
    assert!(matches!(predict_probabilities(f, &vec![0.0; f.manifest.n_cols()], "Z"), Err(EffectsError::UnknownState(_))));
}

#[test]
fn marginal_effects_conserve_probability() {
    let (f, d) = shared();
    let rep = average_marginal_effect(f, d, "cma_index").unwrap();
    assert_eq!(rep.cells.len(), 12);
    for origin in [Some("F"), Some("I"), Some("O"), None] {
        let s: f64 = ["F", "I", "O"].iter().map(|j| rep.get(origin, j).unwrap().value).sum();
        assert!(s.abs() < 1e-10, "{origin:?}: {s}");
    }
    for c in &rep.cells {
        assert!(c.se.is_finite() && c.se > 0.0);
    }
    let shares: f64 = rep.origin_shares.iter().map(|(_, s)| s).sum();
    assert!((shares - 1.0).abs() < 1e-12);
    let mut buf = Vec::new();
    rep.write_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 13);
}

#[test]
fn marginal_effects_match_probability_differences() {
    let (f, d) = shared();
    let rep = average_marginal_effect(f, d, "cma_index").unwrap();
    let h = 1e-4;
    let m = &f.manifest;
    let mut all = [0.0; 3];
    let mut per = vec![[0.0; 3]; 3];
    let mut counts = [0usize; 3];
    for r in 0..d.n_records() {
        let origin = &m.origins[d.records[r].origin];
        let c = d.row(r)[m.column("cma_index").unwrap()];
        let mut up = d.row(r).to_vec();
        m.set_value(&mut up, "cma_index", c + h).unwrap();
        let mut dn = d.row(r).to_vec();
        m.set_value(&mut dn, "cma_index", c - h).unwrap();
        let pu = predict_probabilities(f, &up, origin).unwrap();
        let pd = predict_probabilities(f, &dn, origin).unwrap();
        counts[d.records[r].origin] += 1;
        for j in 0..3 {
            let e = (pu[j] - pd[j]) / (2.0 * h);
            all[j] += e;
            per[d.records[r].origin][j] += e;
        }
    }
    for j in 0..3 {
        let got = rep.get(None, &m.outcomes[j]).unwrap().value;
        let want = all[j] / d.n_records() as f64;
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        for o in 0..3 {
            let got = rep.get(Some(&m.origins[o]), &m.outcomes[j]).unwrap().value;
            let want = per[o][j] / counts[o] as f64;
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }
}

#[test]
fn absent_target_effects_vanish() {
    let (f, d) = shared();
    let z = with_estimates(f, |name, v| {
        if name.ends_with("cma_index") {
            *v = 0.0;
        }
    });
    let rep = average_marginal_effect(&z, d, "cma_index").unwrap();
    for c in &rep.cells {
        assert!(c.value.abs() < 1e-15);
    }
    assert!(matches!(average_marginal_effect(f, d, "age"), Err(EffectsError::TargetNotInSpec(_))));
    assert!(matches!(average_marginal_effect(f, d, "lag:I"), Err(EffectsError::TargetNotInSpec(_))));
}

#[test]
fn standard_errors_invariant_to_cholesky_signs() {
    let (f, d) = shared();
    let base = average_marginal_effect(f, d, "cma_index").unwrap();
    for col in 0..2 {
        let mut g = f.clone();
        let n = g.estimates.len();
        let mut sign = vec![1.0; n];
        for a in col..2 {
            sign[g.layout.chol_index(a, col)] = -1.0;
        }
        for i in 0..n {
            g.estimates[i] *= sign[i];
            for k in 0..n {
                g.covariance[i * n + k] *= sign[i] * sign[k];
            }
        }
        let flipped = average_marginal_effect(&g, d, "cma_index").unwrap();
        for (a, b) in base.cells.iter().zip(&flipped.cells) {
            assert!((a.value - b.value).abs() < 1e-12);
            assert!((a.se - b.se).abs() < 1e-8 * a.se.max(1e-6), "{} vs {}", a.se, b.se);
        }
    }
}

#[test]
fn base_relabel_leaves_predictions_unchanged() {
    let cfg = DgpConfig { persons: 300, waves: 4, seed: 9, entry: vec![1.0], ..DgpConfig::default() };
    let spec = small_spec();
    let (a, da) = fitted(&cfg, &spec);
    let relabelled = ModelSpec { base_outcome: Some("F".into()), ..spec };
    let (b, db) = fitted(&cfg, &relabelled);
    for r in [0, 11, 50] {
        let origin = &da.manifest.origins[da.records[r].origin];
        let pa = predict_probabilities(&a, da.row(r), origin).unwrap();
        let pb = predict_probabilities(&b, db.row(r), origin).unwrap();
        for (j, label) in a.manifest.outcomes.iter().enumerate() {
            let k = b.manifest.outcome_index(label).unwrap();
            assert!((pa[j] - pb[k]).abs() < 1e-5, "{label}: {} vs {}", pa[j], pb[k]);
        }
    }
}

#[test]
fn grid_at_the_mean_matches_point_prediction() {
    let (f, d) = shared();
    let means = d.column_means();
    let c = means[f.manifest.column("cma_index").unwrap()];
    let curve = effects_at_grid(f, d, "cma_index", &[c]).unwrap();
    let at_means = probabilities_at_means(f, d).unwrap();
    let m = &f.manifest;
    let mut mixed = [0.0; 3];
    for o in 0..3 {
        let share = d.records.iter().filter(|r| r.origin == o).count() as f64 / d.n_records() as f64;
        let p = predict_probabilities(f, &means, &m.origins[o]).unwrap();
        for j in 0..3 {
            mixed[j] += share * p[j];
        }
    }
    for j in 0..3 {
        assert!((curve.points[0].probabilities[j] - at_means[j]).abs() < 1e-12);
        assert!((at_means[j] - mixed[j]).abs() < 1e-12);
        let p = &curve.points[0];
        assert!(p.lower[j] < p.probabilities[j] && p.probabilities[j] < p.upper[j]);
    }
}

#[test]
fn grid_without_heterogeneity_is_softmax_curve() {
    let (f, d) = shared();
    let z = with_estimates(f, zero_sigma);
    let grid: Vec<f64> = (-4..=4).map(|k| k as f64 * 0.5).collect();
    let curve = effects_at_grid(&z, d, "cma_index", &grid).unwrap();
    let m = &z.manifest;
    let means = d.column_means();
    for (g, pt) in grid.iter().zip(&curve.points) {
        assert!((sum(&pt.probabilities) - 1.0).abs() < 1e-12);
        let mut want = [0.0; 3];
        for o in 0..3 {
            let share = d.records.iter().filter(|r| r.origin == o).count() as f64 / d.n_records() as f64;
            let mut x = means.clone();
            m.set_origin(&mut x, o);
            m.set_value(&mut x, "cma_index", *g).unwrap();
            let p = softmax3(linear_index(&z, "F", &x), linear_index(&z, "O", &x));
            for j in 0..3 {
                want[j] += share * p[j];
            }
        }
        for j in 0..3 {
            assert!((pt.probabilities[j] - want[j]).abs() < 1e-14);
        }
    }
    let mut buf = Vec::new();
    curve.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("cma_index,P_F,se_F,lower_F,upper_F"));
    assert_eq!(text.lines().count(), grid.len() + 1);
}

#[test]
fn formal_curve_rises_when_only_formal_responds() {
    let mut cfg = DgpConfig { persons: 600, waves: 5, seed: 77, entry: vec![1.0], ..DgpConfig::default() };
    for (o, coefs) in cfg.coefficients.iter_mut() {
        for (k, v) in coefs.iter_mut() {
            if k.contains("cma_index") {
                *v = if o == "F" && k == "cma_index" { 1.0 } else { 0.0 };
            }
        }
    }
    let (f, d) = fitted(&cfg, &small_spec());
    let grid: Vec<f64> = (-8..=8).map(|k| k as f64 * 0.25).collect();
    let curve = effects_at_grid(&f, &d, "cma_index", &grid).unwrap();
    let j = f.manifest.outcome_index("F").unwrap();
    for w in curve.points.windows(2) {
        assert!(w[1].probabilities[j] > w[0].probabilities[j]);
    }
}

fn scenario(column: &str, before: f64, after: f64) -> PolicyScenario {
    PolicyScenario {
        name: "raise access".into(),
        edits: vec![CovariateEdit { column: column.into(), before, after }],
        evaluation: EvaluationPoint::SampleMeans,
    }
}

#[test]
fn policy_scenarios_are_validated() {
    let (f, d) = shared();
    assert!(matches!(policy_simulation(f, d, &scenario("cma_index", 0.5, 0.5)), Err(EffectsError::InvalidScenario { .. })));
    assert!(matches!(
        policy_simulation(f, d, &scenario("offices_per_1000", 0.0, 1.0)),
        Err(EffectsError::ScenarioSpecMismatch { .. })
    ));
    let sc = PolicyScenario {
        evaluation: EvaluationPoint::SubsetMeans(vec![RecordFilter::new("age", FilterOp::Gt, 1e9)]),
        ..scenario("cma_index", 0.0, 1.0)
    };
    assert!(matches!(policy_simulation(f, d, &sc), Err(EffectsError::EmptySubgroup(_))));
}

#[test]
fn null_policy_changes_nothing() {
    let (f, d) = shared();
    let z = with_estimates(f, |name, v| {
        if name.ends_with("cma_index") {
            *v = 0.0;
        }
    });
    let res = policy_simulation(&z, d, &scenario("cma_index", -1.0, 1.0)).unwrap();
    for j in 0..3 {
        assert!(res.change[j].abs() < 1e-15);
        assert!(res.se_change[j] > 0.0);
    }
    assert!((sum(&res.before) - 1.0).abs() < 1e-12 && (sum(&res.after) - 1.0).abs() < 1e-12);
}

#[test]
fn better_access_moves_workers_out_of_informality() {
    let mut cfg = DgpConfig { persons: 600, waves: 5, seed: 12, entry: vec![1.0], ..DgpConfig::default() };
    cfg.coefficients.get_mut("F").unwrap().insert("cma_index".into(), 0.4);
    cfg.coefficients.get_mut("O").unwrap().insert("cma_index".into(), 0.2);
    let (f, d) = fitted(&cfg, &small_spec());
    let res = policy_simulation(&f, &d, &scenario("cma_index", -1.0, 1.0)).unwrap();
    let (_, _, df) = res.outcome("F").unwrap();
    let (_, _, di) = res.outcome("I").unwrap();
    assert!(df > 0.0 && di < 0.0, "{res:?}");
    let mut buf = Vec::new();
    res.write_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
}

fn group(name: &str, column: &str, op: FilterOp, value: f64) -> Subgroup {
    Subgroup { name: name.into(), filters: vec![RecordFilter::new(column, op, value)] }
}

#[test]
fn subgroup_effects_average_to_the_whole() {
    let (f, d) = shared();
    let overall = average_marginal_effect(f, d, "cma_index").unwrap().get(None, "I").unwrap().value;
    let whole = heterogeneous_effects(f, d, "cma_index", "I", &[Subgroup { name: "all".into(), filters: vec![] }]).unwrap();
    assert!((whole[0].effect - overall).abs() < 1e-12);
    let parts = [group("rural", "urban", FilterOp::Eq, 0.0), group("urban", "urban", FilterOp::Eq, 1.0)];
    let res = heterogeneous_effects(f, d, "cma_index", "I", &parts).unwrap();
    assert_eq!(res[0].n_records + res[1].n_records, d.n_records());
    let avg = res.iter().map(|g| g.effect * g.n_records as f64).sum::<f64>() / d.n_records() as f64;
    assert!((avg - overall).abs() < 1e-10);
    for g in &res {
        assert!(g.se > 0.0 && (0.0..=1.0).contains(&g.mean_share));
    }
}

#[test]
fn subgroup_errors() {
    let (f, d) = shared();
    let empty = [group("nobody", "age", FilterOp::Lt, -1.0)];
    assert!(matches!(heterogeneous_effects(f, d, "cma_index", "I", &empty), Err(EffectsError::EmptySubgroup(_))));
    let overlap = [group("a", "age", FilterOp::Gt, 0.0), group("b", "age", FilterOp::Gt, 30.0)];
    assert!(matches!(
        heterogeneous_effects(f, d, "cma_index", "I", &overlap),
        Err(EffectsError::OverlappingSubgroups(..))
    ));
}

#[test]
fn stronger_interaction_gives_larger_subgroup_effect() {
    let mut cfg = DgpConfig { persons: 800, waves: 5, seed: 5, entry: vec![1.0], ..DgpConfig::default() };
    {
        let fc = cfg.coefficients.get_mut("F").unwrap();
        fc.insert("cma_index".into(), 0.0);
        fc.insert("lag:I*cma_index".into(), 1.0);
        fc.insert("lag:O*cma_index".into(), 0.0);
        let oc = cfg.coefficients.get_mut("O").unwrap();
        for k in ["cma_index", "lag:I*cma_index", "lag:O*cma_index"] {
            oc.insert(k.into(), 0.0);
        }
    }
    let (f, d) = fitted(&cfg, &small_spec());
    let parts = [group("informal workers", "lag:I", FilterOp::Eq, 1.0), group("others", "lag:I", FilterOp::Eq, 0.0)];
    let res = heterogeneous_effects(&f, &d, "cma_index", "I", &parts).unwrap();
    assert!(res[0].effect < 0.0);
    assert!(res[0].effect.abs() > res[1].effect.abs(), "{res:?}");
}
