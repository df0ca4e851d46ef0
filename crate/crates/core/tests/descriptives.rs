use dynlab::descriptives::*;
use dynlab::panel::{EmploymentState, ObservationRow, PanelDataset, Sector, StateCoding};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn state(c: char) -> Option<EmploymentState> {
    match c {
        'F' => Some(EmploymentState::sector(Sector::Formal)),
        'I' => Some(EmploymentState::sector(Sector::Informal)),
        'O' => Some(EmploymentState::sector(Sector::NoJob)),
        _ => None,
    }
}

/// Persons as state strings (`.` for a missing state), with loan flags.
fn panel(paths: &[(&str, &str)]) -> PanelDataset {
    let mut rows = Vec::new();
    for (i, (states, loans)) in paths.iter().enumerate() {
        for (t, (s, l)) in states.chars().zip(loans.chars()).enumerate() {
            rows.push(
                ObservationRow::new(i as u64 + 1, 2006 + t as i32, state(s))
                    .with("loan_taken", f64::from(u8::from(l == '1')))
                    .with("age", 25.0 + i as f64 + t as f64)
                    .with("female", (i % 2) as f64),
            );
        }
    }
    PanelDataset::from_rows(rows).unwrap()
}

#[test]
fn every_informal_worker_formalizes() {
    let ds = panel(&[("IF", "00"), ("IFF", "000"), ("FO", "00"), ("IF", "00")]);
    let m = &transition_matrix(&ds, StateCoding::Registration, &TransitionSplit::None)[0];
    assert_eq!(m.probabilities[1], Some(vec![1.0, 0.0, 0.0]));
    assert_eq!(m.probability("F", "O"), Some(0.5));
    assert_eq!(m.probabilities[2], None);
    assert_eq!(m.n, 5);
}

#[test]
fn borrower_split_counts_by_hand() {
    let mut paths = Vec::new();
    paths.extend(std::iter::repeat(("IF", "01")).take(7));
    paths.extend(std::iter::repeat(("II", "01")).take(3));
    paths.extend(std::iter::repeat(("IF", "00")).take(2));
    paths.extend(std::iter::repeat(("IO", "00")).take(2));
    let ds = panel(&paths);
    let ms = transition_matrix(&ds, StateCoding::Registration, &TransitionSplit::BorrowerAtNext);
    assert_eq!(ms.len(), 2);
    let b = ms.iter().find(|m| m.label == "borrower").unwrap();
    let nb = ms.iter().find(|m| m.label == "non-borrower").unwrap();
    assert_eq!(b.probability("I", "F"), Some(0.7));
    assert_eq!(b.probability("I", "I"), Some(0.3));
    assert_eq!(nb.probability("I", "F"), Some(0.5));
    assert_eq!(b.n + nb.n, 14);
    let text = b.render();
    assert!(text.contains("70.0"));
}

fn random_panel(seed: u64, persons: usize) -> PanelDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for i in 0..persons {
        let t0 = rng.random_range(0..3);
        for t in t0..t0 + rng.random_range(1..6) {
            let s = ['F', 'I', 'O', '.'][rng.random_range(0..4)];
            rows.push(
                ObservationRow::new(i as u64, 2000 + t, state(s))
                    .with("loan_taken", f64::from(u8::from(rng.random::<f64>() < 0.3)))
                    .with("female", f64::from(u8::from(rng.random::<bool>()))),
            );
        }
    }
    PanelDataset::from_rows(rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn matrix_matches_enumeration(seed in 0u64..10_000, persons in 1usize..40) {
        let ds = random_panel(seed, persons);
        let labels = ["F", "I", "O"];
        let ms = transition_matrix(&ds, StateCoding::Registration, &TransitionSplit::None);
        let mut counts = [[0u64; 3]; 3];
        let rows: Vec<&ObservationRow> = ds.rows().collect();
        for a in &rows {
            // the next observation of the same person, by scanning every row
            let next = rows.iter().filter(|b| b.person_id == a.person_id && b.year > a.year).min_by_key(|b| b.year);
            let (Some(b), Some(sa)) = (next, a.category(StateCoding::Registration)) else { continue };
            let Some(sb) = b.category(StateCoding::Registration) else { continue };
            let i = labels.iter().position(|l| *l == sa).unwrap();
            let j = labels.iter().position(|l| *l == sb).unwrap();
            counts[i][j] += 1;
        }
        let total: u64 = counts.iter().flatten().sum();
        if total == 0 {
            prop_assert!(ms.is_empty());
        } else {
            let m = &ms[0];
            prop_assert_eq!(m.n, total);
            for i in 0..3 {
                prop_assert_eq!(&m.counts[i][..], &counts[i][..]);
                let rt: u64 = counts[i].iter().sum();
                match &m.probabilities[i] {
                    None => prop_assert_eq!(rt, 0),
                    Some(p) => {
                        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                        prop_assert!((p[1] - (1.0 - p[0] - p[2])).abs() < 1e-12);
                        for j in 0..3 {
                            prop_assert_eq!(p[j], counts[i][j] as f64 / rt as f64);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn constant_split_is_unsplit(seed in 0u64..10_000) {
        let ds = random_panel(seed, 30);
        let whole = transition_matrix(&ds, StateCoding::Registration, &TransitionSplit::None);
        let split = transition_matrices_by(&ds, StateCoding::Registration, |_, _| Some("all".into()));
        prop_assert_eq!(whole, split);
    }

    #[test]
    fn ols_residuals_orthogonal(seed in 0u64..10_000, n in 5usize..60, p in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { rng.random_range(-3.0..3.0) * 10f64.powi(j as i32) });
        let y = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let clusters: Vec<u64> = (0..n as u64).map(|i| i / 2).collect();
        let fit = ols(&x, &y, &clusters).unwrap();
        let score = x.transpose() * &fit.residuals;
        for j in 0..p {
            let scale = x.column(j).norm() * y.norm().max(1.0);
            prop_assert!(score[j].abs() / scale <= 1e-8, "{}", score[j]);
        }
        let c = &fit.covariance;
        prop_assert!((c - c.transpose()).amax() <= 1e-12 * c.amax().max(1.0));
    }
}

#[test]
fn summary_welch_by_hand() {
    let rows = vec![
        ObservationRow::new(1, 2006, state('F')).with("age", 2.0).with("female", 1.0),
        ObservationRow::new(2, 2006, state('F')).with("age", 4.0).with("female", 0.0),
        ObservationRow::new(3, 2006, state('I')).with("age", 3.0).with("female", 1.0),
        ObservationRow::new(4, 2006, state('I')).with("age", 5.0).with("female", 1.0),
    ];
    let ds = PanelDataset::from_rows(rows).unwrap();
    let t = summary_stats(&ds, StateCoding::Registration, &["age".into(), "female".into()]);
    assert_eq!(t.groups, vec!["F", "I"]);
    let age = &t.rows[0];
    let f = age.groups[0].as_ref().unwrap();
    let i = age.groups[1].as_ref().unwrap();
    assert_eq!((f.mean, i.mean), (3.0, 4.0));
    assert_eq!(f.sd, Some(2f64.sqrt()));
    // (4 - 3) / sqrt(2/2 + 2/2)
    assert!((i.welch_t.unwrap() - 1.0 / 2f64.sqrt()).abs() < 1e-15);
    assert_eq!(f.welch_t, None);
    let fem = &t.rows[1];
    assert!(fem.binary);
    assert!(fem.groups.iter().all(|g| g.as_ref().unwrap().sd.is_none()));
    assert!(t.render().contains("3.000"));
}

#[test]
fn summary_single_state_has_no_comparison() {
    let ds = panel(&[("III", "000"), ("II", "00")]);
    let t = summary_stats(&ds, StateCoding::Registration, &["age".into()]);
    assert_eq!(t.groups, vec!["I"]);
    assert!(t.rows[0].groups[0].as_ref().unwrap().welch_t.is_none());
}

fn obs(rng: &mut ChaCha8Rng, n_persons: u64, level: impl Fn(i32) -> f64, constant: Option<f64>) -> Vec<EventObservation> {
    let mut out = Vec::new();
    for p in 0..n_persons {
        let event = 2004 + rng.random_range(0..8);
        let age0 = rng.random_range(20.0..55.0);
        for year in 2000..2016 {
            let k = year - event;
            let y = constant.unwrap_or_else(|| f64::from(u8::from(rng.random::<f64>() < level(k))));
            out.push(EventObservation { cluster: p, year, k, age: age0 + (year - 2000) as f64, y });
        }
    }
    out
}

#[test]
fn constant_outcome_gives_flat_series() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let o = obs(&mut rng, 50, |_| 0.0, Some(0.5));
    let r = fit_event_study("constant", &o, 5).unwrap();
    assert_eq!(r.points.len(), 11);
    assert_eq!(r.point(0).unwrap().coefficient, Some(0.0));
    for p in &r.points {
        assert!(p.coefficient.unwrap().abs() < 1e-10);
        assert!((p.value.unwrap() - 0.5).abs() < 1e-10);
    }
}

#[test]
fn injected_jump_is_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let o = obs(&mut rng, 6000, |k| if k == 0 { 0.3 } else { 0.2 }, None);
    let r = fit_event_study("switching", &o, 5).unwrap();
    for p in &r.points {
        let target = if p.k == 0 { 0.3 } else { 0.2 };
        let v = p.value.unwrap();
        let tol = if p.k == 0 { 0.01 } else { 4.0 * p.se.unwrap() + 0.005 };
        assert!((v - target).abs() < tol, "k={} value={v}", p.k);
    }
    assert!((r.point(0).unwrap().value.unwrap() - 0.3).abs() < 0.01);
}

#[test]
fn event_panels_from_dataset() {
    assert!(matches!(event_study(&panel(&[("IF", "00")]), 3), Err(DescriptivesError::InsufficientEvents)));
    let ds = panel(&[
        ("IIFF", "0010"),
        ("IIIF", "0001"),
        ("FIFI", "0100"),
        ("IIII", "0010"),
        ("FFFF", "1000"),
        ("OIFF", "0010"),
    ]);
    let es = event_study(&ds, 2).unwrap();
    assert_eq!(es.n_events, 6);
    assert_eq!(es.switching.points.len(), 5);
    assert_eq!(es.entry.points.len(), 5);
    // the always-formal borrower has the loan in its first wave: k >= 0 only
    assert!(es.entry.n_obs > 0 && es.switching.n_obs > 0);
    let mut buf = Vec::new();
    es.write_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 11);
}
