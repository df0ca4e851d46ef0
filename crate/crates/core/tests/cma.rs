use dynlab::cma::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Components driven by one latent access factor plus noise.
fn factor_sample(seed: u64, n: usize) -> (Vec<f64>, Vec<CmaComponents>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut latent = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let f: f64 = rng.sample(StandardNormal);
        let mut e = || rng.sample::<f64, _>(StandardNormal) * 0.3;
        let v = f + e();
        let presence = if v < -0.5 { 1 } else if v < 0.5 { 2 } else { 3 };
        let ds = if presence >= 2 { 0.0 } else { (2.5 - f + e()).exp() };
        let d_o = if presence == 3 { 0.0 } else { (3.0 - f + e()).exp() };
        let off = (-1.5 + 0.4 * f + 0.5 * e()).exp();
        latent.push(f);
        rows.push(CmaComponents::new(presence, ds, d_o, off).unwrap());
    }
    (latent, rows)
}

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

const OPTS: IndexOptions = IndexOptions { allow_constant_components: false };

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn indices_track_the_latent_factor(seed in 0u64..1_000_000) {
        let (latent, rows) = factor_sample(seed, 400);
        let z = zscore_index(&rows, OPTS).unwrap();
        let p = pca_index(&rows, OPTS).unwrap();
        prop_assert!(corr(&z.values, &latent) >= 0.9, "{}", corr(&z.values, &latent));
        prop_assert!(corr(&z.values, &p.values) >= 0.95);
        let l = p.loadings.unwrap();
        prop_assert!(l[0] > 0.0 && l[1] < 0.0 && l[2] < 0.0 && l[3] > 0.0, "{:?}", l);
    }

    #[test]
    fn rescaling_components_leaves_indices_unchanged(seed in 0u64..1_000_000, scale in 0.001..1000.0f64, power in 0.2..5.0f64) {
        let (_, rows) = factor_sample(seed, 60);
        // offices enter linearly; distances enter as ln(1+d), so the
        // rescaling absorbed exactly is affine on that scale
        let moved: Vec<CmaComponents> = rows
            .iter()
            .map(|c| CmaComponents {
                offices_per_1000: c.offices_per_1000 * scale,
                dist_sber: (1.0 + c.dist_sber).powf(power) - 1.0,
                ..*c
            })
            .collect();
        for method in [IndexMethod::Zscore, IndexMethod::Pca] {
            let a = build_index(&rows, method, OPTS).unwrap();
            let b = build_index(&moved, method, OPTS).unwrap();
            prop_assert!(max_diff(&a.values, &b.values) <= 1e-10);
        }
    }

    #[test]
    fn improving_a_component_raises_the_score(seed in 0u64..1_000_000, row in 0usize..60, which in 0usize..4, amount in 0.01..3.0f64) {
        let (_, rows) = factor_sample(seed, 60);
        let before = zscore_index(&rows, OPTS).unwrap().raw_scores[row];
        let mut better = rows.clone();
        let c = &mut better[row];
        match which {
            0 if c.bank_presence < 3 => {
                // zero the distance that the next presence level requires first
                if c.bank_presence == 1 { c.dist_sber = 0.0 } else { c.dist_other = 0.0 }
                c.bank_presence += 1;
            }
            1 => c.dist_sber /= 1.0 + amount,
            2 => c.dist_other /= 1.0 + amount,
            _ => c.offices_per_1000 *= 1.0 + amount,
        }
        prop_assume!(zscore_index(&better, OPTS).is_ok());
        // a single-component step at a time: presence changes go through the zeroed distance
        let mut steps = vec![rows.clone()];
        if which == 0 && rows[row].bank_presence < 3 {
            let mut mid = rows.clone();
            if rows[row].bank_presence == 1 { mid[row].dist_sber = 0.0 } else { mid[row].dist_other = 0.0 }
            prop_assume!(zscore_index(&mid, OPTS).is_ok());
            steps.push(mid);
        }
        steps.push(better);
        let scores: Vec<f64> = steps.iter().map(|s| zscore_index(s, OPTS).unwrap().raw_scores[row]).collect();
        prop_assert_eq!(scores[0], before);
        for w in scores.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-12, "{:?}", scores);
        }
    }

    #[test]
    fn indices_are_standardized(seed in 0u64..1_000_000, n in 5usize..200) {
        let (_, rows) = factor_sample(seed, n);
        for method in [IndexMethod::Zscore, IndexMethod::Pca] {
            let Ok(ix) = build_index(&rows, method, OPTS) else { continue };
            let m = ix.values.iter().sum::<f64>() / n as f64;
            let v = ix.values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            prop_assert!(m.abs() <= 1e-10 && (v.sqrt() - 1.0).abs() <= 1e-10);
        }
    }
}

#[test]
fn metres_instead_of_kilometres_is_close_but_not_identical() {
    let (_, rows) = factor_sample(3, 300);
    let metres: Vec<CmaComponents> = rows.iter().map(|c| CmaComponents { dist_sber: c.dist_sber * 1000.0, ..*c }).collect();
    let a = zscore_index(&rows, OPTS).unwrap();
    let b = zscore_index(&metres, OPTS).unwrap();
    assert!(corr(&a.values, &b.values) > 0.95);
    assert!(max_diff(&a.values, &b.values) > 1e-6);
}
