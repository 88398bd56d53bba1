//! Unbiased MMD against its closed form for Gaussians, pair-selection
//! statistics, and estimator symmetry.

use autotransfer::divergence::{mmd_penalty, mmd_sq_unbiased, select_pairs, BatchLabels, MmdPenalty, PairPolicy};
use autotransfer::censoring::CensorMode;
use autotransfer::numerics::{LengthScalePolicy, Mat};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> Mat {
    Mat::from_fn(n, 1, |_, _| {
        let e: f64 = StandardNormal.sample(rng);
        e + shift
    })
}

// For N(0,1) vs N(mu,1) and k = exp(-d^2 / (2 s^2)):
// E k(x, x') = s / sqrt(s^2 + 2), E k(x, y) = s / sqrt(s^2 + 2) exp(-mu^2 / (2 (s^2 + 2))).
fn closed_form(mu: f64, s: f64) -> f64 {
    let a = s / (s * s + 2.0).sqrt();
    2.0 * a * (1.0 - (-mu * mu / (2.0 * (s * s + 2.0))).exp())
}

#[test]
fn estimator_mean_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (mu, s) in [(0.0, 1.0), (0.5, 1.0), (1.0, 2.0)] {
        let draws: Vec<f64> = (0..400)
            .map(|_| mmd_sq_unbiased(&normal(&mut rng, 40, 0.0), &normal(&mut rng, 40, mu), s).unwrap())
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        let se = (var / draws.len() as f64).sqrt();
        let truth = closed_form(mu, s);
        assert!((mean - truth).abs() <= 4.0 * se, "mu={mu} s={s}: mean {mean} vs {truth} (se {se})");
    }
}

#[test]
fn bernoulli_pair_count_is_binomial() {
    // 20 ordered pairs for M = 5, each kept with probability 0.3
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let policy = PairPolicy::Bernoulli { b: 0.3 };
    let n = 2000;
    let mut per_pair = vec![0usize; 25];
    let mut total = 0usize;
    for _ in 0..n {
        let pairs = select_pairs(5, &policy, &mut rng).unwrap();
        total += pairs.len();
        for (r, t) in pairs {
            assert_ne!(r, t);
            per_pair[r * 5 + t] += 1;
        }
    }
    let mean = total as f64 / n as f64;
    let se = (20.0 * 0.3 * 0.7 / n as f64).sqrt();
    assert!((mean - 6.0).abs() <= 4.0 * se, "mean pair count {mean}");
    let pair_se = (0.3 * 0.7 / n as f64).sqrt();
    for r in 0..5 {
        let p = per_pair[r * 5 + r];
        assert_eq!(p, 0);
        for t in (0..5).filter(|&t| t != r) {
            let freq = per_pair[r * 5 + t] as f64 / n as f64;
            assert!((freq - 0.3).abs() <= 5.0 * pair_se, "pair ({r},{t}) frequency {freq}");
        }
    }
}

#[test]
fn clique_covers_subjects_evenly() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut hits = [0usize; 6];
    for _ in 0..3000 {
        let pairs = select_pairs(6, &PairPolicy::Clique { d: 3 }, &mut rng).unwrap();
        assert_eq!(pairs.len(), 6);
        let mut members: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        members.sort_unstable();
        members.dedup();
        assert_eq!(members.len(), 3);
        members.iter().for_each(|&m| hits[m] += 1);
    }
    // each subject chosen with probability 1/2
    let se = (0.25f64 / 3000.0).sqrt();
    for h in hits {
        assert!((h as f64 / 3000.0 - 0.5).abs() <= 5.0 * se);
    }
}

#[test]
fn penalty_grows_with_subject_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let s: Vec<usize> = (0..120).map(|i| i % 3).collect();
    let y = vec![0usize; 120];
    let labels = BatchLabels::new(&s, &y, 3, 1).unwrap();
    let base = Mat::from_fn(120, 2, |_, _| StandardNormal.sample(&mut rng));
    let value = |shift: f64| {
        let mut z = base.clone();
        for i in 0..120 {
            z[(i, 0)] += shift * s[i] as f64;
        }
        let res = mmd_penalty(&z, &labels, CensorMode::Marginal, &LengthScalePolicy::Median).unwrap();
        match res.penalty {
            MmdPenalty::Single(v) => v,
            other => panic!("unexpected {other:?}"),
        }
    };
    let (a, b, c) = (value(0.0), value(1.0), value(3.0));
    assert!(a < b && b < c, "{a} {b} {c}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mmd_is_symmetric(seed in any::<u64>(), n in 2usize..12, u in 2usize..12, sigma in 0.1f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Mat::from_fn(n, 3, |_, _| StandardNormal.sample(&mut rng));
        let y = Mat::from_fn(u, 3, |_, _| StandardNormal.sample(&mut rng));
        prop_assert_eq!(mmd_sq_unbiased(&x, &y, sigma).unwrap(), mmd_sq_unbiased(&y, &x, sigma).unwrap());
    }

    #[test]
    fn mmd_of_a_sample_with_itself_is_non_positive(seed in any::<u64>(), n in 2usize..12) {
        // with x = y the estimate is 2 (A - 1) / n, A the mean off-diagonal kernel value
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Mat::from_fn(n, 2, |_, _| StandardNormal.sample(&mut rng));
        prop_assert!(mmd_sq_unbiased(&x, &x, 1.0).unwrap() <= 1e-12);
    }

    #[test]
    fn clique_pair_count(m in 2usize..10, seed in any::<u64>()) {
        let d = 1 + (seed as usize % m);
        let pairs = select_pairs(m, &PairPolicy::Clique { d }, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(pairs.len(), d * (d - 1));
    }
}
