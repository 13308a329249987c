use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use stochastic_contracts::contracts::CheckContext;
use stochastic_contracts::rtmon::exec_time_verdict;
use stochastic_contracts::stochastic::{empirical_cdf, estimate_bound, ExecTimeModel};

/// Brute force: every bin limit is formed from scratch and every count is a
/// full scan, with membership `(x - min) * k <= j * (max - min)` in integers.
fn oracle(samples: &[u64], pi: f64) -> (f64, f64) {
    let mut v = samples.to_vec();
    v.sort();
    let n = v.len();
    let (min, max) = (v[0], v[n - 1]);
    let mean = v.iter().map(|&x| x as u128).sum::<u128>() as f64 / n as f64;
    if min == max {
        return (mean, 0.0);
    }
    let mut k = 1usize;
    while (k + 1) * (k + 1) <= n {
        k += 1;
    }
    let span = (max - min) as u128;
    for j in 1..=k as u128 {
        let count = v.iter().filter(|&&x| (x - min) as u128 * k as u128 <= j * span).count();
        if count as f64 / n as f64 >= pi {
            let tau = min as f64 + (j * span) as f64 / k as f64;
            let sd = (v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            return (tau, (tau - mean) / sd);
        }
    }
    unreachable!("the last bin reaches max")
}

fn dataset(rng: &mut ChaCha8Rng, n: usize) -> Vec<u64> {
    match rng.random_range(0..4) {
        0 => (0..n).map(|_| rng.random_range(100_000..200_000)).collect(),
        1 => {
            let d = LogNormal::new(13.0, 0.3).unwrap();
            (0..n).map(|_| d.sample(rng) as u64).collect()
        }
        // heavy ties
        2 => (0..n).map(|_| 1_000 * rng.random_range(1..8u64)).collect(),
        _ => (0..n).map(|_| if rng.random_bool(0.9) { 50_000 } else { rng.random_range(50_000..500_000) }).collect(),
    }
}

#[test]
fn matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..120 {
        let n = [16, 100, 1000][i % 3];
        let pi = [0.5, 0.9, 0.95, 0.99][(i / 3) % 4];
        let v = dataset(&mut rng, n);
        let (tau, gamma) = oracle(&v, pi);
        let got = empirical_cdf(&v, pi).unwrap();
        assert_eq!(got.tau_hat.to_bits(), tau.to_bits(), "set {i}");
        assert!((got.gamma - gamma).abs() <= 1e-12 * gamma.abs().max(1.0), "set {i}: {} vs {gamma}", got.gamma);
    }
}

#[test]
fn uniform_grid_by_hand() {
    // 1..=100: ten bins of width 9.9; limit 1 + 9 * 9.9 covers 90%, so 95%
    // needs the last bin, and 90% stops one bin earlier.
    let v: Vec<u64> = (1..=100).collect();
    let cdf = empirical_cdf(&v, 0.95).unwrap();
    assert_eq!(cdf.bins, 10);
    assert_eq!(cdf.tau_hat, 100.0);
    assert_eq!(cdf.covered, 100);
    let cdf = empirical_cdf(&v, 0.9).unwrap();
    assert!((cdf.tau_hat - 90.1).abs() < 1e-9);
    assert_eq!(cdf.covered, 90);
}

#[test]
fn constant_training_gives_zero_gamma() {
    let mut m = ExecTimeModel::new(50, 0.95, 5).unwrap();
    for _ in 0..50 {
        m.record_training(123_456).unwrap();
    }
    let e = m.train().unwrap();
    assert_eq!(e.gamma, 0.0);
    assert_eq!(e.tau, 123_456.0);
}

fn required(n: usize, pi: f64) -> usize {
    (0..=n).find(|&m| m as f64 / n as f64 >= pi).unwrap()
}

fn samples() -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(0u64..5_000_000, 2..400)
}

proptest! {
    #[test]
    fn bound_covers_at_least_pi(v in samples(), pi in 0.0f64..=1.0) {
        let cdf = empirical_cdf(&v, pi).unwrap();
        let need = required(v.len(), pi);
        let under_hat = v.iter().filter(|&&x| x as f64 <= cdf.tau_hat).count();
        prop_assert!(under_hat >= need);

        let mut m = ExecTimeModel::new(v.len(), pi, 1).unwrap();
        for &x in &v {
            m.record_training(x).unwrap();
        }
        let tau = m.train().unwrap().tau;
        prop_assert!(v.iter().filter(|&&x| x as f64 <= tau).count() >= need);
        prop_assert!(tau >= cdf.tau_hat);
    }

    #[test]
    fn shift_and_scale_equivariance(
        v in prop::collection::vec(0u64..1_000_000, 2..300),
        d in 0u64..10_000_000,
        c in 1u64..1000,
        pi in 0.0f64..=1.0,
    ) {
        prop_assume!(v.iter().min() != v.iter().max());
        let base = empirical_cdf(&v, pi).unwrap();
        let shifted: Vec<u64> = v.iter().map(|&x| x + d).collect();
        let scaled: Vec<u64> = v.iter().map(|&x| x * c).collect();
        let s = empirical_cdf(&shifted, pi).unwrap();
        let k = empirical_cdf(&scaled, pi).unwrap();
        let close = |a: f64, b: f64, tol: f64| (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0);
        prop_assert_eq!(s.covered, base.covered);
        prop_assert_eq!(k.covered, base.covered);
        prop_assert!(close(s.tau_hat, base.tau_hat + d as f64, 1e-15), "{} {}", s.tau_hat, base.tau_hat);
        prop_assert!(close(k.tau_hat, base.tau_hat * c as f64, 1e-15));
        // The upward rounding that guarantees coverage has a floor of one
        // ulp of tau over s, which grows with the shift.
        let floor = 4.0 * f64::EPSILON * (s.tau_hat / s.std_dev).max(base.tau_hat / base.std_dev);
        prop_assert!((k.gamma - base.gamma).abs() <= 1e-12 * base.gamma.abs().max(1.0) + floor,
            "{} {}", k.gamma, base.gamma);
        prop_assert!((s.gamma - base.gamma).abs() <= 1e-12 * base.gamma.abs().max(1.0) + floor,
            "{} {}", s.gamma, base.gamma);
    }

    #[test]
    fn exec_time_verdict_is_monotone(bound in 0.0f64..1e9, a in 0u64..2_000_000_000, b in 0u64..2_000_000_000) {
        let (lo, hi) = (a.min(b), a.max(b));
        let ctx = CheckContext { block: "B", cycle: 0, at_ns: 0 };
        if exec_time_verdict(bound, lo, ctx).is_some() {
            prop_assert!(exec_time_verdict(bound, hi, ctx).is_some());
        }
        prop_assert_eq!(exec_time_verdict(bound, lo, ctx).is_some(), lo as f64 > bound);
    }

    #[test]
    fn tau_identity_after_training(v in samples(), pi in 0.0f64..=1.0) {
        let mut m = ExecTimeModel::new(v.len(), pi, 1).unwrap();
        for &x in &v {
            m.record_training(x).unwrap();
        }
        let e = m.train().unwrap();
        prop_assert_eq!(e.tau, estimate_bound(e.mean, e.std_dev, e.gamma));
    }
}
