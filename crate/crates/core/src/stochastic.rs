//! Empirical execution-time bounds.
//!
//! A block's first `n` execution times train an [`ExecTimeModel`]: the
//! empirical cdf of the sample picks the bound `tau` that covers at least a
//! fraction `pi` of the observations, and `gamma` records how many sample
//! standard deviations that bound sits above the mean. After training only the
//! mean and the standard deviation are re-estimated, over a sliding window,
//! and the bound is rebuilt as `mean + gamma * std_dev` with `gamma` frozen.
//!
//! Samples are integer nanoseconds. Floating point appears only inside the
//! estimators.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("sample buffer is empty")]
    EmptyBuffer,
    #[error("need at least {needed} samples, have {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("threshold probability {0} is outside [0, 1]")]
    InvalidProbability(f64),
    #[error("window size {window} must lie in 1..={capacity}")]
    InvalidWindow { window: usize, capacity: usize },
    #[error("expected a batch of {expected} samples, got {got}")]
    WrongBatchSize { expected: usize, got: usize },
    #[error("model is not trained yet")]
    Untrained,
    #[error("model is already trained")]
    AlreadyTrained,
}

/// Arithmetic mean. The sum is exact (integer) before the single division.
pub fn mean(samples: &[u64]) -> Result<f64, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::EmptyBuffer);
    }
    let sum: u128 = samples.iter().map(|&s| s as u128).sum();
    Ok(sum as f64 / samples.len() as f64)
}

/// Sample standard deviation with the `n - 1` denominator.
///
/// The sums of the samples and of their squares are exact integers, so the
/// only roundings are the final division and square root. Inputs too large
/// for that fall back to a two-pass float computation.
pub fn std_dev(samples: &[u64]) -> Result<f64, StatsError> {
    if samples.len() < 2 {
        return Err(StatsError::InsufficientSamples { needed: 2, got: samples.len() });
    }
    match Moments::of(samples).and_then(|m| m.std_dev()) {
        Some(sd) => Ok(sd),
        None => two_pass_std_dev(samples),
    }
}

fn two_pass_std_dev(samples: &[u64]) -> Result<f64, StatsError> {
    let mu = mean(samples)?;
    let ss: f64 = samples
        .iter()
        .map(|&s| {
            let d = s as f64 - mu;
            d * d
        })
        .sum();
    Ok((ss / (samples.len() - 1) as f64).sqrt())
}

/// Exact count, sum and sum of squares. `None` from any operation means a
/// sum left `u128`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct Moments {
    n: u128,
    sum: u128,
    sum_sq: u128,
}

impl Moments {
    fn of(samples: &[u64]) -> Option<Moments> {
        samples.iter().try_fold(Moments::default(), |m, &x| m.add(x))
    }

    fn add(self, x: u64) -> Option<Moments> {
        let x = x as u128;
        Some(Moments { n: self.n + 1, sum: self.sum.checked_add(x)?, sum_sq: self.sum_sq.checked_add(x * x)? })
    }

    fn remove(self, x: u64) -> Moments {
        let x = x as u128;
        Moments { n: self.n - 1, sum: self.sum - x, sum_sq: self.sum_sq - x * x }
    }

    fn mean(&self) -> f64 {
        self.sum as f64 / self.n as f64
    }

    fn std_dev(&self) -> Option<f64> {
        // n * sum_sq - sum^2 is n^2 times the population variance, never negative.
        let num = self.n.checked_mul(self.sum_sq)?.checked_sub(self.sum.checked_mul(self.sum)?)?;
        Some((num as f64 / (self.n * (self.n - 1)) as f64).sqrt())
    }
}

/// `tau = mean + gamma * std_dev`.
#[inline]
pub fn estimate_bound(mean: f64, std_dev: f64, gamma: f64) -> f64 {
    mean + gamma * std_dev
}

/// Result of the binned empirical-cdf search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdfBound {
    /// Upper limit of the first bin whose cumulative probability reaches `pi`.
    pub tau_hat: f64,
    pub gamma: f64,
    pub mean: f64,
    pub std_dev: f64,
    pub bins: usize,
    pub bin_width: f64,
    /// Samples at or below `tau_hat`.
    pub covered: usize,
    /// All samples equal: no bins, `gamma = 0`, `tau_hat = mean`.
    pub degenerate: bool,
}

/// Number of bins used for `n` samples: `floor(sqrt(n))`, at least one.
pub fn bin_count(n: usize) -> usize {
    (n as u64).isqrt().max(1) as usize
}

/// Binned empirical-cdf bound search.
///
/// The samples are sorted in a working copy and split into
/// `floor(sqrt(n))` bins of width `(max - min) / bins` starting at `min`. Bins
/// are walked upward and the first bin upper limit whose cumulative
/// probability is `>= pi` becomes `tau_hat`; the last limit is `max`, so the
/// search always ends.
///
/// Limit `j` is `min + j (max - min) / bins`, and bin membership is decided
/// on integer offsets from `min`, so repeated additions cannot drift and the
/// chosen bin does not depend on where the data sits on the time axis.
pub fn empirical_cdf(samples: &[u64], pi: f64) -> Result<CdfBound, StatsError> {
    if !(0.0..=1.0).contains(&pi) {
        return Err(StatsError::InvalidProbability(pi));
    }
    let n = samples.len();
    if n < 2 {
        return Err(StatsError::InsufficientSamples { needed: 2, got: n });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let min = sorted[0];
    let max = sorted[n - 1];
    let mu = mean(&sorted)?;
    let sd = std_dev(&sorted)?;

    if min == max {
        return Ok(CdfBound {
            tau_hat: mu,
            gamma: 0.0,
            mean: mu,
            std_dev: sd,
            bins: 0,
            bin_width: 0.0,
            covered: n,
            degenerate: true,
        });
    }

    let bins = bin_count(n);
    let span = (max - min) as u128;
    let k = bins as u128;
    let mut covered = 0usize;
    let mut reached = k;
    for j in 1..=k {
        // sample - min <= j * span / k
        while covered < n && (sorted[covered] - min) as u128 * k <= j * span {
            covered += 1;
        }
        if covered as f64 / n as f64 >= pi {
            reached = j;
            break;
        }
    }
    let tau_offset = (reached * span) as f64 / k as f64;
    let offsets: Vec<u64> = sorted.iter().map(|&x| x - min).collect();
    let raw_gamma = (tau_offset - mean(&offsets)?) / std_dev(&offsets)?;
    let tau_hat = min as f64 + tau_offset;

    Ok(CdfBound {
        tau_hat,
        gamma: gamma_for(raw_gamma, tau_hat, mu, sd),
        mean: mu,
        std_dev: sd,
        bins,
        bin_width: span as f64 / k as f64,
        covered,
        degenerate: false,
    })
}

/// `gamma`, rounded upward where needed so that
/// `estimate_bound(mean, sd, gamma) >= tau` holds in floating point.
fn gamma_for(gamma: f64, tau: f64, mu: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        return 0.0;
    }
    let mut gamma = gamma;
    for _ in 0..64 {
        let rebuilt = estimate_bound(mu, sd, gamma);
        if rebuilt >= tau {
            break;
        }
        gamma = gamma.next_up().max(gamma + (tau - rebuilt) / sd);
    }
    gamma
}

/// Fixed-capacity execution-time sample store with ring replacement.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBuffer {
    samples: Vec<u64>,
    capacity: usize,
    /// Index of the oldest sample once full.
    next: usize,
    /// Kept in step with `samples`; `None` after an overflow.
    moments: Option<Moments>,
}

impl SampleBuffer {
    pub fn new(capacity: usize) -> Self {
        SampleBuffer { samples: Vec::with_capacity(capacity), capacity, next: 0, moments: Some(Moments::default()) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.samples.len() == self.capacity
    }

    /// Appends during the filling phase; returns false once full.
    pub fn push(&mut self, sample: u64) -> bool {
        if self.is_full() {
            return false;
        }
        self.samples.push(sample);
        self.next = self.samples.len() % self.capacity;
        self.moments = self.moments.and_then(|m| m.add(sample));
        true
    }

    /// Overwrites the oldest `batch.len()` samples in ring order.
    pub fn replace_oldest(&mut self, batch: &[u64]) {
        debug_assert!(self.is_full());
        debug_assert!(batch.len() <= self.capacity);
        for &s in batch {
            let old = std::mem::replace(&mut self.samples[self.next], s);
            self.moments = self.moments.and_then(|m| m.remove(old).add(s));
            self.next = (self.next + 1) % self.capacity;
        }
    }

    /// Mean and sample standard deviation of the stored samples, equal to
    /// [`mean`] and [`std_dev`] of [`Self::as_slice`] without rescanning.
    pub fn mean_std_dev(&self) -> Result<(f64, f64), StatsError> {
        match self.moments {
            Some(m) if m.n >= 2 => Ok((m.mean(), m.std_dev().map_or_else(|| two_pass_std_dev(&self.samples), Ok)?)),
            _ => Ok((mean(&self.samples)?, std_dev(&self.samples)?)),
        }
    }

    /// Samples in storage order (not chronological once wrapped).
    pub fn as_slice(&self) -> &[u64] {
        &self.samples
    }

    /// Samples from oldest to newest.
    pub fn chronological(&self) -> impl Iterator<Item = u64> + '_ {
        let (newer, older) = self.samples.split_at(if self.is_full() { self.next } else { 0 });
        older.iter().chain(newer).copied()
    }
}

/// Frozen `gamma` plus the current window estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub gamma: f64,
    pub mean: f64,
    pub std_dev: f64,
    pub tau: f64,
}

/// Per-block execution-time model.
#[derive(Debug, Clone)]
pub struct ExecTimeModel {
    buffer: SampleBuffer,
    pi: f64,
    window: usize,
    estimate: Option<Estimate>,
    pending: Vec<u64>,
}

impl ExecTimeModel {
    /// `training` samples (the buffer capacity), threshold `pi`, window `h`.
    pub fn new(training: usize, pi: f64, window: usize) -> Result<Self, StatsError> {
        if !(0.0..=1.0).contains(&pi) {
            return Err(StatsError::InvalidProbability(pi));
        }
        if training < 2 {
            return Err(StatsError::InsufficientSamples { needed: 2, got: training });
        }
        if window == 0 || window > training {
            return Err(StatsError::InvalidWindow { window, capacity: training });
        }
        Ok(ExecTimeModel {
            buffer: SampleBuffer::new(training),
            pi,
            window,
            estimate: None,
            pending: Vec::with_capacity(window),
        })
    }

    pub fn pi(&self) -> f64 {
        self.pi
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn training_len(&self) -> usize {
        self.buffer.capacity()
    }

    pub fn buffer(&self) -> &SampleBuffer {
        &self.buffer
    }

    pub fn is_trained(&self) -> bool {
        self.estimate.is_some()
    }

    pub fn estimate(&self) -> Option<&Estimate> {
        self.estimate.as_ref()
    }

    /// Current bound, once trained.
    pub fn tau(&self) -> Option<f64> {
        self.estimate.map(|e| e.tau)
    }

    /// Samples collected since the last window update.
    pub fn cycles_since_update(&self) -> usize {
        self.pending.len()
    }

    /// Adds a training sample. Returns true when the buffer became full.
    pub fn record_training(&mut self, sample: u64) -> Result<bool, StatsError> {
        if self.is_trained() {
            return Err(StatsError::AlreadyTrained);
        }
        self.buffer.push(sample);
        Ok(self.buffer.is_full())
    }

    /// Computes `gamma` once from the full training buffer.
    pub fn train(&mut self) -> Result<Estimate, StatsError> {
        if self.is_trained() {
            return Err(StatsError::AlreadyTrained);
        }
        if !self.buffer.is_full() {
            return Err(StatsError::InsufficientSamples {
                needed: self.buffer.capacity(),
                got: self.buffer.len(),
            });
        }
        let cdf = empirical_cdf(self.buffer.as_slice(), self.pi)?;
        let estimate = Estimate {
            gamma: cdf.gamma,
            mean: cdf.mean,
            std_dev: cdf.std_dev,
            tau: estimate_bound(cdf.mean, cdf.std_dev, cdf.gamma),
        };
        self.estimate = Some(estimate);
        Ok(estimate)
    }

    /// Queues a post-training sample; every `window` samples the window slides.
    /// Returns the refreshed estimate when an update happened.
    pub fn observe(&mut self, sample: u64) -> Result<Option<Estimate>, StatsError> {
        if !self.is_trained() {
            return Err(StatsError::Untrained);
        }
        self.pending.push(sample);
        if self.pending.len() < self.window {
            return Ok(None);
        }
        let batch = std::mem::take(&mut self.pending);
        let updated = self.window_update(&batch)?;
        self.pending = batch;
        self.pending.clear();
        Ok(Some(updated))
    }

    /// Replaces the oldest `window` samples by `batch` and re-estimates the
    /// mean and standard deviation with the frozen `gamma`.
    pub fn window_update(&mut self, batch: &[u64]) -> Result<Estimate, StatsError> {
        let gamma = self.estimate.ok_or(StatsError::Untrained)?.gamma;
        if batch.len() != self.window {
            return Err(StatsError::WrongBatchSize { expected: self.window, got: batch.len() });
        }
        self.buffer.replace_oldest(batch);
        let (mu, sd) = self.buffer.mean_std_dev()?;
        let estimate = Estimate { gamma, mean: mu, std_dev: sd, tau: estimate_bound(mu, sd, gamma) };
        self.estimate = Some(estimate);
        self.pending.clear();
        Ok(estimate)
    }

    pub fn snapshot(&self, block: &str) -> Option<ModelSnapshot> {
        self.estimate.map(|e| ModelSnapshot {
            block: block.to_owned(),
            n: self.buffer.capacity(),
            pi: self.pi,
            gamma: e.gamma,
            mu_ns: e.mean,
            s_ns: e.std_dev,
            tau_ns: e.tau,
            h: self.window,
        })
    }
}

/// JSON export of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub block: String,
    pub n: usize,
    pub pi: f64,
    pub gamma: f64,
    pub mu_ns: f64,
    pub s_ns: f64,
    pub tau_ns: f64,
    pub h: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Vec<u64> {
        (1..=100).collect()
    }

    #[test]
    fn mean_small_cases() {
        assert_eq!(mean(&[1, 3]).unwrap(), 2.0);
        assert_eq!(mean(&[5, 5, 5, 5]).unwrap(), 5.0);
        assert_eq!(mean(&[]), Err(StatsError::EmptyBuffer));
    }

    #[test]
    fn std_dev_small_cases() {
        assert!((std_dev(&[1, 3]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(std_dev(&[7, 7, 7]).unwrap(), 0.0);
        assert!(matches!(std_dev(&[1]), Err(StatsError::InsufficientSamples { .. })));
    }

    #[test]
    fn huge_samples_fall_back_to_two_pass() {
        let v = [u64::MAX, u64::MAX - 2, u64::MAX - 4];
        assert!(Moments::of(&v).and_then(|m| m.std_dev()).is_none());
        assert!(std_dev(&v).unwrap().is_finite());
    }

    #[test]
    fn tracked_moments_match_a_rescan() {
        let mut b = SampleBuffer::new(7);
        for x in [9, 1, 1, 40, 3, 3, 12] {
            b.push(x);
        }
        for batch in [&[5u64, 6][..], &[1_000_000], &[2, 2, 2, 2, 2, 2, 2], &[7, 8, 9]] {
            b.replace_oldest(batch);
            let (mu, sd) = b.mean_std_dev().unwrap();
            assert_eq!(mu.to_bits(), mean(b.as_slice()).unwrap().to_bits());
            assert_eq!(sd.to_bits(), std_dev(b.as_slice()).unwrap().to_bits());
        }
    }

    #[test]
    fn bins_are_floor_sqrt() {
        assert_eq!(bin_count(100), 10);
        assert_eq!(bin_count(99), 9);
        assert_eq!(bin_count(1000), 31);
        assert_eq!(bin_count(1), 1);
    }

    #[test]
    fn constant_samples_are_degenerate() {
        let b = empirical_cdf(&[42; 10], 0.9).unwrap();
        assert!(b.degenerate);
        assert_eq!(b.gamma, 0.0);
        assert_eq!(b.tau_hat, 42.0);
    }

    #[test]
    fn median_of_grid() {
        let b = empirical_cdf(&grid(), 0.5).unwrap();
        assert_eq!(b.bins, 10);
        assert!((b.bin_width - 9.9).abs() < 1e-12);
        assert_eq!(b.covered, 50);
        assert!((b.tau_hat - 50.5).abs() < 1e-9);
        assert!(b.gamma.abs() < 1e-9);
    }

    #[test]
    fn tail_of_grid_uses_last_bin() {
        let b = empirical_cdf(&grid(), 0.95).unwrap();
        assert_eq!(b.tau_hat, 100.0);
        assert_eq!(b.covered, 100);
        // std dev of 1..=100 is sqrt(841.666..) = 29.0115
        assert!((b.std_dev - 29.011_491_975_882_016).abs() < 1e-9);
        assert!((b.gamma - 1.706_220_419_175_635_6).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(empirical_cdf(&[1, 2], 1.5), Err(StatsError::InvalidProbability(_))));
        assert!(matches!(empirical_cdf(&[1], 0.5), Err(StatsError::InsufficientSamples { .. })));
    }

    #[test]
    fn pi_zero_takes_first_bin() {
        let b = empirical_cdf(&grid(), 0.0).unwrap();
        assert!((b.tau_hat - 10.9).abs() < 1e-12);
    }

    #[test]
    fn bound_formula() {
        assert_eq!(estimate_bound(0.0, 1.0, 2.0), 2.0);
        assert_eq!(estimate_bound(3.5, 8.0, 0.0), 3.5);
        assert!((estimate_bound(50.5, 29.0115, 1.706) - 100.0).abs() < 0.01);
    }

    #[test]
    fn ring_replacement_order() {
        let mut b = SampleBuffer::new(4);
        for s in [1, 2, 3, 4] {
            assert!(b.push(s));
        }
        assert!(!b.push(5));
        b.replace_oldest(&[10, 11]);
        assert_eq!(b.as_slice(), &[10, 11, 3, 4]);
        assert_eq!(b.chronological().collect::<Vec<_>>(), vec![3, 4, 10, 11]);
        b.replace_oldest(&[12, 13, 14]);
        assert_eq!(b.chronological().collect::<Vec<_>>(), vec![11, 12, 13, 14]);
    }

    #[test]
    fn training_lifecycle() {
        let mut m = ExecTimeModel::new(4, 0.95, 2).unwrap();
        assert!(matches!(m.train(), Err(StatsError::InsufficientSamples { .. })));
        assert!(!m.record_training(10).unwrap());
        assert!(!m.record_training(10).unwrap());
        assert!(matches!(m.train(), Err(StatsError::InsufficientSamples { needed: 4, got: 2 })));
        assert!(!m.record_training(10).unwrap());
        assert!(m.record_training(10).unwrap());
        let e = m.train().unwrap();
        assert_eq!((e.gamma, e.tau), (0.0, 10.0));
        assert_eq!(m.record_training(1), Err(StatsError::AlreadyTrained));
        assert_eq!(m.train(), Err(StatsError::AlreadyTrained));
    }

    #[test]
    fn full_window_replaces_everything() {
        let mut m = ExecTimeModel::new(4, 0.5, 4).unwrap();
        for s in [1, 2, 3, 4] {
            m.record_training(s).unwrap();
        }
        m.train().unwrap();
        let e = m.window_update(&[100, 200, 300, 400]).unwrap();
        assert_eq!(e.mean, 250.0);
    }

    #[test]
    fn window_of_identical_samples_is_fixed_point() {
        let mut m = ExecTimeModel::new(4, 0.9, 2).unwrap();
        for s in [5, 9, 5, 9] {
            m.record_training(s).unwrap();
        }
        let before = m.train().unwrap();
        let after = m.window_update(&[5, 9]).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn observe_batches_by_window() {
        let mut m = ExecTimeModel::new(4, 0.9, 2).unwrap();
        assert_eq!(m.observe(1), Err(StatsError::Untrained));
        for s in [5, 9, 5, 9] {
            m.record_training(s).unwrap();
        }
        m.train().unwrap();
        assert_eq!(m.observe(7).unwrap(), None);
        assert_eq!(m.cycles_since_update(), 1);
        assert!(m.observe(7).unwrap().is_some());
        assert_eq!(m.cycles_since_update(), 0);
        assert_eq!(
            m.window_update(&[1]),
            Err(StatsError::WrongBatchSize { expected: 2, got: 1 })
        );
    }

    #[test]
    fn invalid_model_parameters() {
        assert!(ExecTimeModel::new(10, 1.01, 1).is_err());
        assert!(ExecTimeModel::new(1, 0.5, 1).is_err());
        assert!(ExecTimeModel::new(10, 0.5, 0).is_err());
        assert!(ExecTimeModel::new(10, 0.5, 11).is_err());
    }

    #[test]
    fn snapshot_matches_estimate() {
        let mut m = ExecTimeModel::new(100, 0.95, 10).unwrap();
        for s in grid() {
            m.record_training(s).unwrap();
        }
        assert!(m.snapshot("b").is_none());
        m.train().unwrap();
        let s = m.snapshot("b").unwrap();
        assert_eq!(s.tau_ns, s.mu_ns + s.gamma * s.s_ns);
        assert_eq!((s.n, s.h), (100, 10));
    }
}
