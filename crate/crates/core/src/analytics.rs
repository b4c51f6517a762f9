//! Ensemble estimators of the relative purities, waiting-time statistics,
//! Kolmogorov–Smirnov tests and the closed-form predictions they are
//! compared with.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use smallvec::SmallVec;

use crate::densmat::BlochVector;
use crate::engine::TrajectoryState;
use crate::error::{Error, Result};
use crate::models::CatState;

/// Burn-in before the asymptotic window opens, in damping times.
pub const BURN_IN: f64 = 5.0;
/// Fraction of the run, counted from the end, used for asymptotic averages.
pub const TAIL_FRACTION: f64 = 0.2;
pub const HISTOGRAM_BINS: usize = 100;
/// Histogram range in units of the sample mean.
pub const HISTOGRAM_SPAN: f64 = 10.0;
pub const MIN_WAITS: usize = 100;
/// Waits opened after this fraction of the run are dropped. Detections
/// renew the process, so the kept waits are unbiased as long as they almost
/// always finish inside the run; counting every finished wait would
/// under-sample the long ones.
pub const WAIT_CUTOFF_FRACTION: f64 = 0.5;

/// Welford running mean and variance.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Chan et al. pairwise combination.
    pub fn merge(&mut self, other: &RunningStats) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let (na, nb) = (self.n as f64, other.n as f64);
        self.mean += delta * nb / n as f64;
        self.m2 += other.m2 + delta * delta * na * nb / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> Result<f64> {
        if self.n < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2,
                have: self.n as usize,
            });
        }
        Ok((self.m2 / (self.n - 1) as f64).max(0.0))
    }

    pub fn standard_error(&self) -> Result<f64> {
        Ok((self.variance()? / self.n as f64).sqrt())
    }

    pub fn estimate(&self) -> Result<Estimate> {
        Ok(Estimate {
            mean: self.mean,
            standard_error: self.standard_error()?,
            n: self.n,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub standard_error: f64,
    pub n: u64,
}

impl Estimate {
    /// (estimate − reference) in units of the standard error.
    pub fn z_score(&self, reference: f64) -> f64 {
        let d = self.mean - reference;
        if self.standard_error > 0.0 {
            d / self.standard_error
        } else if d == 0.0 {
            0.0
        } else {
            d.signum() * f64::INFINITY
        }
    }
}

/// Ensemble functional of one trajectory. Channels are zero-based here and
/// one-based in names: `O1` is Tr ρ_1ρ, `O11` is Tr ρ_1², `O12` is Tr ρ_1ρ_2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimator {
    RelativePurity(usize),
    Purity(usize),
    Pair(usize, usize),
}

impl Estimator {
    pub fn parse(name: &str) -> Result<Self> {
        let digits = name
            .strip_prefix("O_")
            .or_else(|| name.strip_prefix('O'))
            .ok_or_else(|| Error::UnknownEstimator(name.to_string()))?;
        let idx: SmallVec<[usize; 2]> = digits
            .chars()
            .map(|ch| ch.to_digit(10).filter(|&d| d >= 1).map(|d| d as usize - 1))
            .collect::<Option<_>>()
            .ok_or_else(|| Error::UnknownEstimator(name.to_string()))?;
        match idx.as_slice() {
            [i] => Ok(Estimator::RelativePurity(*i)),
            [i, j] if i == j => Ok(Estimator::Purity(*i)),
            [i, j] => Ok(Estimator::Pair(*i, *j)),
            _ => Err(Error::UnknownEstimator(name.to_string())),
        }
    }

    pub fn channels(&self) -> SmallVec<[usize; 2]> {
        match *self {
            Estimator::RelativePurity(i) | Estimator::Purity(i) => SmallVec::from_slice(&[i]),
            Estimator::Pair(i, j) => SmallVec::from_slice(&[i, j]),
        }
    }

    pub fn evaluate(&self, state: &TrajectoryState) -> f64 {
        match *self {
            Estimator::RelativePurity(i) => state.rho_single[i].relative_purity_unchecked(&state.rho_super),
            Estimator::Purity(i) => state.rho_single[i].purity(),
            Estimator::Pair(i, j) => state.rho_single[i].relative_purity_unchecked(&state.rho_single[j]),
        }
    }

    pub fn evaluate_cat(&self, state: &CatState) -> f64 {
        match *self {
            Estimator::RelativePurity(i) => state.o_i(i),
            Estimator::Purity(i) => state.o_ij(i, i),
            Estimator::Pair(i, j) => state.o_ij(i, j),
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Estimator::RelativePurity(i) => write!(f, "O{}", i + 1),
            Estimator::Purity(i) => write!(f, "O{}{}", i + 1, i + 1),
            Estimator::Pair(i, j) => write!(f, "O{}{}", i + 1, j + 1),
        }
    }
}

/// Asymptotic averaging window [max(5, 0.8·t_final), t_final].
pub fn tail_window(t_final: f64) -> (f64, f64) {
    let lo = ((1.0 - TAIL_FRACTION) * t_final).max(BURN_IN.min(t_final));
    (lo, t_final)
}

#[derive(Debug)]
struct Layout {
    estimators: Vec<Estimator>,
    times: Vec<f64>,
    tail: (f64, f64),
    n_channels: usize,
    wait_cutoff: f64,
}

impl Layout {
    fn in_tail(&self, time_index: usize) -> bool {
        let t = self.times[time_index];
        // sample times come from k·dt, allow rounding at the window edges
        let slack = 1e-9 * self.tail.1.abs().max(1.0);
        t >= self.tail.0 - slack && t <= self.tail.1 + slack
    }
}

/// Per-time and asymptotic statistics of the configured estimators over an
/// ensemble, plus the raw waiting times of every channel.
#[derive(Debug, Clone)]
pub struct EnsembleAccumulator {
    layout: Arc<Layout>,
    per_time: Vec<RunningStats>,
    tail: Vec<RunningStats>,
    waits: Vec<Vec<f64>>,
    n_traj: u64,
}

impl EnsembleAccumulator {
    pub fn new(n_channels: usize, estimators: Vec<Estimator>, times: Vec<f64>, tail: (f64, f64)) -> Result<Self> {
        for e in &estimators {
            if e.channels().iter().any(|&c| c >= n_channels) {
                return Err(Error::UnknownEstimator(format!("{e} with {n_channels} channels")));
            }
        }
        let slots = estimators.len() * times.len();
        let n_est = estimators.len();
        let wait_cutoff = WAIT_CUTOFF_FRACTION * times.last().copied().unwrap_or(0.0);
        Ok(EnsembleAccumulator {
            layout: Arc::new(Layout {
                estimators,
                times,
                tail,
                n_channels,
                wait_cutoff,
            }),
            per_time: vec![RunningStats::default(); slots],
            tail: vec![RunningStats::default(); n_est],
            waits: vec![Vec::new(); n_channels],
            n_traj: 0,
        })
    }

    /// Empty accumulator with the same layout.
    pub fn empty_like(&self) -> Self {
        EnsembleAccumulator {
            layout: Arc::clone(&self.layout),
            per_time: vec![RunningStats::default(); self.per_time.len()],
            tail: vec![RunningStats::default(); self.tail.len()],
            waits: vec![Vec::new(); self.waits.len()],
            n_traj: 0,
        }
    }

    pub fn observer(&self) -> TrajectoryObserver {
        let n_est = self.layout.estimators.len();
        TrajectoryObserver {
            layout: Arc::clone(&self.layout),
            values: vec![f64::NAN; self.per_time.len()],
            tail_sum: vec![0.0; n_est],
            tail_count: 0,
            waits: vec![Vec::new(); self.layout.n_channels],
            last_detection: vec![None; self.layout.n_channels],
            scratch: Vec::with_capacity(n_est),
        }
    }

    pub fn absorb(&mut self, obs: TrajectoryObserver) -> Result<()> {
        if !Arc::ptr_eq(&obs.layout, &self.layout) {
            return Err(Error::InvalidModel("observer belongs to another accumulator".into()));
        }
        if let Some(k) = obs.values.iter().position(|v| v.is_nan()) {
            let t = self.layout.times[k / self.layout.estimators.len().max(1)];
            return Err(Error::InvalidState(format!("trajectory skipped sample time {t}")));
        }
        for (stats, &v) in self.per_time.iter_mut().zip(&obs.values) {
            stats.push(v);
        }
        if obs.tail_count > 0 {
            for (stats, &s) in self.tail.iter_mut().zip(&obs.tail_sum) {
                stats.push(s / obs.tail_count as f64);
            }
        }
        for (all, mine) in self.waits.iter_mut().zip(obs.waits) {
            all.extend(mine);
        }
        self.n_traj += 1;
        Ok(())
    }

    /// Adds `other`'s trajectories after this one's.
    pub fn merge(&mut self, other: &EnsembleAccumulator) -> Result<()> {
        if !Arc::ptr_eq(&other.layout, &self.layout) {
            return Err(Error::InvalidModel("accumulators have different layouts".into()));
        }
        for (a, b) in self.per_time.iter_mut().zip(&other.per_time) {
            a.merge(b);
        }
        for (a, b) in self.tail.iter_mut().zip(&other.tail) {
            a.merge(b);
        }
        for (a, b) in self.waits.iter_mut().zip(&other.waits) {
            a.extend_from_slice(b);
        }
        self.n_traj += other.n_traj;
        Ok(())
    }

    pub fn n_traj(&self) -> u64 {
        self.n_traj
    }

    pub fn times(&self) -> &[f64] {
        &self.layout.times
    }

    pub fn estimators(&self) -> &[Estimator] {
        &self.layout.estimators
    }

    fn slot(&self, estimator: Estimator) -> Result<usize> {
        self.layout
            .estimators
            .iter()
            .position(|&e| e == estimator)
            .ok_or_else(|| Error::UnknownEstimator(estimator.to_string()))
    }

    fn require_ensemble(&self) -> Result<()> {
        if self.n_traj < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2,
                have: self.n_traj as usize,
            });
        }
        Ok(())
    }

    /// Mean and standard error of `estimator` at the `time_index`-th sample.
    pub fn estimate_o(&self, estimator: Estimator, time_index: usize) -> Result<Estimate> {
        let slot = self.slot(estimator)?;
        if time_index >= self.layout.times.len() {
            return Err(Error::config(
                "time_index",
                format!("{time_index} beyond {} samples", self.layout.times.len()),
            ));
        }
        self.require_ensemble()?;
        self.per_time[time_index * self.layout.estimators.len() + slot].estimate()
    }

    /// Asymptotic value: per-trajectory average over the tail window, then
    /// mean and standard error across trajectories.
    pub fn estimate_tail(&self, estimator: Estimator) -> Result<Estimate> {
        let slot = self.slot(estimator)?;
        self.require_ensemble()?;
        self.tail[slot].estimate()
    }

    pub fn waits(&self, channel: usize) -> &[f64] {
        &self.waits[channel]
    }
}

/// Collects one trajectory's contribution to an [`EnsembleAccumulator`].
#[derive(Debug)]
pub struct TrajectoryObserver {
    layout: Arc<Layout>,
    values: Vec<f64>,
    tail_sum: Vec<f64>,
    tail_count: usize,
    waits: Vec<Vec<f64>>,
    last_detection: Vec<Option<f64>>,
    scratch: Vec<f64>,
}

impl TrajectoryObserver {
    pub fn sample_state(&mut self, time_index: usize, state: &TrajectoryState) {
        self.scratch.clear();
        self.scratch
            .extend(self.layout.estimators.iter().map(|e| e.evaluate(state)));
        self.store(time_index);
    }

    pub fn sample_cat(&mut self, time_index: usize, state: &CatState) {
        self.scratch.clear();
        self.scratch
            .extend(self.layout.estimators.iter().map(|e| e.evaluate_cat(state)));
        self.store(time_index);
    }

    fn store(&mut self, time_index: usize) {
        let n = self.layout.estimators.len();
        self.values[time_index * n..(time_index + 1) * n].copy_from_slice(&self.scratch);
        if self.layout.in_tail(time_index) {
            for (s, v) in self.tail_sum.iter_mut().zip(&self.scratch) {
                *s += v;
            }
            self.tail_count += 1;
        }
    }

    /// Registers a detection on `channel` at time `t`. The interval before
    /// the first detection is not a waiting time and is dropped, and so is
    /// any wait opened after the cutoff.
    pub fn detection(&mut self, channel: usize, t: f64) {
        if let Some(prev) = self.last_detection[channel] {
            if prev <= self.layout.wait_cutoff {
                self.waits[channel].push(t - prev);
            }
        }
        self.last_detection[channel] = Some(t);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bin_width: f64,
    pub counts: Vec<u64>,
    /// counts / (n · bin_width), so the in-range part integrates to its share
    pub density: Vec<f64>,
    pub overflow: u64,
}

impl Histogram {
    pub fn bin_centers(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.counts.len()).map(|k| (k as f64 + 0.5) * self.bin_width)
    }
}

/// 100-bin histogram of waits over [0, 10·mean].
pub fn waiting_time_histogram(waits: &[f64]) -> Result<Histogram> {
    if waits.len() < MIN_WAITS {
        return Err(Error::InsufficientSamples {
            needed: MIN_WAITS,
            have: waits.len(),
        });
    }
    let mean = waits.iter().sum::<f64>() / waits.len() as f64;
    let bin_width = HISTOGRAM_SPAN * mean / HISTOGRAM_BINS as f64;
    let mut counts = vec![0u64; HISTOGRAM_BINS];
    let mut overflow = 0;
    for &w in waits {
        let k = (w / bin_width) as usize;
        match counts.get_mut(k) {
            Some(c) if w >= 0.0 => *c += 1,
            _ => overflow += 1,
        }
    }
    let scale = 1.0 / (waits.len() as f64 * bin_width);
    let density = counts.iter().map(|&c| c as f64 * scale).collect();
    Ok(Histogram {
        bin_width,
        counts,
        density,
        overflow,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    /// effective sample size entering the asymptotic distribution
    pub n_eff: f64,
}

impl KsResult {
    fn from_distance(statistic: f64, n_eff: f64) -> Self {
        let root = n_eff.sqrt();
        let lambda = (root + 0.12 + 0.11 / root) * statistic;
        KsResult {
            statistic,
            p_value: kolmogorov_survival(lambda),
            n_eff,
        }
    }

    /// Distance at which the test rejects at level `alpha`.
    pub fn critical_distance(n_eff: f64, alpha: f64) -> f64 {
        let root = n_eff.sqrt();
        let (mut lo, mut hi) = (0.0, 5.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if kolmogorov_survival(mid) > alpha {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi) / (root + 0.12 + 0.11 / root)
    }
}

/// P(K > λ) for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi-transformed series, fast for small λ
        let mut cdf = 0.0;
        for k in 1..=20 {
            let m = (2 * k - 1) as f64;
            cdf += (-(m * m) * PI * PI / (8.0 * lambda * lambda)).exp();
        }
        return (1.0 - (2.0 * PI).sqrt() / lambda * cdf).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn sorted(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, have: 0 });
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(Error::InvalidState("NaN sample".into()));
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// One-sample test of `samples` against a continuous CDF.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsResult> {
    let xs = sorted(samples)?;
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (k, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((k + 1) as f64 / n - f).max(f - k as f64 / n);
    }
    Ok(KsResult::from_distance(d, n))
}

/// Two-sample test with effective size n·m/(n+m).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    let (xs, ys) = (sorted(a)?, sorted(b)?);
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        let x = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= x {
            i += 1;
        }
        while j < ys.len() && ys[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    Ok(KsResult::from_distance(d, n * m / (n + m)))
}

/// KS test of waiting times against the exponential law with `rate`.
pub fn compare_exponential(waits: &[f64], rate: f64) -> Result<KsResult> {
    if !(rate > 0.0) {
        return Err(Error::config("rate", "must be positive"));
    }
    ks_one_sample(waits, |t| if t <= 0.0 { 0.0 } else { -(-rate * t).exp_m1() })
}

fn check_efficiency(name: &str, eta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::EfficiencyOutOfRange(format!("{name} = {eta}")));
    }
    Ok(())
}

fn check_pair(eta1: f64, eta2: f64) -> Result<()> {
    check_efficiency("η_1", eta1)?;
    check_efficiency("η_2", eta2)?;
    if eta1 + eta2 > 1.0 + 1e-12 {
        return Err(Error::EfficiencyOutOfRange(format!("η_1 + η_2 = {}", eta1 + eta2)));
    }
    Ok(())
}

/// Asymptotic Tr ρ_1ρ for a photodetector of efficiency η_1 on the strongly
/// driven atom.
pub fn oracle_o1_photo(eta1: f64) -> Result<f64> {
    check_efficiency("η_1", eta1)?;
    Ok(0.5 + eta1 / (2.0 * (3.0 - 2.0 * eta1)))
}

/// Asymptotic Tr ρ_1ρ_2 for two photodetectors on the strongly driven atom.
pub fn oracle_o12_photo(eta1: f64, eta2: f64) -> Result<f64> {
    check_pair(eta1, eta2)?;
    let eta = eta1 + eta2;
    Ok(0.5 - eta1 * eta2 * (6.0 - 2.0 * eta) / (2.0 * (6.0 - eta) * (3.0 - 2.0 * eta1) * (3.0 - 2.0 * eta2)))
}

/// Leading-order asymptotic Tr ρ_iρ for a diffusive homodyne channel.
pub fn oracle_o_homodyne(eta: f64, phi: f64) -> Result<f64> {
    check_efficiency("η", eta)?;
    let (s, c) = phi.sin_cos();
    Ok(0.5 + eta * (0.5 * c * c + s * s / 3.0))
}

/// Leading-order asymptotic Tr ρ_1ρ_2 for two diffusive homodyne channels.
pub fn oracle_o12_homodyne(eta1: f64, phi1: f64, eta2: f64, phi2: f64) -> Result<f64> {
    check_pair(eta1, eta2)?;
    let (s1, c1) = phi1.sin_cos();
    let (s2, c2) = phi2.sin_cos();
    Ok(0.5 + eta1 * eta2 * (c1 * c1 * c2 * c2 + 4.0 / 9.0 * s1 * s1 * s2 * s2))
}

/// Bloch vector a time `t` after a detection, strong drive ω, when the
/// state is conditioned on a total efficiency `eta`.
pub fn oracle_nojump_bloch(t: f64, eta: f64, omega: f64) -> Result<BlochVector> {
    check_efficiency("η", eta)?;
    let envelope = (-0.75 * (1.0 - eta) * t).exp();
    let (s, c) = (2.0 * omega * t).sin_cos();
    Ok(BlochVector::new(0.0, envelope * s, -envelope * c))
}

/// Same as [`oracle_nojump_bloch`] for a single observer of efficiency η_i.
pub fn oracle_nojump_bloch_single(t: f64, eta_i: f64, omega: f64) -> Result<BlochVector> {
    oracle_nojump_bloch(t, eta_i, omega)
}

/// Waiting-time density (η_1/2) e^{−η_1τ/2}.
pub fn waiting_time_density(tau: f64, eta1: f64) -> f64 {
    if tau < 0.0 {
        0.0
    } else {
        0.5 * eta1 * (-0.5 * eta1 * tau).exp()
    }
}
