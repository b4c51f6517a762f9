//! Seedable random streams and per-step measurement increments.
//!
//! Every trajectory owns an [`RngStream`] keyed by `(seed, stream_id)`.
//! The generator is ChaCha8 with the stream id mapped onto the cipher's
//! stream word, so trajectory `k` draws the same numbers no matter which
//! worker runs it or in what order.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use smallvec::SmallVec;

use crate::error::{Error, Result};

/// Largest total jump probability Σ rate_i·dt allowed in one step.
pub const MAX_JUMP_PROBABILITY: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform on [0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Measurement outcomes of one time step, one entry per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub jumps: SmallVec<[u8; 4]>,
    pub wieners: SmallVec<[f64; 4]>,
    pub dt: f64,
}

impl StepRecord {
    pub fn jump_record(n_channels: usize, fired: Option<usize>, dt: f64) -> Self {
        let mut jumps = SmallVec::from_elem(0u8, n_channels);
        if let Some(k) = fired {
            jumps[k] = 1;
        }
        StepRecord {
            jumps,
            wieners: SmallVec::new(),
            dt,
        }
    }

    pub fn diffusive_record(wieners: SmallVec<[f64; 4]>, dt: f64) -> Self {
        StepRecord {
            jumps: SmallVec::from_elem(0u8, wieners.len()),
            wieners,
            dt,
        }
    }

    /// Channel that fired this step, if any.
    pub fn fired(&self) -> Option<usize> {
        self.jumps.iter().position(|&j| j == 1)
    }
}

/// Draws at most one jump: channel `i` with probability `rates[i]·dt`,
/// nothing with the remaining probability. A single categorical draw is
/// used, so two channels can never fire in the same step.
///
/// Always consumes exactly one uniform from `rng`.
pub fn sample_jump_event(rates: &[f64], dt: f64, rng: &mut RngStream) -> Result<Option<usize>> {
    let mut total = 0.0;
    for (channel, &rate) in rates.iter().enumerate() {
        if !rate.is_finite() || rate < 0.0 {
            return Err(Error::NegativeRate { channel, rate });
        }
        total += rate * dt;
    }
    if total > MAX_JUMP_PROBABILITY {
        return Err(Error::StepTooLarge {
            quantity: "sum of jump probabilities",
            value: total,
            limit: MAX_JUMP_PROBABILITY,
        });
    }
    let u = rng.uniform();
    let mut cumulative = 0.0;
    for (channel, &rate) in rates.iter().enumerate() {
        cumulative += rate * dt;
        if u < cumulative {
            return Ok(Some(channel));
        }
    }
    Ok(None)
}

/// Independent N(0, dt) increments, one per channel.
pub fn sample_wiener(n_channels: usize, dt: f64, rng: &mut RngStream) -> SmallVec<[f64; 4]> {
    let sd = dt.sqrt();
    (0..n_channels).map(|_| sd * rng.standard_normal()).collect()
}
