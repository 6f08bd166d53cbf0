//! SplitMix64 streams keyed by `(master_seed, stream_index)`.
//!
//! The generator and stream derivation are fixed bit-for-bit so that
//! sign vectors, and therefore p-values, are reproducible across platforms
//! and implementations.

use crate::error::{Error, Result};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const STREAM_MIX: u64 = 0xA076_1D64_78BD_642F;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    state: u64,
    master_seed: u64,
    stream_index: u64,
}

impl RngStream {
    /// Stream `stream_index` of `master_seed`. One output is discarded after
    /// seeding.
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        let state = master_seed ^ stream_index.wrapping_add(1).wrapping_mul(STREAM_MIX);
        let mut s = RngStream {
            state,
            master_seed,
            stream_index,
        };
        s.next_u64();
        s
    }

    /// Raw SplitMix64 with the given state and no discard.
    pub fn from_state(state: u64) -> Self {
        RngStream {
            state,
            master_seed: state,
            stream_index: 0,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform on (0, 1): 53 random bits, floored at 2^-53.
    #[inline]
    pub fn next_open_unit(&mut self) -> f64 {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        ((self.next_u64() >> 11) as f64 * SCALE).max(SCALE)
    }

    /// Box-Muller; the first uniform sets the radius, the second the angle,
    /// and the paired sine variate is discarded.
    pub fn standard_normal(&mut self) -> f64 {
        let u1 = self.next_open_unit();
        let u2 = self.next_open_unit();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Random ±1 labels for realization `realization_index` (must be ≥ 1;
/// index 0 is the observed labeling).
pub fn sign_vector(master_seed: u64, realization_index: u64, n: usize) -> Result<Vec<f64>> {
    if realization_index == 0 {
        return Err(Error::InvalidArgument(
            "realization index 0 is reserved for the observed labeling".into(),
        ));
    }
    if n < 2 {
        return Err(Error::TooFewSubjects(n));
    }
    let mut s = RngStream::new(master_seed, realization_index);
    Ok((0..n)
        .map(|_| if s.next_u64() & 1 == 0 { 1.0 } else { -1.0 })
        .collect())
}
