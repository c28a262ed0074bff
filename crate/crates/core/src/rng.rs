//! Counter-based random streams.
//!
//! Every consumer of randomness asks for a stream keyed by
//! `(seed, purpose, index)`. ChaCha keeps a 64-bit stream id next to the key,
//! so the stream for path `i` is the same whichever thread generates it and
//! however many paths precede it.

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share key material.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    /// Brownian increments of a simulated world.
    World = 0x5717_0001,
    /// Unit exponential threshold of the death time.
    Death = 0x5717_0002,
    /// Idiosyncratic noise of filter particles.
    Particles = 0x5717_0003,
    /// Paths started at a probe point for Feynman-Kac checks.
    FeynmanKac = 0x5717_0004,
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> StreamRng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(purpose as u64).to_le_bytes());
    // fixed tail so an all-zero seed still gives a non-degenerate key
    key[16..24].copy_from_slice(&0x9e37_79b9_7f4a_7c15u64.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

#[inline]
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// A strictly positive unit-exponential variate.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct ExpDraw(f64);

impl ExpDraw {
    /// Rejects zero, negative and non-finite thresholds, which would put
    /// mass on `tau = 0`.
    pub fn new(value: f64) -> Option<Self> {
        (value > 0.0 && value.is_finite()).then_some(ExpDraw(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// `-ln U` with `U` uniform on the open interval, so the result is never 0.
pub fn unit_exponential<R: Rng + ?Sized>(rng: &mut R) -> ExpDraw {
    let u: f64 = rng.sample(Open01);
    ExpDraw(-crate::math::ln(u))
}
