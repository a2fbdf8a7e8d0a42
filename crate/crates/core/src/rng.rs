//! Deterministic random streams.
//!
//! Every session seed expands into independent role streams. Each stream is
//! xoshiro256++ seeded through SplitMix64 and advanced by `jump()` (2^128
//! steps) per stream index, so streams never overlap and a role draws the
//! same numbers whether it runs in-process or on the far side of a socket.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

/// Identifier written into reports so runs can be compared across builds.
pub const PRNG_ALGORITHM: &str = "xoshiro256++/splitmix64-seed/jump-streams";

pub type SimRng = Xoshiro256PlusPlus;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Alice's symbol choices.
    Alice = 0,
    /// Channel birefringence and phase drift.
    Channel = 1,
    /// Eavesdropper randomness.
    Eve = 2,
    /// Bob's line routing and photon detection.
    Detector = 3,
    /// Classical post-processing (QBER sample, privacy amplification seed).
    Protocol = 4,
}

pub fn stream_rng(seed: u64, stream: Stream) -> SimRng {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    for _ in 0..=(stream as u32) {
        rng.jump();
    }
    rng
}
