//! Seed derivation. Every trial and every random component inside a trial
//! gets its own ChaCha stream derived from the master seed, so results do not
//! depend on scheduling or on which methods run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `trial` under `master`.
pub fn trial_seed(master: u64, trial: u64) -> u64 {
    mix(mix(master) ^ trial.wrapping_mul(0xA24B_AED4_963E_E407))
}

/// Independent generator for component `stream` of a trial.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed));
    rng.set_stream(stream);
    rng
}

/// Stream identifiers used inside one trial.
pub mod streams {
    pub const ENVIRONMENT: u64 = 0;
    pub const FEATURE_MAP: u64 = 1;
    pub const REPLAY: u64 = 2;
    pub const POLICY: u64 = 3;
}
