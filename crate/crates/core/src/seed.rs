//! Seed derivation for the seeded pseudo-random streams.
//!
//! Every stream is a ChaCha20 generator seeded (via
//! `SeedableRng::seed_from_u64`) with `run_seed ^ PURPOSE`, where `PURPOSE`
//! is one of the constants below. Anyone following the same derivation
//! reproduces the same templates, trial schedules and identifiers.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Face template of an enrolled user: `template_seed ^ FACE_TEMPLATE`.
pub const FACE_TEMPLATE: u64 = 0x4641_4345_0000_0001;
/// Fingerprint template of an enrolled user (one finger, shared by all of
/// that user's handheld devices): `template_seed ^ FINGERPRINT_TEMPLATE`.
pub const FINGERPRINT_TEMPLATE: u64 = 0x4650_5254_0000_0002;
/// Population templates for the error-rate harness.
pub const EVAL_POPULATION: u64 = 0x4556_504f_0000_0003;
/// Trial schedule for the error-rate harness.
pub const EVAL_SCHEDULE: u64 = 0x4556_5343_0000_0004;
/// Session identifiers, challenge tokens and PIN salts drawn by the engine.
pub const ENGINE_ENTROPY: u64 = 0x454e_4749_0000_0005;

pub fn derive(run_seed: u64, purpose: u64) -> u64 {
    run_seed ^ purpose
}

pub fn stream(run_seed: u64, purpose: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(derive(run_seed, purpose))
}
