//! Credential verifiers and the biometric simulation.
//!
//! Real fingerprint and face capture is replaced by a simulation: an
//! enrolled template is 256 uniformly random bits, a capture is that
//! template with each bit flipped independently with probability `p`, and
//! matching is normalized Hamming distance against an inclusive threshold.

mod evaluation;
mod pin;
mod template;

use thiserror::Error;

pub use evaluation::{evaluate_error_rates, ErrorRates};
pub use pin::{hash_pin, verify_pin, PinDigest};
pub use template::{capture_sample, generate_template, hamming_distance, match_templates, MatchResult};

/// Fingerprint match threshold.
pub const DEFAULT_FINGERPRINT_THRESHOLD: f64 = 0.25;
/// Face match threshold, looser to model a noisier camera capture.
pub const DEFAULT_FACE_THRESHOLD: f64 = 0.30;
/// Bit-flip probability of simulated capture clients.
pub const DEFAULT_CAPTURE_NOISE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AuthError {
    #[error("PIN must be 4 to 8 ASCII digits")]
    MalformedPin,
    #[error("PIN salt must be at least {min} bytes")]
    ShortSalt { min: usize },
    #[error("user is locked")]
    UserLocked,
    #[error("noise rate {0} outside [0, 0.5]")]
    InvalidNoiseRate(f64),
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("cannot match a {probe} probe against a {enrolled} template")]
    KindMismatch {
        probe: crate::domain::TemplateKind,
        enrolled: crate::domain::TemplateKind,
    },
    #[error("population must hold at least two templates")]
    PopulationTooSmall,
    #[error("at least one trial is required")]
    NoTrials,
}

pub(crate) fn check_noise_rate(p: f64) -> Result<(), AuthError> {
    if (0.0..=0.5).contains(&p) {
        Ok(())
    } else {
        Err(AuthError::InvalidNoiseRate(p))
    }
}

pub(crate) fn check_threshold(tau: f64) -> Result<(), AuthError> {
    if (0.0..=1.0).contains(&tau) {
        Ok(())
    } else {
        Err(AuthError::InvalidThreshold(tau))
    }
}
