//! FAR/FRR harness over the simulated template model.
//!
//! Trial schedule, for reproduction elsewhere:
//!
//! 1. Population stream `stream(seed, EVAL_POPULATION)`: user `i` gets
//!    `generate_template(next_u64(), Fingerprint)` for `i = 0..n`.
//! 2. Schedule stream `stream(seed, EVAL_SCHEDULE)`, drawn in this order:
//!    - `trials` genuine trials: `user = random_range(0..n)`,
//!      `capture = next_u64()`; the capture of `user`'s template is matched
//!      against that same template.
//!    - `trials` impostor trials: `i = random_range(0..n)`,
//!      `j = random_range(0..n - 1)`, bumped by one when `j >= i`,
//!      `capture = next_u64()`; the capture of `i` is matched against `j`.

use rand::{Rng, RngCore};
use serde::Serialize;

use super::template::{capture_sample, generate_template, match_templates};
use super::{check_noise_rate, check_threshold, AuthError};
use crate::domain::TemplateKind;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorRates {
    pub far: f64,
    pub frr: f64,
    pub trials: u64,
    pub threshold: f64,
    pub noise_rate: f64,
    pub false_accepts: u64,
    pub false_rejects: u64,
}

impl ErrorRates {
    /// `far=0.000000 frr=0.000000 trials=10000`
    pub fn summary_line(&self) -> String {
        format!("far={:.6} frr={:.6} trials={}", self.far, self.frr, self.trials)
    }
}

pub fn evaluate_error_rates(
    population_size: usize,
    noise_rate: f64,
    threshold: f64,
    trials: u64,
    run_seed: u64,
) -> Result<ErrorRates, AuthError> {
    check_noise_rate(noise_rate)?;
    check_threshold(threshold)?;
    if population_size < 2 {
        return Err(AuthError::PopulationTooSmall);
    }
    if trials == 0 {
        return Err(AuthError::NoTrials);
    }

    let mut population_rng = seed::stream(run_seed, seed::EVAL_POPULATION);
    let population: Vec<_> = (0..population_size)
        .map(|_| generate_template(population_rng.next_u64(), TemplateKind::Fingerprint))
        .collect();

    let mut schedule = seed::stream(run_seed, seed::EVAL_SCHEDULE);

    let mut false_rejects = 0u64;
    for _ in 0..trials {
        let user = schedule.random_range(0..population_size);
        let capture_seed = schedule.next_u64();
        let enrolled = &population[user];
        let probe = capture_sample(enrolled, noise_rate, capture_seed)?;
        if !match_templates(&probe, enrolled, threshold)?.matched {
            false_rejects += 1;
        }
    }

    let mut false_accepts = 0u64;
    for _ in 0..trials {
        let impostor = schedule.random_range(0..population_size);
        let mut victim = schedule.random_range(0..population_size - 1);
        if victim >= impostor {
            victim += 1;
        }
        let capture_seed = schedule.next_u64();
        let probe = capture_sample(&population[impostor], noise_rate, capture_seed)?;
        if match_templates(&probe, &population[victim], threshold)?.matched {
            false_accepts += 1;
        }
    }

    Ok(ErrorRates {
        far: false_accepts as f64 / trials as f64,
        frr: false_rejects as f64 / trials as f64,
        trials,
        threshold,
        noise_rate,
        false_accepts,
        false_rejects,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argument_checks() {
        assert_eq!(
            evaluate_error_rates(1, 0.1, 0.25, 10, 7),
            Err(AuthError::PopulationTooSmall)
        );
        assert_eq!(evaluate_error_rates(2, 0.1, 0.25, 0, 7), Err(AuthError::NoTrials));
        assert_eq!(
            evaluate_error_rates(2, 0.9, 0.25, 1, 7),
            Err(AuthError::InvalidNoiseRate(0.9))
        );
        assert_eq!(
            evaluate_error_rates(2, 0.1, -0.5, 1, 7),
            Err(AuthError::InvalidThreshold(-0.5))
        );
    }

    #[test]
    fn extremes() {
        let open = evaluate_error_rates(5, 0.1, 1.0, 200, 1).unwrap();
        assert_eq!((open.far, open.frr), (1.0, 0.0));
        let shut = evaluate_error_rates(5, 0.0, 0.0, 200, 1).unwrap();
        assert_eq!((shut.far, shut.frr), (0.0, 0.0));
    }

    #[test]
    fn summary_format() {
        let rates = evaluate_error_rates(3, 0.0, 0.25, 10, 7).unwrap();
        assert_eq!(rates.summary_line(), "far=0.000000 frr=0.000000 trials=10");
    }
}
