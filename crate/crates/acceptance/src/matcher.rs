//! Error-rate harness at the default operating point, checked against exact
//! binomial tails computed here.

use std::time::{Duration, Instant};

use iam_core::authenticators::{evaluate_error_rates, ErrorRates};

pub const TEMPLATE_BITS: u64 = 256;

/// `ln C(n, k)` by direct summation; exact enough for n = 256.
fn ln_choose(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    (0..k).map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln()).sum()
}

fn pmf(n: u64, k: u64, p: f64) -> f64 {
    (ln_choose(n, k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp()
}

/// `P(Bin(n, p) <= k)`.
pub fn cdf(n: u64, k: u64, p: f64) -> f64 {
    (0..=k).map(|i| pmf(n, i, p)).sum()
}

/// `P(Bin(n, p) > k)`.
pub fn upper_tail(n: u64, k: u64, p: f64) -> f64 {
    (k + 1..=n).map(|i| pmf(n, i, p)).sum()
}

#[derive(Debug)]
pub struct Report {
    pub rates: ErrorRates,
    pub repeat_identical: bool,
    pub far_oracle: f64,
    pub frr_oracle: f64,
    pub zero_tau_frr: f64,
    pub elapsed: Duration,
}

impl Report {
    pub fn clean(&self) -> bool {
        self.rates.far == 0.0
            && self.rates.frr == 0.0
            && self.far_oracle < 1e-10
            && self.frr_oracle < 1e-10
            && self.zero_tau_frr >= 0.9999
            && self.repeat_identical
            && self.elapsed < Duration::from_secs(10)
    }
}

fn same_bits(a: &ErrorRates, b: &ErrorRates) -> bool {
    a.far.to_bits() == b.far.to_bits()
        && a.frr.to_bits() == b.frr.to_bits()
        && a.trials == b.trials
        && a.summary_line() == b.summary_line()
}

pub fn run() -> Report {
    let started = Instant::now();
    let rates = evaluate_error_rates(100, 0.1, 0.25, 10_000, 7).expect("valid parameters");
    let elapsed = started.elapsed();
    let again = evaluate_error_rates(100, 0.1, 0.25, 10_000, 7).expect("valid parameters");
    let zero = evaluate_error_rates(100, 0.1, 0.0, 10_000, 7).expect("valid parameters");
    let zero_again = evaluate_error_rates(100, 0.1, 0.0, 10_000, 7).expect("valid parameters");
    // Inclusive threshold: accept at distance <= 0.25 * 256 = 64 bits.
    let accept_bits = (0.25 * TEMPLATE_BITS as f64) as u64;
    Report {
        repeat_identical: same_bits(&rates, &again) && same_bits(&zero, &zero_again),
        far_oracle: cdf(TEMPLATE_BITS, accept_bits, 0.5),
        frr_oracle: upper_tail(TEMPLATE_BITS, accept_bits, 0.1),
        zero_tau_frr: zero.frr,
        rates,
        elapsed,
    }
}
