use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use super::{check_noise_rate, check_threshold, AuthError};
use crate::domain::{BiometricTemplate, TemplateKind, TEMPLATE_BITS, TEMPLATE_BYTES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchResult {
    /// Differing bits over [`TEMPLATE_BITS`]; always an exact multiple of 1/256.
    pub distance: f64,
    pub threshold: f64,
    pub matched: bool,
}

/// 256 uniform bits from a ChaCha20 stream seeded with `seed`.
///
/// The kind is a label only; it does not feed the generator.
pub fn generate_template(seed: u64, kind: TemplateKind) -> BiometricTemplate {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut bits = [0u8; TEMPLATE_BYTES];
    rng.fill_bytes(&mut bits);
    BiometricTemplate::from_array(bits, kind)
}

/// Simulated capture: bit `i` (in index order) is flipped when the `i`-th
/// `f64` drawn from a ChaCha20 stream seeded with `seed` is below `noise_rate`.
pub fn capture_sample(
    enrolled: &BiometricTemplate,
    noise_rate: f64,
    seed: u64,
) -> Result<BiometricTemplate, AuthError> {
    check_noise_rate(noise_rate)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let flips = (0..TEMPLATE_BITS).filter(|_| rng.random::<f64>() < noise_rate);
    Ok(enrolled.with_flipped(flips.collect::<Vec<_>>()))
}

/// Number of differing bits.
pub fn hamming_distance(a: &BiometricTemplate, b: &BiometricTemplate) -> u32 {
    a.bytes()
        .iter()
        .zip(b.bytes())
        .map(|(x, y)| (x ^ y).count_ones())
        .sum()
}

pub fn match_templates(
    probe: &BiometricTemplate,
    enrolled: &BiometricTemplate,
    threshold: f64,
) -> Result<MatchResult, AuthError> {
    check_threshold(threshold)?;
    if probe.kind() != enrolled.kind() {
        return Err(AuthError::KindMismatch {
            probe: probe.kind(),
            enrolled: enrolled.kind(),
        });
    }
    let distance = f64::from(hamming_distance(probe, enrolled)) / TEMPLATE_BITS as f64;
    Ok(MatchResult {
        distance,
        threshold,
        matched: distance <= threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

    fn fp(seed: u64) -> BiometricTemplate {
        generate_template(seed, TemplateKind::Fingerprint)
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(fp(42), fp(42));
        assert_ne!(fp(42), fp(43));
        // zero is an ordinary seed
        let zero = fp(0);
        assert_ne!(zero.bytes(), &[0u8; TEMPLATE_BYTES]);
        assert_eq!(zero.to_hex().len(), 64);
    }

    #[test]
    fn unrelated_seeds_sit_near_half_distance() {
        // P(Bin(256, 1/2) / 256 outside [0.40, 0.60]) = 1.39e-3 (exact sum).
        let d = match_templates(&fp(42), &fp(43), 0.25).unwrap().distance;
        assert!((0.40..=0.60).contains(&d), "{d}");
    }

    #[test]
    fn zero_noise_capture_is_identity() {
        let t = fp(5);
        let probe = capture_sample(&t, 0.0, 99).unwrap();
        assert_eq!(probe, t);
        assert_eq!(match_templates(&probe, &t, 0.0).unwrap().distance, 0.0);
    }

    #[test]
    fn tenth_noise_lands_in_expected_band() {
        // P(Bin(256, 0.1) / 256 outside [0.04, 0.16]) = 2.03e-3 (exact sum).
        let t = fp(5);
        for seed in 0..20 {
            let probe = capture_sample(&t, 0.1, seed).unwrap();
            let d = match_templates(&probe, &t, 0.25).unwrap().distance;
            assert!((0.04..=0.16).contains(&d), "seed {seed}: {d}");
        }
    }

    #[test]
    fn capture_rejects_bad_noise() {
        let t = fp(1);
        assert_eq!(capture_sample(&t, 0.6, 1), Err(AuthError::InvalidNoiseRate(0.6)));
        assert_eq!(capture_sample(&t, -0.1, 1), Err(AuthError::InvalidNoiseRate(-0.1)));
        assert!(capture_sample(&t, 0.5, 1).is_ok());
    }

    #[test]
    fn capture_is_deterministic_and_keeps_kind() {
        let t = generate_template(3, TemplateKind::Face);
        let a = capture_sample(&t, 0.2, 11).unwrap();
        assert_eq!(a, capture_sample(&t, 0.2, 11).unwrap());
        assert_ne!(a, capture_sample(&t, 0.2, 12).unwrap());
        assert_eq!(a.kind(), TemplateKind::Face);
    }

    #[test]
    fn identity_complement_and_boundary() {
        let t = fp(9);
        let same = match_templates(&t, &t, 0.25).unwrap();
        assert_eq!((same.distance, same.matched), (0.0, true));

        let opposite = match_templates(&t.complement(), &t, 0.25).unwrap();
        assert_eq!((opposite.distance, opposite.matched), (1.0, false));

        let edge = t.with_flipped((0..256).step_by(4));
        let boundary = match_templates(&edge, &t, 0.25).unwrap();
        assert_eq!(boundary.distance, 0.25);
        assert!(boundary.matched, "threshold is inclusive");

        let past = edge.with_flipped([1]);
        assert!(!match_templates(&past, &t, 0.25).unwrap().matched);
    }

    #[test]
    fn kind_and_threshold_errors() {
        let face = generate_template(1, TemplateKind::Face);
        assert_eq!(
            match_templates(&face, &fp(1), 0.3),
            Err(AuthError::KindMismatch {
                probe: TemplateKind::Face,
                enrolled: TemplateKind::Fingerprint,
            })
        );
        assert_eq!(
            match_templates(&face, &face, 1.01),
            Err(AuthError::InvalidThreshold(1.01))
        );
    }

    #[test]
    fn triangle_inequality_over_seeded_triples() {
        let mut rng = ChaCha20Rng::seed_from_u64(2024);
        for _ in 0..1000 {
            let (a, b, c) = (fp(rng.next_u64()), fp(rng.next_u64()), fp(rng.next_u64()));
            // near neighbours too, not just random pairs
            let b = if rng.random_bool(0.5) {
                capture_sample(&a, 0.1, rng.next_u64()).unwrap()
            } else {
                b
            };
            assert!(hamming_distance(&a, &c) <= hamming_distance(&a, &b) + hamming_distance(&b, &c));
        }
    }

    proptest! {
        #[test]
        fn distance_is_symmetric(x in any::<u64>(), y in any::<u64>(), tau in 0.0f64..=1.0) {
            let (a, b) = (fp(x), fp(y));
            prop_assert_eq!(
                match_templates(&a, &b, tau).unwrap().distance,
                match_templates(&b, &a, tau).unwrap().distance
            );
        }

        #[test]
        fn matching_is_monotone_in_threshold(
            x in any::<u64>(),
            noise in 0.0f64..=0.5,
            s in any::<u64>(),
            lo in 0.0f64..=1.0,
            hi in 0.0f64..=1.0,
        ) {
            let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
            let enrolled = fp(x);
            let probe = capture_sample(&enrolled, noise, s).unwrap();
            let strict = match_templates(&probe, &enrolled, lo).unwrap();
            let loose = match_templates(&probe, &enrolled, hi).unwrap();
            prop_assert!(!strict.matched || loose.matched);
            prop_assert_eq!(strict.matched, strict.distance <= lo);
        }

        #[test]
        fn distance_counts_xor_popcount(x in any::<u64>(), flips in proptest::collection::btree_set(0usize..256, 0..256)) {
            let t = fp(x);
            let probe = t.with_flipped(flips.iter().copied());
            let d = match_templates(&probe, &t, 1.0).unwrap().distance;
            prop_assert_eq!(d, flips.len() as f64 / 256.0);
        }
    }
}
