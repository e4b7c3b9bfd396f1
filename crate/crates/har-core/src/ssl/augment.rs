//! Time-series augmentations: additive noise and per-feature scaling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::ssl::FeatureVector;

/// `x + eps`, `eps ~ Normal(0, sigma^2)` elementwise. `sigma = 0` is the
/// identity. Deterministic per seed.
pub fn augment_noise(x: &[f64], sigma: f64, seed: u64) -> FeatureVector {
    assert!(sigma >= 0.0, "noise sigma must be non-negative");
    if sigma == 0.0 {
        return x.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    noise_with_rng(x, sigma, &mut rng)
}

pub(crate) fn noise_with_rng(x: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> FeatureVector {
    if sigma == 0.0 {
        return x.to_vec();
    }
    let dist = Normal::new(0.0, sigma).expect("sigma validated");
    x.iter().map(|&v| v + dist.sample(rng)).collect()
}

/// `x * s` with `s ~ Normal(scale_mean, scale_std^2)` drawn per feature.
/// `scale_std = 0, scale_mean = 1` is the identity.
pub fn augment_scale(x: &[f64], scale_mean: f64, scale_std: f64, seed: u64) -> FeatureVector {
    assert!(scale_std >= 0.0, "scale std must be non-negative");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    scale_with_rng(x, scale_mean, scale_std, &mut rng)
}

pub(crate) fn scale_with_rng(
    x: &[f64],
    scale_mean: f64,
    scale_std: f64,
    rng: &mut ChaCha8Rng,
) -> FeatureVector {
    if scale_std == 0.0 {
        return x.iter().map(|&v| v * scale_mean).collect();
    }
    let dist = Normal::new(scale_mean, scale_std).expect("std validated");
    x.iter().map(|&v| v * dist.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_is_identity() {
        let x = vec![1.0, -2.0, 3.5];
        assert_eq!(augment_noise(&x, 0.0, 7), x);
        assert_eq!(augment_scale(&x, 1.0, 0.0, 7), x);
    }

    #[test]
    fn shape_preserved() {
        let x: Vec<f64> = (0..64).map(|i| i as f64 * 0.1).collect();
        assert_eq!(augment_noise(&x, 0.3, 1).len(), x.len());
        assert_eq!(augment_scale(&x, 1.0, 0.2, 1).len(), x.len());
    }

    #[test]
    fn zero_vector_absorbs_scaling() {
        let x = vec![0.0; 16];
        assert_eq!(augment_scale(&x, 1.0, 0.5, 3), x);
    }

    #[test]
    fn noise_std_matches_sigma() {
        // sample-statistics oracle: std of (out - in) over 1e5 draws
        let sigma = 0.37;
        let n = 100_000usize;
        let x = vec![0.5; n];
        let out = augment_noise(&x, sigma, 99);
        let diffs: Vec<f64> = out.iter().zip(&x).map(|(o, i)| o - i).collect();
        let mean = diffs.iter().sum::<f64>() / n as f64;
        let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        assert!(
            (std - sigma).abs() / sigma <= 0.02,
            "empirical std {std} vs sigma {sigma}"
        );
    }

    #[test]
    fn scale_mean_matches_mu() {
        let mu = 1.3;
        let n = 100_000usize;
        let x = vec![2.0; n];
        let out = augment_scale(&x, mu, 0.1, 42);
        let ratios: Vec<f64> = out.iter().zip(&x).map(|(o, i)| o / i).collect();
        let mean = ratios.iter().sum::<f64>() / n as f64;
        assert!(
            (mean - mu).abs() / mu <= 0.02,
            "empirical scale mean {mean} vs mu {mu}"
        );
    }

    #[test]
    fn deterministic_per_seed() {
        let x = vec![1.0, 2.0, 3.0];
        assert_eq!(augment_noise(&x, 0.1, 5), augment_noise(&x, 0.1, 5));
        assert_ne!(augment_noise(&x, 0.1, 5), augment_noise(&x, 0.1, 6));
    }
}
