//! Synthetic tariff profiles: per-interval Gaussian perturbations around a
//! mean profile, clipped at zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic generator for one synthesis stream (a study cell or a
/// projection session).
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut s = seed;
    let a = splitmix64(&mut s);
    let mut t = stream ^ 0xD1B5_4A32_D192_ED03;
    let b = splitmix64(&mut t);
    ChaCha8Rng::seed_from_u64(a ^ b.rotate_left(23))
}

/// Standard normal via Box-Muller on the generator's uniforms.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// One standard-normal draw per interval; the shared shape for a family of
/// variance-scaled profiles.
pub fn normal_shape(len: usize, seed: u64, stream: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, stream);
    (0..len).map(|_| standard_normal(&mut rng)).collect()
}

/// `alpha_t = max(0, mean_t * (1 + scale * relative_std * shape_t))`.
pub fn scale_profile(mean: &[f64], shape: &[f64], relative_std: f64, scale: f64) -> Vec<f64> {
    mean.iter()
        .zip(shape)
        .map(|(m, g)| (m * (1.0 + scale * relative_std * g)).max(0.0))
        .collect()
}

/// Fresh Gaussian profile for one stream (projection sessions).
pub fn synthesize(mean: &[f64], relative_std: f64, seed: u64, stream: u64) -> Vec<f64> {
    let shape = normal_shape(mean.len(), seed, stream);
    scale_profile(mean, &shape, relative_std, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_scale_returns_the_mean() {
        let mean = vec![0.1, 0.2, 0.3];
        let shape = normal_shape(3, 5, 0);
        assert_eq!(scale_profile(&mean, &shape, 0.1, 0.0), mean);
    }

    #[test]
    fn synthesis_is_deterministic_per_stream() {
        let mean = vec![0.1; 8];
        let a = synthesize(&mean, 0.1, 9, 3);
        let b = synthesize(&mean, 0.1, 9, 3);
        assert_eq!(a, b);
        let c = synthesize(&mean, 0.1, 9, 4);
        assert_ne!(a, c);
    }

    #[test]
    fn profiles_are_clipped_at_zero() {
        let mean = vec![0.01; 64];
        let alpha = synthesize(&mean, 50.0, 1, 0);
        assert!(alpha.iter().all(|&a| a >= 0.0));
        assert!(alpha.contains(&0.0));
    }

    #[test]
    fn sample_statistics_match_parameters() {
        let mean = vec![1.0; 20_000];
        let alpha = synthesize(&mean, 0.1, 77, 0);
        let avg: f64 = alpha.iter().sum::<f64>() / alpha.len() as f64;
        let var: f64 =
            alpha.iter().map(|a| (a - avg) * (a - avg)).sum::<f64>() / alpha.len() as f64;
        assert!((avg - 1.0).abs() < 5e-3, "avg {avg}");
        assert!((var.sqrt() - 0.1).abs() < 5e-3, "std {}", var.sqrt());
    }
}
