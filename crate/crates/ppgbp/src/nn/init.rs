//! Glorot (Xavier) uniform initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nn::tensor::{scalar, Scalar, Tensor};

/// Uniform draw from [-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))].
pub fn glorot_init<T: Scalar>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    seed: u64,
) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    glorot_with_rng(shape, fan_in, fan_out, &mut rng)
}

pub fn glorot_with_rng<T: Scalar>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl Rng,
) -> Tensor<T> {
    assert!(fan_in > 0 && fan_out > 0, "fans must be positive");
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<T> = (0..n)
        .map(|_| scalar(rng.gen_range(-bound..=bound)))
        .collect();
    Tensor::from_vec(shape, data).expect("shape/product consistent")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_is_closed_form_for_equal_fans() {
        // fan_in = fan_out = 3 gives bound sqrt(6/6) = 1.
        let t: Tensor<f64> = glorot_init(&[3, 3], 3, 3, 0);
        assert!(t.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn sample_variance_matches_uniform_formula() {
        // Uniform on [-a, a] has variance a^2/3 = (2a)^2/12; for fans 100/100
        // that is 0.03/3 = 0.01. Check a 1e5-draw sample within 5%.
        let t: Tensor<f64> = glorot_init(&[100_000], 100, 100, 7);
        let n = t.numel() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!((var - 0.01).abs() < 0.0005, "sample variance {var}");
    }

    #[test]
    fn same_seed_same_tensor() {
        let a: Tensor<f32> = glorot_init(&[4, 7], 4, 7, 99);
        let b: Tensor<f32> = glorot_init(&[4, 7], 4, 7, 99);
        assert_eq!(a, b);
        let c: Tensor<f32> = glorot_init(&[4, 7], 4, 7, 100);
        assert_ne!(a, c);
    }
}
