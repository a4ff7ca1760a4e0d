//! Seeded synthetic weights and feature maps.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::FeatureMap;
use crate::tensor::{RealTensor, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    /// Standard normal entries.
    Gaussian,
    /// Entries uniform on `[-1, 1)`.
    Uniform,
}

fn sample(rng: &mut ChaCha8Rng, dist: Distribution, count: usize) -> Vec<f64> {
    match dist {
        Distribution::Gaussian => (0..count).map(|_| rng.sample(StandardNormal)).collect(),
        Distribution::Uniform => {
            let u = Uniform::new(-1.0, 1.0).expect("valid range");
            (0..count).map(|_| rng.sample(u)).collect()
        }
    }
}

/// `n` iid tensors of the given shape; identical for identical seeds.
pub fn generate_synthetic(
    shape: Shape,
    n: usize,
    dist: Distribution,
    seed: u64,
) -> Result<Vec<RealTensor>> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "filter count must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| RealTensor::new(shape, sample(&mut rng, dist, shape.t())))
        .collect()
}

pub fn synthetic_feature_map(
    c: usize,
    w: usize,
    h: usize,
    dist: Distribution,
    seed: u64,
) -> Result<FeatureMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FeatureMap::new(c, w, h, sample(&mut rng, dist, c * w * h))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let s = Shape::new(3, 3, 3).unwrap();
        let a = generate_synthetic(s, 4, Distribution::Gaussian, 7).unwrap();
        let b = generate_synthetic(s, 4, Distribution::Gaussian, 7).unwrap();
        let c = generate_synthetic(s, 4, Distribution::Gaussian, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn gaussian_moments() {
        let s = Shape::new(1, 100, 100).unwrap();
        let x = &generate_synthetic(s, 1, Distribution::Gaussian, 2024).unwrap()[0];
        let n = x.data().len() as f64;
        let mean = x.data().iter().sum::<f64>() / n;
        let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn uniform_range() {
        let s = Shape::new(1, 10, 10).unwrap();
        let x = &generate_synthetic(s, 1, Distribution::Uniform, 1).unwrap()[0];
        assert!(x.data().iter().all(|v| (-1.0..1.0).contains(v)));
    }

    #[test]
    fn zero_filters_rejected() {
        let s = Shape::new(1, 1, 1).unwrap();
        assert!(generate_synthetic(s, 0, Distribution::Gaussian, 0).is_err());
    }
}
