//! Random parameter initialization. All draws go through an explicit RNG so
//! runs are reproducible from a single seed.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Truncated normal: N(0, std²) with draws outside ±2·std resampled.
pub fn trunc_normal<T: Scalar, R: Rng>(rng: &mut R, shape: &[usize], std: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let v = loop {
            let z: f64 = rng.sample(StandardNormal);
            if z.abs() <= 2.0 {
                break z * std;
            }
        };
        data.push(T::from_f64(v));
    }
    Tensor::from_vec(shape, data).expect("shape matches data")
}

/// Plain normal draws N(0, std²).
pub fn normal<T: Scalar, R: Rng>(rng: &mut R, shape: &[usize], std: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data: Vec<T> = (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            T::from_f64(z * std)
        })
        .collect();
    Tensor::from_vec(shape, data).expect("shape matches data")
}

/// Uniform draws on [-limit, limit).
pub fn uniform_symmetric<T: Scalar, R: Rng>(
    rng: &mut R,
    shape: &[usize],
    limit: f64,
) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data: Vec<T> = (0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>();
            T::from_f64((2.0 * u - 1.0) * limit)
        })
        .collect();
    Tensor::from_vec(shape, data).expect("shape matches data")
}

/// He-style fan-in scaling for conv stacks: N(0, 2/fan_in).
pub fn he_normal<T: Scalar, R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor<T> {
    normal(rng, shape, (2.0 / fan_in as f64).sqrt())
}
