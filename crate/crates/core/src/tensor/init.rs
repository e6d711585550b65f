use super::Tensor;
use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// He initialization: samples from `normal(0, sqrt(2 / fan_in))`.
pub fn he_init<R: Rng>(shape: Vec<usize>, fan_in: usize, rng: &mut R) -> Result<Tensor> {
    if fan_in == 0 {
        return Err(Error::Config("he_init requires fan_in >= 1".into()));
    }
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    let numel: usize = shape.iter().product();
    let values: Vec<f64> = (0..numel).map(|_| normal.sample(rng)).collect();
    Tensor::new(shape, values)
}
