//! Shared fixtures for the benchmarks.

use nalgebra::{DMatrix, DVector};
use osae_core::rng::{stream, Purpose};
use osae_core::sae::{Activation, SaeModel};
use osae_core::Dictionary;
use rand_distr::{Distribution, StandardNormal};

/// Gaussian matrix drawn from a fixed stream.
pub fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = stream(seed, Purpose::ModelInit, 0);
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

/// Random ReLU model with a unit-norm decoder.
pub fn model(d: usize, k: usize, m: usize, seed: u64) -> SaeModel {
    let dec = Dictionary::from_unnormalized(gaussian(d, k, seed)).expect("nonzero columns");
    SaeModel::new(gaussian(k, d, seed + 1), DVector::zeros(k), dec, Activation::Relu, m).expect("valid shapes")
}
