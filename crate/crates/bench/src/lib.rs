//! Deterministic fixtures for the benchmarks.

use maca_core::calib::SyntheticGenerator;
use maca_core::metrics::calibrate;
use maca_core::rng::mix64;
use maca_core::{AggregationMode, CalibrationSample, DampedHessian, Matrix, SyntheticSpec};

/// Uniform values in `[-1, 1)` from a hash of `(seed, index)`.
pub fn weights(rows: usize, cols: usize, seed: u64) -> Matrix {
    let data = (0..rows * cols)
        .map(|i| (mix64(seed ^ mix64(i as u64)) >> 11) as f64 / (1u64 << 52) as f64 - 1.0)
        .collect();
    Matrix::from_vec(rows, cols, data).expect("finite")
}

pub fn synthetic_spec(dim: usize, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        dim,
        short_channels: dim / 2..dim / 2 + dim / 8,
        long_channels: 0..dim / 8,
        seed,
        ..SyntheticSpec::default()
    }
}

pub fn samples(dim: usize, lengths: &[usize], seed: u64) -> Vec<CalibrationSample> {
    SyntheticGenerator::new(synthetic_spec(dim, seed), 0)
        .and_then(|mut g| g.samples(lengths))
        .expect("valid spec")
}

pub fn damped_hessian(dim: usize, seed: u64) -> DampedHessian {
    let s = samples(dim, &[64, 128, 256, 512], seed);
    calibrate(AggregationMode::SampleNormalized, dim, &s)
        .and_then(|h| h.finalize(0.01))
        .expect("damped hessian")
}
