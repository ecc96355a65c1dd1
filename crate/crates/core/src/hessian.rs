//! Streaming estimation of the input-side Hessian `E[X·Xᵀ]`.
//!
//! Two aggregation rules are supported:
//!
//! * [`AggregationMode::TokenWeighted`]: the moving average used by GPTQ,
//!   where a sequence of `L` tokens is blended in with weight
//!   `L / (N_old + L)`. Long sequences dominate.
//! * [`AggregationMode::SampleNormalized`]: every sequence is first
//!   normalized by its own length and then averaged with weight `1/m`, so
//!   each sample contributes equally regardless of length.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Default damping fraction of the mean diagonal.
pub const DEFAULT_PERCDAMP: f64 = 0.01;

/// One variable-length activation sequence, channels × tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSample {
    activations: Matrix,
    pub source_id: String,
}

impl CalibrationSample {
    pub fn new(activations: Matrix, source_id: impl Into<String>) -> Result<Self> {
        if activations.rows() == 0 {
            return Err(Error::DimensionMismatch("sample has zero channels".into()));
        }
        if activations.cols() == 0 {
            return Err(Error::EmptySample);
        }
        Ok(Self {
            activations,
            source_id: source_id.into(),
        })
    }

    pub fn activations(&self) -> &Matrix {
        &self.activations
    }

    pub fn into_activations(self) -> Matrix {
        self.activations
    }

    pub fn dim(&self) -> usize {
        self.activations.rows()
    }

    pub fn len(&self) -> usize {
        self.activations.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.activations.cols() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    TokenWeighted,
    SampleNormalized,
}

impl AggregationMode {
    pub fn name(self) -> &'static str {
        match self {
            AggregationMode::TokenWeighted => "token_weighted",
            AggregationMode::SampleNormalized => "sample_normalized",
        }
    }
}

impl fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AggregationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "token_weighted" => Ok(Self::TokenWeighted),
            "sample_normalized" => Ok(Self::SampleNormalized),
            other => Err(Error::InvalidConfig(format!("unknown aggregation mode {other:?}"))),
        }
    }
}

/// Streaming estimator state for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianAccumulator {
    mode: AggregationMode,
    hessian: Matrix,
    tokens_seen: u64,
    samples_seen: u64,
}

impl HessianAccumulator {
    pub fn new(mode: AggregationMode, dim: usize) -> Self {
        Self {
            mode,
            hessian: Matrix::zeros(dim, dim),
            tokens_seen: 0,
            samples_seen: 0,
        }
    }

    pub fn mode(&self) -> AggregationMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.hessian.rows()
    }

    /// Current estimate, regardless of how many samples produced it.
    pub fn hessian(&self) -> &Matrix {
        &self.hessian
    }

    pub fn tokens_seen(&self) -> u64 {
        self.tokens_seen
    }

    pub fn samples_seen(&self) -> u64 {
        self.samples_seen
    }

    pub fn is_empty(&self) -> bool {
        self.samples_seen == 0
    }

    /// Blends in one sample according to this accumulator's mode.
    pub fn update(&mut self, sample: &CalibrationSample) -> Result<()> {
        match self.mode {
            AggregationMode::TokenWeighted => self.update_token_weighted(sample),
            AggregationMode::SampleNormalized => self.update_sample_normalized(sample),
        }
    }

    pub fn extend<'a>(&mut self, samples: impl IntoIterator<Item = &'a CalibrationSample>) -> Result<()> {
        samples.into_iter().try_for_each(|s| self.update(s))
    }

    /// `H ← β·H + α·(X·Xᵀ / L)` with `β = N_old/(N_old+L)`, `α = L/(N_old+L)`.
    ///
    /// Equivalently `H = Σ X_m·X_mᵀ / Σ L_m` after any number of updates.
    pub fn update_token_weighted(&mut self, sample: &CalibrationSample) -> Result<()> {
        self.check(sample, AggregationMode::TokenWeighted)?;
        let len = sample.len() as u64;
        let total = self.tokens_seen + len;
        let beta = self.tokens_seen as f64 / total as f64;
        // α·(XXᵀ/L) == XXᵀ/(N_old+L)
        let gain = 1.0 / total as f64;
        self.blend(sample.activations(), beta, gain);
        self.tokens_seen = total;
        self.samples_seen += 1;
        Ok(())
    }

    /// `H ← ((m-1)/m)·H + (1/m)·(X_m·X_mᵀ / L_m)`, `m` the 1-based index of
    /// the incoming sample.
    pub fn update_sample_normalized(&mut self, sample: &CalibrationSample) -> Result<()> {
        self.check(sample, AggregationMode::SampleNormalized)?;
        let m = self.samples_seen + 1;
        let beta = (m - 1) as f64 / m as f64;
        let gain = 1.0 / (m as f64 * sample.len() as f64);
        self.blend(sample.activations(), beta, gain);
        self.samples_seen = m;
        self.tokens_seen += sample.len() as u64;
        Ok(())
    }

    fn check(&self, sample: &CalibrationSample, expected: AggregationMode) -> Result<()> {
        if self.mode != expected {
            return Err(Error::ModeMismatch {
                expected: expected.name(),
                got: self.mode.name(),
            });
        }
        if sample.is_empty() {
            return Err(Error::EmptySample);
        }
        if sample.dim() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "sample has {} channels, accumulator {}",
                sample.dim(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// `H ← beta·H + gain·X·Xᵀ` as a symmetric rank-L update.
    fn blend(&mut self, x: &Matrix, beta: f64, gain: f64) {
        let d = self.dim();
        let h = self.hessian.as_mut_slice();
        for i in 0..d {
            let xi = x.row(i);
            for j in i..d {
                let dot: f64 = xi.iter().zip(x.row(j)).map(|(a, b)| a * b).sum();
                let v = beta * h[i * d + j] + gain * dot;
                h[i * d + j] = v;
                h[j * d + i] = v;
            }
        }
    }

    pub fn diagonal(&self) -> Result<Vec<f64>> {
        if self.is_empty() {
            return Err(Error::EmptyAccumulator);
        }
        Ok(self.hessian.diagonal())
    }

    /// Adds `percdamp · mean(diag H) · I`.
    pub fn finalize(&self, percdamp: f64) -> Result<DampedHessian> {
        if self.is_empty() {
            return Err(Error::EmptyAccumulator);
        }
        DampedHessian::damp(self.hessian.clone(), percdamp)
    }
}

/// Hessian with `lambda·I` added to its diagonal, ready for factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct DampedHessian {
    damped: Matrix,
    lambda: f64,
    percdamp: f64,
}

impl DampedHessian {
    pub fn damp(mut hessian: Matrix, percdamp: f64) -> Result<Self> {
        if !hessian.is_square() {
            return Err(Error::DimensionMismatch("hessian must be square".into()));
        }
        if !(percdamp > 0.0 && percdamp.is_finite()) {
            return Err(Error::InvalidConfig(format!("percdamp must be > 0, got {percdamp}")));
        }
        let diag = hessian.diagonal();
        if diag.iter().all(|&d| d == 0.0) {
            return Err(Error::DegenerateHessian);
        }
        let mean = diag.iter().sum::<f64>() / diag.len() as f64;
        let lambda = percdamp * mean;
        for i in 0..hessian.rows() {
            hessian[(i, i)] += lambda;
        }
        Ok(Self {
            damped: hessian,
            lambda,
            percdamp,
        })
    }

    /// Identity Hessian; damping only rescales it, so with it the GPTQ
    /// solver performs no cross-column compensation.
    pub fn identity(dim: usize, percdamp: f64) -> Result<Self> {
        Self::damp(Matrix::identity(dim), percdamp)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.damped
    }

    pub fn dim(&self) -> usize {
        self.damped.rows()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn percdamp(&self) -> f64 {
        self.percdamp
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.damped.diagonal()
    }
}
