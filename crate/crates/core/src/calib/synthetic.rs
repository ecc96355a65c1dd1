//! Synthetic activations whose channel statistics depend on sequence length.
//!
//! Every token column is `x = S(L)·(√(1-ρ)·g + √ρ·F·f)` with `g ~ N(0, I_D)`,
//! `f ~ N(0, I_k)` and `F` a fixed `D×k` loading matrix with unit-norm rows.
//! The correlation matrix `(1-ρ)I + ρ·F·Fᵀ` has a unit diagonal, so the
//! per-token covariance is `S(L)·R·S(L)` and its diagonal is exactly
//! `S(L)²`. With `ρ = 0` the generator is plain scaled Gaussian noise.
//!
//! `S(L)` is diagonal: `emphasis_scale` on the short-regime channels when
//! `L < crossover_length`, on the long-regime channels otherwise, and
//! `base_scale` everywhere else.

use crate::error::{Error, Result};
use crate::hessian::CalibrationSample;
use crate::linalg::Matrix;
use crate::rng::{derive, seeded, Rng};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::ops::Range;

const LOADING_TAG: u64 = 0x4c4f_4144;
const STREAM_TAG: u64 = 0x5354_524d;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub short_channels: Range<usize>,
    pub long_channels: Range<usize>,
    pub base_scale: f64,
    pub emphasis_scale: f64,
    pub crossover_length: usize,
    /// Shared-factor correlation strength ρ in `[0, 1)`.
    #[serde(default)]
    pub correlation: f64,
    /// Number of shared latent factors (ignored when `correlation` is 0).
    #[serde(default = "default_factors")]
    pub factors: usize,
    pub seed: u64,
}

fn default_factors() -> usize {
    4
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            dim: 64,
            short_channels: 40..48,
            long_channels: 0..8,
            base_scale: 1.0,
            emphasis_scale: 10.0,
            crossover_length: 128,
            correlation: 0.6,
            factors: 4,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.dim == 0 {
            return bad("synthetic dim must be >= 1".into());
        }
        for (name, r) in [("short", &self.short_channels), ("long", &self.long_channels)] {
            if r.start > r.end || r.end > self.dim {
                return bad(format!("{name}_channels {r:?} outside [0, {})", self.dim));
            }
        }
        let (s, l) = (&self.short_channels, &self.long_channels);
        if s.start < l.end && l.start < s.end {
            return bad(format!("channel ranges {s:?} and {l:?} overlap"));
        }
        if !(self.base_scale > 0.0 && self.emphasis_scale > self.base_scale) {
            return bad("need emphasis_scale > base_scale > 0".into());
        }
        if self.crossover_length == 0 {
            return bad("crossover_length must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.correlation) {
            return bad(format!("correlation {} outside [0, 1)", self.correlation));
        }
        if self.correlation > 0.0 && self.factors == 0 {
            return bad("correlated generator needs at least one factor".into());
        }
        Ok(())
    }

    /// Diagonal of `S(L)`.
    pub fn channel_scales(&self, length: usize) -> Vec<f64> {
        let emphasized = if length < self.crossover_length {
            &self.short_channels
        } else {
            &self.long_channels
        };
        (0..self.dim)
            .map(|d| {
                if emphasized.contains(&d) {
                    self.emphasis_scale
                } else {
                    self.base_scale
                }
            })
            .collect()
    }

    /// Expected per-token covariance `E[(1/L)·X·Xᵀ]` at this length.
    pub fn expected_covariance(&self, length: usize) -> Matrix {
        let scales = self.channel_scales(length);
        let mut c = self.correlation_matrix();
        for i in 0..self.dim {
            for j in 0..self.dim {
                c[(i, j)] *= scales[i] * scales[j];
            }
        }
        c
    }

    pub fn correlation_matrix(&self) -> Matrix {
        let mut r = Matrix::identity(self.dim);
        if self.correlation > 0.0 {
            let shared = self.loadings().gram();
            for i in 0..self.dim {
                for j in 0..self.dim {
                    r[(i, j)] = (1.0 - self.correlation) * r[(i, j)] + self.correlation * shared[(i, j)];
                }
            }
        }
        r
    }

    /// Unit-norm-row loading matrix `F`, a function of the seed alone.
    pub fn loadings(&self) -> Matrix {
        let k = self.factors.max(1);
        let mut rng = seeded(derive(self.seed, &[LOADING_TAG]));
        let mut f = Matrix::zeros(self.dim, k);
        for i in 0..self.dim {
            let row: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            for (j, v) in row.into_iter().enumerate() {
                f[(i, j)] = v / norm;
            }
        }
        f
    }
}

/// Sequential sample stream for one spec; deterministic given the stream seed.
#[derive(Debug, Clone)]
pub struct SyntheticGenerator {
    spec: SyntheticSpec,
    loadings: Matrix,
    rng: Rng,
    produced: u64,
}

impl SyntheticGenerator {
    pub fn new(spec: SyntheticSpec, stream: u64) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            loadings: spec.loadings(),
            rng: seeded(derive(spec.seed, &[STREAM_TAG, stream])),
            spec,
            produced: 0,
        })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    pub fn sample(&mut self, length: usize) -> Result<CalibrationSample> {
        if length == 0 {
            return Err(Error::EmptySample);
        }
        let d = self.spec.dim;
        let k = self.loadings.cols();
        let rho = self.spec.correlation;
        let (own, shared) = ((1.0 - rho).sqrt(), rho.sqrt());
        let scales = self.spec.channel_scales(length);
        let mut x = Matrix::zeros(d, length);
        let mut g = vec![0.0; d];
        let mut f = vec![0.0; k];
        for t in 0..length {
            g.iter_mut().for_each(|v| *v = self.rng.sample(StandardNormal));
            if rho > 0.0 {
                f.iter_mut().for_each(|v| *v = self.rng.sample(StandardNormal));
            }
            for i in 0..d {
                let mut v = own * g[i];
                if rho > 0.0 {
                    let common: f64 = self.loadings.row(i).iter().zip(&f).map(|(a, b)| a * b).sum();
                    v += shared * common;
                }
                x[(i, t)] = scales[i] * v;
            }
        }
        let id = format!("synthetic:{}:{}", self.spec.seed, self.produced);
        self.produced += 1;
        CalibrationSample::new(x, id)
    }

    pub fn samples(&mut self, lengths: &[usize]) -> Result<Vec<CalibrationSample>> {
        lengths.iter().map(|&l| self.sample(l)).collect()
    }
}

/// One sample of length `length` from the spec's default stream.
pub fn generate_synthetic(spec: &SyntheticSpec, length: usize) -> Result<CalibrationSample> {
    SyntheticGenerator::new(spec.clone(), 0)?.sample(length)
}
