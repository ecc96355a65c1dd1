//! Symmetric uniform weight quantization: round-to-nearest and the GPTQ
//! column-wise solver.
//!
//! Codes live on the restricted symmetric grid `±(2^(b-1) - 1)`; rounding
//! ties go away from zero. Scales are chosen per (row, group) by an
//! exhaustive shrink search minimizing `‖w - s·q‖²`.

use crate::error::{Error, Result};
use crate::hessian::DampedHessian;
use crate::linalg::{cholesky, invert_spd, Matrix};
use serde::{Deserialize, Serialize};

/// Where quantization scales are fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleScope {
    /// One scale per (row, group).
    #[default]
    PerGroup,
    /// A single scale for the whole matrix, fitted once up front.
    PerTensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantConfig {
    pub bits: u32,
    /// Input channels sharing a scale; 0 means the whole row.
    pub group_size: usize,
    pub scale_search_steps: usize,
    pub scale_search_floor: f64,
    pub percdamp: f64,
    #[serde(default)]
    pub scale_scope: ScaleScope,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            bits: 4,
            group_size: 0,
            scale_search_steps: 100,
            scale_search_floor: 0.2,
            percdamp: crate::hessian::DEFAULT_PERCDAMP,
            scale_scope: ScaleScope::PerGroup,
        }
    }
}

impl QuantConfig {
    pub fn with_bits(bits: u32) -> Self {
        Self {
            bits,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=24).contains(&self.bits) {
            return Err(Error::InvalidConfig(format!(
                "bits must be in 2..=24, got {}",
                self.bits
            )));
        }
        if self.scale_search_steps == 0 {
            return Err(Error::InvalidConfig("scale_search_steps must be >= 1".into()));
        }
        if !(self.scale_search_floor > 0.0 && self.scale_search_floor < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "scale_search_floor must be in (0, 1), got {}",
                self.scale_search_floor
            )));
        }
        if !(self.percdamp > 0.0 && self.percdamp.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "percdamp must be > 0, got {}",
                self.percdamp
            )));
        }
        Ok(())
    }

    pub fn qmax(&self) -> i32 {
        qmax(self.bits)
    }

    /// Shrink factors evaluated by the scale search, smallest first.
    pub fn shrink_grid(&self) -> Vec<f64> {
        shrink_grid(self.scale_search_steps, self.scale_search_floor)
    }

    /// Column ranges of the groups for a row of `cols` entries; a trailing
    /// remainder forms a smaller last group.
    pub fn groups(&self, cols: usize) -> Vec<std::ops::Range<usize>> {
        let g = if self.group_size == 0 {
            cols.max(1)
        } else {
            self.group_size
        };
        (0..cols).step_by(g).map(|s| s..(s + g).min(cols)).collect()
    }
}

pub fn qmax(bits: u32) -> i32 {
    (1i32 << (bits - 1)) - 1
}

pub fn shrink_grid(steps: usize, floor: f64) -> Vec<f64> {
    (0..=steps)
        .map(|k| floor + (1.0 - floor) * k as f64 / steps as f64)
        .collect()
}

#[inline]
pub fn quantize_value(w: f64, scale: f64, qmax: i32) -> i32 {
    let q = (w / scale).round();
    q.clamp(-f64::from(qmax), f64::from(qmax)) as i32
}

fn slice_error(w: &[f64], scale: f64, qmax: i32) -> f64 {
    w.iter()
        .map(|&v| {
            let r = v - scale * f64::from(quantize_value(v, scale, qmax));
            r * r
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleFit {
    pub scale: f64,
    pub error: f64,
}

/// Best scale among `shrink × max|w| / qmax` for the given shrink factors;
/// ties go to the larger scale. An all-zero slice yields the sentinel
/// scale 1.0 with zero error.
pub fn fit_scale_on_grid(w: &[f64], bits: u32, shrinks: &[f64]) -> Result<ScaleFit> {
    if w.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(i) = w.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let qm = qmax(bits);
    let max_abs = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_abs == 0.0 {
        return Ok(ScaleFit { scale: 1.0, error: 0.0 });
    }
    let base = max_abs / f64::from(qm);
    let mut candidates: Vec<f64> = shrinks.iter().map(|s| s * base).collect();
    candidates.sort_by(|a, b| b.total_cmp(a));
    let mut best = ScaleFit {
        scale: candidates[0],
        error: slice_error(w, candidates[0], qm),
    };
    for &s in &candidates[1..] {
        let e = slice_error(w, s, qm);
        if e < best.error {
            best = ScaleFit { scale: s, error: e };
        }
    }
    Ok(best)
}

pub fn fit_scale(w: &[f64], bits: u32, steps: usize, floor: f64) -> Result<ScaleFit> {
    fit_scale_on_grid(w, bits, &shrink_grid(steps, floor))
}

/// Row-major integer matrix of codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeMatrix {
    rows: usize,
    cols: usize,
    data: Vec<i32>,
}

impl CodeMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<i32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} codes for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> i32 {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[i32] {
        &self.data
    }
}

/// Quantized layer: codes, per-(row, group) scales, and the dequantized
/// weights `scales[i, group(j)] · q[i, j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantOutcome {
    codes: CodeMatrix,
    scales: Matrix,
    w_hat: Matrix,
    config: QuantConfig,
}

impl QuantOutcome {
    /// Reassembles an outcome from stored codes and scales.
    pub fn from_parts(codes: CodeMatrix, scales: Matrix, config: QuantConfig) -> Result<Self> {
        config.validate()?;
        let groups = config.groups(codes.cols());
        if scales.shape() != (codes.rows(), groups.len()) {
            return Err(Error::DimensionMismatch(format!(
                "scales {:?} for {} rows and {} groups",
                scales.shape(),
                codes.rows(),
                groups.len()
            )));
        }
        let qm = config.qmax();
        if let Some(c) = codes.as_slice().iter().find(|c| c.abs() > qm) {
            return Err(Error::InvalidConfig(format!("code {c} outside ±{qm}")));
        }
        let mut w_hat = Matrix::zeros(codes.rows(), codes.cols());
        for i in 0..codes.rows() {
            for (g, range) in groups.iter().enumerate() {
                for j in range.clone() {
                    w_hat[(i, j)] = scales[(i, g)] * f64::from(codes.get(i, j));
                }
            }
        }
        Ok(Self {
            codes,
            scales,
            w_hat,
            config,
        })
    }

    pub fn codes(&self) -> &CodeMatrix {
        &self.codes
    }

    pub fn scales(&self) -> &Matrix {
        &self.scales
    }

    pub fn w_hat(&self) -> &Matrix {
        &self.w_hat
    }

    pub fn config(&self) -> &QuantConfig {
        &self.config
    }

    /// `‖W - Ŵ‖²_F`.
    pub fn weight_error(&self, w: &Matrix) -> Result<f64> {
        Ok(w.sub(&self.w_hat)?.frobenius_sq())
    }
}

struct Builder {
    codes: Vec<i32>,
    scales: Matrix,
    cols: usize,
}

impl Builder {
    fn new(rows: usize, cols: usize, groups: usize) -> Self {
        Self {
            codes: vec![0; rows * cols],
            scales: Matrix::zeros(rows, groups),
            cols,
        }
    }

    fn finish(self, rows: usize, config: &QuantConfig) -> Result<QuantOutcome> {
        QuantOutcome::from_parts(
            CodeMatrix::new(rows, self.cols, self.codes)?,
            self.scales,
            config.clone(),
        )
    }
}

fn tensor_scale(w: &Matrix, cfg: &QuantConfig) -> Result<f64> {
    Ok(fit_scale_on_grid(w.as_slice(), cfg.bits, &cfg.shrink_grid())?.scale)
}

fn check_weights(w: &Matrix) -> Result<()> {
    if w.rows() == 0 || w.cols() == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

/// Round-to-nearest: every (row, group) slice is fitted and rounded
/// independently.
pub fn quantize_rtn(w: &Matrix, cfg: &QuantConfig) -> Result<QuantOutcome> {
    cfg.validate()?;
    check_weights(w)?;
    let groups = cfg.groups(w.cols());
    let qm = cfg.qmax();
    let shrinks = cfg.shrink_grid();
    let global = match cfg.scale_scope {
        ScaleScope::PerTensor => Some(tensor_scale(w, cfg)?),
        ScaleScope::PerGroup => None,
    };
    let mut out = Builder::new(w.rows(), w.cols(), groups.len());
    for i in 0..w.rows() {
        let row = w.row(i);
        for (g, range) in groups.iter().enumerate() {
            let slice = &row[range.clone()];
            let scale = match global {
                Some(s) => s,
                None => fit_scale_on_grid(slice, cfg.bits, &shrinks)?.scale,
            };
            out.scales[(i, g)] = scale;
            for (j, &v) in range.clone().zip(slice) {
                out.codes[i * w.cols() + j] = quantize_value(v, scale, qm);
            }
        }
    }
    out.finish(w.rows(), cfg)
}

/// GPTQ column-wise solve, natural column order.
pub fn quantize_gptq(w: &Matrix, hessian: &DampedHessian, cfg: &QuantConfig) -> Result<QuantOutcome> {
    quantize_gptq_traced(w, hessian, cfg).map(|(o, _)| o)
}

/// Like [`quantize_gptq`], also returning the compensated weights each
/// column held at the moment it was quantized.
pub fn quantize_gptq_traced(w: &Matrix, hessian: &DampedHessian, cfg: &QuantConfig) -> Result<(QuantOutcome, Matrix)> {
    cfg.validate()?;
    check_weights(w)?;
    let (rows, cols) = w.shape();
    if hessian.dim() != cols {
        return Err(Error::DimensionMismatch(format!(
            "hessian of dim {} for a layer with {cols} input channels",
            hessian.dim()
        )));
    }
    let h_inv = invert_spd(hessian.matrix())?;
    let upper = cholesky(&h_inv)?.upper();

    let groups = cfg.groups(cols);
    let qm = cfg.qmax();
    let shrinks = cfg.shrink_grid();
    let global = match cfg.scale_scope {
        ScaleScope::PerTensor => Some(tensor_scale(w, cfg)?),
        ScaleScope::PerGroup => None,
    };
    let mut work = w.clone();
    let mut out = Builder::new(rows, cols, groups.len());
    let mut group_of = vec![0usize; cols];
    for (g, r) in groups.iter().enumerate() {
        group_of[r.clone()].iter_mut().for_each(|x| *x = g);
    }

    for j in 0..cols {
        let g = group_of[j];
        if groups[g].start == j {
            for i in 0..rows {
                out.scales[(i, g)] = match global {
                    Some(s) => s,
                    None => fit_scale_on_grid(&work.row(i)[groups[g].clone()], cfg.bits, &shrinks)?.scale,
                };
            }
        }
        let d = upper[(j, j)];
        for i in 0..rows {
            let v = work[(i, j)];
            let scale = out.scales[(i, g)];
            let q = quantize_value(v, scale, qm);
            out.codes[i * cols + j] = q;
            let err = (v - scale * f64::from(q)) / d;
            let row = &mut work.as_mut_slice()[i * cols..(i + 1) * cols];
            for k in (j + 1)..cols {
                row[k] -= err * upper[(j, k)];
            }
        }
    }
    Ok((out.finish(rows, cfg)?, work))
}
