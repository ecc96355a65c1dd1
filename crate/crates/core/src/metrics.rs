//! Evaluation instruments: layer reconstruction error, error-ratio
//! histograms and the three-arm calibration ablation.

use crate::calib::{ActivationSource, LengthSchedule};
use crate::error::{Error, Result};
use crate::hessian::{AggregationMode, CalibrationSample, HessianAccumulator};
use crate::linalg::Matrix;
use crate::quant::{quantize_gptq, QuantConfig, QuantOutcome};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

/// `‖(W - Ŵ)·X‖²_F`.
pub fn recon_error(w: &Matrix, w_hat: &Matrix, x: &Matrix) -> Result<f64> {
    let delta = w.sub(w_hat)?;
    delta_recon_error(&delta, x)
}

/// `‖ΔW·X‖²_F`.
pub fn delta_recon_error(delta: &Matrix, x: &Matrix) -> Result<f64> {
    Ok(delta.matmul(x)?.frobenius_sq())
}

/// Base-over-MaCa error ratio with the conventions `0/0 = 1` and
/// `e/0 = ∞` for `e > 0`.
pub fn error_ratio(error_base: f64, error_maca: f64) -> f64 {
    if error_maca > 0.0 {
        error_base / error_maca
    } else if error_base > 0.0 {
        f64::INFINITY
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconRecord {
    pub layer_id: String,
    /// `None` for the per-layer aggregate over all eval lengths.
    pub eval_length: Option<usize>,
    pub error_base: f64,
    pub error_maca: f64,
    pub ratio: f64,
}

impl ReconRecord {
    pub fn new(layer_id: impl Into<String>, eval_length: Option<usize>, error_base: f64, error_maca: f64) -> Self {
        Self {
            layer_id: layer_id.into(),
            eval_length,
            error_base,
            error_maca,
            ratio: error_ratio(error_base, error_maca),
        }
    }

    pub fn is_infinite(&self) -> bool {
        self.ratio.is_infinite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBins {
    pub count: usize,
    pub low: f64,
    pub high: f64,
}

impl Default for HistogramBins {
    /// 30 logarithmic bins over `[1/8, 8]`.
    fn default() -> Self {
        Self {
            count: 30,
            low: 0.125,
            high: 8.0,
        }
    }
}

impl HistogramBins {
    pub fn edges(&self) -> Vec<f64> {
        let (a, b) = (self.low.ln(), self.high.ln());
        (0..=self.count)
            .map(|k| (a + (b - a) * k as f64 / self.count as f64).exp())
            .collect()
    }

    /// Bin of a ratio; values outside `[low, high)` land in the end bins,
    /// so the bins cover all of `(0, ∞]`.
    pub fn bin(&self, ratio: f64) -> usize {
        if ratio.is_nan() || ratio <= self.low {
            return 0;
        }
        if ratio >= self.high {
            return self.count - 1;
        }
        let t = (ratio.ln() - self.low.ln()) / (self.high.ln() - self.low.ln());
        ((t * self.count as f64) as usize).min(self.count - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioHistogram {
    pub bins: HistogramBins,
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub total: usize,
    pub fraction_above_one: f64,
    pub geometric_mean: f64,
    pub infinite_ratios: usize,
}

pub fn ratio_histogram(records: &[ReconRecord], bins: HistogramBins) -> Result<RatioHistogram> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    if bins.count == 0 || !(bins.low > 0.0 && bins.high > bins.low) {
        return Err(Error::InvalidConfig(format!("invalid histogram bins {bins:?}")));
    }
    let mut counts = vec![0usize; bins.count];
    let mut above = 0usize;
    let mut log_sum = 0.0;
    let mut infinite = 0usize;
    for r in records {
        counts[bins.bin(r.ratio)] += 1;
        if r.ratio > 1.0 {
            above += 1;
        }
        if r.ratio.is_infinite() {
            infinite += 1;
        }
        log_sum += r.ratio.ln();
    }
    let n = records.len();
    Ok(RatioHistogram {
        bins,
        edges: bins.edges(),
        counts,
        total: n,
        fraction_above_one: above as f64 / n as f64,
        geometric_mean: (log_sum / n as f64).exp(),
        infinite_ratios: infinite,
    })
}

/// Held-out evaluation protocol: equal token counts at every eval length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalProtocol {
    pub lengths: Vec<usize>,
    pub tokens_per_length: usize,
}

impl EvalProtocol {
    /// `{min, median, max}` of a length set; the lower middle element is
    /// the median of an even-sized set.
    pub fn from_length_set(length_set: &[usize], tokens_per_length: usize) -> Self {
        let mut sorted = length_set.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut lengths = Vec::new();
        if let (Some(&lo), Some(&hi)) = (sorted.first(), sorted.last()) {
            lengths = vec![lo, sorted[(sorted.len() - 1) / 2], hi];
            lengths.dedup();
        }
        Self {
            lengths,
            tokens_per_length,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengths.is_empty() || self.lengths.contains(&0) {
            return Err(Error::InvalidConfig("eval lengths must be non-empty and >= 1".into()));
        }
        if self.tokens_per_length == 0 {
            return Err(Error::InvalidConfig("tokens_per_length must be >= 1".into()));
        }
        Ok(())
    }

    /// Sample lengths to request from a source: for each eval length,
    /// enough samples to reach `tokens_per_length`.
    pub fn sample_lengths(&self) -> Vec<usize> {
        self.lengths
            .iter()
            .flat_map(|&l| std::iter::repeat_n(l, self.tokens_per_length.div_ceil(l)))
            .collect()
    }

    /// Held-out activations, one concatenated matrix per eval length.
    pub fn held_out(&self, source: &dyn ActivationSource) -> Result<Vec<EvalSet>> {
        self.validate()?;
        let samples = source.held_out(&self.sample_lengths())?;
        group_eval_samples(samples)
    }
}

/// All held-out tokens at one length, concatenated column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    pub length: usize,
    pub activations: Matrix,
}

/// Groups samples by length (in first-seen order) and concatenates each
/// group into one matrix.
pub fn group_eval_samples(samples: Vec<CalibrationSample>) -> Result<Vec<EvalSet>> {
    let mut sets: Vec<EvalSet> = Vec::new();
    for s in samples {
        let len = s.len();
        match sets.iter_mut().find(|e| e.length == len) {
            Some(set) => set.activations = set.activations.hcat(s.activations())?,
            None => sets.push(EvalSet {
                length: len,
                activations: s.into_activations(),
            }),
        }
    }
    Ok(sets)
}

/// Per-eval-length records for one layer plus the aggregate record, whose
/// errors are the unweighted means over eval lengths.
pub fn compare_layer(
    layer_id: &str,
    w: &Matrix,
    base: &Matrix,
    maca: &Matrix,
    eval: &[EvalSet],
) -> Result<Vec<ReconRecord>> {
    if eval.is_empty() {
        return Err(Error::EmptyInput);
    }
    let d_base = w.sub(base)?;
    let d_maca = w.sub(maca)?;
    let mut records = Vec::with_capacity(eval.len() + 1);
    let (mut sum_b, mut sum_m) = (0.0, 0.0);
    for set in eval {
        let eb = delta_recon_error(&d_base, &set.activations)?;
        let em = delta_recon_error(&d_maca, &set.activations)?;
        sum_b += eb;
        sum_m += em;
        records.push(ReconRecord::new(layer_id, Some(set.length), eb, em));
    }
    let n = eval.len() as f64;
    records.push(ReconRecord::new(layer_id, None, sum_b / n, sum_m / n));
    Ok(records)
}

/// Mean held-out reconstruction error over eval lengths.
pub fn mean_eval_error(w: &Matrix, w_hat: &Matrix, eval: &[EvalSet]) -> Result<f64> {
    if eval.is_empty() {
        return Err(Error::EmptyInput);
    }
    let delta = w.sub(w_hat)?;
    let mut total = 0.0;
    for set in eval {
        total += delta_recon_error(&delta, &set.activations)?;
    }
    Ok(total / eval.len() as f64)
}

/// Accumulates a Hessian over the given samples.
pub fn calibrate(mode: AggregationMode, dim: usize, samples: &[CalibrationSample]) -> Result<HessianAccumulator> {
    let mut acc = HessianAccumulator::new(mode, dim);
    acc.extend(samples)?;
    Ok(acc)
}

/// The three calibration arms, each adding one component to the last.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// Fixed-length samples, token-weighted aggregation.
    Baseline,
    /// Multi-length samples, token-weighted aggregation.
    MultiScale,
    /// Multi-length samples, sample-normalized aggregation.
    MultiScaleNormalized,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::Baseline, Arm::MultiScale, Arm::MultiScaleNormalized];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Baseline => "baseline",
            Arm::MultiScale => "multi_scale",
            Arm::MultiScaleNormalized => "multi_scale_normalized",
        }
    }

    pub fn aggregation(self) -> AggregationMode {
        match self {
            Arm::Baseline | Arm::MultiScale => AggregationMode::TokenWeighted,
            Arm::MultiScaleNormalized => AggregationMode::SampleNormalized,
        }
    }

    pub fn uses_multi_lengths(self) -> bool {
        self != Arm::Baseline
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Arm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown arm {s:?}")))
    }
}

/// One layer of the bench: fixed weights and an activation source.
#[derive(Clone)]
pub struct BenchLayer {
    pub id: String,
    pub weights: Matrix,
    pub source: Arc<dyn ActivationSource>,
}

impl fmt::Debug for BenchLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BenchLayer")
            .field("id", &self.id)
            .field("weights", &self.weights.shape())
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationPlan {
    pub arms: Vec<Arm>,
    pub fixed: LengthSchedule,
    pub multi: LengthSchedule,
    pub eval: EvalProtocol,
    pub quant: QuantConfig,
    pub seeds: Vec<u64>,
}

impl AblationPlan {
    pub fn validate(&self) -> Result<()> {
        if self.arms.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidConfig(
                "ablation needs at least one arm and one seed".into(),
            ));
        }
        if self.fixed.token_budget != self.multi.token_budget {
            return Err(Error::InvalidConfig(format!(
                "arms must share a token budget: fixed {} vs multi {}",
                self.fixed.token_budget, self.multi.token_budget
            )));
        }
        self.fixed.validate()?;
        self.multi.validate()?;
        self.eval.validate()?;
        self.quant.validate()
    }

    fn schedule_for(&self, arm: Arm, seed: u64) -> LengthSchedule {
        if arm.uses_multi_lengths() {
            &self.multi
        } else {
            &self.fixed
        }
        .with_seed(seed)
    }
}

/// Result of one (layer, seed) cell: mean held-out error and calibration
/// token count per arm, in `plan.arms` order.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub errors: Vec<f64>,
    pub tokens: Vec<u64>,
}

/// Runs every arm of the plan on one layer for one seed. Arms on the same
/// length schedule share the exact same calibration samples.
pub fn ablation_cell(layer: &BenchLayer, plan: &AblationPlan, seed: u64, eval: &[EvalSet]) -> Result<AblationCell> {
    let dim = layer.weights.cols();
    if layer.source.dim() != dim {
        return Err(Error::DimensionMismatch(format!(
            "layer {} has {dim} inputs, source produces {}",
            layer.id,
            layer.source.dim()
        )));
    }
    let mut cache: Vec<(bool, Vec<CalibrationSample>)> = Vec::new();
    let mut cell = AblationCell {
        errors: Vec::with_capacity(plan.arms.len()),
        tokens: Vec::with_capacity(plan.arms.len()),
    };
    for &arm in &plan.arms {
        let multi = arm.uses_multi_lengths();
        if !cache.iter().any(|(m, _)| *m == multi) {
            let lengths = plan.schedule_for(arm, seed).draw()?.lengths;
            cache.push((multi, layer.source.calibration(&lengths, seed)?));
        }
        let samples = &cache.iter().find(|(m, _)| *m == multi).unwrap().1;
        let acc = calibrate(arm.aggregation(), dim, samples)?;
        let damped = acc.finalize(plan.quant.percdamp)?;
        let outcome = quantize_gptq(&layer.weights, &damped, &plan.quant)?;
        cell.errors
            .push(mean_eval_error(&layer.weights, outcome.w_hat(), eval)?);
        cell.tokens.push(acc.tokens_seen());
    }
    if cell.tokens.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::InvalidConfig(format!(
            "arms consumed unequal token budgets {:?} on layer {}",
            cell.tokens, layer.id
        )));
    }
    Ok(cell)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub arm: Arm,
    pub bits: u32,
    pub mean_error: f64,
    pub seed_count: usize,
    pub tokens_per_layer: u64,
    /// Mean over layers of the held-out error, one entry per seed.
    pub per_seed: Vec<f64>,
}

/// Exact one-sided sign test: P(at least `wins` successes out of `trials`
/// fair coin flips).
pub fn sign_test_p_value(wins: usize, trials: usize) -> f64 {
    if trials == 0 {
        return 1.0;
    }
    // log C(n, k) accumulated iteratively.
    let n = trials as f64;
    let mut log_c = 0.0f64;
    let mut tail = 0.0f64;
    for k in 0..=trials {
        if k > 0 {
            log_c += (n - k as f64 + 1.0).ln() - (k as f64).ln();
        }
        if k >= wins {
            tail += (log_c - n * std::f64::consts::LN_2).exp();
        }
    }
    tail.min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub better: Arm,
    pub worse: Arm,
    /// Seeds where `better` has strictly lower error.
    pub wins: usize,
    /// Seeds with a strict difference (ties dropped).
    pub trials: usize,
    pub p_value: f64,
}

impl SignTest {
    pub fn paired(better: Arm, better_errors: &[f64], worse: Arm, worse_errors: &[f64]) -> Self {
        let mut wins = 0;
        let mut trials = 0;
        for (b, w) in better_errors.iter().zip(worse_errors) {
            if b != w {
                trials += 1;
                if b < w {
                    wins += 1;
                }
            }
        }
        Self {
            better,
            worse,
            wins,
            trials,
            p_value: sign_test_p_value(wins, trials),
        }
    }

    pub fn significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Ordering check across the full three-arm ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub bits: u32,
    /// `baseline ≥ multi_scale ≥ multi_scale_normalized` in mean error.
    pub monotone: bool,
    pub tests: Vec<SignTest>,
}

impl OrderingCheck {
    pub fn significant(&self, alpha: f64) -> bool {
        self.monotone && self.tests.iter().all(|t| t.significant(alpha))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub ordering: Option<OrderingCheck>,
}

/// Folds cells (indexed `[seed][layer]`) into per-arm rows.
pub fn aggregate_ablation(plan: &AblationPlan, cells: &[Vec<AblationCell>]) -> Result<AblationReport> {
    if cells.len() != plan.seeds.len() || cells.iter().any(Vec::is_empty) {
        return Err(Error::InvalidConfig("one non-empty cell row per seed required".into()));
    }
    let mut rows = Vec::with_capacity(plan.arms.len());
    for (a, &arm) in plan.arms.iter().enumerate() {
        let per_seed: Vec<f64> = cells
            .iter()
            .map(|layers| layers.iter().map(|c| c.errors[a]).sum::<f64>() / layers.len() as f64)
            .collect();
        let tokens = cells[0][0].tokens[a];
        if cells.iter().flatten().any(|c| c.tokens[a] != tokens) {
            return Err(Error::InvalidConfig(format!(
                "arm {arm} token counts differ across cells"
            )));
        }
        rows.push(AblationRow {
            arm,
            bits: plan.quant.bits,
            mean_error: per_seed.iter().sum::<f64>() / per_seed.len() as f64,
            seed_count: per_seed.len(),
            tokens_per_layer: tokens,
            per_seed,
        });
    }
    let ordering = if Arm::ALL.iter().all(|a| plan.arms.contains(a)) {
        let row = |arm: Arm| rows.iter().find(|r| r.arm == arm).unwrap();
        let (b, m, n) = (row(Arm::Baseline), row(Arm::MultiScale), row(Arm::MultiScaleNormalized));
        Some(OrderingCheck {
            bits: plan.quant.bits,
            monotone: b.mean_error >= m.mean_error && m.mean_error >= n.mean_error,
            tests: vec![
                SignTest::paired(m.arm, &m.per_seed, b.arm, &b.per_seed),
                SignTest::paired(n.arm, &n.per_seed, m.arm, &m.per_seed),
            ],
        })
    } else {
        None
    };
    Ok(AblationReport { rows, ordering })
}

/// Sequential driver over every (seed, layer) cell.
pub fn run_ablation(layers: &[BenchLayer], plan: &AblationPlan) -> Result<AblationReport> {
    plan.validate()?;
    if layers.is_empty() {
        return Err(Error::EmptyInput);
    }
    let evals = layers
        .iter()
        .map(|l| plan.eval.held_out(l.source.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let cells = plan
        .seeds
        .iter()
        .map(|&seed| {
            layers
                .iter()
                .zip(&evals)
                .map(|(l, e)| ablation_cell(l, plan, seed, e))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate_ablation(plan, &cells)
}

/// Quantizes one layer under two Hessians and compares them on held-out data.
pub fn compare_hessians(
    layer: &BenchLayer,
    base: &crate::hessian::DampedHessian,
    maca: &crate::hessian::DampedHessian,
    cfg: &QuantConfig,
    eval: &[EvalSet],
) -> Result<(QuantOutcome, QuantOutcome, Vec<ReconRecord>)> {
    let qb = quantize_gptq(&layer.weights, base, cfg)?;
    let qm = quantize_gptq(&layer.weights, maca, cfg)?;
    let records = compare_layer(&layer.id, &layer.weights, qb.w_hat(), qm.w_hat(), eval)?;
    Ok((qb, qm, records))
}
