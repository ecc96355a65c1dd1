use crate::bank::{build_bank, list_files};
use crate::config::{Method, RunConfig, SourceKind};
use crate::error::CliError;
use crate::output::{Csv, Staging};
use maca_core::calib::{read_tensor, read_tensor_file, LengthMode, Tensor, TensorData};
use maca_core::hessian::{AggregationMode, DampedHessian};
use maca_core::linalg::cholesky;
use maca_core::metrics::{
    ablation_cell, aggregate_ablation, calibrate, compare_layer, ratio_histogram, AblationPlan, AblationReport,
    BenchLayer, EvalProtocol, HistogramBins, RatioHistogram, ReconRecord,
};
use maca_core::quant::{quantize_gptq, quantize_rtn, CodeMatrix, QuantConfig, QuantOutcome};
use maca_core::rng::derive;
use maca_core::{Matrix, Result as CoreResult};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

const ABLATION_TAG: u64 = 0x4142_4c54;

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

fn schedule_dir(mode: LengthMode) -> &'static str {
    match mode {
        LengthMode::Fixed => "fixed",
        LengthMode::Multi => "multi",
    }
}

fn pool(cfg: &RunConfig) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))
}

/// Runs `f` on every layer in the worker pool, keeping layer order.
fn per_layer<T, F>(cfg: &RunConfig, layers: &[BenchLayer], f: F) -> Result<Vec<T>, CliError>
where
    T: Send,
    F: Fn(&BenchLayer) -> Result<T, CliError> + Sync,
{
    pool(cfg)?.install(|| layers.par_iter().map(&f).collect())
}

fn core_err(layer: &str) -> impl Fn(maca_core::Error) -> CliError + '_ {
    move |e| CliError::from_core(layer, e)
}

fn csv_float(v: f64) -> String {
    format!("{v}")
}

#[derive(Debug, Serialize)]
struct HessianLayerSummary {
    layer_id: String,
    dim: usize,
    samples: u64,
    tokens: u64,
    modes: Vec<AggregationMode>,
    /// `max_c |tw_c - sn_c| / tw_c` over channels, when both modes ran.
    #[serde(skip_serializing_if = "Option::is_none")]
    max_rel_diag_diff: Option<f64>,
}

#[derive(Debug, Serialize)]
struct HessianSummary {
    schedule_mode: LengthMode,
    lengths: Vec<usize>,
    token_budget: usize,
    layers: Vec<HessianLayerSummary>,
}

pub fn max_rel_diag_diff(token_weighted: &[f64], sample_normalized: &[f64]) -> f64 {
    token_weighted
        .iter()
        .zip(sample_normalized)
        .map(|(&t, &s)| {
            if t > 0.0 {
                (t - s).abs() / t
            } else if s > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

pub fn cmd_hessian(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let layers = build_bank(cfg)?;
    let schedule = cfg.schedule.active(cfg.seed);
    let lengths = match cfg.source.kind {
        SourceKind::Dump => Vec::new(),
        _ => schedule.draw().map_err(CliError::from)?.lengths,
    };
    let modes = cfg.hessian.modes.modes();
    let percdamp = cfg.quant.percdamp;
    let staging = Staging::new(&cfg.out, Path::new("hessian").join(schedule_dir(schedule.mode)))?;

    let results = per_layer(cfg, &layers, |layer| {
        let err = core_err(&layer.id);
        let samples = layer.source.calibration(&lengths, cfg.seed).map_err(&err)?;
        let mut accs = Vec::new();
        for &mode in &modes {
            let acc = calibrate(mode, layer.source.dim(), &samples).map_err(&err)?;
            let damped = acc.finalize(percdamp).map_err(&err)?;
            cholesky(damped.matrix()).map_err(&err)?;
            accs.push(acc);
        }
        Ok(accs)
    })?;

    let mut summaries = Vec::new();
    for (layer, accs) in layers.iter().zip(&results) {
        let mut diags = Vec::new();
        for acc in accs {
            let mode = acc.mode();
            staging.write(
                &format!("{}.{mode}.tensor", layer.id),
                Tensor::from_matrix(acc.hessian()).encode(),
            )?;
            let diag = acc.diagonal().map_err(CliError::from)?;
            let mut csv = Csv::with_header(&["channel", "value"]);
            for (c, v) in diag.iter().enumerate() {
                csv.row([c.to_string(), csv_float(*v)]);
            }
            staging.write(&format!("{}.{mode}.diag.csv", layer.id), csv.into_string())?;
            diags.push((mode, diag));
        }
        let mut max_diff = None;
        if diags.len() > 1 {
            let mut csv = Csv::with_header(&["channel", "value", "arm"]);
            for (mode, diag) in &diags {
                for (c, v) in diag.iter().enumerate() {
                    csv.row([c.to_string(), csv_float(*v), mode.to_string()]);
                }
            }
            staging.write(&format!("{}.diag.csv", layer.id), csv.into_string())?;
            let find = |m: AggregationMode| diags.iter().find(|(x, _)| *x == m).map(|(_, d)| d);
            if let (Some(t), Some(s)) = (
                find(AggregationMode::TokenWeighted),
                find(AggregationMode::SampleNormalized),
            ) {
                max_diff = Some(max_rel_diag_diff(t, s));
            }
        }
        summaries.push(HessianLayerSummary {
            layer_id: layer.id.clone(),
            dim: layer.source.dim(),
            samples: accs[0].samples_seen(),
            tokens: accs[0].tokens_seen(),
            modes: modes.clone(),
            max_rel_diag_diff: max_diff,
        });
    }
    staging.write_json(
        "summary.json",
        &HessianSummary {
            schedule_mode: schedule.mode,
            lengths,
            token_budget: schedule.token_budget,
            layers: summaries,
        },
    )?;
    staging.write(RESOLVED_CONFIG, cfg.to_toml())?;
    staging.publish()
}

/// JSON sidecar stored next to each quantized layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSidecar {
    pub layer_id: String,
    pub method: Method,
    pub identity_hessian: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hessian_file: Option<String>,
    pub config: QuantConfig,
    pub rows: usize,
    pub cols: usize,
    pub groups: usize,
    pub weight_error: f64,
}

#[derive(Debug, Serialize)]
struct QuantLayerSummary {
    layer_id: String,
    weight_error: f64,
}

#[derive(Debug, Serialize)]
struct QuantSummary {
    name: String,
    method: Method,
    identity_hessian: bool,
    config: QuantConfig,
    layers: Vec<QuantLayerSummary>,
}

pub fn quant_set_name(cfg: &RunConfig) -> String {
    if let Some(n) = &cfg.quant.name {
        return n.clone();
    }
    match (cfg.quant.method, cfg.quant.identity_hessian) {
        (Method::Rtn, _) => "rtn".into(),
        (Method::Gptq, true) => "gptq-identity".into(),
        (Method::Gptq, false) => format!("gptq-{}-{}", schedule_dir(cfg.schedule.mode), cfg.quant.hessian_mode),
    }
}

pub fn cmd_quantize(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let layers = build_bank(cfg)?;
    let qcfg = cfg.quant.quant_config();
    let name = quant_set_name(cfg);
    if name.is_empty() || name.contains(['/', '\\']) || name.starts_with('.') {
        return Err(CliError::Config(format!("invalid quant set name {name:?}")));
    }
    let hessian_dir = cfg
        .quant
        .hessian_dir
        .clone()
        .unwrap_or_else(|| cfg.out.join("hessian").join(schedule_dir(cfg.schedule.mode)));
    let needs_hessian = cfg.quant.method == Method::Gptq && !cfg.quant.identity_hessian;
    if needs_hessian && !hessian_dir.is_dir() {
        return Err(CliError::Data(format!(
            "hessian directory {} not found",
            hessian_dir.display()
        )));
    }
    let staging = Staging::new(&cfg.out, Path::new("quant").join(&name))?;

    let outcomes = per_layer(cfg, &layers, |layer| {
        let err = core_err(&layer.id);
        let w = &layer.weights;
        let mut hessian_file = None;
        let outcome = match (cfg.quant.method, cfg.quant.identity_hessian) {
            (Method::Rtn, _) => quantize_rtn(w, &qcfg).map_err(&err)?,
            (Method::Gptq, true) => {
                let h = DampedHessian::identity(w.cols(), qcfg.percdamp).map_err(&err)?;
                quantize_gptq(w, &h, &qcfg).map_err(&err)?
            }
            (Method::Gptq, false) => {
                let path = hessian_dir.join(format!("{}.{}.tensor", layer.id, cfg.quant.hessian_mode));
                if !path.is_file() {
                    return Err(CliError::Data(format!("missing hessian file {}", path.display())));
                }
                let h = read_tensor(&path).map_err(|e| CliError::io(&path, e))?;
                if h.shape() != (w.cols(), w.cols()) {
                    return Err(CliError::Data(format!(
                        "{}: hessian shape {:?} does not match {} input channels",
                        path.display(),
                        h.shape(),
                        w.cols()
                    )));
                }
                hessian_file = Some(path.display().to_string());
                let damped = DampedHessian::damp(h, qcfg.percdamp).map_err(&err)?;
                quantize_gptq(w, &damped, &qcfg).map_err(&err)?
            }
        };
        let weight_error = outcome.weight_error(w).map_err(&err)?;
        Ok((outcome, hessian_file, weight_error))
    })?;

    let mut summary = Vec::new();
    for (layer, (outcome, hessian_file, weight_error)) in layers.iter().zip(outcomes) {
        let codes = outcome.codes();
        staging.write(
            &format!("{}.q.tensor", layer.id),
            Tensor::from_i32(codes.rows(), codes.cols(), codes.as_slice().to_vec())
                .map_err(CliError::from)?
                .encode(),
        )?;
        staging.write(
            &format!("{}.scales.tensor", layer.id),
            Tensor::from_matrix(outcome.scales()).encode(),
        )?;
        staging.write_json(
            &format!("{}.json", layer.id),
            &OutcomeSidecar {
                layer_id: layer.id.clone(),
                method: cfg.quant.method,
                identity_hessian: cfg.quant.identity_hessian,
                hessian_file,
                config: qcfg.clone(),
                rows: codes.rows(),
                cols: codes.cols(),
                groups: outcome.scales().cols(),
                weight_error,
            },
        )?;
        summary.push(QuantLayerSummary {
            layer_id: layer.id.clone(),
            weight_error,
        });
    }
    staging.write_json(
        "summary.json",
        &QuantSummary {
            name,
            method: cfg.quant.method,
            identity_hessian: cfg.quant.identity_hessian,
            config: qcfg,
            layers: summary,
        },
    )?;
    staging.write(RESOLVED_CONFIG, cfg.to_toml())?;
    staging.publish()
}

/// Layer ids present in a quantized output set.
pub fn outcome_layer_ids(dir: &Path) -> Result<BTreeSet<String>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Data(format!("outcome directory {} not found", dir.display())));
    }
    Ok(list_files(dir, "tensor")?
        .iter()
        .filter_map(|p| p.file_name()?.to_str()?.strip_suffix(".q.tensor").map(str::to_string))
        .collect())
}

pub fn load_outcome(dir: &Path, layer_id: &str) -> Result<QuantOutcome, CliError> {
    let side_path = dir.join(format!("{layer_id}.json"));
    let text = std::fs::read_to_string(&side_path).map_err(|e| CliError::io(&side_path, e))?;
    let sidecar: OutcomeSidecar = serde_json::from_str(&text).map_err(|e| CliError::io(&side_path, e))?;
    let q_path = dir.join(format!("{layer_id}.q.tensor"));
    let q = read_tensor_file(&q_path).map_err(|e| CliError::io(&q_path, e))?;
    let (rows, cols) = q.shape2().map_err(|e| CliError::io(&q_path, e))?;
    let TensorData::I32(codes) = q.into_data() else {
        return Err(CliError::Data(format!("{}: codes must be i32", q_path.display())));
    };
    let s_path = dir.join(format!("{layer_id}.scales.tensor"));
    let scales = read_tensor(&s_path).map_err(|e| CliError::io(&s_path, e))?;
    let codes = CodeMatrix::new(rows, cols, codes).map_err(|e| CliError::io(&q_path, e))?;
    QuantOutcome::from_parts(codes, scales, sidecar.config).map_err(|e| CliError::io(dir, e))
}

#[derive(Debug, Serialize)]
struct EvalSummary {
    base: String,
    maca: String,
    protocol: EvalProtocol,
    layers: usize,
    /// Histogram over per-layer aggregate ratios.
    per_layer: RatioHistogram,
    /// Histogram over every (layer, eval length) ratio.
    per_length: RatioHistogram,
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let (Some(base), Some(maca)) = (&cfg.eval.base, &cfg.eval.maca) else {
        return Err(CliError::Config(
            "eval needs both --base and --maca outcome directories".into(),
        ));
    };
    let base_ids = outcome_layer_ids(base)?;
    let maca_ids = outcome_layer_ids(maca)?;
    if base_ids != maca_ids {
        let only: Vec<_> = base_ids.symmetric_difference(&maca_ids).cloned().collect();
        return Err(CliError::Data(
            maca_core::Error::MismatchedLayerSets(format!("not in both sets: {only:?}")).to_string(),
        ));
    }
    if base_ids.is_empty() {
        return Err(CliError::Data(
            maca_core::Error::MismatchedLayerSets("no layers in common".into()).to_string(),
        ));
    }
    let bank = build_bank(cfg)?;
    let layers: Vec<BenchLayer> = base_ids
        .iter()
        .map(|id| {
            bank.iter()
                .find(|l| &l.id == id)
                .cloned()
                .ok_or_else(|| CliError::Data(format!("layer {id} is not in the configured layer bank")))
        })
        .collect::<Result<_, _>>()?;
    let protocol = cfg.eval.protocol(&cfg.schedule);
    protocol.validate().map_err(CliError::from)?;

    let records = per_layer(cfg, &layers, |layer| {
        let err = core_err(&layer.id);
        let eval = protocol.held_out(layer.source.as_ref()).map_err(&err)?;
        let qb = load_outcome(base, &layer.id)?;
        let qm = load_outcome(maca, &layer.id)?;
        compare_layer(&layer.id, &layer.weights, qb.w_hat(), qm.w_hat(), &eval).map_err(&err)
    })?;
    let records: Vec<ReconRecord> = records.into_iter().flatten().collect();

    let (aggregate, by_length): (Vec<_>, Vec<_>) = records.iter().cloned().partition(|r| r.eval_length.is_none());
    let summary = EvalSummary {
        base: base.display().to_string(),
        maca: maca.display().to_string(),
        protocol,
        layers: aggregate.len(),
        per_layer: ratio_histogram(&aggregate, HistogramBins::default())?,
        per_length: ratio_histogram(&by_length, HistogramBins::default())?,
    };
    let staging = Staging::new(&cfg.out, "eval")?;
    staging.write("records.csv", records_csv(&records))?;
    staging.write_json("histogram.json", &summary)?;
    staging.write(RESOLVED_CONFIG, cfg.to_toml())?;
    staging.publish()
}

pub fn records_csv(records: &[ReconRecord]) -> String {
    let mut csv = Csv::with_header(&["layer_id", "eval_length", "error_base", "error_maca", "ratio"]);
    for r in records {
        csv.row([
            r.layer_id.clone(),
            r.eval_length.map_or_else(|| "all".to_string(), |l| l.to_string()),
            csv_float(r.error_base),
            csv_float(r.error_maca),
            csv_float(r.ratio),
        ]);
    }
    csv.into_string()
}

#[derive(Debug, Serialize)]
struct AblationSummary {
    seeds: Vec<u64>,
    eval: EvalProtocol,
    token_budget: usize,
    reports: Vec<AblationReport>,
    /// One entry per bit width with all three arms present.
    ordering: Vec<OrderingFlag>,
}

#[derive(Debug, Serialize)]
struct OrderingFlag {
    bits: u32,
    monotone: bool,
    significant: bool,
}

pub fn ablation_seeds(cfg: &RunConfig) -> Vec<u64> {
    (0..cfg.ablation.seeds as u64)
        .map(|k| derive(cfg.seed, &[ABLATION_TAG, k]))
        .collect()
}

pub fn cmd_ablate(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    if cfg.ablation.arms.is_empty() || cfg.ablation.seeds == 0 {
        return Err(CliError::Config("ablation needs at least one arm and one seed".into()));
    }
    let layers = build_bank(cfg)?;
    let seeds = ablation_seeds(cfg);
    let bits = if cfg.ablation.bits.is_empty() {
        vec![cfg.quant.bits]
    } else {
        cfg.ablation.bits.clone()
    };
    let eval = cfg.eval.protocol(&cfg.schedule);
    let pool = pool(cfg)?;

    let evals = pool.install(|| {
        layers
            .par_iter()
            .map(|l| eval.held_out(l.source.as_ref()).map_err(core_err(&l.id)))
            .collect::<Result<Vec<_>, _>>()
    })?;

    let mut reports = Vec::new();
    for &b in &bits {
        let plan = AblationPlan {
            arms: cfg.ablation.arms.clone(),
            fixed: cfg.schedule.schedule(LengthMode::Fixed, 0),
            multi: cfg.schedule.schedule(LengthMode::Multi, 0),
            eval: eval.clone(),
            quant: QuantConfig {
                bits: b,
                ..cfg.quant.quant_config()
            },
            seeds: seeds.clone(),
        };
        plan.validate().map_err(CliError::from)?;
        let jobs: Vec<(usize, usize)> = (0..seeds.len())
            .flat_map(|s| (0..layers.len()).map(move |l| (s, l)))
            .collect();
        let flat = pool.install(|| {
            jobs.par_iter()
                .map(|&(s, l)| ablation_cell(&layers[l], &plan, seeds[s], &evals[l]).map_err(core_err(&layers[l].id)))
                .collect::<Result<Vec<_>, _>>()
        })?;
        let cells: Vec<Vec<_>> = flat.chunks(layers.len()).map(<[_]>::to_vec).collect();
        reports.push(aggregate_ablation(&plan, &cells).map_err(CliError::from)?);
    }

    let mut rows = Csv::with_header(&["arm", "bits", "mean_error", "seed_count", "tokens_per_layer"]);
    let mut per_seed = Csv::with_header(&["arm", "bits", "seed_index", "mean_error"]);
    for report in &reports {
        for r in &report.rows {
            rows.row([
                r.arm.to_string(),
                r.bits.to_string(),
                csv_float(r.mean_error),
                r.seed_count.to_string(),
                r.tokens_per_layer.to_string(),
            ]);
            for (k, e) in r.per_seed.iter().enumerate() {
                per_seed.row([r.arm.to_string(), r.bits.to_string(), k.to_string(), csv_float(*e)]);
            }
        }
    }
    let ordering = reports
        .iter()
        .filter_map(|r| r.ordering.as_ref())
        .map(|o| OrderingFlag {
            bits: o.bits,
            monotone: o.monotone,
            significant: o.significant(0.05),
        })
        .collect();
    let staging = Staging::new(&cfg.out, "ablate")?;
    staging.write("ablation.csv", rows.into_string())?;
    staging.write("per_seed.csv", per_seed.into_string())?;
    staging.write_json(
        "summary.json",
        &AblationSummary {
            seeds,
            eval,
            token_budget: cfg.schedule.token_budget,
            reports,
            ordering,
        },
    )?;
    staging.write(RESOLVED_CONFIG, cfg.to_toml())?;
    staging.publish()
}

fn read_json(path: &Path) -> Result<Option<serde_json::Value>, CliError> {
    if !path.is_file() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map(Some).map_err(|e| CliError::io(path, e))
}

/// Plain-text digest of whatever results exist under the output root.
pub fn cmd_report(cfg: &RunConfig) -> Result<(PathBuf, String), CliError> {
    let mut text = String::new();
    for mode in ["fixed", "multi"] {
        let Some(h) = read_json(&cfg.out.join("hessian").join(mode).join("summary.json"))? else {
            continue;
        };
        text.push_str(&format!("hessian ({mode} lengths)\n"));
        for layer in h["layers"].as_array().into_iter().flatten() {
            text.push_str(&format!(
                "  {}: {} samples, {} tokens",
                layer["layer_id"].as_str().unwrap_or("?"),
                layer["samples"],
                layer["tokens"]
            ));
            if let Some(d) = layer["max_rel_diag_diff"].as_f64() {
                text.push_str(&format!(", max relative diagonal difference {d:.3}"));
            }
            text.push('\n');
        }
    }
    if let Some(e) = read_json(&cfg.out.join("eval").join("histogram.json"))? {
        let h = &e["per_layer"];
        text.push_str(&format!(
            "reconstruction error ratio (base / maca) over {} layers: fraction > 1 = {}, geometric mean = {}\n",
            h["total"], h["fraction_above_one"], h["geometric_mean"]
        ));
    }
    if let Some(a) = read_json(&cfg.out.join("ablate").join("summary.json"))? {
        text.push_str("ablation (mean held-out reconstruction error)\n");
        for report in a["reports"].as_array().into_iter().flatten() {
            for row in report["rows"].as_array().into_iter().flatten() {
                text.push_str(&format!(
                    "  {}-bit {:<24} {} over {} seeds\n",
                    row["bits"],
                    row["arm"].as_str().unwrap_or("?"),
                    row["mean_error"],
                    row["seed_count"]
                ));
            }
        }
        for o in a["ordering"].as_array().into_iter().flatten() {
            text.push_str(&format!(
                "  {}-bit ordering monotone: {}, significant: {}\n",
                o["bits"], o["monotone"], o["significant"]
            ));
        }
    }
    if text.is_empty() {
        return Err(CliError::Data(format!("no results under {}", cfg.out.display())));
    }
    let staging = Staging::new(&cfg.out, "report")?;
    staging.write("report.txt", &text)?;
    Ok((staging.publish()?, text))
}

/// Convenience for tests and tools: all Hessians of one output set.
pub fn read_hessians(dir: &Path, mode: AggregationMode) -> CoreResult<Vec<(String, Matrix)>> {
    let suffix = format!(".{mode}.tensor");
    let mut out = Vec::new();
    let mut entries: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        if let Some(id) = p
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_suffix(&suffix))
        {
            out.push((id.to_string(), read_tensor(&p)?));
        }
    }
    Ok(out)
}
