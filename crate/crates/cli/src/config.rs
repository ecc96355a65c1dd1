//! Run configuration: a TOML document with CLI-flag and `MACA_*`
//! environment overrides.

use crate::error::CliError;
use maca_core::calib::{LengthMode, LengthSchedule, SyntheticSpec};
use maca_core::hessian::AggregationMode;
use maca_core::metrics::{Arm, EvalProtocol};
use maca_core::quant::{QuantConfig, ScaleScope};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads; 0 uses the available parallelism.
    pub workers: usize,
    pub layers: LayersConfig,
    pub source: SourceConfig,
    pub schedule: ScheduleConfig,
    pub hessian: HessianConfig,
    pub quant: QuantSection,
    pub eval: EvalConfig,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("maca-out"),
            workers: 0,
            layers: LayersConfig::default(),
            source: SourceConfig::default(),
            schedule: ScheduleConfig::default(),
            hessian: HessianConfig::default(),
            quant: QuantSection::default(),
            eval: EvalConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayersConfig {
    pub count: usize,
    pub rows: usize,
    /// Directory of `<layer_id>.tensor` weight files; overrides `count`/`rows`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights_dir: Option<PathBuf>,
}

impl Default for LayersConfig {
    fn default() -> Self {
        Self {
            count: 8,
            rows: 16,
            weights_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Synthetic,
    Corpus,
    Dump,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceConfig {
    pub kind: SourceKind,
    pub synthetic: SyntheticConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus_path: Option<PathBuf>,
    /// Feature dimension of the toy corpus feature map.
    pub corpus_dim: usize,
    pub nested: bool,
    /// `<dump_dir>/<layer_id>/{calib,eval}/*.tensor`
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dump_dir: Option<PathBuf>,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            kind: SourceKind::Synthetic,
            synthetic: SyntheticConfig::default(),
            corpus_path: None,
            corpus_dim: 32,
            nested: false,
            dump_dir: None,
        }
    }
}

/// Synthetic generator parameters; the seed is derived per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub dim: usize,
    pub short_channels: [usize; 2],
    pub long_channels: [usize; 2],
    pub base_scale: f64,
    pub emphasis_scale: f64,
    pub crossover_length: usize,
    pub correlation: f64,
    pub factors: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        let s = SyntheticSpec::default();
        Self {
            dim: s.dim,
            short_channels: [s.short_channels.start, s.short_channels.end],
            long_channels: [s.long_channels.start, s.long_channels.end],
            base_scale: s.base_scale,
            emphasis_scale: s.emphasis_scale,
            crossover_length: s.crossover_length,
            correlation: s.correlation,
            factors: s.factors,
        }
    }
}

impl SyntheticConfig {
    pub fn spec(&self, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            dim: self.dim,
            short_channels: self.short_channels[0]..self.short_channels[1],
            long_channels: self.long_channels[0]..self.long_channels[1],
            base_scale: self.base_scale,
            emphasis_scale: self.emphasis_scale,
            crossover_length: self.crossover_length,
            correlation: self.correlation,
            factors: self.factors,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub mode: LengthMode,
    pub length_set: Vec<usize>,
    /// Length used by fixed mode; defaults to the largest of `length_set`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_length: Option<usize>,
    pub token_budget: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            mode: LengthMode::Multi,
            length_set: vec![16, 32, 64, 128, 256],
            fixed_length: None,
            token_budget: 8192,
        }
    }
}

impl ScheduleConfig {
    pub fn fixed_length(&self) -> usize {
        self.fixed_length
            .unwrap_or_else(|| self.length_set.iter().copied().max().unwrap_or(0))
    }

    pub fn schedule(&self, mode: LengthMode, seed: u64) -> LengthSchedule {
        match mode {
            LengthMode::Fixed => LengthSchedule::fixed(self.fixed_length(), self.token_budget, seed),
            LengthMode::Multi => LengthSchedule::multi(self.length_set.clone(), self.token_budget, seed),
        }
    }

    pub fn active(&self, seed: u64) -> LengthSchedule {
        self.schedule(self.mode, seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianModes {
    TokenWeighted,
    SampleNormalized,
    Both,
}

impl HessianModes {
    pub fn modes(self) -> Vec<AggregationMode> {
        match self {
            HessianModes::TokenWeighted => vec![AggregationMode::TokenWeighted],
            HessianModes::SampleNormalized => vec![AggregationMode::SampleNormalized],
            HessianModes::Both => vec![AggregationMode::TokenWeighted, AggregationMode::SampleNormalized],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HessianConfig {
    pub modes: HessianModes,
}

impl Default for HessianConfig {
    fn default() -> Self {
        Self {
            modes: HessianModes::Both,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gptq,
    Rtn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantSection {
    pub bits: u32,
    pub group_size: usize,
    pub scale_search_steps: usize,
    pub scale_search_floor: f64,
    pub percdamp: f64,
    pub scale_scope: ScaleScope,
    pub method: Method,
    /// Quantize against the identity Hessian instead of a calibrated one.
    pub identity_hessian: bool,
    /// Which Hessian files the GPTQ solver reads.
    pub hessian_mode: AggregationMode,
    /// Defaults to `<out>/hessian/<schedule mode>`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hessian_dir: Option<PathBuf>,
    /// Output set name under `<out>/quant/`; derived when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl Default for QuantSection {
    fn default() -> Self {
        let q = QuantConfig::default();
        Self {
            bits: q.bits,
            group_size: q.group_size,
            scale_search_steps: q.scale_search_steps,
            scale_search_floor: q.scale_search_floor,
            percdamp: q.percdamp,
            scale_scope: q.scale_scope,
            method: Method::Gptq,
            identity_hessian: false,
            hessian_mode: AggregationMode::SampleNormalized,
            hessian_dir: None,
            name: None,
        }
    }
}

impl QuantSection {
    pub fn quant_config(&self) -> QuantConfig {
        QuantConfig {
            bits: self.bits,
            group_size: self.group_size,
            scale_search_steps: self.scale_search_steps,
            scale_search_floor: self.scale_search_floor,
            percdamp: self.percdamp,
            scale_scope: self.scale_scope,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Eval lengths; empty means {min, median, max} of the length set.
    pub lengths: Vec<usize>,
    pub tokens_per_length: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub maca: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            lengths: Vec::new(),
            tokens_per_length: 2048,
            base: None,
            maca: None,
        }
    }
}

impl EvalConfig {
    pub fn protocol(&self, schedule: &ScheduleConfig) -> EvalProtocol {
        if self.lengths.is_empty() {
            EvalProtocol::from_length_set(&schedule.length_set, self.tokens_per_length)
        } else {
            EvalProtocol {
                lengths: self.lengths.clone(),
                tokens_per_length: self.tokens_per_length,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub arms: Vec<Arm>,
    pub seeds: usize,
    /// Bit widths to sweep; empty means `quant.bits` only.
    pub bits: Vec<u32>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            arms: Arm::ALL.to_vec(),
            seeds: 20,
            bits: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: maca_core::Error| CliError::Config(e.to_string());
        self.quant.quant_config().validate().map_err(cfg)?;
        self.schedule.schedule(LengthMode::Multi, 0).validate().map_err(cfg)?;
        self.schedule.schedule(LengthMode::Fixed, 0).validate().map_err(cfg)?;
        self.eval.protocol(&self.schedule).validate().map_err(cfg)?;
        if self.source.kind == SourceKind::Synthetic {
            self.source.synthetic.spec(0).validate().map_err(cfg)?;
        }
        if self.layers.weights_dir.is_none() && (self.layers.count == 0 || self.layers.rows == 0) {
            return Err(CliError::Config("layers.count and layers.rows must be >= 1".into()));
        }
        match self.source.kind {
            SourceKind::Corpus if self.source.corpus_path.is_none() => Err(CliError::Config(
                "source.corpus_path is required for corpus sources".into(),
            )),
            SourceKind::Corpus if self.source.corpus_dim == 0 => {
                Err(CliError::Config("source.corpus_dim must be >= 1".into()))
            }
            SourceKind::Dump if self.source.dump_dir.is_none() => {
                Err(CliError::Config("source.dump_dir is required for dump sources".into()))
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::parse("sed = 3").is_err());
        assert!(RunConfig::parse("[quant]\nbitz = 3").is_err());
        assert!(RunConfig::parse("[source.synthetic]\ndims = 3").is_err());
    }

    #[test]
    fn partial_document() {
        let c = RunConfig::parse("seed = 5\n[quant]\nbits = 2\ngroup_size = 128\n").unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.quant.bits, 2);
        assert_eq!(c.schedule, ScheduleConfig::default());
    }

    #[test]
    fn enum_spellings() {
        let c = RunConfig::parse(
            "[schedule]\nmode = \"fixed\"\n[hessian]\nmodes = \"token_weighted\"\n[ablation]\narms = [\"baseline\"]\n",
        )
        .unwrap();
        assert_eq!(c.schedule.mode, LengthMode::Fixed);
        assert_eq!(c.hessian.modes, HessianModes::TokenWeighted);
        assert_eq!(c.ablation.arms, vec![Arm::Baseline]);
    }
}
