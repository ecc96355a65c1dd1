//! `maca` command-line driver: calibration, quantization, evaluation and
//! ablation runs over a bank of linear layers.

pub mod bank;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use clap::{Args, Parser, Subcommand, ValueEnum};
use config::{HessianModes, Method, RunConfig};
use error::CliError;
use maca_core::calib::LengthMode;
use maca_core::hessian::AggregationMode;
use maca_core::metrics::Arm;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(
    name = "maca",
    version,
    about = "Multi-length calibration for post-training quantization"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Overrides shared by every subcommand. Precedence: flag, then the
/// `MACA_*` variable, then the config file, then built-in defaults.
#[derive(Debug, Default, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long, global = true, env = "MACA_CONFIG")]
    pub config: Option<PathBuf>,
    /// Output root directory.
    #[arg(long, global = true, env = "MACA_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, env = "MACA_SEED")]
    pub seed: Option<u64>,
    #[arg(long, global = true, env = "MACA_BITS")]
    pub bits: Option<u32>,
    /// Columns per quantization group; 0 means one group per row.
    #[arg(long, global = true, env = "MACA_GROUP_SIZE")]
    pub group_size: Option<usize>,
    /// Calibration length schedule.
    #[arg(long, global = true, env = "MACA_MODE", value_enum)]
    pub mode: Option<ModeArg>,
    /// Comma-separated calibration lengths.
    #[arg(long, global = true, env = "MACA_LENGTH_SET", value_delimiter = ',')]
    pub length_set: Option<Vec<usize>>,
    #[arg(long, global = true, env = "MACA_TOKEN_BUDGET")]
    pub token_budget: Option<usize>,
    /// Diagonal damping as a fraction of the mean Hessian diagonal.
    #[arg(long, global = true, env = "MACA_PERCDAMP")]
    pub percdamp: Option<f64>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, env = "MACA_WORKERS")]
    pub workers: Option<usize>,
    /// Number of synthetic layers.
    #[arg(long, global = true, env = "MACA_LAYERS")]
    pub layers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Fixed,
    Multi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AggregationArg {
    TokenWeighted,
    SampleNormalized,
}

impl From<AggregationArg> for AggregationMode {
    fn from(a: AggregationArg) -> Self {
        match a {
            AggregationArg::TokenWeighted => AggregationMode::TokenWeighted,
            AggregationArg::SampleNormalized => AggregationMode::SampleNormalized,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HessianModesArg {
    TokenWeighted,
    SampleNormalized,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Gptq,
    Rtn,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Accumulate and store per-layer calibration Hessians.
    Hessian {
        #[arg(long, value_enum)]
        hessian_mode: Option<HessianModesArg>,
    },
    /// Quantize every layer, writing codes and scales.
    Quantize {
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        /// Use the identity Hessian (GPTQ then reduces to round-to-nearest).
        #[arg(long)]
        identity_hessian: bool,
        /// Which stored Hessian to read.
        #[arg(long, value_enum)]
        hessian_mode: Option<AggregationArg>,
        /// Directory holding `<layer>.<mode>.tensor` Hessians.
        #[arg(long)]
        hessian_dir: Option<PathBuf>,
        /// Output set name under `<out>/quant/`.
        #[arg(long)]
        name: Option<String>,
    },
    /// Compare two quantized sets on held-out activations.
    Eval {
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long)]
        maca: Option<PathBuf>,
    },
    /// Run the three-arm ablation over several seeds.
    Ablate {
        /// Comma-separated arms: baseline, multi_scale, multi_scale_normalized.
        #[arg(long, value_delimiter = ',')]
        arms: Option<Vec<Arm>>,
        #[arg(long)]
        seeds: Option<usize>,
        /// Comma-separated bit widths to sweep.
        #[arg(long, value_delimiter = ',')]
        ablation_bits: Option<Vec<u32>>,
    },
    /// Summarize the results found under the output root.
    Report,
}

/// Builds the effective configuration for a parsed command line.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let c = &cli.common;
    let mut cfg = match &c.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &c.out {
        cfg.out = v.clone();
    }
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = c.bits {
        cfg.quant.bits = v;
    }
    if let Some(v) = c.group_size {
        cfg.quant.group_size = v;
    }
    if let Some(v) = c.mode {
        cfg.schedule.mode = match v {
            ModeArg::Fixed => LengthMode::Fixed,
            ModeArg::Multi => LengthMode::Multi,
        };
    }
    if let Some(v) = &c.length_set {
        cfg.schedule.length_set = v.clone();
    }
    if let Some(v) = c.token_budget {
        cfg.schedule.token_budget = v;
    }
    if let Some(v) = c.percdamp {
        cfg.quant.percdamp = v;
    }
    if let Some(v) = c.workers {
        cfg.workers = v;
    }
    if let Some(v) = c.layers {
        cfg.layers.count = v;
    }
    match &cli.command {
        Command::Hessian { hessian_mode } => {
            if let Some(m) = hessian_mode {
                cfg.hessian.modes = match m {
                    HessianModesArg::TokenWeighted => HessianModes::TokenWeighted,
                    HessianModesArg::SampleNormalized => HessianModes::SampleNormalized,
                    HessianModesArg::Both => HessianModes::Both,
                };
            }
        }
        Command::Quantize {
            method,
            identity_hessian,
            hessian_mode,
            hessian_dir,
            name,
        } => {
            if let Some(m) = method {
                cfg.quant.method = match m {
                    MethodArg::Gptq => Method::Gptq,
                    MethodArg::Rtn => Method::Rtn,
                };
            }
            cfg.quant.identity_hessian |= identity_hessian;
            if let Some(m) = hessian_mode {
                cfg.quant.hessian_mode = (*m).into();
            }
            if hessian_dir.is_some() {
                cfg.quant.hessian_dir = hessian_dir.clone();
            }
            if name.is_some() {
                cfg.quant.name = name.clone();
            }
        }
        Command::Eval { base, maca } => {
            if base.is_some() {
                cfg.eval.base = base.clone();
            }
            if maca.is_some() {
                cfg.eval.maca = maca.clone();
            }
        }
        Command::Ablate {
            arms,
            seeds,
            ablation_bits,
        } => {
            if let Some(a) = arms {
                cfg.ablation.arms = a.clone();
            }
            if let Some(s) = seeds {
                cfg.ablation.seeds = *s;
            }
            if let Some(b) = ablation_bits {
                cfg.ablation.bits = b.clone();
            }
        }
        Command::Report => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::Config(e.to_string())),
    };
    let cfg = resolve_config(&cli)?;
    let written = match cli.command {
        Command::Hessian { .. } => commands::cmd_hessian(&cfg)?,
        Command::Quantize { .. } => commands::cmd_quantize(&cfg)?,
        Command::Eval { .. } => commands::cmd_eval(&cfg)?,
        Command::Ablate { .. } => commands::cmd_ablate(&cfg)?,
        Command::Report => {
            let (path, text) = commands::cmd_report(&cfg)?;
            print!("{text}");
            path
        }
    };
    eprintln!("wrote {}", written.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("maca").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_defaults() {
        let cli = parse(&["quantize", "--bits", "3", "--length-set", "8,16", "--method", "rtn"]);
        let cfg = resolve_config(&cli).unwrap();
        assert_eq!(cfg.quant.bits, 3);
        assert_eq!(cfg.schedule.length_set, vec![8, 16]);
        assert_eq!(cfg.quant.method, Method::Rtn);
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 9\n[quant]\nbits = 2\n").unwrap();
        let p = path.to_str().unwrap();
        let cfg = resolve_config(&parse(&["--config", p, "hessian"])).unwrap();
        assert_eq!((cfg.seed, cfg.quant.bits), (9, 2));
        let cfg = resolve_config(&parse(&["--config", p, "hessian", "--bits", "4"])).unwrap();
        assert_eq!((cfg.seed, cfg.quant.bits), (9, 4));
    }

    #[test]
    fn ablate_arm_list() {
        let cli = parse(&["ablate", "--arms", "baseline,multi_scale", "--seeds", "3"]);
        let cfg = resolve_config(&cli).unwrap();
        assert_eq!(cfg.ablation.arms, vec![Arm::Baseline, Arm::MultiScale]);
        assert_eq!(cfg.ablation.seeds, 3);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let err = resolve_config(&parse(&["quantize", "--bits", "1"])).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = run(["maca", "quantize", "--mode", "sideways"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
