//! The bank of independent linear layers a run operates on.

use crate::config::{RunConfig, SourceKind};
use crate::error::CliError;
use maca_core::calib::corpus::CorpusOptions;
use maca_core::calib::{
    read_tensor, ActivationSource, CorpusSource, DumpSource, SyntheticSource, TokenCorpus, ToyFeatureMap,
};
use maca_core::metrics::BenchLayer;
use maca_core::rng::{derive, seeded};
use maca_core::{CalibrationSample, Matrix};
use rand::Rng;
use rand_distr::StandardNormal;
use std::path::{Path, PathBuf};
use std::sync::Arc;

const WEIGHT_TAG: u64 = 1;
const SOURCE_TAG: u64 = 2;

fn layer_seed(seed: u64, index: usize) -> u64 {
    derive(seed, &[0x4c41_5945, index as u64])
}

pub fn random_weights(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = seeded(seed);
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data).expect("gaussian weights are finite")
}

/// Files with `ext` in `dir`, sorted by name.
pub fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|x| x == ext) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn list_dirs(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_dir() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn load_samples(dir: &Path) -> Result<Vec<CalibrationSample>, CliError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    list_files(dir, "tensor")?
        .into_iter()
        .map(|p| {
            let m = read_tensor(&p).map_err(|e| CliError::io(&p, e))?;
            CalibrationSample::new(m, p.display().to_string()).map_err(|e| CliError::io(&p, e))
        })
        .collect()
}

/// Builds every layer of the run: ids, weights and activation sources.
pub fn build_bank(cfg: &RunConfig) -> Result<Vec<BenchLayer>, CliError> {
    let src = &cfg.source;
    let corpus = match src.kind {
        SourceKind::Corpus => {
            let path = src.corpus_path.as_ref().expect("validated");
            Some(Arc::new(TokenCorpus::read(path).map_err(|e| CliError::io(path, e))?))
        }
        _ => None,
    };

    // (id, optional file weights, optional dump source)
    let mut entries: Vec<(String, Option<Matrix>, Option<DumpSource>)> = Vec::new();
    if let Some(dir) = &cfg.layers.weights_dir {
        for p in list_files(dir, "tensor")? {
            let w = read_tensor(&p).map_err(|e| CliError::io(&p, e))?;
            entries.push((stem(&p), Some(w), None));
        }
        if entries.is_empty() {
            return Err(CliError::Data(format!("no weight tensors in {}", dir.display())));
        }
    }
    if src.kind == SourceKind::Dump {
        let dump_dir = src.dump_dir.as_ref().expect("validated");
        let mut dumps = Vec::new();
        for d in list_dirs(dump_dir)? {
            let source = DumpSource {
                calibration: load_samples(&d.join("calib"))?,
                held_out: load_samples(&d.join("eval"))?,
            };
            dumps.push((d.file_name().unwrap().to_string_lossy().into_owned(), source));
        }
        if dumps.is_empty() {
            return Err(CliError::Data(format!(
                "no layer directories in {}",
                dump_dir.display()
            )));
        }
        if entries.is_empty() {
            entries = dumps.into_iter().map(|(id, s)| (id, None, Some(s))).collect();
        } else {
            for entry in &mut entries {
                let pos = dumps
                    .iter()
                    .position(|(id, _)| *id == entry.0)
                    .ok_or_else(|| CliError::Data(format!("no activation dump for layer {}", entry.0)))?;
                entry.2 = Some(dumps.swap_remove(pos).1);
            }
        }
    }
    if entries.is_empty() {
        entries = (0..cfg.layers.count)
            .map(|i| (format!("layer_{i:03}"), None, None))
            .collect();
    }

    entries
        .into_iter()
        .enumerate()
        .map(|(i, (id, weights, dump))| {
            let seed = layer_seed(cfg.seed, i);
            let source: Arc<dyn ActivationSource> = match src.kind {
                SourceKind::Synthetic => {
                    let spec = src.synthetic.spec(derive(seed, &[SOURCE_TAG]));
                    Arc::new(SyntheticSource::new(spec).map_err(|e| CliError::Config(e.to_string()))?)
                }
                SourceKind::Corpus => Arc::new(CorpusSource {
                    corpus: corpus.clone().expect("loaded above"),
                    feature_map: Arc::new(ToyFeatureMap::new(src.corpus_dim, derive(seed, &[SOURCE_TAG]))),
                    options: CorpusOptions { nested: src.nested },
                }),
                SourceKind::Dump => Arc::new(dump.expect("dump sources attached above")),
            };
            let dim = source.dim();
            let weights = match weights {
                Some(w) => w,
                None => random_weights(cfg.layers.rows, dim, derive(seed, &[WEIGHT_TAG])),
            };
            if weights.cols() != dim {
                return Err(CliError::Data(format!(
                    "layer {id}: weights have {} input channels, activations {dim}",
                    weights.cols()
                )));
            }
            Ok(BenchLayer { id, weights, source })
        })
        .collect()
}
