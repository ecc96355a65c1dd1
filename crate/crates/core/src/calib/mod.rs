//! Calibration data: length schedules, synthetic and corpus-driven
//! activation sources, and the on-disk tensor format.

pub mod corpus;
pub mod schedule;
pub mod synthetic;
pub mod tensor_file;

pub use corpus::{ingest_corpus, CorpusOptions, CorpusStream, FeatureMap, TokenCorpus, ToyFeatureMap};
pub use schedule::{draw_lengths, DrawnLengths, LengthMode, LengthSchedule};
pub use synthetic::{generate_synthetic, SyntheticGenerator, SyntheticSpec};
pub use tensor_file::{read_tensor, read_tensor_file, write_tensor, write_tensor_file, DType, Tensor, TensorData};

use crate::error::{Error, Result};
use crate::hessian::CalibrationSample;
use std::sync::Arc;

/// Anything that can produce activations for one layer.
///
/// `calibration` returns samples of the requested lengths; `stream`
/// selects an independent draw where the source supports it. `held_out`
/// returns evaluation samples that never overlap calibration data.
pub trait ActivationSource: Send + Sync {
    fn dim(&self) -> usize;
    fn calibration(&self, lengths: &[usize], stream: u64) -> Result<Vec<CalibrationSample>>;
    fn held_out(&self, lengths: &[usize]) -> Result<Vec<CalibrationSample>>;
}

/// Held-out draws use a stream no calibration seed maps to.
const HELD_OUT_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone)]
pub struct SyntheticSource {
    pub spec: SyntheticSpec,
}

impl SyntheticSource {
    pub fn new(spec: SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec })
    }
}

impl ActivationSource for SyntheticSource {
    fn dim(&self) -> usize {
        self.spec.dim
    }

    fn calibration(&self, lengths: &[usize], stream: u64) -> Result<Vec<CalibrationSample>> {
        if stream == HELD_OUT_STREAM {
            return Err(Error::InvalidConfig("stream id reserved for held-out data".into()));
        }
        SyntheticGenerator::new(self.spec.clone(), stream)?.samples(lengths)
    }

    fn held_out(&self, lengths: &[usize]) -> Result<Vec<CalibrationSample>> {
        SyntheticGenerator::new(self.spec.clone(), HELD_OUT_STREAM)?.samples(lengths)
    }
}

/// Corpus windows through a feature map. Calibration windows are packed
/// from the front of the corpus, held-out windows from the back; the
/// stream id is ignored since the corpus itself is fixed.
pub struct CorpusSource {
    pub corpus: Arc<TokenCorpus>,
    pub feature_map: Arc<dyn FeatureMap>,
    pub options: CorpusOptions,
}

impl ActivationSource for CorpusSource {
    fn dim(&self) -> usize {
        self.feature_map.dim()
    }

    fn calibration(&self, lengths: &[usize], _stream: u64) -> Result<Vec<CalibrationSample>> {
        let block = lengths.iter().copied().max().unwrap_or(0);
        let windows = corpus::plan_windows(self.corpus.len(), lengths, block, self.options)?;
        CorpusStream::from_windows(&self.corpus, self.feature_map.as_ref(), windows).collect()
    }

    fn held_out(&self, lengths: &[usize]) -> Result<Vec<CalibrationSample>> {
        let total: usize = lengths.iter().sum();
        if total > self.corpus.len() {
            return Err(Error::CorpusTooSmall {
                available: self.corpus.len(),
                required: total,
            });
        }
        let mut start = self.corpus.len() - total;
        let windows = lengths
            .iter()
            .map(|&len| {
                let w = corpus::Window { start, len };
                start += len;
                w
            })
            .collect();
        CorpusStream::from_windows(&self.corpus, self.feature_map.as_ref(), windows).collect()
    }
}

/// Pre-captured activations, e.g. dumped from a real model. Calibration
/// ignores the requested lengths and returns every stored sample.
#[derive(Debug, Clone, Default)]
pub struct DumpSource {
    pub calibration: Vec<CalibrationSample>,
    pub held_out: Vec<CalibrationSample>,
}

impl ActivationSource for DumpSource {
    fn dim(&self) -> usize {
        self.calibration
            .first()
            .or(self.held_out.first())
            .map_or(0, CalibrationSample::dim)
    }

    fn calibration(&self, _lengths: &[usize], _stream: u64) -> Result<Vec<CalibrationSample>> {
        if self.calibration.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(self.calibration.clone())
    }

    fn held_out(&self, _lengths: &[usize]) -> Result<Vec<CalibrationSample>> {
        if self.held_out.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(self.held_out.clone())
    }
}
