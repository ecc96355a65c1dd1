//! Token corpora and the toy feature map that turns token windows into
//! activations.
//!
//! Two on-disk corpus encodings are accepted: raw bytes (every byte is one
//! token) and a token-id file:
//!
//! ```text
//! magic   [u8; 8]  "MACATOKS"
//! version u32      1
//! count   u64
//! tokens  u32 × count, little-endian
//! ```

use super::schedule::LengthSchedule;
use super::tensor_file::Reader;
use crate::error::{Error, Result};
use crate::hessian::CalibrationSample;
use crate::linalg::Matrix;
use crate::rng::{derive, mix64};
use std::fs;
use std::path::Path;

pub const TOKEN_MAGIC: [u8; 8] = *b"MACATOKS";
pub const TOKEN_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenCorpus {
    tokens: Vec<u32>,
}

impl TokenCorpus {
    pub fn new(tokens: Vec<u32>) -> Self {
        Self { tokens }
    }

    pub fn from_text(bytes: &[u8]) -> Self {
        Self::new(bytes.iter().map(|&b| u32::from(b)).collect())
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 4 * self.tokens.len());
        out.extend_from_slice(&TOKEN_MAGIC);
        out.extend_from_slice(&TOKEN_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tokens.len() as u64).to_le_bytes());
        for t in &self.tokens {
            out.extend_from_slice(&t.to_le_bytes());
        }
        out
    }

    /// Decodes a token-id file. Input without the token magic is read as
    /// plain text, one token per byte.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if !bytes.starts_with(&TOKEN_MAGIC) {
            return Ok(Self::from_text(bytes));
        }
        let malformed = |e: Error| Error::MalformedCorpus(e.to_string());
        let mut r = Reader::new(&bytes[8..]);
        let version = r.u32().map_err(malformed)?;
        if version != TOKEN_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let count = r.u64().map_err(malformed)?;
        let count = usize::try_from(count)
            .ok()
            .and_then(|c| c.checked_mul(4))
            .ok_or_else(|| Error::MalformedCorpus(format!("token count {count} too large")))?;
        if r.remaining() != count {
            return Err(Error::MalformedCorpus(format!(
                "header declares {} payload bytes, file has {}",
                count,
                r.remaining()
            )));
        }
        let payload = r.take(count).map_err(malformed)?;
        Ok(Self::new(
            payload
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }
}

/// Maps a window of tokens to a `D × L` activation matrix.
pub trait FeatureMap: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, window: &[u32]) -> Matrix;
}

/// Hash-based token embedding plus a positional term whose channel
/// placement depends on the window length: windows at least
/// `crossover_length` long drive the first half of the channels, shorter
/// windows drive the second half.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyFeatureMap {
    pub dim: usize,
    pub seed: u64,
    pub positional_gain: f64,
    pub crossover_length: usize,
}

impl ToyFeatureMap {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self {
            dim,
            seed,
            positional_gain: 3.0,
            crossover_length: 128,
        }
    }

    fn token_value(&self, token: u32, channel: usize) -> f64 {
        let h = mix64(derive(self.seed, &[u64::from(token), channel as u64]));
        // top 53 bits → [0, 1) → [-1, 1)
        (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    }
}

impl FeatureMap for ToyFeatureMap {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, window: &[u32]) -> Matrix {
        let len = window.len();
        let half = self.dim / 2;
        let driven = if len >= self.crossover_length {
            0..half.max(1)
        } else {
            half..self.dim
        };
        let mut x = Matrix::zeros(self.dim, len);
        for (p, &tok) in window.iter().enumerate() {
            // Shared across channels so the positional term also correlates them.
            let phase = std::f64::consts::PI * (p as f64 + 0.5) / len as f64;
            for d in 0..self.dim {
                let mut v = self.token_value(tok, d);
                if driven.contains(&d) {
                    let k = (d - driven.start + 1) as f64;
                    v += self.positional_gain * (k * phase).cos() + self.token_value(tok, 0);
                }
                x[(d, p)] = v;
            }
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CorpusOptions {
    /// Take every sample as a prefix of its own `max(length_set)` block
    /// instead of packing windows back to back.
    pub nested: bool,
}

/// One window of the corpus: `[start, start + len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start: usize,
    pub len: usize,
}

/// Window layout for a sequence of lengths, failing if the corpus is short.
pub fn plan_windows(corpus_len: usize, lengths: &[usize], block: usize, options: CorpusOptions) -> Result<Vec<Window>> {
    let mut windows = Vec::with_capacity(lengths.len());
    let mut cursor = 0usize;
    for &len in lengths {
        windows.push(Window { start: cursor, len });
        cursor += if options.nested { block.max(len) } else { len };
    }
    if cursor > corpus_len {
        return Err(Error::CorpusTooSmall {
            available: corpus_len,
            required: cursor,
        });
    }
    Ok(windows)
}

/// Lazily embeds consecutive windows of a corpus.
pub struct CorpusStream<'a, F: FeatureMap + ?Sized> {
    corpus: &'a TokenCorpus,
    feature_map: &'a F,
    windows: std::vec::IntoIter<Window>,
}

impl<'a, F: FeatureMap + ?Sized> CorpusStream<'a, F> {
    pub fn from_windows(corpus: &'a TokenCorpus, feature_map: &'a F, windows: Vec<Window>) -> Self {
        Self {
            corpus,
            feature_map,
            windows: windows.into_iter(),
        }
    }
}

impl<F: FeatureMap + ?Sized> Iterator for CorpusStream<'_, F> {
    type Item = Result<CalibrationSample>;

    fn next(&mut self) -> Option<Self::Item> {
        let w = self.windows.next()?;
        let tokens = &self.corpus.tokens()[w.start..w.start + w.len];
        let x = self.feature_map.embed(tokens);
        if x.shape() != (self.feature_map.dim(), w.len) {
            return Some(Err(Error::DimensionMismatch(format!(
                "feature map produced {:?} for a window of {}",
                x.shape(),
                w.len
            ))));
        }
        Some(CalibrationSample::new(x, format!("corpus:{}+{}", w.start, w.len)))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.windows.size_hint()
    }
}

/// Calibration samples whose lengths follow `schedule`, cut from
/// non-overlapping, in-order windows starting at token 0.
pub fn ingest_corpus<'a, F: FeatureMap + ?Sized>(
    corpus: &'a TokenCorpus,
    schedule: &LengthSchedule,
    feature_map: &'a F,
    options: CorpusOptions,
) -> Result<CorpusStream<'a, F>> {
    if corpus.len() < schedule.token_budget {
        return Err(Error::CorpusTooSmall {
            available: corpus.len(),
            required: schedule.token_budget,
        });
    }
    let lengths = schedule.draw()?.lengths;
    let windows = plan_windows(corpus.len(), &lengths, schedule.max_length(), options)?;
    Ok(CorpusStream::from_windows(corpus, feature_map, windows))
}
