use crate::error::{Error, Result};
use crate::rng::seeded;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Default multi-scale length set used at full scale.
pub const PAPER_LENGTH_SET: [usize; 5] = [256, 512, 1024, 2048, 4096];
/// Token budget matching 256 sequences of 2048 tokens.
pub const PAPER_TOKEN_BUDGET: usize = 524_288;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthMode {
    /// Every sample has the single length `L_C`.
    Fixed,
    /// Lengths drawn i.i.d. uniform from the length set.
    Multi,
}

/// How sequence lengths are drawn under a fixed token budget.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthSchedule {
    pub mode: LengthMode,
    /// Admissible lengths. Fixed mode uses exactly one.
    pub length_set: Vec<usize>,
    pub token_budget: usize,
    pub seed: u64,
}

/// Output of [`LengthSchedule::draw`]: the lengths in order, plus how many
/// of them came from the uniform draw before the padding sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DrawnLengths {
    pub lengths: Vec<usize>,
    pub untruncated: usize,
}

impl DrawnLengths {
    pub fn total(&self) -> usize {
        self.lengths.iter().sum()
    }

    /// The padding sample, when one was needed.
    pub fn truncated(&self) -> Option<usize> {
        self.lengths.get(self.untruncated).copied()
    }
}

impl LengthSchedule {
    pub fn fixed(length: usize, token_budget: usize, seed: u64) -> Self {
        Self {
            mode: LengthMode::Fixed,
            length_set: vec![length],
            token_budget,
            seed,
        }
    }

    pub fn multi(length_set: Vec<usize>, token_budget: usize, seed: u64) -> Self {
        Self {
            mode: LengthMode::Multi,
            length_set,
            token_budget,
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn max_length(&self) -> usize {
        self.length_set.iter().copied().max().unwrap_or(0)
    }

    pub fn min_length(&self) -> usize {
        self.length_set.iter().copied().min().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.length_set.is_empty() {
            return Err(Error::InvalidConfig("length set is empty".into()));
        }
        if self.length_set.contains(&0) {
            return Err(Error::InvalidConfig("lengths must be >= 1".into()));
        }
        if self.mode == LengthMode::Fixed && self.length_set.len() != 1 {
            return Err(Error::InvalidConfig(format!(
                "fixed mode takes exactly one length, got {}",
                self.length_set.len()
            )));
        }
        if self.token_budget < self.max_length() {
            return Err(Error::BudgetTooSmall {
                budget: self.token_budget,
                length: self.max_length(),
            });
        }
        Ok(())
    }

    /// Draws lengths until the next draw would overflow the budget, then
    /// appends one truncated sample covering any remaining shortfall, so the
    /// total always equals `token_budget`.
    pub fn draw(&self) -> Result<DrawnLengths> {
        self.validate()?;
        let mut rng = seeded(self.seed);
        let mut lengths = Vec::new();
        let mut total = 0usize;
        loop {
            let next = match self.mode {
                LengthMode::Fixed => self.length_set[0],
                LengthMode::Multi => self.length_set[rng.random_range(0..self.length_set.len())],
            };
            if total + next > self.token_budget {
                break;
            }
            total += next;
            lengths.push(next);
            if total == self.token_budget {
                break;
            }
        }
        let untruncated = lengths.len();
        let shortfall = self.token_budget - total;
        if shortfall > 0 {
            lengths.push(shortfall);
        }
        Ok(DrawnLengths { lengths, untruncated })
    }
}

pub fn draw_lengths(schedule: &LengthSchedule) -> Result<Vec<usize>> {
    schedule.draw().map(|d| d.lengths)
}
