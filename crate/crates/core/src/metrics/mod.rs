//! Evaluation metrics and multi-seed statistics.

mod classification;
mod pronoun;
pub mod tdist;
mod yuen;

use thiserror::Error;

pub use classification::{aggregate, dpr_score, macro_f1, macro_f1_with, Aggregate, DprMatch, F1Averaging};
pub use pronoun::{accuracy_by_pronoun, PronounAccuracy};
pub use yuen::{yuen_welch, StatResult, DEFAULT_ALPHA, DEFAULT_TRIM_GAMMA};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("predictions ({predictions}) and golds ({golds}) differ in length")]
    LengthMismatch { predictions: usize, golds: usize },
    #[error("empty evaluation set")]
    EmptyEval,
    #[error("need at least {needed} scores, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("sample of size {n} is too small (need n >= 5 and at least 2 values after trimming {trimmed} per tail)")]
    InsufficientSample { n: usize, trimmed: usize },
    #[error("trim proportion {0} outside [0, 0.25]")]
    InvalidTrim(f64),
    #[error("non-finite score in sample")]
    NonFinite,
}
