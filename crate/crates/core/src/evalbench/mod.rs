//! Evaluation harnesses: needle-in-a-haystack recall over a length × depth
//! grid, and output-length analysis with a `log y = a·log(x + b) + c` fit.

mod curve;
mod needle;

pub use curve::{fit_length_curve, length_report, LengthCurveFit, LengthReport};
pub use needle::{
    build_needle_case, default_depths, default_lengths, needle_recall, run_needle_grid, GridCell, Haystack, NeedleCase,
    NeedleConfig, NeedleGrid, DEFAULT_NEEDLE, DEFAULT_QUESTION,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("haystack holds {available} tokens, {requested} requested")]
    InsufficientCorpus { available: usize, requested: usize },
    #[error("depth fraction {0} outside [0, 1]")]
    InvalidDepth(f64),
    #[error("needle must be non-empty")]
    EmptyNeedle,
    #[error("needle already occurs in the haystack")]
    NeedleInHaystack,
    #[error("context length {0} is too short for the needle")]
    ContextTooShort(usize),
    #[error("grid needs at least one length and one depth")]
    EmptyGrid,
    #[error("curve fit needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("point {index} has non-positive or non-finite value ({x}, {y})")]
    InvalidPoint { index: usize, x: f64, y: f64 },
    #[error("no samples")]
    NoSamples,
    #[error("csv: {0}")]
    Csv(String),
}
