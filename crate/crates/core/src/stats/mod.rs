//! Ensemble comparison: extrema extraction, curve fitting, two-sample tests
//! and extinction fractions.

mod compare;
mod extrema;
mod fit;
mod hypothesis;

use thiserror::Error;

pub use compare::{
    extinction_fraction, two_stage_compare, CompareOptions, ComparisonReport, ParamTest, RunFit, SliceTest,
};
pub use extrema::{detect_extrema, extrema_of_series, moving_average, ExtremaKind, ExtremaSequence};
pub use fit::{fit_curve, levenberg_marquardt, CurveFamily, FitResult, LmOptions};
pub use hypothesis::{ks_two_sample, welch_t, wilcoxon_rank_sum, KsResult, WelchResult, WilcoxonResult};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("unknown species `{0}`")]
    UnknownSpecies(String),
    #[error("{0}")]
    InvalidArgument(String),
    #[error("series of {len} samples is shorter than the smoothing window {window}")]
    SeriesTooShort { len: usize, window: usize },
    #[error("empty sample")]
    EmptySample,
    #[error("need at least {needed} points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("normal equations are singular")]
    Singular,
    #[error("non-finite input or residual")]
    NonFinite,
    #[error("ensemble {ensemble} has {usable} usable runs; at least 3 are required")]
    TooFewRuns { ensemble: String, usable: usize },
}
