//! Experiment harness: training with early stopping, cross-validation,
//! per-scale accuracy reports, grid search and paired model comparison.
//!
//! Independent training runs are distributed with [`crate::par`]; results are
//! always gathered in input order, so every report is identical under
//! sequential and parallel execution.

mod cv;
mod grid;
mod output;
mod report;
mod train;
mod wilcoxon;

use thiserror::Error;

use crate::graphdata::DataError;
use crate::model::ModelError;
use crate::scales::ScaleError;
use crate::sparse::SparseError;
use crate::tensor::TensorError;

pub use cv::{cross_validate, mean_and_std, CvResult};
pub use grid::{config_seed, grid_search, GridEntry, GridSpace, JkChoice};
pub use output::{format_leaderboard_tsv, format_report_tsv, to_json_string, write_text};
pub use report::{per_scale_report, ReportOptions, ScaleColumn, ScaleReport, ScaleReportRow};
pub use train::{accuracy, train, train_model, EpochRecord, TrainHyper, TrainResult};
pub use wilcoxon::{
    average_ranks, exact_two_sided_p, wilcoxon_signed_rank, wilcoxon_with_method, ComparisonResult, TestMethod,
    EXACT_MAX_PAIRS, MIN_PAIRS,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("validation set is empty")]
    EmptyValidation,
    #[error("training set is empty")]
    EmptyTrain,
    #[error("no splits given")]
    NoSplits,
    #[error("the search space is empty")]
    EmptySpace,
    #[error("invalid training hyperparameters: {0}")]
    InvalidHyper(String),
    #[error("samples have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("samples contain non-finite values")]
    NonFiniteSample,
    #[error("all paired differences are zero")]
    AllZeroDifferences,
    #[error("{0} non-zero differences; at least {MIN_PAIRS} are required")]
    TooFewPairs(usize),
    #[error("cannot access {path}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Scale(#[from] ScaleError),
    #[error(transparent)]
    Sparse(#[from] SparseError),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Derives an independent stream seed from `(seed, index)` (SplitMix64
/// finalizer over their combination).
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
