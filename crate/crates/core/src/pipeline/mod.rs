//! End-to-end orchestration: dataset ingestion, training targets, seeded
//! train/test folds, top-K map composition, upper-bound experiments and the
//! synthetic dataset generator.

mod config;
mod dataset;
mod experiment;
mod synth;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{ExperimentConfig, FixationSource};
pub use dataset::{ClickRecord, ClickTable, DatasetIndex, SalientGroundTruth, SALIENT_THRESHOLD};
pub use experiment::{
    build_targets, compose_topk, energy_map, featurize_pools, fold_splits, ksweep, ksweep_prepared, predict_scores,
    prepare, run_experiment, run_prepared, train_forest, upper_bound_segmenter,
    upper_bound_segmenter_prepared, upper_bound_selector, write_features_csv, write_ksweep_csv,
    ExperimentReport, FeaturizedPool, FoldScore, FoldSplit, KSweep, PoolSource, PreparedImage,
};
pub use synth::{synth_dataset, CLICK_SUBJECTS, GAZE_SUBJECTS};

use crate::fixproc::FixationError;
use crate::forest::ForestError;
use crate::metrics::MetricError;
use crate::proposals::ProposalError;
use crate::raster::RasterError;
use crate::segfeat::FeatureError;
use crate::stats::StatsError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no images under {0}")]
    MissingImages(PathBuf),
    #[error("missing ground truth: {0}")]
    MissingGroundTruth(String),
    #[error("no gaze logs for image {0}")]
    MissingGaze(String),
    #[error("no segment pool for image {0}")]
    MissingPool(String),
    #[error("missing map {0}")]
    MissingMap(PathBuf),
    #[error("image {id}: {what} is {found:?}, expected {expected:?}")]
    DimensionMismatch {
        id: String,
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("degenerate split: {n_train} training and {n_test} test images")]
    DegenerateSplit { n_train: usize, n_test: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("image {0}: empty segment pool")]
    EmptyPool(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Fixation(#[from] FixationError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Proposal(#[from] ProposalError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
