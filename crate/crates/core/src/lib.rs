//! Salient object segmentation from eye fixations.
//!
//! Object proposals are scored by a random regression forest over shape and
//! fixation-distribution features; the top-scoring segments are averaged into
//! a saliency map. The crate also carries the benchmark metrics (PR/F-measure,
//! ROC and shuffled AUC), inter-subject consistency protocols and the
//! dataset-bias statistics used to analyse salient object datasets.

pub mod raster;
pub mod fixproc;
pub mod metrics;
pub mod stats;
pub mod segfeat;
pub mod forest;
pub mod proposals;
pub mod pipeline;
