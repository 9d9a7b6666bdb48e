//! Calibrated ensembles of class activation maps for weakly supervised
//! segmentation.
//!
//! The pipeline: [`gradcam`] turns exported activation/derivative tensors
//! into normalized logit maps, [`ensemble`] binarizes each model's map at
//! its own threshold and merges the masks, and [`calibration`] searches the
//! threshold grid exhaustively on a training split, scoring with
//! [`metrics`]. [`synth`] builds corpora with known ground truth and [`io`]
//! holds the file formats.

pub mod calibration;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod gradcam;
pub mod io;
pub mod mask;
pub mod metrics;
pub mod rng;
pub mod synth;

pub use calibration::{
    cross_validate, empty_baseline, evaluate, export_heatmap, search, EvalReport, FoldSpec,
    ScoreSurface, SearchParams, SearchResult, ThresholdGrid,
};
pub use dataset::{Dataset, Sample};
pub use ensemble::{combine, EnsembleConfig, EnsembleOp};
pub use error::{Error, Result};
pub use mask::{binarize, positive_count, BinaryMask, LogitMap, Threshold};
pub use metrics::{ConfusionCounts, Objective, ScorePair};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
