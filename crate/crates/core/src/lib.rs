//! Faithfulness scoring for image attribution heatmaps.
//!
//! The engine partitions each image into superpixels, ranks the segments by
//! the mean relevance an explanation assigns to them, removes them in that
//! order and records how the target class score of a black-box classifier
//! degrades. The area over the normalized degradation curve, averaged over a
//! dataset, is the IROF score of the explanation method.
//!
//! Competing evaluators (pixel flipping and square-region perturbation) and
//! paired t-tests against a random removal order are provided for comparing
//! how sensitive each evaluator is.
//!
//! Module map:
//!
//! - [`imagery`]: rasters, heatmaps, the raw-float interchange format and the dataset mean colour
//! - [`segmentation`]: SLIC superpixels and segment bookkeeping
//! - [`ranking`]: per-segment mean importance and the removal order
//! - [`degradation`]: removal schedules and lazily degraded frame sequences
//! - [`backend`]: the classifier interface and its transports
//! - [`baselines`]: random and Sobel reference orderings
//! - [`engine`]: degradation curves, AOC and dataset-level IROF
//! - [`stats`]: Student-t machinery and the sensitivity report

pub mod backend;
pub mod baselines;
pub mod dataset;
pub mod degradation;
mod error;
pub mod engine;
pub mod imagery;
pub mod plot;
pub mod ranking;
pub mod rng;
pub mod segmentation;
pub mod stats;

pub use error::{Error, Result};
