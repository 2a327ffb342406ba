//! Sparse-label terrain segmentation.
//!
//! Two-stage pipeline: masked image modeling pre-training that predicts both
//! the hidden RGB values and per-patch LBP texture histograms, followed by
//! fine-tuning where a labeledness discriminator gates online pseudo-labels
//! for unlabeled pixels.

pub mod dataset;
pub mod error;
pub mod imaging;
pub mod io;
pub mod lbp;
pub mod loss;
pub mod mask;
pub mod metrics;
pub mod nn;
pub mod pseudo;
pub mod train;

pub use error::{Error, Result};
pub use imaging::{CategoryTable, ImageTensor, SparseLabelMap, UNLABELED};
