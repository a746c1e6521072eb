//! Sequence-to-frame gridded monsoon rainfall forecasting.
//!
//! Multi-channel pre-monsoon predictor sequences go in, rainfall vectors over
//! the valid cells of a target grid come out. The crate covers the whole
//! pipeline: predictor preprocessing, sliding-window augmentation, a 3D
//! residual CNN on a small reverse-mode autograd engine, training with Adam,
//! masked-grid metrics, synthetic data and map rendering.

pub mod error;
pub mod augment;
pub mod cli;
pub mod grid;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod preprocess;
pub mod render;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
