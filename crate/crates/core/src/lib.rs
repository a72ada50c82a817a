//! Unsupervised vessel segmentation and physics-consistent velocity
//! reconstruction for 4D Flow MRI, with a synthetic data generator and the
//! evaluation metrics used to score both stages.
//!
//! - [`volume`] and [`io`]: data model and on-disk formats
//! - [`synth`]: analytic flows, signal synthesis, blur, noise, sweeps
//! - [`segmentation`]: likelihood-fusion vessel segmentation
//! - [`reconstruction`]: continuity-constrained unwrapping, outlier
//!   correction and POD denoising
//! - [`metrics`]: overlap, surface distance, velocity agreement, divergence
//! - [`pipeline`]: configuration and batch commands used by the CLI

pub mod error;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod reconstruction;
pub mod segmentation;
pub mod synth;
pub mod volume;

pub use error::{Result, VastError};
pub use grid::Grid;
pub use volume::{AcquisitionMeta, FlowBundle, MaskVolume, VelocityField};
