//! Open-set point-cloud segmentation with a conditional-mutual-information
//! regularizer on the merged unknown cluster.
//!
//! The crate is organized bottom up:
//!
//! - [`infotheory`]: entropy, KL divergence, class aggregates, empirical CMI.
//! - [`autodiff`]: a small reverse-mode tape over dense matrices and a
//!   finite-difference gradient checker.
//! - [`model`]: a PointNet-style encoder with segmentation and
//!   classification heads, plus head surgery.
//! - [`loss`]: cross-entropy, the unknown-cluster CMI term, the combined
//!   objective and the EMA aggregate.
//! - [`data`]: procedural part-labeled point clouds and the open-set split.
//! - [`metrics`]: part IoU, shape / category mIoU, grouped accuracy.
//! - [`harness`]: the two-phase open-set protocol, ablation sweeps and
//!   curve export.

pub mod autodiff;
pub mod data;
mod error;
pub mod harness;
pub mod infotheory;
pub mod loss;
pub mod metrics;
pub mod model;

pub use error::{Error, Result};
