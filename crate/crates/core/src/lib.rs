//! Mask-level distillation into neural fields.
//!
//! A low-dimensional mask feature field is trained on top of a geometry
//! field (voxel grid or isotropic splats). Scene-level query tokens turn the
//! rendered feature map into mask logits, and paired semantic tokens carry a
//! pooled embedding per mask. Supervision is a set of class-agnostic masks
//! per view plus one embedding per mask; predictions are matched to the
//! supervision with an optimal bipartite assignment.
//!
//! Module map:
//! - [`fields`]: cameras, rays, grid and splat backends, forward/backward rendering
//! - [`tokens`]: Fourier-encoded token MLPs and mask logits
//! - [`distill`]: focal/dice/cosine/extra losses and Hungarian matching
//! - [`trainer`]: Adam, two-stage training, finite-difference gradient checks
//! - [`inference`]: open-vocabulary segmentation and query
//! - [`metrics`]: mIoU, boundary IoU, accuracy
//! - [`synthetic`]: analytic ground-truth scenes standing in for real captures
//! - [`dataio`]: on-disk dataset, tensor, RLE and checkpoint formats
//! - [`pipeline`]: end-to-end scenario runner and the feature-dimension sweep

pub mod dataio;
pub mod distill;
mod error;
pub mod fields;
pub mod inference;
pub mod math;
pub mod metrics;
pub mod pipeline;
pub mod synthetic;
pub mod tokens;
pub mod trainer;

pub use error::{Error, Result};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
