//! Semi-automatic 3D segmentation of vertebral bodies in CT volumes with
//! trabecular bone mineral density (BMD) and volume measurement.
//!
//! The pipeline per vertebra:
//!
//! 1. [`constraints`]: spinal canal tracking, intervertebral disk planes and a
//!    capped elliptic-cylinder search region around the operator's seed.
//! 2. [`threshold`]: two-Gaussian fit of the region histogram giving a soft
//!    tissue / bone threshold pair and a noise-adaptive transition rule.
//! 3. [`balloon`]: an explicit triangle-mesh balloon ([`mesh`]) driven by
//!    radial-profile edge forces and spring smoothing.
//! 4. [`pipeline`]: seed collection on the balloon surface, volume growing,
//!    closing, pedicle cut by ultimate erosion + influence zones
//!    ([`morphology`]), and trabecular compartment extraction.
//! 5. [`analysis`]: BMD / volume per VOI and accuracy / precision statistics.
//!
//! [`phantom`] builds geometrically defined test volumes with exact ground truth.

pub mod analysis;
pub mod balloon;
pub mod constraints;
pub mod error;
pub mod grid;
pub mod mesh;
pub mod metaimage;
pub mod morphology;
pub mod phantom;
pub mod pipeline;
pub mod threshold;
pub mod volgrid;

pub use error::{Error, Result};
pub use grid::{Grid, Vec3};
pub use metaimage::{load_label_mask, load_volume, save_label_mask, save_volume, write_atomic};
pub use morphology::{LabelMask, Mask};
pub use volgrid::{Calibration, VoxelVolume};
