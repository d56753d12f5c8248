//! Differentiable geometry and loss kernels for LiDAR-guided stereo 3D detection.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: dense `f64` tensors with a reverse-mode tape and gradient checking.
//! - [`geometry`]: camera rig, depth binning and voxel grid index algebra.
//! - [`volumes`]: plane-sweep stereo volume, depth distribution, 3D volume and BEV collapse.
//! - [`boxes`]: oriented boxes, rotated IoU via convex clipping, residual coding.
//! - [`losses`]: uni-modal depth loss, feature imitation, detection losses and their sum.
//! - [`assignment`]: anchors, IoU target assignment and ATSS with reprojected centers.
//! - [`eval`]: KITTI-style AP over 40 recall positions.
//! - [`scene`]: synthetic scenes, ideal stereo rendering, LiDAR-like points, teacher features.
//! - [`harness`]: the reproducible `gen`/`gradcheck`/`train`/`eval` experiments.

pub mod assignment;
pub mod boxes;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod harness;
pub mod losses;
pub mod scene;
pub mod tensor;
pub mod volumes;

pub use error::{Error, Result};
