//! Anchor generation and training-target assignment for the 3D head and the
//! auxiliary 2D head.

mod anchors;
mod atss;
mod target3d;

pub use anchors::{generate_anchors, AnchorClassSpec, AnchorGrid, ANCHOR_YAWS};
pub use atss::{atss_assign_2d, box_iou_2d, Anchor2DSet, CenterMode, Gt2D, Level2D, ATSS_STRIDES, ATSS_TOP_K};
pub use target3d::{assign_3d_targets, Assignment, ClassThresholds, Label, MatchThresholds, PositiveTarget};
