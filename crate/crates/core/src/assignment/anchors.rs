use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::boxes::Box3D;
use crate::error::Result;
use crate::geometry::VoxelGrid;

/// Anchor yaws in head-channel order.
pub const ANCHOR_YAWS: [f64; 2] = [0.0, FRAC_PI_2];

/// Anchor size and center height for one class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorClassSpec {
    pub class_id: u32,
    /// `[l, w, h]` in meters.
    pub size: [f64; 3],
    /// Camera-frame y of the anchor center.
    pub center_y: f64,
}

impl AnchorClassSpec {
    /// SECOND's KITTI anchor sizes, resting on a ground plane at `ground_y`.
    pub fn kitti_defaults(ground_y: f64) -> Vec<AnchorClassSpec> {
        [[3.9, 1.6, 1.56], [0.8, 0.6, 1.73], [1.76, 0.6, 1.73]]
            .iter()
            .enumerate()
            .map(|(c, &size)| AnchorClassSpec {
                class_id: c as u32,
                size,
                center_y: ground_y - 0.5 * size[2],
            })
            .collect()
    }
}

/// One anchor per BEV cell per class per yaw, ordered (class, yaw, z-row,
/// x-col).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnchorGrid {
    pub classes: Vec<AnchorClassSpec>,
    pub yaws: Vec<f64>,
    /// `[sx, sz]` cell size in meters.
    pub stride: [f64; 2],
    pub nx: usize,
    pub nz: usize,
    pub anchors: Vec<Box3D>,
}

impl AnchorGrid {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Number of (class, yaw) anchor types; each owns one BEV plane.
    pub fn num_types(&self) -> usize {
        self.classes.len() * self.yaws.len()
    }

    pub fn cells(&self) -> usize {
        self.nx * self.nz
    }

    /// `(type, z-row, x-col)` of a flat anchor index.
    pub fn locate(&self, index: usize) -> (usize, usize, usize) {
        let cells = self.cells();
        (index / cells, (index % cells) / self.nx, index % self.nx)
    }
}

pub fn generate_anchors(grid: &VoxelGrid, classes: &[AnchorClassSpec]) -> Result<AnchorGrid> {
    let [nx, _, nz] = grid.counts();
    let [sx, _, sz] = grid.voxel_size();
    let [x0, _, z0] = grid.minimum();
    let mut anchors = Vec::with_capacity(classes.len() * ANCHOR_YAWS.len() * nx * nz);
    for spec in classes {
        for &yaw in &ANCHOR_YAWS {
            for k in 0..nz {
                for i in 0..nx {
                    let center = [x0 + (i as f64 + 0.5) * sx, spec.center_y, z0 + (k as f64 + 0.5) * sz];
                    anchors.push(Box3D::new(center, spec.size, yaw, spec.class_id)?);
                }
            }
        }
    }
    Ok(AnchorGrid {
        classes: classes.to_vec(),
        yaws: ANCHOR_YAWS.to_vec(),
        stride: [sx, sz],
        nx,
        nz,
        anchors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_centers() {
        let grid = VoxelGrid::new([0.0, 2.0], [0.0, 1.0], [4.0, 6.0], [1.0; 3]).unwrap();
        let spec = [AnchorClassSpec {
            class_id: 0,
            size: [3.9, 1.6, 1.56],
            center_y: 0.5,
        }];
        let a = generate_anchors(&grid, &spec).unwrap();
        assert_eq!(a.len(), 8);
        assert_eq!(a.anchors[0].center(), [0.5, 0.5, 4.5]);
        assert_eq!(a.anchors[1].center(), [1.5, 0.5, 4.5]);
        assert_eq!(a.anchors[2].center(), [0.5, 0.5, 5.5]);
        assert_eq!(a.anchors[4].theta, FRAC_PI_2);
        assert_eq!(a.locate(7), (1, 1, 1));
    }
}
