//! LiDAR-like point samples on visible box surfaces and their voxelization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::render::{box_axes, cast_ray, Surface};
use super::Scene;
use crate::error::Result;
use crate::geometry::VoxelGrid;
use crate::tensor::Tensor;

/// Binary occupancy `[nz, ny, nx]` over a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseOccupancy {
    pub grid: VoxelGrid,
    pub tensor: Tensor,
}

impl SparseOccupancy {
    pub fn count(&self) -> usize {
        self.tensor.data().iter().filter(|v| **v != 0.0).count()
    }
}

/// Draws `points_per_box` candidate points per box, uniform over its surface
/// area, and keeps those seen by the left camera with probability
/// `sqrt(z_min / z)`.
pub fn sample_lidar_points(scene: &Scene, points_per_box: usize) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed ^ 0x11da_0000_0000_0003);
    let z_min = scene.geometry.binning.z_min();
    let mut points = Vec::new();
    for (object, b) in scene.boxes.iter().enumerate() {
        let axes = box_axes(b);
        let half = [0.5 * b.l, 0.5 * b.w, 0.5 * b.h];
        // face areas for axes length, width, height
        let areas = [b.w * b.h, b.l * b.h, b.l * b.w];
        let total = 2.0 * areas.iter().sum::<f64>();
        for _ in 0..points_per_box {
            let mut r = rng.random::<f64>() * total;
            let mut face = 5;
            for f in 0..6 {
                if r < areas[f / 2] {
                    face = f;
                    break;
                }
                r -= areas[f / 2];
            }
            let axis = face / 2;
            let sign = if face % 2 == 0 { -1.0 } else { 1.0 };
            let mut local = [0.0; 3];
            for (a, l) in local.iter_mut().enumerate() {
                *l = if a == axis {
                    sign * half[a]
                } else {
                    rng.random_range(-half[a]..half[a])
                };
            }
            let keep: f64 = rng.random();
            let p: [f64; 3] = std::array::from_fn(|c| {
                b.center()[c] + (0..3).map(|a| local[a] * axes[a][c]).sum::<f64>()
            });
            if p[2] <= 0.0 || keep >= (z_min / p[2]).min(1.0).sqrt() {
                continue;
            }
            let dir = [p[0] / p[2], p[1] / p[2], 1.0];
            let hit = cast_ray(&scene.boxes, scene.geometry.ground_y, [0.0; 3], dir);
            if hit.surface == (Surface::Face { object, face }) && (hit.point[2] - p[2]).abs() < 1e-6 {
                points.push(p);
            }
        }
    }
    points
}

/// Marks every voxel that contains at least one point.
pub fn voxelize(points: &[[f64; 3]], grid: &VoxelGrid) -> Result<SparseOccupancy> {
    let mut data = vec![0.0; grid.num_voxels()];
    for p in points {
        if let Some([i, j, k]) = grid.voxel_of(*p) {
            data[grid.flat_index(i, j, k)] = 1.0;
        }
    }
    Ok(SparseOccupancy {
        grid: *grid,
        tensor: Tensor::new(grid.volume_shape().to_vec(), data)?,
    })
}
