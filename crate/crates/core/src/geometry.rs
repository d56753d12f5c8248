//! Camera, depth-bin and voxel-grid coordinate algebra.
//!
//! Camera frame: x right, y down, z forward. Pixel coordinates are feature-map
//! pixels with element centers on integers.

use serde::{Deserialize, Serialize};

use crate::boxes::Box3D;
use crate::error::{ensure, Error, Result};

/// Stereo rig. `focal` is the input-image focal length in pixels; feature-map
/// intrinsics divide it by `stride`. The principal point is already at
/// feature scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RigRecord", into = "RigRecord")]
pub struct CameraRig {
    focal: f64,
    baseline: f64,
    cu: f64,
    cv: f64,
    stride: f64,
}

#[derive(Serialize, Deserialize)]
struct RigRecord {
    focal: f64,
    baseline: f64,
    cu: f64,
    cv: f64,
    stride: f64,
}

impl TryFrom<RigRecord> for CameraRig {
    type Error = Error;
    fn try_from(r: RigRecord) -> Result<Self> {
        CameraRig::new(r.focal, r.baseline, r.cu, r.cv, r.stride)
    }
}

impl From<CameraRig> for RigRecord {
    fn from(r: CameraRig) -> Self {
        RigRecord {
            focal: r.focal,
            baseline: r.baseline,
            cu: r.cu,
            cv: r.cv,
            stride: r.stride,
        }
    }
}

impl CameraRig {
    pub fn new(focal: f64, baseline: f64, cu: f64, cv: f64, stride: f64) -> Result<Self> {
        ensure!(focal > 0.0, InvalidArgument, "focal length must be positive");
        ensure!(baseline > 0.0, InvalidArgument, "baseline must be positive");
        ensure!(stride >= 1.0, InvalidArgument, "feature stride must be >= 1");
        ensure!(
            cu.is_finite() && cv.is_finite(),
            InvalidArgument,
            "principal point must be finite"
        );
        Ok(CameraRig {
            focal,
            baseline,
            cu,
            cv,
            stride,
        })
    }

    pub fn focal(&self) -> f64 {
        self.focal
    }

    pub fn baseline(&self) -> f64 {
        self.baseline
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.cu, self.cv)
    }

    pub fn stride(&self) -> f64 {
        self.stride
    }

    /// Focal length in feature pixels.
    pub fn feature_focal(&self) -> f64 {
        self.focal / self.stride
    }

    /// Horizontal shift in feature pixels between the left pixel and its
    /// right-image match at depth `z`: `f L / (z s_F)`.
    pub fn disparity_shift(&self, z: f64) -> Result<f64> {
        ensure!(z > 0.0, InvalidArgument, "depth must be positive, got {z}");
        Ok(self.focal * self.baseline / (z * self.stride))
    }

    pub fn project_point(&self, p: [f64; 3]) -> Result<[f64; 2]> {
        let [x, y, z] = p;
        ensure!(z > 0.0, InvalidArgument, "point behind the camera (z = {z})");
        let f = self.feature_focal();
        Ok([f * x / z + self.cu, f * y / z + self.cv])
    }

    pub fn back_project(&self, u: f64, v: f64, z: f64) -> [f64; 3] {
        let f = self.feature_focal();
        [(u - self.cu) * z / f, (v - self.cv) * z / f, z]
    }

    pub fn reproject_box_center(&self, b: &Box3D) -> Result<[f64; 2]> {
        self.project_point([b.x, b.y, b.z])
    }
}

/// Uniform-in-depth bins: `d(w) = w v_d + z_min` for `w` in `0..count`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BinningRecord", into = "BinningRecord")]
pub struct DepthBinning {
    z_min: f64,
    interval: f64,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct BinningRecord {
    z_min: f64,
    interval: f64,
    count: usize,
}

impl TryFrom<BinningRecord> for DepthBinning {
    type Error = Error;
    fn try_from(r: BinningRecord) -> Result<Self> {
        DepthBinning::new(r.z_min, r.interval, r.count)
    }
}

impl From<DepthBinning> for BinningRecord {
    fn from(b: DepthBinning) -> Self {
        BinningRecord {
            z_min: b.z_min,
            interval: b.interval,
            count: b.count,
        }
    }
}

impl DepthBinning {
    pub fn new(z_min: f64, interval: f64, count: usize) -> Result<Self> {
        ensure!(interval > 0.0, InvalidArgument, "depth interval must be positive");
        ensure!(count >= 2, InvalidArgument, "need at least two depth bins");
        ensure!(z_min.is_finite(), InvalidArgument, "z_min must be finite");
        Ok(DepthBinning {
            z_min,
            interval,
            count,
        })
    }

    pub fn z_min(&self) -> f64 {
        self.z_min
    }

    pub fn interval(&self) -> f64 {
        self.interval
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Depth of the last bin.
    pub fn z_max(&self) -> f64 {
        self.z_min + (self.count - 1) as f64 * self.interval
    }

    pub fn depth_of_bin(&self, w: usize) -> Result<f64> {
        if w >= self.count {
            return Err(Error::OutOfRange(format!(
                "depth bin {w} of {}",
                self.count
            )));
        }
        Ok(self.depth_unchecked(w))
    }

    pub(crate) fn depth_unchecked(&self, w: usize) -> f64 {
        w as f64 * self.interval + self.z_min
    }

    /// Fractional bin index `(z - z_min) / v_d`; not clamped.
    pub fn bin_of_depth(&self, z: f64) -> f64 {
        (z - self.z_min) / self.interval
    }

    /// True when the bins reach at least `z_far`.
    pub fn covers(&self, z_far: f64) -> bool {
        self.z_max() + 1e-9 >= z_far - self.interval
    }
}

/// Axis-aligned grid of equal voxels over the detection area. Counts are
/// `[nx, ny, nz]`; volumes laid out over the grid are `[.., nz, ny, nx]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRecord", into = "GridRecord")]
pub struct VoxelGrid {
    x_range: [f64; 2],
    y_range: [f64; 2],
    z_range: [f64; 2],
    voxel_size: [f64; 3],
    counts: [usize; 3],
}

#[derive(Serialize, Deserialize)]
struct GridRecord {
    x_range: [f64; 2],
    y_range: [f64; 2],
    z_range: [f64; 2],
    voxel_size: [f64; 3],
}

impl TryFrom<GridRecord> for VoxelGrid {
    type Error = Error;
    fn try_from(r: GridRecord) -> Result<Self> {
        VoxelGrid::new(r.x_range, r.y_range, r.z_range, r.voxel_size)
    }
}

impl From<VoxelGrid> for GridRecord {
    fn from(g: VoxelGrid) -> Self {
        GridRecord {
            x_range: g.x_range,
            y_range: g.y_range,
            z_range: g.z_range,
            voxel_size: g.voxel_size,
        }
    }
}

impl VoxelGrid {
    pub fn new(
        x_range: [f64; 2],
        y_range: [f64; 2],
        z_range: [f64; 2],
        voxel_size: [f64; 3],
    ) -> Result<Self> {
        let ranges = [x_range, y_range, z_range];
        let mut counts = [0usize; 3];
        for axis in 0..3 {
            let [lo, hi] = ranges[axis];
            let s = voxel_size[axis];
            ensure!(s > 0.0, InvalidArgument, "voxel size on axis {axis} must be positive");
            ensure!(hi > lo, InvalidArgument, "empty range on axis {axis}");
            let n = ((hi - lo) / s).round();
            ensure!(
                n >= 1.0 && ((hi - lo) - n * s).abs() <= 1e-9 * (hi - lo).abs().max(1.0),
                InvalidArgument,
                "range [{lo}, {hi}] on axis {axis} is not a multiple of voxel size {s}"
            );
            counts[axis] = n as usize;
        }
        Ok(VoxelGrid {
            x_range,
            y_range,
            z_range,
            voxel_size,
            counts,
        })
    }

    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn voxel_size(&self) -> [f64; 3] {
        self.voxel_size
    }

    pub fn x_range(&self) -> [f64; 2] {
        self.x_range
    }

    pub fn y_range(&self) -> [f64; 2] {
        self.y_range
    }

    pub fn z_range(&self) -> [f64; 2] {
        self.z_range
    }

    pub fn minimum(&self) -> [f64; 3] {
        [self.x_range[0], self.y_range[0], self.z_range[0]]
    }

    pub fn num_voxels(&self) -> usize {
        self.counts.iter().product()
    }

    /// Shape `[nz, ny, nx]` of a single-channel volume over the grid.
    pub fn volume_shape(&self) -> [usize; 3] {
        let [nx, ny, nz] = self.counts;
        [nz, ny, nx]
    }

    /// Flat offset of voxel `(i, j, k)` in a `[nz, ny, nx]` layout.
    pub fn flat_index(&self, i: usize, j: usize, k: usize) -> usize {
        let [nx, ny, _] = self.counts;
        (k * ny + j) * nx + i
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Result<[f64; 3]> {
        let idx = [i, j, k];
        for axis in 0..3 {
            if idx[axis] >= self.counts[axis] {
                return Err(Error::OutOfRange(format!(
                    "voxel index {} on axis {axis} of {}",
                    idx[axis], self.counts[axis]
                )));
            }
        }
        Ok(self.center_unchecked(i, j, k))
    }

    pub(crate) fn center_unchecked(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let min = self.minimum();
        let s = self.voxel_size;
        [
            min[0] + (i as f64 + 0.5) * s[0],
            min[1] + (j as f64 + 0.5) * s[1],
            min[2] + (k as f64 + 0.5) * s[2],
        ]
    }

    /// Voxel containing `p`, as `floor((p - min) / size)` per axis.
    pub fn voxel_of(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        let min = self.minimum();
        let mut idx = [0usize; 3];
        for axis in 0..3 {
            let f = ((p[axis] - min[axis]) / self.voxel_size[axis]).floor();
            if !(f >= 0.0 && f < self.counts[axis] as f64) {
                return None;
            }
            idx[axis] = f as usize;
        }
        Some(idx)
    }
}
