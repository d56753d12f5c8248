//! Analytic teacher features: occupancy, signed distance, surface normal
//! and offset to the owning box center, plus the foreground masks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::lidar::SparseOccupancy;
use super::render::box_axes;
use super::Scene;
use crate::boxes::Box3D;
use crate::error::{ensure, Result};
use crate::geometry::VoxelGrid;
use crate::tensor::Tensor;
use crate::volumes::collapse_tensor_to_bev;

pub const TEACHER_CHANNELS: usize = 8;
pub const TEACHER_BEV_CHANNELS: usize = 32;
/// Features are kept within this many voxels of a box surface.
const DILATION_VOXELS: f64 = 3.0;
const BEV_MIX_SEED: u64 = 0x7eac_4e00_0000_0b3f;

#[derive(Clone, Debug, PartialEq)]
pub struct TeacherFeatures {
    /// `[8, nz, ny, nx]`.
    pub voxel: Tensor,
    /// `[32, nz, nx]`, after the fixed projection and ReLU.
    pub bev: Tensor,
}

/// Signed distance from `p` to the surface of `b` (negative inside) and the
/// outward unit normal of the nearest surface point.
pub fn box_signed_distance(b: &Box3D, p: [f64; 3]) -> (f64, [f64; 3]) {
    let axes = box_axes(b);
    let half = [0.5 * b.l, 0.5 * b.w, 0.5 * b.h];
    let rel = [p[0] - b.x, p[1] - b.y, p[2] - b.z];
    let local: [f64; 3] =
        std::array::from_fn(|a| rel[0] * axes[a][0] + rel[1] * axes[a][1] + rel[2] * axes[a][2]);
    let q: [f64; 3] = std::array::from_fn(|a| local[a].abs() - half[a]);
    let sign = |x: f64| if x >= 0.0 { 1.0 } else { -1.0 };
    let outside: [f64; 3] = std::array::from_fn(|a| q[a].max(0.0) * sign(local[a]));
    let out_len = outside.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (dist, n_local) = if out_len > 0.0 {
        (out_len, outside.map(|v| v / out_len))
    } else {
        let mut a = 0;
        for k in 1..3 {
            if q[k] > q[a] {
                a = k;
            }
        }
        let mut n = [0.0; 3];
        n[a] = sign(local[a]);
        (q[a], n)
    };
    let normal = std::array::from_fn(|c| (0..3).map(|a| n_local[a] * axes[a][c]).sum());
    (dist, normal)
}

/// Teacher volume and its BEV projection. Voxels farther than three voxels
/// from every box are zero.
pub fn teacher_features(scene: &Scene, occupancy: &SparseOccupancy) -> Result<TeacherFeatures> {
    let grid = scene.geometry.grid;
    ensure!(
        occupancy.grid == grid,
        Shape,
        "occupancy grid differs from the scene grid"
    );
    let [nx, ny, nz] = grid.counts();
    let plane = grid.num_voxels();
    let reach = DILATION_VOXELS * grid.voxel_size().iter().cloned().fold(0.0, f64::max);
    let mut data = vec![0.0; TEACHER_CHANNELS * plane];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let c = grid.center_unchecked(i, j, k);
                let mut best: Option<(f64, [f64; 3], usize)> = None;
                for (o, b) in scene.boxes.iter().enumerate() {
                    let (d, n) = box_signed_distance(b, c);
                    if best.is_none_or(|(bd, _, _)| d < bd) {
                        best = Some((d, n, o));
                    }
                }
                let Some((d, n, o)) = best else { continue };
                if d > reach {
                    continue;
                }
                let idx = grid.flat_index(i, j, k);
                let b = &scene.boxes[o];
                let values = [
                    occupancy.tensor.data()[idx],
                    d.clamp(-reach, reach),
                    n[0],
                    n[1],
                    n[2],
                    b.x - c[0],
                    b.y - c[1],
                    b.z - c[2],
                ];
                for (ch, v) in values.iter().enumerate() {
                    data[ch * plane + idx] = *v;
                }
            }
        }
    }
    let voxel = Tensor::new(vec![TEACHER_CHANNELS, nz, ny, nx], data)?;
    let bev = teacher_bev(&voxel)?;
    Ok(TeacherFeatures { voxel, bev })
}

/// Height collapse followed by a fixed seeded projection to 32 channels and
/// a ReLU. The projection has no bias, so zero columns stay zero.
pub fn teacher_bev(voxel: &Tensor) -> Result<Tensor> {
    let collapsed = collapse_tensor_to_bev(voxel)?;
    let cin = collapsed.shape()[0];
    let per = collapsed.numel() / cin;
    let mut rng = ChaCha8Rng::seed_from_u64(BEV_MIX_SEED);
    let normal = Normal::new(0.0, 1.0 / (cin as f64).sqrt()).expect("positive std");
    let weights: Vec<f64> = (0..TEACHER_BEV_CHANNELS * cin).map(|_| normal.sample(&mut rng)).collect();
    let x = collapsed.data();
    let mut out = vec![0.0; TEACHER_BEV_CHANNELS * per];
    for o in 0..TEACHER_BEV_CHANNELS {
        let row = &mut out[o * per..(o + 1) * per];
        for i in 0..cin {
            let w = weights[o * cin + i];
            for (r, xv) in row.iter_mut().zip(&x[i * per..(i + 1) * per]) {
                *r += w * xv;
            }
        }
        for r in row.iter_mut() {
            *r = r.max(0.0);
        }
    }
    let mut shape = collapsed.shape().to_vec();
    shape[0] = TEACHER_BEV_CHANNELS;
    Tensor::new(shape, out)
}

/// `M_fg` over voxels `[nz, ny, nx]` (center inside any box) and over BEV
/// cells `[nz, nx]` (any over height).
pub fn foreground_mask(scene: &Scene, grid: &VoxelGrid) -> Result<(Tensor, Tensor)> {
    let [nx, ny, nz] = grid.counts();
    let mut voxel = vec![0.0; grid.num_voxels()];
    let mut bev = vec![0.0; nz * nx];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let c = grid.center_unchecked(i, j, k);
                if scene.boxes.iter().any(|b| b.contains(c)) {
                    voxel[grid.flat_index(i, j, k)] = 1.0;
                    bev[k * nx + i] = 1.0;
                }
            }
        }
    }
    Ok((
        Tensor::new(vec![nz, ny, nx], voxel)?,
        Tensor::new(vec![nz, nx], bev)?,
    ))
}

/// Any-over-height reduction of a `[nz, ny, nx]` binary volume.
pub fn bev_any(volume: &Tensor) -> Result<Tensor> {
    ensure!(volume.ndim() == 3, Shape, "expected [nz, ny, nx], got {:?}", volume.shape());
    let [nz, ny, nx] = [volume.shape()[0], volume.shape()[1], volume.shape()[2]];
    let d = volume.data();
    let mut out = vec![0.0; nz * nx];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if d[(k * ny + j) * nx + i] != 0.0 {
                    out[k * nx + i] = 1.0;
                }
            }
        }
    }
    Tensor::new(vec![nz, nx], out)
}

/// 1 where any channel of a `[C, ...]` feature map is nonzero, shape `[...]`.
pub fn nonempty_sites(features: &Tensor) -> Result<Tensor> {
    ensure!(features.ndim() >= 2, Shape, "expected [C, ...], got {:?}", features.shape());
    let c = features.shape()[0];
    let per = features.numel() / c;
    let mut out = vec![0.0; per];
    for ch in features.data().chunks(per.max(1)).take(c) {
        for (o, v) in out.iter_mut().zip(ch) {
            if *v != 0.0 {
                *o = 1.0;
            }
        }
    }
    Tensor::new(features.shape()[1..].to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{voxelize, SceneGeometry};

    fn scene_with(b: Box3D) -> Scene {
        Scene {
            id: "t".into(),
            seed: 1,
            geometry: SceneGeometry::desk(),
            boxes: vec![b],
        }
    }

    #[test]
    fn face_center_has_zero_distance_and_face_normal() {
        let b = Box3D::new([0.2, 0.6, 10.2], [4.0, 1.6, 1.6], 0.0, 0).unwrap();
        let (d, n) = box_signed_distance(&b, [0.2, 0.6, 9.4]);
        assert!(d.abs() < 1e-12);
        assert_eq!(n, [0.0, 0.0, -1.0]);
    }

    #[test]
    fn center_voxel_is_foreground_with_zero_offset() {
        let g = SceneGeometry::desk().grid;
        let c = g.voxel_center(30, 4, 20).unwrap();
        let s = scene_with(Box3D::new(c, [3.9, 1.6, 1.56], 0.3, 0).unwrap());
        let (fg, bev) = foreground_mask(&s, &g).unwrap();
        let idx = g.flat_index(30, 4, 20);
        assert_eq!(fg.data()[idx], 1.0);
        assert_eq!(bev.data()[20 * 60 + 30], 1.0);
        let occ = voxelize(&[], &g).unwrap();
        let t = teacher_features(&s, &occ).unwrap();
        let plane = g.num_voxels();
        for ch in 5..8 {
            assert_eq!(t.voxel.data()[ch * plane + idx], 0.0);
        }
    }

    #[test]
    fn far_voxels_are_zero_and_normals_unit() {
        let g = SceneGeometry::desk().grid;
        let s = scene_with(Box3D::new([0.0, 0.8, 12.0], [3.9, 1.6, 1.56], 0.7, 0).unwrap());
        let occ = voxelize(&[], &g).unwrap();
        let t = teacher_features(&s, &occ).unwrap();
        let plane = g.num_voxels();
        let d = t.voxel.data();
        let mut nonzero = 0;
        for p in 0..plane {
            let n2: f64 = (2..5).map(|c| d[c * plane + p].powi(2)).sum();
            if n2 == 0.0 {
                assert!((0..8).all(|c| d[c * plane + p] == 0.0));
            } else {
                nonzero += 1;
                assert!((n2 - 1.0).abs() < 1e-12);
            }
        }
        assert!(nonzero > 0 && nonzero < plane);
        assert_eq!(t.bev.shape(), &[32, 60, 60]);
    }

    #[test]
    fn nonempty_sites_marks_any_nonzero_channel() {
        let f = Tensor::new(vec![2, 1, 3], vec![0.0, 1.0, 0.0, 0.0, 0.0, -2.0]).unwrap();
        let m = nonempty_sites(&f).unwrap();
        assert_eq!(m.shape(), &[1, 3]);
        assert_eq!(m.data(), &[0.0, 1.0, 1.0]);
    }

    #[test]
    fn aggregated_teacher_covers_box_centers() {
        let g = SceneGeometry::desk().grid;
        let s = scene_with(Box3D::new([0.0, 0.8, 12.0], [3.9, 1.6, 1.56], 0.7, 0).unwrap());
        let occ = voxelize(&[], &g).unwrap();
        let t = teacher_features(&s, &occ).unwrap();
        let (_, fg_bev) = foreground_mask(&s, &g).unwrap();
        let sp = nonempty_sites(&t.bev).unwrap();
        let covered = fg_bev.data().iter().zip(sp.data()).filter(|(f, s)| **f > 0.0 && **s > 0.0).count();
        let fg = fg_bev.data().iter().filter(|f| **f > 0.0).count();
        assert!(fg > 0 && covered * 10 >= fg * 9, "{covered} of {fg}");
    }
}
