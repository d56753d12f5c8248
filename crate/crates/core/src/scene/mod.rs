//! Synthetic scenes: box placement, ideal stereo rendering, LiDAR-like
//! samples and analytic teacher features.

mod lidar;
mod render;
mod store;
mod teacher;

pub use lidar::{sample_lidar_points, voxelize, SparseOccupancy};
pub use render::{
    box_axes, cast_image, cast_ray, non_occluded_mask, render_depth, render_semantics,
    render_stereo_features, visible_boxes_2d, DepthRender, Hit, HitMap, StereoRender, Surface,
    Texture, SEMANTIC_CHANNELS, STEREO_CHANNELS,
};
pub use store::{
    generate_scene_set, load_scene, read_manifest, save_scene, Manifest, ManifestEntry,
    SceneData, MANIFEST_FILE,
};
pub use teacher::{
    bev_any, box_signed_distance, nonempty_sites, foreground_mask, teacher_bev, teacher_features, TeacherFeatures,
    TEACHER_BEV_CHANNELS, TEACHER_CHANNELS,
};

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boxes::{bev_iou_rotated, Box3D, ObjectClass};
use crate::error::{ensure, Error, Result};
use crate::geometry::{CameraRig, DepthBinning, VoxelGrid};

/// Camera, binning, grid and image size shared by every scene of a set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneGeometry {
    pub rig: CameraRig,
    pub binning: DepthBinning,
    pub grid: VoxelGrid,
    /// `[height, width]` in feature pixels.
    pub image: [usize; 2],
    /// Camera-frame y of the ground plane.
    pub ground_y: f64,
}

impl SceneGeometry {
    /// The desk-scale setup: 48x160 feature maps, 48 bins of 0.5 m from 2 m,
    /// 0.4 m voxels over x [-12, 12], y [-1, 3], z [2, 26].
    pub fn desk() -> Self {
        SceneGeometry {
            rig: CameraRig::new(372.0, 0.54, 79.5, 12.0, 4.0).expect("valid rig"),
            binning: DepthBinning::new(2.0, 0.5, 48).expect("valid binning"),
            grid: VoxelGrid::new([-12.0, 12.0], [-1.0, 3.0], [2.0, 26.0], [0.4; 3])
                .expect("valid grid"),
            image: [48, 160],
            ground_y: 1.65,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.image[0] > 0 && self.image[1] > 0,
            Config,
            "image size must be positive"
        );
        ensure!(
            self.binning.z_min() > 0.0,
            Config,
            "depth bins must start in front of the camera"
        );
        Ok(())
    }
}

impl Default for SceneGeometry {
    fn default() -> Self {
        Self::desk()
    }
}

/// Generation parameters for a scene set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub count: usize,
    pub seed: u64,
    /// Inclusive range of objects per scene.
    pub n_boxes: [usize; 2],
    /// Relative frequency of car, pedestrian, cyclist.
    pub class_mix: [f64; 3],
    pub noise_sigma: f64,
    pub points_per_box: usize,
    /// Snap yaws to multiples of pi/2 and front faces onto bin depths.
    pub bin_aligned: bool,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            count: 50,
            seed: 7,
            n_boxes: [2, 5],
            class_mix: [0.7, 0.15, 0.15],
            noise_sigma: 0.02,
            points_per_box: 400,
            bin_aligned: false,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.n_boxes[0] <= self.n_boxes[1],
            Config,
            "n_boxes range {:?} is inverted",
            self.n_boxes
        );
        ensure!(
            self.class_mix.iter().all(|w| *w >= 0.0 && w.is_finite())
                && self.class_mix.iter().sum::<f64>() > 0.0,
            Config,
            "class_mix must be non-negative with a positive sum"
        );
        ensure!(
            self.noise_sigma >= 0.0 && self.noise_sigma.is_finite(),
            Config,
            "noise_sigma must be non-negative"
        );
        Ok(())
    }

    /// Seed of scene `index` within the set.
    pub fn scene_seed(&self, index: usize) -> u64 {
        self.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add((index as u64 + 1).wrapping_mul(0xBF58_476D_1CE4_E5B9))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub seed: u64,
    pub geometry: SceneGeometry,
    pub boxes: Vec<Box3D>,
}

/// Uniform size ranges `[l, w, h]` per class.
fn size_range(class: ObjectClass) -> [[f64; 2]; 3] {
    match class {
        ObjectClass::Car => [[3.4, 4.4], [1.5, 1.8], [1.4, 1.7]],
        ObjectClass::Pedestrian => [[0.5, 0.9], [0.5, 0.7], [1.55, 1.85]],
        ObjectClass::Cyclist => [[1.5, 1.9], [0.5, 0.7], [1.55, 1.8]],
    }
}

const MAX_TRIES: usize = 1000;
const MAX_BEV_OVERLAP: f64 = 0.05;
const YAW_JITTER: f64 = 0.15;

fn pick_class(rng: &mut ChaCha8Rng, mix: &[f64; 3]) -> ObjectClass {
    let total: f64 = mix.iter().sum();
    let mut r = rng.random::<f64>() * total;
    for (i, w) in mix.iter().enumerate() {
        if r < *w {
            return ObjectClass::ALL[i];
        }
        r -= *w;
    }
    ObjectClass::ALL[mix.iter().rposition(|w| *w > 0.0).unwrap_or(0)]
}

/// Half extent of a footprint along camera z.
fn z_half_extent(l: f64, w: f64, theta: f64) -> f64 {
    0.5 * (l * theta.sin().abs() + w * theta.cos().abs())
}

fn inside_area(b: &Box3D, g: &SceneGeometry) -> bool {
    let [x0, x1] = g.grid.x_range();
    let [z0, z1] = g.grid.z_range();
    let [y0, y1] = g.grid.y_range();
    let [top, bottom] = b.y_extent();
    top >= y0
        && bottom <= y1
        && b.bev()
            .corners()
            .iter()
            .all(|p| p[0] >= x0 && p[0] <= x1 && p[1] >= z0 && p[1] <= z1)
}

/// Draws one scene. Objects rest on the ground with road-aligned yaws, have
/// centers projecting into the image and overlap earlier objects by less
/// than 0.05 BEV IoU.
pub fn gen_scene(id: &str, seed: u64, cfg: &SceneConfig, geometry: &SceneGeometry) -> Result<Scene> {
    cfg.validate()?;
    geometry.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(cfg.n_boxes[0]..=cfg.n_boxes[1]);
    let g = geometry;
    let [_, width] = g.image;
    let f = g.rig.feature_focal();
    let (cu, _) = g.rig.principal_point();
    let z_lo = g.binning.z_min() + 2.0;
    let z_hi = (g.binning.z_max().min(g.grid.z_range()[1]) - 3.0).max(z_lo + 1e-6);
    let mut boxes: Vec<Box3D> = Vec::with_capacity(n);
    for index in 0..n {
        let class = pick_class(&mut rng, &cfg.class_mix);
        let ranges = size_range(class);
        let mut placed = None;
        for _ in 0..MAX_TRIES {
            let size = ranges.map(|[a, b]| rng.random_range(a..b));
            let quarter = rng.random_range(0..4) as f64;
            let jitter = if cfg.bin_aligned {
                0.0
            } else {
                rng.random_range(-YAW_JITTER..YAW_JITTER)
            };
            let yaw = quarter * FRAC_PI_2 - PI + jitter;
            let mut z = rng.random_range(z_lo..z_hi);
            if cfg.bin_aligned {
                let e = z_half_extent(size[0], size[1], yaw);
                let front = g.binning.bin_of_depth(z - e).round().max(0.0) as usize;
                z = g.binning.depth_unchecked(front) + e;
            }
            let u = rng.random_range(0.1 * width as f64..0.9 * width as f64);
            let x = (u - cu) * z / f;
            let y = g.ground_y - 0.5 * size[2];
            let b = Box3D::new([x, y, z], size, yaw, class.id())?;
            if !inside_area(&b, g) || b.z <= g.binning.z_min() + 1.0 {
                continue;
            }
            let mut clear = true;
            for other in &boxes {
                if bev_iou_rotated(&b.bev(), &other.bev())? >= MAX_BEV_OVERLAP {
                    clear = false;
                    break;
                }
            }
            if clear {
                placed = Some(b);
                break;
            }
        }
        boxes.push(placed.ok_or(Error::Placement {
            index,
            tries: MAX_TRIES,
        })?);
    }
    Ok(Scene {
        id: id.to_string(),
        seed,
        geometry: *geometry,
        boxes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_scene() {
        let cfg = SceneConfig::default();
        let g = SceneGeometry::desk();
        let a = gen_scene("a", 11, &cfg, &g).unwrap();
        let b = gen_scene("a", 11, &cfg, &g).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn empty_range_gives_empty_scene() {
        let cfg = SceneConfig {
            n_boxes: [0, 0],
            ..SceneConfig::default()
        };
        assert!(gen_scene("e", 3, &cfg, &SceneGeometry::desk()).unwrap().boxes.is_empty());
    }

    #[test]
    fn bin_aligned_fronts_sit_on_bins() {
        let cfg = SceneConfig {
            bin_aligned: true,
            ..SceneConfig::default()
        };
        let g = SceneGeometry::desk();
        let s = gen_scene("b", 5, &cfg, &g).unwrap();
        for b in &s.boxes {
            let front = b.z - z_half_extent(b.l, b.w, b.theta);
            let w = g.binning.bin_of_depth(front);
            assert!((w - w.round()).abs() < 1e-9);
        }
    }

    #[test]
    fn desk_grid_counts() {
        assert_eq!(SceneGeometry::desk().grid.counts(), [60, 10, 60]);
    }
}
