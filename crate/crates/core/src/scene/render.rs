//! Ray casting of boxes over a ground plane, and the feature maps derived
//! from it.
//!
//! Every surface carries a texture that is affine in `(x/z, 1/z, y/z)` of
//! the left-camera point. On a plane `1/z` is itself affine in the
//! normalized image coordinates of either camera, so the texture is affine
//! in pixel coordinates on each face and bilinear resampling within a face
//! is exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Scene;
use crate::boxes::Box3D;
use crate::error::Result;
use crate::tensor::{bilinear_weights, Tensor};

/// Number of stereo feature channels.
pub const STEREO_CHANNELS: usize = 4;
/// Semantic channels: car, pedestrian, cyclist masks and shading.
pub const SEMANTIC_CHANNELS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Surface {
    Sky,
    Ground,
    /// Face `2 * axis + side` of box `object`; axes are length, width,
    /// height and side 0 is the negative end.
    Face { object: usize, face: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub point: [f64; 3],
    pub normal: [f64; 3],
    pub surface: Surface,
}

/// Box axes `[length, width, height]` as camera-frame unit vectors.
pub fn box_axes(b: &Box3D) -> [[f64; 3]; 3] {
    let (s, c) = b.theta.sin_cos();
    [[c, 0.0, -s], [s, 0.0, c], [0.0, 1.0, 0.0]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Entry distance and face of a ray against a box, if it is hit in front
/// of the origin.
fn intersect_box(b: &Box3D, origin: [f64; 3], dir: [f64; 3]) -> Option<(f64, usize)> {
    let axes = box_axes(b);
    let half = [0.5 * b.l, 0.5 * b.w, 0.5 * b.h];
    let rel = [origin[0] - b.x, origin[1] - b.y, origin[2] - b.z];
    let (mut t_near, mut t_far) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut face = 0;
    for a in 0..3 {
        let o = dot(rel, axes[a]);
        let d = dot(dir, axes[a]);
        if d.abs() < 1e-15 {
            if o.abs() > half[a] {
                return None;
            }
            continue;
        }
        let t1 = (-half[a] - o) / d;
        let t2 = (half[a] - o) / d;
        let (lo, hi, side) = if t1 < t2 { (t1, t2, 0) } else { (t2, t1, 1) };
        if lo > t_near {
            t_near = lo;
            face = 2 * a + side;
        }
        t_far = t_far.min(hi);
    }
    (t_near <= t_far && t_near > 1e-9).then_some((t_near, face))
}

/// First surface along `origin + t dir`, `t > 0`. `dir` must have unit z.
pub fn cast_ray(boxes: &[Box3D], ground_y: f64, origin: [f64; 3], dir: [f64; 3]) -> Hit {
    let mut best: Option<(f64, Surface, [f64; 3])> = None;
    for (i, b) in boxes.iter().enumerate() {
        if let Some((t, face)) = intersect_box(b, origin, dir) {
            if best.is_none_or(|(bt, _, _)| t < bt) {
                let axes = box_axes(b);
                let sign = if face % 2 == 0 { -1.0 } else { 1.0 };
                let n = axes[face / 2].map(|v| sign * v);
                best = Some((t, Surface::Face { object: i, face }, n));
            }
        }
    }
    if dir[1] > 1e-12 {
        let t = (ground_y - origin[1]) / dir[1];
        if t > 0.0 && best.is_none_or(|(bt, _, _)| t < bt) {
            best = Some((t, Surface::Ground, [0.0, -1.0, 0.0]));
        }
    }
    match best {
        Some((t, surface, normal)) => Hit {
            point: [origin[0] + t * dir[0], origin[1] + t * dir[1], origin[2] + t * dir[2]],
            normal,
            surface,
        },
        None => Hit {
            point: [f64::NAN; 3],
            normal: [0.0; 3],
            surface: Surface::Sky,
        },
    }
}

/// Ray-cast image for one camera.
#[derive(Clone, Debug, PartialEq)]
pub struct HitMap {
    pub height: usize,
    pub width: usize,
    pub hits: Vec<Hit>,
}

impl HitMap {
    pub fn get(&self, u: usize, v: usize) -> &Hit {
        &self.hits[v * self.width + u]
    }
}

/// Casts one ray per feature pixel from the camera at `origin_x` on the
/// baseline (0 for left, L for right).
pub fn cast_image(scene: &Scene, origin_x: f64) -> HitMap {
    let g = &scene.geometry;
    let [h, w] = g.image;
    let f = g.rig.feature_focal();
    let (cu, cv) = g.rig.principal_point();
    let mut hits = Vec::with_capacity(h * w);
    for v in 0..h {
        for u in 0..w {
            let dir = [(u as f64 - cu) / f, (v as f64 - cv) / f, 1.0];
            hits.push(cast_ray(&scene.boxes, g.ground_y, [origin_x, 0.0, 0.0], dir));
        }
    }
    HitMap { height: h, width: w, hits }
}

/// Ground-truth depth and validity. A pixel is valid when it hits a surface
/// whose depth lies inside the bin range.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthRender {
    pub depth: Tensor,
    pub valid: Tensor,
    pub left: HitMap,
}

pub fn render_depth(scene: &Scene) -> Result<DepthRender> {
    let left = cast_image(scene, 0.0);
    let b = &scene.geometry.binning;
    let [h, w] = scene.geometry.image;
    let mut depth = vec![0.0; h * w];
    let mut valid = vec![0.0; h * w];
    for (i, hit) in left.hits.iter().enumerate() {
        if hit.surface == Surface::Sky {
            continue;
        }
        let z = hit.point[2];
        if z >= b.z_min() && z <= b.z_max() {
            depth[i] = z;
            valid[i] = 1.0;
        }
    }
    Ok(DepthRender {
        depth: Tensor::new(vec![h, w], depth)?,
        valid: Tensor::new(vec![h, w], valid)?,
        left,
    })
}

/// Per-surface texture coefficients `[k0, kx, kinv, ky]` per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Texture {
    coeffs: Vec<[[f64; 4]; STEREO_CHANNELS]>,
    faces_per_object: usize,
}

impl Texture {
    pub fn for_scene(scene: &Scene) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(scene.seed ^ 0x7e47_0e5e_ed00_0001);
        let n = 1 + 6 * scene.boxes.len();
        let coeffs = (0..n)
            .map(|_| {
                std::array::from_fn(|_| {
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    [
                        rng.random_range(-1.0..1.0),
                        sign * rng.random_range(12.0..16.0),
                        rng.random_range(-2.0..2.0),
                        rng.random_range(-6.0..6.0),
                    ]
                })
            })
            .collect();
        Texture {
            coeffs,
            faces_per_object: 6,
        }
    }

    fn slot(&self, s: Surface) -> Option<usize> {
        match s {
            Surface::Sky => None,
            Surface::Ground => Some(0),
            Surface::Face { object, face } => Some(1 + object * self.faces_per_object + face),
        }
    }

    /// Feature vector at a left-camera point on surface `s`; zeros for sky.
    pub fn eval(&self, s: Surface, p: [f64; 3]) -> [f64; STEREO_CHANNELS] {
        let Some(slot) = self.slot(s) else {
            return [0.0; STEREO_CHANNELS];
        };
        let (a, inv, b) = (p[0] / p[2], 1.0 / p[2], p[1] / p[2]);
        self.coeffs[slot].map(|k| k[0] + k[1] * a + k[2] * inv + k[3] * b)
    }
}

/// Left and right stereo features `[C, H, W]` plus the right hit map. The
/// right image is rendered from its own camera, so occlusions are exact;
/// Gaussian noise of standard deviation `sigma` is added to the right
/// features only.
pub struct StereoRender {
    pub left: Tensor,
    pub right: Tensor,
    pub right_hits: HitMap,
}

pub fn render_stereo_features(scene: &Scene, depth: &DepthRender, sigma: f64) -> Result<StereoRender> {
    let tex = Texture::for_scene(scene);
    let [h, w] = scene.geometry.image;
    let plane = h * w;
    let mut fl = vec![0.0; STEREO_CHANNELS * plane];
    for (i, hit) in depth.left.hits.iter().enumerate() {
        for (c, v) in tex.eval(hit.surface, hit.point).iter().enumerate() {
            fl[c * plane + i] = *v;
        }
    }
    let right_hits = cast_image(scene, scene.geometry.rig.baseline());
    let mut fr = vec![0.0; STEREO_CHANNELS * plane];
    for (i, hit) in right_hits.hits.iter().enumerate() {
        for (c, v) in tex.eval(hit.surface, hit.point).iter().enumerate() {
            fr[c * plane + i] = *v;
        }
    }
    if sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(scene.seed ^ 0x0015_e000_0000_0002);
        let normal = Normal::new(0.0, sigma)
            .map_err(|e| crate::Error::InvalidArgument(format!("noise sigma: {e}")))?;
        for v in &mut fr {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(StereoRender {
        left: Tensor::new(vec![STEREO_CHANNELS, h, w], fl)?,
        right: Tensor::new(vec![STEREO_CHANNELS, h, w], fr)?,
        right_hits,
    })
}

/// 1 where the left pixel's surface point is seen by the right camera and
/// every bilinear tap at its true disparity lies in the image on the same
/// surface.
pub fn non_occluded_mask(scene: &Scene, depth: &DepthRender, right_hits: &HitMap) -> Tensor {
    let [h, w] = scene.geometry.image;
    let rig = &scene.geometry.rig;
    let mut mask = vec![0.0; h * w];
    for v in 0..h {
        for u in 0..w {
            let i = v * w + u;
            if depth.valid.data()[i] == 0.0 {
                continue;
            }
            let hit = depth.left.hits[i];
            let shift = rig.disparity_shift(hit.point[2]).expect("valid depth is positive");
            let x = u as f64 - shift;
            if x < 0.0 || x > (w - 1) as f64 {
                continue;
            }
            let mut ok = true;
            let mut any = false;
            bilinear_weights(h, w, u as f64 - shift, v as f64, |j, _| {
                any = true;
                ok &= right_hits.hits[j].surface == hit.surface;
            });
            if ok && any {
                mask[i] = 1.0;
            }
        }
    }
    Tensor::new(vec![h, w], mask).expect("mask shape")
}

/// Raw semantic maps `[4, H, W]`: one-hot class of the hit object and a
/// Lambertian shading term (ground 0.2, sky 0).
pub fn render_semantics(scene: &Scene, depth: &DepthRender) -> Result<Tensor> {
    let [h, w] = scene.geometry.image;
    let plane = h * w;
    let mut out = vec![0.0; SEMANTIC_CHANNELS * plane];
    let light = [0.3, -0.8, -0.52];
    for (i, hit) in depth.left.hits.iter().enumerate() {
        match hit.surface {
            Surface::Sky => {}
            Surface::Ground => out[3 * plane + i] = 0.2,
            Surface::Face { object, .. } => {
                let class = scene.boxes[object].class_id as usize;
                if class < 3 {
                    out[class * plane + i] = 1.0;
                }
                out[3 * plane + i] = 0.5 + 0.5 * dot(hit.normal, light).abs();
            }
        }
    }
    Tensor::new(vec![SEMANTIC_CHANNELS, h, w], out)
}

/// Visible 2D box `[u0, v0, u1, v1]` of each object in the left image, in
/// feature pixels (pixel extents, so a single pixel spans one unit).
pub fn visible_boxes_2d(depth: &DepthRender, n_objects: usize) -> Vec<Option<[f64; 4]>> {
    let mut out: Vec<Option<[f64; 4]>> = vec![None; n_objects];
    let w = depth.left.width;
    for (i, hit) in depth.left.hits.iter().enumerate() {
        if let Surface::Face { object, .. } = hit.surface {
            let (u, v) = ((i % w) as f64, (i / w) as f64);
            let r = out[object].get_or_insert([u - 0.5, v - 0.5, u + 0.5, v + 0.5]);
            r[0] = r[0].min(u - 0.5);
            r[1] = r[1].min(v - 0.5);
            r[2] = r[2].max(u + 0.5);
            r[3] = r[3].max(v + 0.5);
        }
    }
    out
}
