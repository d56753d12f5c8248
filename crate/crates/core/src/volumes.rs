//! Plane-sweep stereo volume, depth distribution, voxel volume and BEV
//! collapse, all recorded on a [`Tape`].
//!
//! Stereo-space volumes are laid out `[C, D, H, W]` (channel, depth bin, row,
//! column); voxel volumes are `[C, Nz, Ny, Nx]`.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use crate::error::{ensure, Result};
use crate::geometry::{CameraRig, DepthBinning, VoxelGrid};
use crate::tensor::{bilinear_weights, trilinear_weights, LinearMap, LinearMapBuilder, Tape, Tensor, Var};

/// `[2C, D, H, W]` concatenation of left features and disparity-shifted right
/// features.
#[derive(Clone, Copy, Debug)]
pub struct StereoVolume {
    pub var: Var,
    pub rig: CameraRig,
    pub binning: DepthBinning,
}

/// `[D, H, W]` per-pixel probabilities over depth bins.
#[derive(Clone, Copy, Debug)]
pub struct DepthDistribution {
    pub var: Var,
}

/// `[C3, Nz, Ny, Nx]` voxel features.
#[derive(Clone, Copy, Debug)]
pub struct Volume3D {
    pub var: Var,
    pub grid: VoxelGrid,
}

/// `[C3 * Ny, Nz, Nx]` bird's-eye features.
#[derive(Clone, Copy, Debug)]
pub struct BevFeature {
    pub var: Var,
}

/// Precomputed sampling maps for the plane sweep over one image size; the
/// maps act on a single channel and are reused across scenes.
#[derive(Clone, Debug)]
pub struct StereoSampler {
    rig: CameraRig,
    binning: DepthBinning,
    height: usize,
    width: usize,
    left: LinearMap,
    right: LinearMap,
    stacked: RefCell<BTreeMap<(bool, usize), Rc<LinearMap>>>,
}

impl StereoSampler {
    pub fn new(rig: CameraRig, binning: DepthBinning, height: usize, width: usize) -> Result<Self> {
        ensure!(height > 0 && width > 0, Shape, "empty feature map");
        let plane = height * width;
        let depth = binning.count();
        let mut left = LinearMapBuilder::with_capacity(plane, depth * plane, depth * plane);
        let mut right = LinearMapBuilder::with_capacity(plane, depth * plane, 2 * depth * plane);
        for w in 0..depth {
            let shift = rig.disparity_shift(binning.depth_unchecked(w))?;
            for v in 0..height {
                for u in 0..width {
                    left.copy_row(v * width + u);
                    bilinear_weights(height, width, u as f64 - shift, v as f64, |i, wt| {
                        right.tap(i, wt)
                    });
                    right.end_row();
                }
            }
        }
        Ok(StereoSampler {
            rig,
            binning,
            height,
            width,
            left: left.build(),
            right: right.build(),
            stacked: RefCell::new(BTreeMap::new()),
        })
    }

    /// Left (`right == false`) or right map repeated over `channels`.
    fn stacked(&self, right: bool, channels: usize) -> Rc<LinearMap> {
        if let Some(m) = self.stacked.borrow().get(&(right, channels)) {
            return Rc::clone(m);
        }
        let base = if right { &self.right } else { &self.left };
        let map = Rc::new(block_diagonal(base, channels));
        self.stacked.borrow_mut().insert((right, channels), Rc::clone(&map));
        map
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

/// Builds the plane-sweep volume from features `[C, H, W]`.
pub fn build_stereo_volume(
    tape: &mut Tape,
    f_left: Var,
    f_right: Var,
    rig: &CameraRig,
    binning: &DepthBinning,
) -> Result<StereoVolume> {
    let shape = tape.shape(f_left).to_vec();
    ensure!(
        shape.len() == 3,
        Shape,
        "stereo features must be [C, H, W], got {:?}",
        shape
    );
    let sampler = StereoSampler::new(*rig, *binning, shape[1], shape[2])?;
    build_stereo_volume_with(tape, f_left, f_right, &sampler)
}

pub fn build_stereo_volume_with(
    tape: &mut Tape,
    f_left: Var,
    f_right: Var,
    sampler: &StereoSampler,
) -> Result<StereoVolume> {
    let shape = tape.shape(f_left).to_vec();
    ensure!(
        tape.shape(f_right) == shape.as_slice(),
        Shape,
        "left features {:?} and right features {:?} differ",
        shape,
        tape.shape(f_right)
    );
    ensure!(
        shape.len() == 3 && shape[1] == sampler.height && shape[2] == sampler.width,
        Shape,
        "features {:?} do not match sampler size {}x{}",
        shape,
        sampler.height,
        sampler.width
    );
    let c = shape[0];
    let out_shape = [c, sampler.binning.count(), sampler.height, sampler.width];
    let left = tape.gather_shared(f_left, sampler.stacked(false, c), &out_shape)?;
    let right = tape.gather_shared(f_right, sampler.stacked(true, c), &out_shape)?;
    let var = tape.concat(&[left, right], 0)?;
    Ok(StereoVolume {
        var,
        rig: sampler.rig,
        binning: sampler.binning,
    })
}

/// Softmax of `[D, H, W]` logits over the depth axis.
pub fn depth_distribution(tape: &mut Tape, logits: Var) -> Result<DepthDistribution> {
    ensure!(
        tape.shape(logits).len() == 3,
        Shape,
        "depth logits must be [D, H, W], got {:?}",
        tape.shape(logits)
    );
    Ok(DepthDistribution {
        var: tape.softmax_axis(logits, 0)?,
    })
}

/// Per-voxel sampling maps into stereo space and image space.
#[derive(Clone, Debug)]
pub struct VoxelSampler {
    grid: VoxelGrid,
    dims: [usize; 3],
    to_stereo: LinearMap,
    to_image: LinearMap,
    /// Channel-stacked maps keyed by (kind, channels), built on first use.
    stacked: RefCell<BTreeMap<(MapKind, usize), Rc<LinearMap>>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum MapKind {
    Stereo,
    Image,
    Probability,
}

impl VoxelSampler {
    pub fn new(
        grid: VoxelGrid,
        rig: &CameraRig,
        binning: &DepthBinning,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        let dims = [binning.count(), height, width];
        let [nx, ny, nz] = grid.counts();
        let n = grid.num_voxels();
        let mut to_stereo = LinearMapBuilder::with_capacity(dims.iter().product(), n, 8 * n);
        let mut to_image = LinearMapBuilder::with_capacity(height * width, n, 4 * n);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let p = grid.center_unchecked(i, j, k);
                    if p[2] > 0.0 {
                        let [u, v] = rig.project_point(p)?;
                        let w = binning.bin_of_depth(p[2]);
                        trilinear_weights(dims, w, v, u, |idx, wt| to_stereo.tap(idx, wt));
                        bilinear_weights(height, width, u, v, |idx, wt| to_image.tap(idx, wt));
                    }
                    to_stereo.end_row();
                    to_image.end_row();
                }
            }
        }
        Ok(VoxelSampler {
            grid,
            dims,
            to_stereo: to_stereo.build(),
            to_image: to_image.build(),
            stacked: RefCell::new(BTreeMap::new()),
        })
    }

    fn stacked(&self, kind: MapKind, channels: usize) -> Rc<LinearMap> {
        if let Some(m) = self.stacked.borrow().get(&(kind, channels)) {
            return Rc::clone(m);
        }
        let map = Rc::new(match kind {
            MapKind::Stereo => block_diagonal(&self.to_stereo, channels),
            MapKind::Image => block_diagonal(&self.to_image, channels),
            MapKind::Probability => repeat_rows(&self.to_stereo, channels),
        });
        self.stacked
            .borrow_mut()
            .insert((kind, channels), Rc::clone(&map));
        map
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    /// Samples a stereo-space `[C, D, H, W]` volume at every voxel.
    pub fn sample_stereo(&self, tape: &mut Tape, volume: Var) -> Result<Var> {
        let shape = tape.shape(volume).to_vec();
        ensure!(
            shape.len() == 4 && shape[1..] == self.dims,
            Shape,
            "stereo-space volume {:?} does not match [C, {}, {}, {}]",
            shape,
            self.dims[0],
            self.dims[1],
            self.dims[2]
        );
        let c = shape[0];
        tape.gather_shared(volume, self.stacked(MapKind::Stereo, c), &self.out_shape(c))
    }

    /// Samples an image-space `[C, H, W]` feature map at every voxel.
    pub fn sample_image(&self, tape: &mut Tape, image: Var) -> Result<Var> {
        let shape = tape.shape(image).to_vec();
        ensure!(
            shape.len() == 3 && shape[1..] == self.dims[1..],
            Shape,
            "image features {:?} do not match [C, {}, {}]",
            shape,
            self.dims[1],
            self.dims[2]
        );
        let c = shape[0];
        tape.gather_shared(image, self.stacked(MapKind::Image, c), &self.out_shape(c))
    }

    /// `P(u, v, d^-1(z))` per voxel, repeated over `channels`.
    fn sample_probability(&self, tape: &mut Tape, prob: Var, channels: usize) -> Result<Var> {
        let shape = tape.shape(prob).to_vec();
        ensure!(
            shape == self.dims,
            Shape,
            "depth distribution {:?} does not match {:?}",
            shape,
            self.dims
        );
        tape.gather_shared(prob, self.stacked(MapKind::Probability, channels), &self.out_shape(channels))
    }

    fn out_shape(&self, c: usize) -> [usize; 4] {
        let [nz, ny, nx] = self.grid.volume_shape();
        [c, nz, ny, nx]
    }
}

/// Builds the voxel volume from a stereo-space feature volume `[C_st, D, H,
/// W]`, semantic features `[C_sem, H, W]` and the depth distribution.
pub fn build_3d_volume(
    tape: &mut Tape,
    stereo: Var,
    f_sem: Var,
    prob: &DepthDistribution,
    grid: &VoxelGrid,
    rig: &CameraRig,
    binning: &DepthBinning,
) -> Result<Volume3D> {
    let shape = tape.shape(f_sem).to_vec();
    ensure!(
        shape.len() == 3,
        Shape,
        "semantic features must be [C, H, W], got {:?}",
        shape
    );
    let sampler = VoxelSampler::new(*grid, rig, binning, shape[1], shape[2])?;
    build_3d_volume_with(tape, stereo, f_sem, prob, &sampler)
}

pub fn build_3d_volume_with(
    tape: &mut Tape,
    stereo: Var,
    f_sem: Var,
    prob: &DepthDistribution,
    sampler: &VoxelSampler,
) -> Result<Volume3D> {
    let geo = sampler.sample_stereo(tape, stereo)?;
    let sem = sampler.sample_image(tape, f_sem)?;
    let c_sem = tape.shape(f_sem)[0];
    let p = sampler.sample_probability(tape, prob.var, c_sem)?;
    let masked = tape.mul(sem, p)?;
    let var = tape.concat(&[geo, masked], 0)?;
    Ok(Volume3D {
        var,
        grid: sampler.grid,
    })
}

/// Index map for `[C, Nz, Ny, Nx] -> [C * Ny, Nz, Nx]`: element `(c, k, j,
/// i)` lands at `(c * Ny + j, k, i)`.
pub fn bev_permutation(shape: [usize; 4]) -> LinearMap {
    let [c, nz, ny, nx] = shape;
    let n = c * nz * ny * nx;
    let mut b = LinearMapBuilder::with_capacity(n, n, n);
    for cc in 0..c {
        for j in 0..ny {
            for k in 0..nz {
                for i in 0..nx {
                    b.copy_row(((cc * nz + k) * ny + j) * nx + i);
                }
            }
        }
    }
    b.build()
}

pub fn collapse_to_bev(tape: &mut Tape, volume: Var) -> Result<BevFeature> {
    let shape = tape.shape(volume).to_vec();
    ensure!(
        shape.len() == 4,
        Shape,
        "voxel volume must be [C, Nz, Ny, Nx], got {:?}",
        shape
    );
    let s = [shape[0], shape[1], shape[2], shape[3]];
    let var = tape.gather(volume, bev_permutation(s), &bev_shape(s))?;
    Ok(BevFeature { var })
}

/// Untaped [`collapse_to_bev`].
pub fn collapse_tensor_to_bev(volume: &Tensor) -> Result<Tensor> {
    let shape = volume.shape();
    ensure!(
        shape.len() == 4,
        Shape,
        "voxel volume must be [C, Nz, Ny, Nx], got {:?}",
        shape
    );
    let s = [shape[0], shape[1], shape[2], shape[3]];
    Tensor::new(bev_shape(s).to_vec(), bev_permutation(s).apply(volume.data()))
}

/// Inverse of [`collapse_tensor_to_bev`] for a grid with `ny` height cells.
pub fn expand_bev_tensor(bev: &Tensor, ny: usize) -> Result<Tensor> {
    let shape = bev.shape();
    ensure!(
        shape.len() == 3 && ny > 0 && shape[0] % ny == 0,
        Shape,
        "BEV feature {:?} cannot be split into {ny} height cells",
        shape
    );
    let s = [shape[0] / ny, shape[1], ny, shape[2]];
    let data = bev_permutation(s).apply_transpose(bev.data());
    Tensor::new(s.to_vec(), data)
}

fn bev_shape([c, nz, ny, nx]: [usize; 4]) -> [usize; 3] {
    [c * ny, nz, nx]
}

/// Stacks `copies` of a map's rows, all reading the same input.
fn repeat_rows(map: &LinearMap, copies: usize) -> LinearMap {
    let n = map.out_len();
    let mut b = LinearMapBuilder::new(map.in_len());
    for _ in 0..copies {
        for r in 0..n {
            for (idx, wt) in map.row(r) {
                b.tap(idx, wt);
            }
            b.end_row();
        }
    }
    b.build()
}

/// Repeats a single-channel map over `blocks` stacked channels.
pub(crate) fn block_diagonal(map: &LinearMap, blocks: usize) -> LinearMap {
    let (inp, out) = (map.in_len(), map.out_len());
    let mut b = LinearMapBuilder::new(inp * blocks);
    for blk in 0..blocks {
        for r in 0..out {
            for (idx, wt) in map.row(r) {
                b.tap(blk * inp + idx, wt);
            }
            b.end_row();
        }
    }
    b.build()
}
