//! Oriented 3D boxes, rotated IoU and residual coding.
//!
//! Boxes live in the camera frame. The bird's-eye footprint is taken in the
//! (x, z) plane; `theta` rotates the length axis from +x towards -z.

mod coder;
mod dual;
mod iou;
mod polygon;

pub use coder::{decode_residuals, direction_bin, encode_residuals, Residuals};
pub(crate) use coder::decode_params;
pub use dual::{Dual, Scalar};
pub use iou::{bev_intersection_area, bev_iou_rotated, iou3d, iou3d_params};
pub(crate) use iou::bev_corners_of;
pub use polygon::{polygon_area, polygon_clip, INSIDE_EPS};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Object categories used by the simulator and the evaluator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ObjectClass {
    Car,
    Pedestrian,
    Cyclist,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 3] = [
        ObjectClass::Car,
        ObjectClass::Pedestrian,
        ObjectClass::Cyclist,
    ];

    pub fn id(self) -> u32 {
        self as u32
    }

    pub fn from_id(id: u32) -> Result<Self> {
        Self::ALL
            .get(id as usize)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("unknown class id {id}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::Car => "Car",
            ObjectClass::Pedestrian => "Pedestrian",
            ObjectClass::Cyclist => "Cyclist",
        }
    }
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let r = theta.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxRecord", into = "BoxRecord")]
pub struct Box3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
    pub class_id: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct BoxRecord {
    center: [f64; 3],
    size: [f64; 3],
    yaw: f64,
    class: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

impl TryFrom<BoxRecord> for Box3D {
    type Error = Error;
    fn try_from(r: BoxRecord) -> Result<Self> {
        Box3D::new(r.center, r.size, r.yaw, r.class)
    }
}

impl From<Box3D> for BoxRecord {
    fn from(b: Box3D) -> Self {
        BoxRecord {
            center: [b.x, b.y, b.z],
            size: [b.l, b.w, b.h],
            yaw: b.theta,
            class: b.class_id,
            score: None,
        }
    }
}

impl Box3D {
    pub fn new(center: [f64; 3], size: [f64; 3], yaw: f64, class_id: u32) -> Result<Self> {
        let b = Box3D {
            x: center[0],
            y: center[1],
            z: center[2],
            l: size[0],
            w: size[1],
            h: size[2],
            theta: normalize_angle(yaw),
            class_id,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn from_params(p: [f64; 7], class_id: u32) -> Result<Self> {
        Box3D::new([p[0], p[1], p[2]], [p[3], p[4], p[5]], p[6], class_id)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.params().iter().all(|v| v.is_finite()),
            InvalidArgument,
            "box has non-finite parameters: {:?}",
            self
        );
        ensure!(
            self.l > 0.0 && self.w > 0.0 && self.h > 0.0,
            InvalidArgument,
            "box dimensions must be positive, got ({}, {}, {})",
            self.l,
            self.w,
            self.h
        );
        Ok(())
    }

    /// `[x, y, z, l, w, h, theta]`.
    pub fn params(&self) -> [f64; 7] {
        [self.x, self.y, self.z, self.l, self.w, self.h, self.theta]
    }

    pub fn center(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn volume(&self) -> f64 {
        self.l * self.w * self.h
    }

    pub fn class(&self) -> Result<ObjectClass> {
        ObjectClass::from_id(self.class_id)
    }

    pub fn bev(&self) -> BoxBEV {
        BoxBEV {
            cx: self.x,
            cz: self.z,
            l: self.l,
            w: self.w,
            theta: self.theta,
        }
    }

    /// Vertical extent `[top, bottom]` along camera y.
    pub fn y_extent(&self) -> [f64; 2] {
        [self.y - 0.5 * self.h, self.y + 0.5 * self.h]
    }

    /// The eight corners; the first four are at the top (smaller y).
    pub fn corners(&self) -> [[f64; 3]; 8] {
        let bev = bev_corners_of(&self.params());
        let [top, bottom] = self.y_extent();
        let mut out = [[0.0; 3]; 8];
        for (i, c) in bev.iter().enumerate() {
            out[i] = [c[0], top, c[1]];
            out[i + 4] = [c[0], bottom, c[1]];
        }
        out
    }

    /// Whether camera-frame point `p` lies inside the box.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let dx = p[0] - self.x;
        let dz = p[2] - self.z;
        let (s, c) = self.theta.sin_cos();
        let along = dx * c - dz * s;
        let across = dx * s + dz * c;
        along.abs() <= 0.5 * self.l
            && across.abs() <= 0.5 * self.w
            && (p[1] - self.y).abs() <= 0.5 * self.h
    }
}

/// Bird's-eye footprint of a [`Box3D`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxBEV {
    pub cx: f64,
    pub cz: f64,
    pub l: f64,
    pub w: f64,
    pub theta: f64,
}

impl BoxBEV {
    pub fn new(cx: f64, cz: f64, l: f64, w: f64, theta: f64) -> Result<Self> {
        let b = BoxBEV { cx, cz, l, w, theta };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            [self.cx, self.cz, self.l, self.w, self.theta].iter().all(|v| v.is_finite()),
            InvalidArgument,
            "footprint has non-finite parameters"
        );
        ensure!(
            self.l > 0.0 && self.w > 0.0,
            InvalidArgument,
            "footprint dimensions must be positive, got ({}, {})",
            self.l,
            self.w
        );
        Ok(())
    }

    pub fn area(&self) -> f64 {
        self.l * self.w
    }

    /// Counter-clockwise corners as `[x, z]`.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        bev_corners_of(&[self.cx, 0.0, self.cz, self.l, self.w, 1.0, self.theta])
    }
}

/// A scored box as written to prediction files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxRecord", into = "BoxRecord")]
pub struct Detection {
    pub bbox: Box3D,
    pub score: f64,
}

impl TryFrom<BoxRecord> for Detection {
    type Error = Error;
    fn try_from(r: BoxRecord) -> Result<Self> {
        let score = r
            .score
            .ok_or_else(|| Error::InvalidArgument("detection is missing a score".into()))?;
        ensure!(score.is_finite(), InvalidArgument, "detection score is not finite");
        Ok(Detection {
            bbox: Box3D::try_from(r)?,
            score,
        })
    }
}

impl From<Detection> for BoxRecord {
    fn from(d: Detection) -> Self {
        let mut r = BoxRecord::from(d.bbox);
        r.score = Some(d.score);
        r
    }
}
