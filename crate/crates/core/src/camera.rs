//! Pinhole camera intrinsics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::Vec3;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("focal lengths must be positive, got fx={fx}, fy={fy}")]
    NonPositiveFocal { fx: f64, fy: f64 },
    #[error("principal point ({cx}, {cy}) outside image plane {width}x{height}")]
    PrincipalPointOutside {
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    },
    #[error("image dimensions must be nonzero, got {width}x{height}")]
    ZeroDimension { width: usize, height: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, CameraError> {
        if width == 0 || height == 0 {
            return Err(CameraError::ZeroDimension { width, height });
        }
        if !(fx > 0.0) || !(fy > 0.0) {
            return Err(CameraError::NonPositiveFocal { fx, fy });
        }
        if !(0.0..=width as f64).contains(&cx) || !(0.0..=height as f64).contains(&cy) {
            return Err(CameraError::PrincipalPointOutside {
                cx,
                cy,
                width,
                height,
            });
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Unit-depth ray through pixel coordinate `(u, v)`: `K^-1 (u, v, 1)`.
    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> Vec3 {
        [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0]
    }

    /// Projects a camera-frame point with `z > 0` to pixel coordinates.
    #[inline]
    pub fn project(&self, p: Vec3) -> (f64, f64) {
        (
            self.fx * p[0] / p[2] + self.cx,
            self.fy * p[1] / p[2] + self.cy,
        )
    }

    /// Intrinsics after scaling image coordinates by `(sx, sy)` to `new_width x new_height`.
    ///
    /// Under the pixel-center convention a resize maps `u -> u * sx` exactly, so
    /// both focal length and principal point scale linearly.
    pub fn scaled(&self, sx: f64, sy: f64, new_width: usize, new_height: usize) -> Intrinsics {
        Intrinsics {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width: new_width,
            height: new_height,
        }
    }

    /// Intrinsics after cropping at integer origin `(top, left)`.
    pub fn cropped(&self, top: usize, left: usize, height: usize, width: usize) -> Intrinsics {
        Intrinsics {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx - left as f64,
            cy: self.cy - top as f64,
            width,
            height,
        }
    }

    /// Intrinsics after mirroring columns: `cx -> width - cx`.
    pub fn flipped_horizontal(&self) -> Intrinsics {
        Intrinsics {
            cx: self.width as f64 - self.cx,
            ..*self
        }
    }
}
