//! Pinhole camera model.
//!
//! Conventions used throughout the crate: right-handed world, poses stored
//! camera-to-world as `(rotation, translation)`, the camera looks down its
//! local +Z axis, image x grows to the right and y grows downwards. Integer
//! pixel coordinates are pixel centers.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::quat::UnitQuaternion;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let intr = Self { fx, fy, cx, cy, width, height };
        intr.validate()?;
        Ok(intr)
    }

    /// Square pixels, principal point at the image center, horizontal field of view in radians.
    pub fn from_fov(width: u32, height: u32, fov_x: f64) -> Result<Self> {
        if !(fov_x > 0.0 && fov_x < std::f64::consts::PI) {
            return Err(Error::Config(format!("field of view {fov_x} rad is not in (0, π)")));
        }
        let f = 0.5 * width as f64 / (0.5 * fov_x).tan();
        Self::new(f, f, 0.5 * (width as f64 - 1.0), 0.5 * (height as f64 - 1.0), width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::Config(format!("invalid focal lengths in {self:?}")));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("image dimensions must be positive".into()));
        }
        if self.cx < 0.0 || self.cx >= self.width as f64 || self.cy < 0.0 || self.cy >= self.height as f64 {
            return Err(Error::Config(format!("principal point outside the image in {self:?}")));
        }
        Ok(())
    }

    /// Intrinsics of the same camera sampled `factor` times more densely.
    /// Pixel-center sampling gives `c' = r·c + (r-1)/2`.
    pub fn upscaled(&self, factor: u32) -> Self {
        let r = factor as f64;
        Self {
            fx: self.fx * r,
            fy: self.fy * r,
            cx: self.cx * r + 0.5 * (r - 1.0),
            cy: self.cy * r + 0.5 * (r - 1.0),
            width: self.width * factor,
            height: self.height * factor,
        }
    }

    /// Inverse of [`Intrinsics::upscaled`]; dimensions must be divisible by `factor`.
    pub fn downscaled(&self, factor: u32) -> Result<Self> {
        if factor == 0 || !self.width.is_multiple_of(factor) || !self.height.is_multiple_of(factor) {
            return Err(Error::Dimension(format!("{}x{} is not divisible by {factor}", self.width, self.height)));
        }
        let r = factor as f64;
        Ok(Self {
            fx: self.fx / r,
            fy: self.fy / r,
            cx: (self.cx - 0.5 * (r - 1.0)) / r,
            cy: (self.cy - 0.5 * (r - 1.0)) / r,
            width: self.width / factor,
            height: self.height / factor,
        })
    }

    pub fn principal_point(&self) -> Vector2<f64> {
        Vector2::new(self.cx, self.cy)
    }
}

/// Camera-to-world rigid transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub rotation: UnitQuaternion,
    pub translation: Vector3<f64>,
}

impl CameraPose {
    pub fn new(rotation: UnitQuaternion, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn center(&self) -> Vector3<f64> {
        self.translation
    }

    /// Camera-to-world rotation matrix; its columns are the camera axes in world space.
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix()
    }

    pub fn optical_axis(&self) -> Vector3<f64> {
        self.rotation_matrix().column(2).into_owned()
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix().transpose() * (p - self.translation)
    }

    /// Projects a world point to pixel coordinates; `None` when it is not in front of the camera.
    pub fn project(&self, intr: &Intrinsics, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        let c = self.world_to_camera(p);
        if c.z <= 0.0 {
            return None;
        }
        Some(Vector2::new(intr.fx * c.x / c.z + intr.cx, intr.fy * c.y / c.z + intr.cy))
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite()) && self.rotation.wxyz().iter().all(|v| v.is_finite())
    }
}

/// Camera at `eye` looking at `target`, with its image-up direction (−y) on the
/// same side as `up`.
pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>, up: &Vector3<f64>) -> Result<CameraPose> {
    let dir = target - eye;
    let dist = dir.norm();
    if !(dist >= 1e-9) {
        return Err(Error::Degenerate(format!("look_at eye {eye:?} coincides with target")));
    }
    let forward = dir / dist;
    let right = forward.cross(up);
    let rn = right.norm();
    if !(rn >= 1e-9 * up.norm().max(1e-300)) || up.norm() < 1e-12 {
        return Err(Error::Degenerate("look_at up vector is parallel to the view direction".into()));
    }
    let right = right / rn;
    let down = forward.cross(&right);
    let rot = Matrix3::from_columns(&[right, down, forward]);
    Ok(CameraPose::new(UnitQuaternion::from_rotation_matrix(&rot), *eye))
}
