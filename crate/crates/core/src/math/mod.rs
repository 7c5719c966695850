//! Geometry shared by the renderer, optimizer and trajectory generator.

pub mod bspline;
pub mod camera;
pub mod quat;
pub mod sh;

pub use bspline::BSpline;
pub use camera::{look_at, CameraPose, Intrinsics};
pub use quat::{quat_to_rotmat, UnitQuaternion};
pub use sh::sh_eval;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
