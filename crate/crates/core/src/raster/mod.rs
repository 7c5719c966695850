//! Tile-based differentiable splat rasterizer.
//!
//! Each splat is projected with the local affine (EWA) approximation, a
//! 0.3 px² isotropic blur is added to its screen covariance, and splats are
//! composited front to back in a single global depth order (ties broken by
//! splat index). Pixel `(x, y)` samples the screen at integer coordinates.
//!
//! The per-splat footprint is a Gaussian tapered to reach zero with zero slope
//! on the 3σ ellipse:
//!
//! ```text
//! w(d²) = (exp(-d²/2) - e⁻⁴·⁵ (5.5 - d²/2)) / (1 - 5.5 e⁻⁴·⁵),   d² < 9
//! ```
//!
//! which keeps every pixel value C¹ in the splat parameters. Per-splat alpha is
//! `min(0.99, sigmoid(opacity_logit) · w)`.

mod composite;
mod project;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::frame::{ImageFrame, VideoClip};
use crate::math::sh::MAX_COEFFS;
use crate::math::{CameraPose, Intrinsics};
use crate::scene::SplatScene;
use crate::trajectory::Trajectory;

pub const TILE_SIZE: u32 = 16;
pub const BLUR: f64 = 0.3;
pub const ALPHA_CAP: f64 = 0.99;
pub const NEAR_PLANE: f64 = 0.01;
pub const CUTOFF_SIGMA: f64 = 3.0;

const TAIL: f64 = 0.011_108_996_538_242_306; // exp(-4.5)
const TAPER_NORM: f64 = 1.0 / (1.0 - 5.5 * TAIL);

/// Tapered footprint `w(d²)` and its derivative with respect to `d²`.
#[inline]
pub fn footprint(d2: f64) -> (f64, f64) {
    if d2 >= CUTOFF_SIGMA * CUTOFF_SIGMA {
        return (0.0, 0.0);
    }
    let e = (-0.5 * d2).exp();
    ((e - TAIL * (5.5 - 0.5 * d2)) * TAPER_NORM, 0.5 * (TAIL - e) * TAPER_NORM)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderAux {
    pub width: u32,
    pub height: u32,
    /// Accumulated opacity `1 - Π(1 - αᵢ)` per pixel.
    pub alpha: Vec<f64>,
    /// Alpha-weighted mean splat depth; `+∞` where nothing was drawn.
    pub depth: Vec<f64>,
}

impl RenderAux {
    pub fn alpha_at(&self, x: u32, y: u32) -> f64 {
        self.alpha[(y * self.width + x) as usize]
    }

    pub fn depth_at(&self, x: u32, y: u32) -> f64 {
        self.depth[(y * self.width + x) as usize]
    }
}

/// Gradient of a scalar with respect to one splat's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SplatGradient {
    pub position: Vector3<f64>,
    /// With respect to the stored `(w, x, y, z)` components, through normalization.
    pub rotation: [f64; 4],
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    pub sh: [[f64; 3]; MAX_COEFFS],
    /// With respect to the projected pixel-space center; used for densification.
    pub mean2d: [f64; 2],
    /// Whether the splat survived culling for this view.
    pub visible: bool,
}

impl Default for SplatGradient {
    fn default() -> Self {
        Self {
            position: Vector3::zeros(),
            rotation: [0.0; 4],
            log_scale: Vector3::zeros(),
            opacity_logit: 0.0,
            sh: [[0.0; 3]; MAX_COEFFS],
            mean2d: [0.0; 2],
            visible: false,
        }
    }
}

fn check_inputs(scene: &SplatScene, intr: &Intrinsics) -> Result<()> {
    if scene.is_empty() {
        return Err(Error::EmptyScene);
    }
    if let Some(i) = scene.splats.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("splat {i}")));
    }
    intr.validate()
}

/// Splats visible from `pose`, in compositing order.
fn prepare(scene: &SplatScene, pose: &CameraPose, intr: &Intrinsics) -> Vec<project::Projected> {
    let mut visible: Vec<_> =
        scene.splats.par_iter().enumerate().filter_map(|(i, s)| project::project(i, s, pose, intr)).collect();
    visible.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    visible
}

pub fn render(
    scene: &SplatScene,
    pose: &CameraPose,
    intr: &Intrinsics,
    background: [f64; 3],
) -> Result<(ImageFrame, RenderAux)> {
    check_inputs(scene, intr)?;
    let visible = prepare(scene, pose, intr);
    Ok(composite::forward(&visible, intr, background))
}

/// Gradients of `Σ_pixels ⟨grad_pixels, render(...)⟩` with respect to every
/// splat; splats that are culled get zero gradients.
pub fn render_backward(
    scene: &SplatScene,
    pose: &CameraPose,
    intr: &Intrinsics,
    background: [f64; 3],
    grad_pixels: &ImageFrame,
) -> Result<Vec<SplatGradient>> {
    check_inputs(scene, intr)?;
    if grad_pixels.dims() != (intr.width, intr.height) {
        return Err(Error::Dimension(format!(
            "pixel gradient is {}x{}, render is {}x{}",
            grad_pixels.width(),
            grad_pixels.height(),
            intr.width,
            intr.height
        )));
    }
    let visible = prepare(scene, pose, intr);
    let screen = composite::backward(&visible, intr, background, grad_pixels);
    let mut grads = vec![SplatGradient::default(); scene.len()];
    let chained: Vec<(usize, SplatGradient)> = visible
        .par_iter()
        .zip(screen.par_iter())
        .map(|(p, sg)| (p.index, project::project_backward(&scene.splats[p.index], pose, intr, sg)))
        .collect();
    for (i, g) in chained {
        grads[i] = g;
    }
    Ok(grads)
}

pub fn render_video(scene: &SplatScene, trajectory: &Trajectory, background: [f64; 3]) -> Result<VideoClip> {
    if trajectory.is_empty() {
        return Err(Error::Config("trajectory has no poses".into()));
    }
    let frames = trajectory
        .poses
        .iter()
        .map(|pose| render(scene, pose, &trajectory.intrinsics, background).map(|(f, _)| f))
        .collect::<Result<Vec<_>>>()?;
    VideoClip::new(frames, Some(trajectory.clone()))
}
