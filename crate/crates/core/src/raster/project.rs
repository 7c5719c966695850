//! Per-splat projection to a screen-space Gaussian and its reverse-mode derivative.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use super::{SplatGradient, BLUR, CUTOFF_SIGMA, NEAR_PLANE};
use crate::math::quat::quat_to_rotmat_vjp;
use crate::math::sh::{basis, basis_gradient};
use crate::math::{sigmoid, CameraPose, Intrinsics};
use crate::scene::GaussianSplat;

#[derive(Clone, Debug)]
pub(crate) struct Projected {
    pub index: usize,
    pub depth: f64,
    pub mean: Vector2<f64>,
    /// Inverse screen covariance `(a, b, c)`: `d² = a·dx² + 2b·dx·dy + c·dy²`.
    pub conic: [f64; 3],
    pub opacity: f64,
    pub color: [f64; 3],
    /// Inclusive pixel bounds of the cutoff ellipse, clipped to the image.
    pub x0: u32,
    pub x1: u32,
    pub y0: u32,
    pub y1: u32,
}

/// Screen-space quantities shared by the forward and reverse passes.
struct Geometry {
    cam: Vector3<f64>,
    world_to_cam: Matrix3<f64>,
    jac: Matrix2x3<f64>,
    cov_cam: Matrix3<f64>,
    rot: Matrix3<f64>,
    scale: Vector3<f64>,
    cov2d: Matrix2<f64>,
    mean: Vector2<f64>,
}

fn geometry(splat: &GaussianSplat, pose: &CameraPose, intr: &Intrinsics) -> Option<Geometry> {
    let world_to_cam = pose.rotation_matrix().transpose();
    let cam = world_to_cam * (splat.position - pose.translation);
    if cam.z <= NEAR_PLANE {
        return None;
    }
    let (x, y, z) = (cam.x, cam.y, cam.z);
    let jac = Matrix2x3::new(intr.fx / z, 0.0, -intr.fx * x / (z * z), 0.0, intr.fy / z, -intr.fy * y / (z * z));
    let rot = splat.rotation.to_rotation_matrix();
    let scale = splat.scale();
    let m = rot * Matrix3::from_diagonal(&scale);
    let cov_world = m * m.transpose();
    let cov_cam = world_to_cam * cov_world * world_to_cam.transpose();
    let cov2d = jac * cov_cam * jac.transpose() + Matrix2::identity() * BLUR;
    let mean = Vector2::new(intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy);
    Some(Geometry { cam, world_to_cam, jac, cov_cam, rot, scale, cov2d, mean })
}

/// Unclamped SH color and whether each channel survived the `max(0, ·)` clamp.
fn view_color(splat: &GaussianSplat, pose: &CameraPose) -> ([f64; 3], [bool; 3]) {
    let dir = (splat.position - pose.translation).normalize();
    let b = basis(&dir);
    let mut rgb = [0.5; 3];
    for (k, c) in splat.sh.iter().enumerate() {
        for ch in 0..3 {
            rgb[ch] += b[k] * c[ch];
        }
    }
    let active = rgb.map(|v| v > 0.0);
    (rgb.map(|v| v.max(0.0)), active)
}

pub(crate) fn project(index: usize, splat: &GaussianSplat, pose: &CameraPose, intr: &Intrinsics) -> Option<Projected> {
    let g = geometry(splat, pose, intr)?;
    let det = g.cov2d.determinant();
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = [g.cov2d[(1, 1)] / det, -g.cov2d[(0, 1)] / det, g.cov2d[(0, 0)] / det];
    let rx = CUTOFF_SIGMA * g.cov2d[(0, 0)].sqrt();
    let ry = CUTOFF_SIGMA * g.cov2d[(1, 1)].sqrt();
    let (w, h) = (intr.width as f64, intr.height as f64);
    let (xmin, xmax) = ((g.mean.x - rx).ceil(), (g.mean.x + rx).floor());
    let (ymin, ymax) = ((g.mean.y - ry).ceil(), (g.mean.y + ry).floor());
    if xmax < 0.0 || ymax < 0.0 || xmin > w - 1.0 || ymin > h - 1.0 || xmin > xmax || ymin > ymax {
        return None;
    }
    let (color, _) = view_color(splat, pose);
    Some(Projected {
        index,
        depth: g.cam.z,
        mean: g.mean,
        conic,
        opacity: sigmoid(splat.opacity_logit),
        color,
        x0: xmin.max(0.0) as u32,
        x1: xmax.min(w - 1.0) as u32,
        y0: ymin.max(0.0) as u32,
        y1: ymax.min(h - 1.0) as u32,
    })
}

/// Screen-space gradient of one splat, accumulated over pixels.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct ScreenGrad {
    pub mean: [f64; 2],
    pub conic: [f64; 3],
    pub opacity_logit: f64,
    pub color: [f64; 3],
}

impl ScreenGrad {
    pub fn add(&mut self, o: &ScreenGrad) {
        for i in 0..2 {
            self.mean[i] += o.mean[i];
        }
        for i in 0..3 {
            self.conic[i] += o.conic[i];
            self.color[i] += o.color[i];
        }
        self.opacity_logit += o.opacity_logit;
    }
}

/// Chains a screen-space gradient back to the splat parameters.
pub(crate) fn project_backward(
    splat: &GaussianSplat,
    pose: &CameraPose,
    intr: &Intrinsics,
    sg: &ScreenGrad,
) -> SplatGradient {
    let mut out =
        SplatGradient { mean2d: sg.mean, opacity_logit: sg.opacity_logit, visible: true, ..Default::default() };
    let Some(g) = geometry(splat, pose, intr) else {
        return out;
    };

    // Color: SH coefficients and view direction.
    let (_, active) = view_color(splat, pose);
    let g_raw: [f64; 3] = std::array::from_fn(|c| if active[c] { sg.color[c] } else { 0.0 });
    let dir = splat.position - pose.translation;
    let dist = dir.norm();
    let dhat = dir / dist;
    let b = basis(&dhat);
    let db = basis_gradient(&dhat);
    let mut g_dhat = Vector3::zeros();
    for k in 0..b.len() {
        let w: f64 = (0..3).map(|c| splat.sh[k][c] * g_raw[c]).sum();
        g_dhat += Vector3::from(db[k]) * w;
        for c in 0..3 {
            out.sh[k][c] = b[k] * g_raw[c];
        }
    }
    let mut g_pos = (g_dhat - dhat * dhat.dot(&g_dhat)) / dist;

    // Conic -> 2D covariance: dΣ'⁻¹ = -Σ'⁻¹ dΣ' Σ'⁻¹.
    let conic = g.cov2d.try_inverse().unwrap_or_else(Matrix2::zeros);
    let g_conic = Matrix2::new(sg.conic[0], 0.5 * sg.conic[1], 0.5 * sg.conic[1], sg.conic[2]);
    let g_cov2d = -conic * g_conic * conic;

    // Σ' = J Σc Jᵀ + blur, Σc = W Σ Wᵀ.
    let g_jac: Matrix2x3<f64> = 2.0 * g_cov2d * g.jac * g.cov_cam;
    let g_cov_cam = g.jac.transpose() * g_cov2d * g.jac;
    let g_cov_world = g.world_to_cam.transpose() * g_cov_cam * g.world_to_cam;

    // Σ = (R S)(R S)ᵀ.
    let m = g.rot * Matrix3::from_diagonal(&g.scale);
    let g_m = 2.0 * g_cov_world * m;
    let g_s = g.rot.transpose() * g_m;
    out.log_scale = Vector3::new(g_s[(0, 0)], g_s[(1, 1)], g_s[(2, 2)]).component_mul(&g.scale);
    let g_rot = g_m * Matrix3::from_diagonal(&g.scale);
    out.rotation = quat_to_rotmat_vjp(splat.rotation.wxyz(), &g_rot);

    // Jacobian and projected mean depend on the camera-space position.
    let (x, y, z) = (g.cam.x, g.cam.y, g.cam.z);
    let (fx, fy) = (intr.fx, intr.fy);
    let (z2, z3) = (z * z, z * z * z);
    let mut g_cam = Vector3::new(
        g_jac[(0, 2)] * (-fx / z2),
        g_jac[(1, 2)] * (-fy / z2),
        g_jac[(0, 0)] * (-fx / z2)
            + g_jac[(0, 2)] * (2.0 * fx * x / z3)
            + g_jac[(1, 1)] * (-fy / z2)
            + g_jac[(1, 2)] * (2.0 * fy * y / z3),
    );
    g_cam.x += sg.mean[0] * fx / z;
    g_cam.y += sg.mean[1] * fy / z;
    g_cam.z -= sg.mean[0] * fx * x / z2 + sg.mean[1] * fy * y / z2;

    g_pos += g.world_to_cam.transpose() * g_cam;
    out.position = g_pos;
    out
}
