#![allow(clippy::needless_range_loop)]
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatsr::frame::ImageFrame;
use splatsr::math::{look_at, CameraPose, Intrinsics, UnitQuaternion};
use splatsr::raster::{render, render_backward, SplatGradient};
use splatsr::scene::{save_ply, GaussianSplat, SplatScene};
use splatsr::trajectory::{orbit_trajectory, OrbitSpec, Trajectory};

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_splatsr")
}

/// Colorful blob scene inside the unit ball.
pub fn test_scene(seed: u64, n: usize) -> SplatScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let splats = (0..n)
        .map(|_| {
            let mut s = GaussianSplat::new(
                Vector3::new(rng.gen_range(-0.7..0.7), rng.gen_range(-0.7..0.7), rng.gen_range(-0.7..0.7)),
                rng.gen_range(0.08..0.25),
                rng.gen_range(0.5..0.9),
                [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)],
            );
            s.log_scale += Vector3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
            s.rotation = UnitQuaternion::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            s
        })
        .collect();
    SplatScene::new(splats).unwrap()
}

pub fn write_scene(dir: &Path, scene: &SplatScene) -> PathBuf {
    let p = dir.join("input.ply");
    save_ply(scene, &p).unwrap();
    p
}

pub fn orbit(frames: usize, radius: f64, elevation: f64, offset: f64, intr: Intrinsics) -> Trajectory {
    let spec = OrbitSpec { radius, end_radius: None, elevation, frames, azimuth_offset: offset };
    orbit_trajectory(&Vector3::zeros(), &spec, &Vector3::y(), intr).unwrap()
}

pub fn script(dir: &Path, name: &str, body: &str) -> String {
    use std::os::unix::fs::PermissionsExt;
    let path = dir.join(name);
    fs::write(&path, format!("#!/bin/sh\nset -e\n{body}\n")).unwrap();
    fs::set_permissions(&path, fs::Permissions::from_mode(0o755)).unwrap();
    path.to_string_lossy().into_owned()
}

pub fn max_abs_diff(a: &ImageFrame, b: &ImageFrame) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------- oracles

/// Footprint `w(d²)` written out independently of the renderer.
pub fn oracle_weight(d2: f64) -> f64 {
    if d2 >= 9.0 {
        return 0.0;
    }
    let tail = (-4.5f64).exp();
    ((-d2 / 2.0).exp() - tail * (5.5 - d2 / 2.0)) / (1.0 - 5.5 * tail)
}

/// Closed-form screen Gaussian of an isotropic splat seen by a pinhole camera.
pub struct OracleSplat {
    pub mean: (f64, f64),
    pub cov: [f64; 3],
    pub opacity: f64,
    pub color: [f64; 3],
    pub depth: f64,
}

impl OracleSplat {
    pub fn new(s: &GaussianSplat, pose: &CameraPose, k: &Intrinsics, color: [f64; 3]) -> Self {
        let r = pose.rotation_matrix();
        let c = r.transpose() * (s.position - pose.translation);
        let (x, y, z) = (c.x, c.y, c.z);
        let s2 = s.scale().x.powi(2);
        let (fx, fy) = (k.fx, k.fy);
        // Σ' = s² J Jᵀ + 0.3 I for an isotropic covariance.
        let a = s2 * (fx * fx / (z * z) + fx * fx * x * x / z.powi(4)) + 0.3;
        let b = s2 * fx * fy * x * y / z.powi(4);
        let cc = s2 * (fy * fy / (z * z) + fy * fy * y * y / z.powi(4)) + 0.3;
        Self { mean: (fx * x / z + k.cx, fy * y / z + k.cy), cov: [a, b, cc], opacity: s.opacity(), color, depth: z }
    }

    pub fn alpha(&self, px: f64, py: f64) -> f64 {
        let [a, b, c] = self.cov;
        let det = a * c - b * b;
        let (dx, dy) = (px - self.mean.0, py - self.mean.1);
        let d2 = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
        (self.opacity * oracle_weight(d2)).min(0.99)
    }
}

/// Front-to-back compositing of oracle splats at one pixel.
pub fn oracle_pixel(splats: &[OracleSplat], px: f64, py: f64, bg: [f64; 3]) -> [f64; 3] {
    let mut order: Vec<&OracleSplat> = splats.iter().collect();
    order.sort_by(|a, b| a.depth.total_cmp(&b.depth));
    let mut out = [0.0; 3];
    let mut trans = 1.0;
    for s in order {
        let a = s.alpha(px, py);
        for ch in 0..3 {
            out[ch] += s.color[ch] * a * trans;
        }
        trans *= 1.0 - a;
    }
    std::array::from_fn(|ch| out[ch] + bg[ch] * trans)
}

// ---------------------------------------------------------------- gradients

pub const N_PARAMS: usize = 59;

pub fn param(s: &mut GaussianSplat, i: usize) -> &mut f64 {
    match i {
        0..=2 => &mut s.position[i],
        3 => &mut s.rotation.w,
        4 => &mut s.rotation.x,
        5 => &mut s.rotation.y,
        6 => &mut s.rotation.z,
        7..=9 => &mut s.log_scale[i - 7],
        10 => &mut s.opacity_logit,
        _ => &mut s.sh[(i - 11) / 3][(i - 11) % 3],
    }
}

pub fn analytic(g: &SplatGradient, i: usize) -> f64 {
    match i {
        0..=2 => g.position[i],
        3..=6 => g.rotation[i - 3],
        7..=9 => g.log_scale[i - 7],
        10 => g.opacity_logit,
        _ => g.sh[(i - 11) / 3][(i - 11) % 3],
    }
}

pub struct GradCase {
    pub scene: SplatScene,
    pub pose: CameraPose,
    pub intr: Intrinsics,
    pub bg: [f64; 3],
    pub weights: ImageFrame,
}

/// Random scene of at most 20 splats in front of a random camera, 32–64 px.
pub fn grad_case(seed: u64) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=20);
    let w = rng.gen_range(32..=64);
    let h = rng.gen_range(32..=64);
    let splats = (0..n)
        .map(|_| {
            let mut s = GaussianSplat::new(
                Vector3::new(rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8)),
                rng.gen_range(0.08..0.3),
                rng.gen_range(0.05..0.95),
                [rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8)],
            );
            s.log_scale += Vector3::new(rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4));
            s.rotation = UnitQuaternion::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            for k in 1..16 {
                s.sh[k] = std::array::from_fn(|_| rng.gen_range(-0.03..0.03));
            }
            s
        })
        .collect();
    let az: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let el: f64 = rng.gen_range(-0.6..0.6);
    let dist = rng.gen_range(3.0..4.5);
    let eye = Vector3::new(dist * el.cos() * az.cos(), dist * el.sin(), dist * el.cos() * az.sin());
    let pose = look_at(&eye, &Vector3::zeros(), &Vector3::y()).unwrap();
    let intr = Intrinsics::from_fov(w, h, rng.gen_range(0.6..1.0)).unwrap();
    let bg = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
    let weights = ImageFrame::from_fn(w, h, |_, _| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)));
    GradCase { scene: SplatScene::new(splats).unwrap(), pose, intr, bg, weights }
}

fn objective(c: &GradCase, scene: &SplatScene) -> f64 {
    let (f, _) = render(scene, &c.pose, &c.intr, c.bg).unwrap();
    f.data().iter().zip(c.weights.data()).map(|(a, b)| a * b).sum()
}

pub struct GradResult {
    pub checked: usize,
    /// `(splat, parameter, analytic, finite difference)` of every mismatch.
    pub failures: Vec<(usize, usize, f64, f64)>,
}

/// Compares every analytic gradient entry with a central difference (h = 1e-4):
/// a pass needs `|a - fd| <= 1e-6` or `<= 1e-3 · max(|a|, |fd|)`.
pub fn check_gradients(c: &GradCase) -> GradResult {
    let grads = render_backward(&c.scene, &c.pose, &c.intr, c.bg, &c.weights).unwrap();
    let h = 1e-4;
    let mut out = GradResult { checked: 0, failures: Vec::new() };
    for (si, g) in grads.iter().enumerate() {
        for p in 0..N_PARAMS {
            let mut plus = c.scene.clone();
            let mut minus = c.scene.clone();
            *param(&mut plus.splats[si], p) += h;
            *param(&mut minus.splats[si], p) -= h;
            let fd = (objective(c, &plus) - objective(c, &minus)) / (2.0 * h);
            let a = analytic(g, p);
            let err = (a - fd).abs();
            out.checked += 1;
            if !(err <= 1e-6 || err <= 1e-3 * a.abs().max(fd.abs())) {
                out.failures.push((si, p, a, fd));
            }
        }
    }
    out
}
