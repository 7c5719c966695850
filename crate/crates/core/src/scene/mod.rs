//! Gaussian-splat scenes.

mod ply;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use ply::{load_ply, read_ply, save_ply, write_ply, PLY_PROPERTIES};

use crate::error::{Error, Result};
use crate::math::sh::{rgb_to_dc, MAX_COEFFS};
use crate::math::{logit, sigmoid, UnitQuaternion};

/// One anisotropic 3D Gaussian. Scale is stored as log standard deviation and
/// opacity as a logit, so every field is an unconstrained optimization variable.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSplat {
    pub position: Vector3<f64>,
    pub rotation: UnitQuaternion,
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    /// `sh[k][channel]` for the 16 degree-3 basis functions.
    pub sh: [[f64; 3]; MAX_COEFFS],
}

impl GaussianSplat {
    pub fn new(position: Vector3<f64>, scale: f64, opacity: f64, rgb: [f64; 3]) -> Self {
        let mut sh = [[0.0; 3]; MAX_COEFFS];
        sh[0] = rgb.map(rgb_to_dc);
        Self {
            position,
            rotation: UnitQuaternion::IDENTITY,
            log_scale: Vector3::repeat(scale.ln()),
            opacity_logit: logit(opacity),
            sh,
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite() && v.exp().is_finite() && v.exp() > 0.0)
            && self.opacity_logit.is_finite()
            && self.rotation.wxyz().iter().all(|v| v.is_finite())
            && self.sh.iter().flatten().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplatScene {
    pub splats: Vec<GaussianSplat>,
    pub center: Vector3<f64>,
    /// Radius of a sphere around `center` that contains every splat position.
    pub extent: f64,
}

impl SplatScene {
    /// Builds a scene with bounds derived from the splat positions (centroid and
    /// farthest distance; a zero-radius scene gets extent 1).
    pub fn new(splats: Vec<GaussianSplat>) -> Result<Self> {
        if splats.is_empty() {
            return Err(Error::EmptyScene);
        }
        if let Some(i) = splats.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("splat {i}")));
        }
        let (center, extent) = bounds(splats.iter().map(|s| &s.position));
        Ok(Self { splats, center, extent })
    }

    /// Keeps the given bounds, growing `extent` if a splat falls outside.
    pub fn with_bounds(splats: Vec<GaussianSplat>, center: Vector3<f64>, extent: f64) -> Result<Self> {
        let mut scene = Self::new(splats)?;
        let far = scene.splats.iter().map(|s| (s.position - center).norm()).fold(0.0, f64::max);
        scene.center = center;
        scene.extent = extent.max(far);
        Ok(scene)
    }

    pub fn len(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.splats.iter().all(GaussianSplat::is_finite)
    }
}

fn bounds<'a>(points: impl Iterator<Item = &'a Vector3<f64>> + Clone) -> (Vector3<f64>, f64) {
    let n = points.clone().count().max(1) as f64;
    let center = points.clone().fold(Vector3::zeros(), |a, p| a + p) / n;
    let far = points.map(|p| (p - center).norm()).fold(0.0, f64::max);
    (center, if far > 1e-9 { far } else { 1.0 })
}

/// Initialization constants for [`init_from_points`].
#[derive(Clone, Copy, Debug)]
pub struct InitParams {
    pub opacity: f64,
    pub neighbors: usize,
    /// Scale used when a point has no neighbors, as a fraction of scene extent.
    pub isolated_scale: f64,
}

impl Default for InitParams {
    fn default() -> Self {
        Self { opacity: 0.1, neighbors: 3, isolated_scale: 0.01 }
    }
}

/// One isotropic splat per point, sized by the mean distance to its nearest neighbors.
pub fn init_from_points(points: &[Vector3<f64>], colors: &[[f64; 3]]) -> Result<SplatScene> {
    init_from_points_with(points, colors, InitParams::default())
}

pub fn init_from_points_with(points: &[Vector3<f64>], colors: &[[f64; 3]], params: InitParams) -> Result<SplatScene> {
    if points.is_empty() {
        return Err(Error::EmptyScene);
    }
    if colors.len() != points.len() {
        return Err(Error::Dimension(format!("{} colors for {} points", colors.len(), points.len())));
    }
    let (_, extent) = bounds(points.iter());
    let k = params.neighbors.min(points.len() - 1);
    let splats = points
        .iter()
        .zip(colors)
        .enumerate()
        .map(|(i, (p, rgb))| {
            let scale = if k == 0 {
                params.isolated_scale * extent
            } else {
                let mut d: Vec<f64> =
                    points.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, q)| (q - p).norm()).collect();
                d.select_nth_unstable_by(k - 1, f64::total_cmp);
                let mean = d[..k].iter().sum::<f64>() / k as f64;
                if mean > 0.0 {
                    mean
                } else {
                    params.isolated_scale * extent
                }
            };
            GaussianSplat::new(*p, scale, params.opacity, *rgb)
        })
        .collect();
    SplatScene::new(splats)
}

/// `count` splats uniformly distributed in a ball, with random colors.
pub fn init_random_in_sphere(center: Vector3<f64>, radius: f64, count: usize, seed: u64) -> Result<SplatScene> {
    if count == 0 {
        return Err(Error::EmptyScene);
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Config(format!("init radius must be positive, got {radius}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(count);
    while points.len() < count {
        let v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if v.norm_squared() <= 1.0 {
            points.push(center + v * radius);
        }
    }
    let colors: Vec<[f64; 3]> = (0..count).map(|_| std::array::from_fn(|_| rng.gen_range(0.0..1.0))).collect();
    let mut scene = init_from_points(&points, &colors)?;
    scene.center = center;
    scene.extent = radius;
    Ok(scene)
}
