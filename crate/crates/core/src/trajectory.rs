//! Camera trajectories: perturbed spline paths around a scene center, and
//! orbit/spiral paths for ablations.

use std::f64::consts::TAU;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::bspline::{default_control_count, DEFAULT_DEGREE};
use crate::math::{look_at, BSpline, CameraPose, Intrinsics};

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<CameraPose>,
    pub intrinsics: Intrinsics,
}

impl Trajectory {
    pub fn new(poses: Vec<CameraPose>, intrinsics: Intrinsics) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::Config("trajectory needs at least one pose".into()));
        }
        if let Some(i) = poses.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite(format!("pose {i}")));
        }
        intrinsics.validate()?;
        Ok(Self { poses, intrinsics })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn centers(&self) -> Vec<Vector3<f64>> {
        self.poses.iter().map(CameraPose::center).collect()
    }

    pub fn with_intrinsics(&self, intrinsics: Intrinsics) -> Self {
        Self { poses: self.poses.clone(), intrinsics }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbParams {
    /// Range of `u` in `center + u·(camera - center)`.
    pub segment_fraction_range: (f64, f64),
    /// Spline control points; `None` uses `max(4, ⌈T/3⌉)` capped at the pose count.
    pub n_control: Option<usize>,
    /// Output pose count.
    pub frames: usize,
    /// Sinusoid amplitude as a fraction of the scene extent.
    pub sine_amplitude: f64,
    pub sine_cycles: f64,
    pub seed: u64,
}

impl Default for PerturbParams {
    fn default() -> Self {
        Self {
            segment_fraction_range: (0.7, 1.0),
            n_control: None,
            frames: 30,
            sine_amplitude: 0.02,
            sine_cycles: 2.0,
            seed: 0,
        }
    }
}

impl PerturbParams {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.segment_fraction_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!("segment fraction range ({lo}, {hi}) is not within [0, 1]")));
        }
        if self.frames < 2 {
            return Err(Error::Config("perturbed trajectories need at least 2 output frames".into()));
        }
        if !self.sine_amplitude.is_finite() || !self.sine_cycles.is_finite() {
            return Err(Error::Config("sinusoid parameters must be finite".into()));
        }
        Ok(())
    }

    fn control_count(&self, poses: usize) -> usize {
        self.n_control.unwrap_or_else(|| default_control_count(poses).min(poses))
    }

    fn is_deterministic(&self) -> bool {
        self.segment_fraction_range.0 == self.segment_fraction_range.1 && self.sine_amplitude == 0.0
    }
}

/// Sampled-center spline path with an `up`-directed sinusoid, every pose looking at `center`.
pub fn perturb_trajectory(
    original: &Trajectory,
    center: &Vector3<f64>,
    extent: f64,
    up: &Vector3<f64>,
    params: &PerturbParams,
) -> Result<Trajectory> {
    params.validate()?;
    let n_control = params.control_count(original.len());
    if original.len() < n_control || n_control < 2 {
        return Err(Error::InsufficientPoints { needed: n_control.max(2), got: original.len() });
    }
    let up = up.normalize();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let (lo, hi) = params.segment_fraction_range;
    let sampled = original
        .poses
        .iter()
        .map(|pose| {
            let offset = pose.center() - center;
            if offset.norm() < 1e-9 {
                return Err(Error::Degenerate("a camera center coincides with the scene center".into()));
            }
            let u = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
            Ok(center + offset * u)
        })
        .collect::<Result<Vec<_>>>()?;

    let degree = DEFAULT_DEGREE.min(n_control - 1);
    let spline = BSpline::fit(&sampled, degree, n_control)?;
    let t_out = params.frames;
    let poses = (0..t_out)
        .map(|t| {
            let base = spline.eval(t as f64 / (t_out - 1) as f64)?;
            let phase = TAU * params.sine_cycles * t as f64 / t_out as f64;
            let pos = base + up * (params.sine_amplitude * extent * phase.sin());
            look_at(&pos, center, &up)
        })
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(poses, original.intrinsics)
}

/// Upsampling and evaluation trajectories drawn with different seeds.
pub fn split_eval_trajectory(
    original: &Trajectory,
    center: &Vector3<f64>,
    extent: f64,
    up: &Vector3<f64>,
    params: &PerturbParams,
    eval_seed: u64,
) -> Result<(Trajectory, Trajectory)> {
    if eval_seed == params.seed {
        return Err(Error::Config(format!("evaluation seed {eval_seed} must differ from the upsampling seed")));
    }
    let upsampling = perturb_trajectory(original, center, extent, up, params)?;
    let eval_params = PerturbParams { seed: eval_seed, ..params.clone() };
    let evaluation = perturb_trajectory(original, center, extent, up, &eval_params)?;
    let max_diff = upsampling
        .poses
        .iter()
        .zip(&evaluation.poses)
        .map(|(a, b)| (a.center() - b.center()).norm())
        .fold(0.0, f64::max);
    if max_diff <= 1e-6 {
        if params.is_deterministic() {
            log::warn!("zero-width fraction range and no sinusoid: evaluation trajectory coincides with the input one");
        } else {
            return Err(Error::Config("evaluation trajectory coincides with the upsampling trajectory".into()));
        }
    }
    Ok((upsampling, evaluation))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrbitSpec {
    pub radius: f64,
    /// Final radius of a spiral; `None` keeps the radius constant.
    pub end_radius: Option<f64>,
    /// Radians above the plane through the center orthogonal to `up`.
    pub elevation: f64,
    pub frames: usize,
    /// Azimuth of the first pose, radians.
    pub azimuth_offset: f64,
}

impl Default for OrbitSpec {
    fn default() -> Self {
        Self { radius: 4.0, end_radius: None, elevation: 0.3, frames: 30, azimuth_offset: 0.0 }
    }
}

/// Two unit vectors spanning the plane orthogonal to `up`.
fn horizontal_basis(up: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let seed = if up.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
    let e1 = (seed - up * seed.dot(up)).normalize();
    let e2 = up.cross(&e1);
    (e1, e2)
}

/// Evenly spaced azimuths at fixed elevation; a spiral when `end_radius` is set.
pub fn orbit_trajectory(
    center: &Vector3<f64>,
    spec: &OrbitSpec,
    up: &Vector3<f64>,
    intrinsics: Intrinsics,
) -> Result<Trajectory> {
    let end = spec.end_radius.unwrap_or(spec.radius);
    if !(spec.radius > 0.0 && end > 0.0) {
        return Err(Error::Config("orbit radius must be positive".into()));
    }
    if spec.frames == 0 {
        return Err(Error::Config("orbit needs at least one frame".into()));
    }
    if spec.elevation.cos().abs() < 1e-9 {
        return Err(Error::Degenerate("orbit elevation of ±90° is parallel to up".into()));
    }
    let up = up.normalize();
    let (e1, e2) = horizontal_basis(&up);
    let (ce, se) = (spec.elevation.cos(), spec.elevation.sin());
    let t = spec.frames;
    let poses = (0..t)
        .map(|i| {
            let az = spec.azimuth_offset + TAU * i as f64 / t as f64;
            let frac = if t > 1 { i as f64 / (t - 1) as f64 } else { 0.0 };
            let r = spec.radius + (end - spec.radius) * frac;
            let dir = (e1 * az.cos() + e2 * az.sin()) * ce + up * se;
            look_at(&(center + dir * r), center, &up)
        })
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(poses, intrinsics)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intr() -> Intrinsics {
        Intrinsics::from_fov(64, 64, 0.9).unwrap()
    }

    fn circle(n: usize, radius: f64) -> Trajectory {
        let spec = OrbitSpec { radius, elevation: 0.2, frames: n, ..Default::default() };
        orbit_trajectory(&Vector3::zeros(), &spec, &Vector3::y(), intr()).unwrap()
    }

    fn assert_looks_at(traj: &Trajectory, center: &Vector3<f64>, tol: f64) {
        for pose in &traj.poses {
            let px = pose.project(&traj.intrinsics, center).unwrap();
            assert!((px - traj.intrinsics.principal_point()).norm() <= tol);
        }
    }

    #[test]
    fn orbit_square_at_zero_elevation() {
        let spec = OrbitSpec { radius: 2.0, elevation: 0.0, frames: 4, ..Default::default() };
        let c = Vector3::new(1.0, 0.5, -1.0);
        let traj = orbit_trajectory(&c, &spec, &Vector3::y(), intr()).unwrap();
        let pts = traj.centers();
        for p in &pts {
            assert!((p.y - c.y).abs() < 1e-12);
            assert!(((p - c).norm() - 2.0).abs() < 1e-9);
        }
        for i in 0..4 {
            let side = (pts[(i + 1) % 4] - pts[i]).norm();
            assert!((side - 2.0 * 2f64.sqrt()).abs() < 1e-9);
        }
        assert_looks_at(&traj, &c, 1e-6);
    }

    #[test]
    fn spiral_distance_decreases() {
        let spec = OrbitSpec { radius: 4.0, end_radius: Some(2.0), frames: 12, ..Default::default() };
        let traj = orbit_trajectory(&Vector3::zeros(), &spec, &Vector3::y(), intr()).unwrap();
        let d: Vec<f64> = traj.centers().iter().map(|p| p.norm()).collect();
        assert!(d.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn orbit_rejects_vertical_elevation() {
        let spec = OrbitSpec { elevation: std::f64::consts::FRAC_PI_2, ..Default::default() };
        assert!(orbit_trajectory(&Vector3::zeros(), &spec, &Vector3::y(), intr()).is_err());
    }

    #[test]
    fn zero_perturbation_limit() {
        let original = circle(12, 3.0);
        let params = PerturbParams {
            segment_fraction_range: (1.0, 1.0),
            n_control: Some(12),
            frames: 12,
            sine_amplitude: 0.0,
            ..Default::default()
        };
        let out = perturb_trajectory(&original, &Vector3::zeros(), 1.0, &Vector3::y(), &params).unwrap();
        // Interpolating spline: every original center lies on the output curve.
        let spline = BSpline::fit(&original.centers(), 3, 12).unwrap();
        for (t, p) in out.centers().iter().enumerate() {
            assert!((spline.eval(t as f64 / 11.0).unwrap() - p).norm() < 1e-9);
        }
        assert_looks_at(&out, &Vector3::zeros(), 1e-4);
    }

    #[test]
    fn sinusoid_is_constructively_invertible() {
        let original = circle(30, 3.0);
        let base = PerturbParams { sine_amplitude: 0.0, seed: 9, ..Default::default() };
        let wavy = PerturbParams { sine_amplitude: 0.05, sine_cycles: 2.0, ..base.clone() };
        let extent = 1.5;
        let a = perturb_trajectory(&original, &Vector3::zeros(), extent, &Vector3::y(), &base).unwrap();
        let b = perturb_trajectory(&original, &Vector3::zeros(), extent, &Vector3::y(), &wavy).unwrap();
        for (t, (pa, pb)) in a.centers().iter().zip(b.centers()).enumerate() {
            let off = 0.05 * extent * (TAU * 2.0 * t as f64 / 30.0).sin();
            assert!((pb - Vector3::y() * off - pa).norm() < 1e-12);
        }
    }

    #[test]
    fn half_segment_halves_the_radius() {
        let r = 4.0;
        let spec = OrbitSpec { radius: r, elevation: 0.0, frames: 40, ..Default::default() };
        let original = orbit_trajectory(&Vector3::zeros(), &spec, &Vector3::y(), intr()).unwrap();
        let params = PerturbParams {
            segment_fraction_range: (0.5, 0.5),
            sine_amplitude: 0.0,
            n_control: Some(20),
            frames: 40,
            ..Default::default()
        };
        let out = perturb_trajectory(&original, &Vector3::zeros(), 1.0, &Vector3::y(), &params).unwrap();
        // Residual of the least-squares fit to the half-radius circle bounds the deviation.
        let half: Vec<_> = original.centers().iter().map(|p| p * 0.5).collect();
        let fit = BSpline::fit(&half, 3, 20).unwrap();
        let params_u = crate::math::bspline::chord_length_params(&half).unwrap();
        let resid = half.iter().zip(&params_u).map(|(p, &u)| (fit.eval(u).unwrap() - p).norm()).fold(0.0, f64::max);
        // The closed orbit is open-ended as a spline; the endpoint gap adds at most one chord.
        let chord = (half[1] - half[0]).norm();
        for p in out.centers() {
            assert!((p.norm() - 0.5 * r).abs() <= resid + chord, "{}", p.norm());
        }
    }

    #[test]
    fn seeded_and_smooth() {
        let original = circle(30, 3.0);
        let params = PerturbParams { seed: 4, ..Default::default() };
        let a = perturb_trajectory(&original, &Vector3::zeros(), 1.0, &Vector3::y(), &params).unwrap();
        let b = perturb_trajectory(&original, &Vector3::zeros(), 1.0, &Vector3::y(), &params).unwrap();
        assert_eq!(a, b);
        assert_looks_at(&a, &Vector3::zeros(), 1e-3);
        let steps: Vec<f64> = a.centers().windows(2).map(|w| (w[1] - w[0]).norm()).collect();
        let mean = steps.iter().sum::<f64>() / steps.len() as f64;
        assert!(steps.iter().all(|&s| s <= 2.0 * mean));
    }

    #[test]
    fn split_requires_distinct_seeds_and_differs() {
        let original = circle(30, 3.0);
        let params = PerturbParams { seed: 1, ..Default::default() };
        let up = Vector3::y();
        assert!(matches!(
            split_eval_trajectory(&original, &Vector3::zeros(), 1.0, &up, &params, 1),
            Err(Error::Config(_))
        ));
        let (a, b) = split_eval_trajectory(&original, &Vector3::zeros(), 1.0, &up, &params, 2).unwrap();
        assert!(a.centers().iter().zip(b.centers()).any(|(p, q)| (p - q).norm() > 1e-6));
    }

    #[test]
    fn split_boundary_case_is_exempt() {
        let original = circle(30, 3.0);
        let params =
            PerturbParams { segment_fraction_range: (0.8, 0.8), sine_amplitude: 0.0, seed: 1, ..Default::default() };
        let (a, b) = split_eval_trajectory(&original, &Vector3::zeros(), 1.0, &Vector3::y(), &params, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn perturb_errors() {
        let original = circle(3, 3.0);
        let params = PerturbParams { n_control: Some(5), ..Default::default() };
        assert!(perturb_trajectory(&original, &Vector3::zeros(), 1.0, &Vector3::y(), &params).is_err());
        let bad = PerturbParams { segment_fraction_range: (0.9, 0.1), ..Default::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let on_camera = original.poses[0].center();
        let ok = PerturbParams::default();
        assert!(matches!(
            perturb_trajectory(&original, &on_camera, 1.0, &Vector3::y(), &ok),
            Err(Error::Degenerate(_))
        ));
    }
}
