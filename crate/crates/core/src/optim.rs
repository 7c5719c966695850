//! Fitting a splat scene to posed frames with Adam, densification and pruning.

use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{ImageFrame, VideoClip};
use crate::math::sh::MAX_COEFFS;
use crate::metrics::{psnr, ssim_with_grad};
use crate::raster::{render, render_backward, SplatGradient};
use crate::scene::{GaussianSplat, SplatScene};
use crate::trajectory::Trajectory;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub steps: usize,
    /// Initial position learning rate, multiplied by the scene extent.
    pub lr_position: f64,
    /// Final position learning rate after exponential decay, also extent-relative.
    pub lr_position_final: f64,
    pub lr_rotation: f64,
    pub lr_scale: f64,
    pub lr_opacity: f64,
    /// Rate for the constant color term; higher-order SH coefficients use 1/20 of it.
    pub lr_sh: f64,
    pub ssim_weight: f64,
    pub densify_interval: usize,
    pub densify_until_step: usize,
    pub prune_opacity_threshold: f64,
    /// Threshold on the view-averaged norm of the NDC-space center gradient.
    pub grad_densify_threshold: f64,
    /// Splats whose largest scale is below this fraction of the extent are cloned, larger ones split.
    pub clone_scale_fraction: f64,
    pub max_splats: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub background: [f64; 3],
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr_position: 1.6e-4,
            lr_position_final: 1.6e-6,
            lr_rotation: 1e-3,
            lr_scale: 5e-3,
            lr_opacity: 5e-2,
            lr_sh: 2.5e-3,
            ssim_weight: 0.2,
            densify_interval: 100,
            densify_until_step: 1500,
            prune_opacity_threshold: 0.005,
            grad_densify_threshold: 2e-4,
            clone_scale_fraction: 0.01,
            max_splats: 1_000_000,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-15,
            background: [0.0; 3],
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.steps < 1 {
            return bad("steps must be at least 1".into());
        }
        for (name, v) in [
            ("lr_position", self.lr_position),
            ("lr_position_final", self.lr_position_final),
            ("lr_rotation", self.lr_rotation),
            ("lr_scale", self.lr_scale),
            ("lr_opacity", self.lr_opacity),
            ("lr_sh", self.lr_sh),
            ("epsilon", self.epsilon),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.ssim_weight) {
            return bad(format!("ssim_weight must be in [0, 1], got {}", self.ssim_weight));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must be in [0, 1)".into());
        }
        if self.densify_interval < 1 {
            return bad("densify_interval must be at least 1".into());
        }
        if self.max_splats < 1 {
            return bad("max_splats must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.prune_opacity_threshold) {
            return bad("prune_opacity_threshold must be in [0, 1)".into());
        }
        if !(self.grad_densify_threshold >= 0.0) || !(self.clone_scale_fraction >= 0.0) {
            return bad("densification thresholds must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Training loss of every step.
    pub loss: Vec<f64>,
    /// Splat count after every step.
    pub splat_counts: Vec<usize>,
    /// PSNR of each training view after the last step.
    pub final_psnr: Vec<f64>,
    pub final_splats: usize,
    pub seconds: f64,
}

impl FitReport {
    pub fn mean_final_psnr(&self) -> f64 {
        self.final_psnr.iter().sum::<f64>() / self.final_psnr.len().max(1) as f64
    }
}

/// `(1-λ)·L1 + λ·(1-SSIM)` and its gradient with respect to `rendered`.
pub fn loss(rendered: &ImageFrame, target: &ImageFrame, ssim_weight: f64) -> Result<(f64, ImageFrame)> {
    rendered.ensure_same_dims(target)?;
    let n = rendered.data().len() as f64;
    let l1_w = 1.0 - ssim_weight;
    let mut l1 = 0.0;
    let mut grad: Vec<f64> = rendered
        .data()
        .iter()
        .zip(target.data())
        .map(|(r, t)| {
            let d = r - t;
            l1 += d.abs();
            if d > 0.0 {
                l1_w / n
            } else if d < 0.0 {
                -l1_w / n
            } else {
                0.0
            }
        })
        .collect();
    let mut value = l1_w * l1 / n;
    if ssim_weight > 0.0 {
        let (s, gs) = ssim_with_grad(rendered, target)?;
        value += ssim_weight * (1.0 - s);
        grad.iter_mut().zip(gs.data()).for_each(|(g, d)| *g -= ssim_weight * d);
    }
    Ok((value, ImageFrame::new(rendered.width(), rendered.height(), grad)?))
}

const N_PARAMS: usize = 11 + 3 * MAX_COEFFS;

fn pack(s: &GaussianSplat) -> [f64; N_PARAMS] {
    let mut p = [0.0; N_PARAMS];
    p[0..3].copy_from_slice(s.position.as_slice());
    p[3..7].copy_from_slice(&s.rotation.wxyz());
    p[7..10].copy_from_slice(s.log_scale.as_slice());
    p[10] = s.opacity_logit;
    for (k, c) in s.sh.iter().enumerate() {
        p[11 + 3 * k..14 + 3 * k].copy_from_slice(c);
    }
    p
}

fn unpack(s: &mut GaussianSplat, p: &[f64; N_PARAMS]) {
    s.position = Vector3::new(p[0], p[1], p[2]);
    // Stored unnormalized; the renderer normalizes and the gradient accounts for it.
    s.rotation.w = p[3];
    s.rotation.x = p[4];
    s.rotation.y = p[5];
    s.rotation.z = p[6];
    s.log_scale = Vector3::new(p[7], p[8], p[9]);
    s.opacity_logit = p[10];
    for k in 0..MAX_COEFFS {
        s.sh[k].copy_from_slice(&p[11 + 3 * k..14 + 3 * k]);
    }
}

fn pack_grad(g: &SplatGradient) -> [f64; N_PARAMS] {
    let mut p = [0.0; N_PARAMS];
    p[0..3].copy_from_slice(g.position.as_slice());
    p[3..7].copy_from_slice(&g.rotation);
    p[7..10].copy_from_slice(g.log_scale.as_slice());
    p[10] = g.opacity_logit;
    for (k, c) in g.sh.iter().enumerate() {
        p[11 + 3 * k..14 + 3 * k].copy_from_slice(c);
    }
    p
}

/// Radius used to scale position learning rates and densification: 1.1× the
/// spread of the camera centers, or the scene extent when cameras coincide.
pub fn camera_extent(trajectory: &Trajectory, fallback: f64) -> f64 {
    let centers = trajectory.centers();
    let mean = centers.iter().fold(Vector3::zeros(), |a, c| a + c) / centers.len().max(1) as f64;
    let spread = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max);
    if spread > 1e-6 {
        1.1 * spread
    } else {
        fallback
    }
}

/// Per-splat optimizer state that moves with the splat through densification and pruning.
#[derive(Clone)]
struct SplatState {
    m: [f64; N_PARAMS],
    v: [f64; N_PARAMS],
    grad_accum: f64,
    seen: u32,
}

impl SplatState {
    fn fresh() -> Self {
        Self { m: [0.0; N_PARAMS], v: [0.0; N_PARAMS], grad_accum: 0.0, seen: 0 }
    }
}

struct Fitter<'a> {
    cfg: &'a OptimConfig,
    extent: f64,
    splats: Vec<GaussianSplat>,
    state: Vec<SplatState>,
    rng: ChaCha8Rng,
}

impl Fitter<'_> {
    fn lr_position(&self, step: usize) -> f64 {
        let t = step as f64 / self.cfg.steps as f64;
        let (a, b) = (self.cfg.lr_position.ln(), self.cfg.lr_position_final.ln());
        (a + t * (b - a)).exp() * self.extent
    }

    fn adam(&mut self, step: usize, grads: &[SplatGradient], width: u32, height: u32) {
        let cfg = self.cfg;
        let t = (step + 1) as i32;
        let (bc1, bc2) = (1.0 - cfg.beta1.powi(t), 1.0 - cfg.beta2.powi(t));
        let mut lr = [0.0; N_PARAMS];
        lr[0..3].fill(self.lr_position(step));
        lr[3..7].fill(cfg.lr_rotation);
        lr[7..10].fill(cfg.lr_scale);
        lr[10] = cfg.lr_opacity;
        lr[11..14].fill(cfg.lr_sh);
        lr[14..].fill(cfg.lr_sh / 20.0);
        for ((splat, st), g) in self.splats.iter_mut().zip(&mut self.state).zip(grads) {
            if g.visible {
                let ndc = [g.mean2d[0] * 0.5 * width as f64, g.mean2d[1] * 0.5 * height as f64];
                st.grad_accum += (ndc[0] * ndc[0] + ndc[1] * ndc[1]).sqrt();
                st.seen += 1;
            }
            let gv = pack_grad(g);
            let mut p = pack(splat);
            for i in 0..N_PARAMS {
                st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * gv[i];
                st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * gv[i] * gv[i];
                let mh = st.m[i] / bc1;
                let vh = st.v[i] / bc2;
                p[i] -= lr[i] * mh / (vh.sqrt() + cfg.epsilon);
            }
            unpack(splat, &p);
        }
    }

    /// Clones or splits high-gradient splats (highest first, within the budget),
    /// then prunes transparent ones.
    fn densify_and_prune(&mut self) {
        let cfg = self.cfg;
        let mut candidates: Vec<(usize, f64)> = self
            .state
            .iter()
            .enumerate()
            .filter(|(_, st)| st.seen > 0)
            .map(|(i, st)| (i, st.grad_accum / st.seen as f64))
            .filter(|&(_, g)| g >= cfg.grad_densify_threshold)
            .collect();
        candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        // Each clone or split adds exactly one splat.
        candidates.truncate(cfg.max_splats.saturating_sub(self.splats.len()));

        let mut split = vec![false; self.splats.len()];
        let mut added = Vec::new();
        for &(i, _) in &candidates {
            let s = &self.splats[i];
            let scale = s.scale();
            if scale.max() <= cfg.clone_scale_fraction * self.extent {
                added.push(s.clone());
            } else {
                split[i] = true;
                let rot = s.rotation.to_rotation_matrix();
                for _ in 0..2 {
                    let n = Vector3::from_fn(|_, _| self.rng.sample::<f64, _>(StandardNormal));
                    let mut child = s.clone();
                    child.position = s.position + rot * scale.component_mul(&n);
                    child.log_scale = s.log_scale.map(|l| l - 1.6f64.ln());
                    added.push(child);
                }
            }
        }
        let mut splats = Vec::with_capacity(self.splats.len() + added.len());
        let mut state = Vec::with_capacity(splats.capacity());
        for (i, (s, st)) in self.splats.drain(..).zip(self.state.drain(..)).enumerate() {
            if !split[i] {
                splats.push(s);
                state.push(st);
            }
        }
        for s in added {
            splats.push(s);
            state.push(SplatState::fresh());
        }

        let keep: Vec<bool> = splats.iter().map(|s| s.opacity() >= cfg.prune_opacity_threshold).collect();
        if keep.iter().any(|&k| k) {
            let mut it = keep.iter();
            splats.retain(|_| *it.next().unwrap());
            let mut it = keep.iter();
            state.retain(|_| *it.next().unwrap());
        } else {
            let best =
                (0..splats.len()).max_by(|&a, &b| splats[a].opacity_logit.total_cmp(&splats[b].opacity_logit)).unwrap();
            splats = vec![splats.swap_remove(best)];
            state = vec![state.swap_remove(best)];
        }
        for st in &mut state {
            st.grad_accum = 0.0;
            st.seen = 0;
        }
        self.splats = splats;
        self.state = state;
    }
}

pub fn fit_splats(targets: &VideoClip, init: &SplatScene, config: &OptimConfig) -> Result<(SplatScene, FitReport)> {
    config.validate()?;
    let trajectory = targets.poses().ok_or_else(|| Error::Config("fitting needs posed target frames".into()))?;
    if targets.is_empty() {
        return Err(Error::Config("no target frames".into()));
    }
    if init.is_empty() {
        return Err(Error::EmptyScene);
    }
    if init.len() > config.max_splats {
        return Err(Error::Config(format!(
            "init has {} splats, more than max_splats {}",
            init.len(),
            config.max_splats
        )));
    }
    let started = Instant::now();
    let intr = trajectory.intrinsics;
    let mut fit = Fitter {
        cfg: config,
        extent: camera_extent(trajectory, init.extent),
        splats: init.splats.clone(),
        state: vec![SplatState::fresh(); init.len()],
        rng: ChaCha8Rng::seed_from_u64(config.seed),
    };
    let mut report = FitReport {
        loss: Vec::with_capacity(config.steps),
        splat_counts: Vec::with_capacity(config.steps),
        final_psnr: Vec::new(),
        final_splats: 0,
        seconds: 0.0,
    };
    let bg = config.background;
    for step in 0..config.steps {
        let view = fit.rng.gen_range(0..targets.len());
        let scene = SplatScene::with_bounds(std::mem::take(&mut fit.splats), init.center, init.extent)?;
        let pose = &trajectory.poses[view];
        let (img, _) = render(&scene, pose, &intr, bg)?;
        let (l, g) = loss(&img, &targets.frames()[view], config.ssim_weight)?;
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss { step, view, splats: scene.len() });
        }
        let grads = render_backward(&scene, pose, &intr, bg, &g)?;
        fit.splats = scene.splats;
        fit.adam(step, &grads, intr.width, intr.height);
        if (step + 1) % config.densify_interval == 0 && step < config.densify_until_step && step + 1 < config.steps {
            fit.densify_and_prune();
        }
        report.loss.push(l);
        report.splat_counts.push(fit.splats.len());
        if (step + 1) % 100 == 0 {
            log::debug!("step {}: loss {l:.5}, {} splats", step + 1, fit.splats.len());
        }
    }
    let scene = SplatScene::with_bounds(fit.splats, init.center, init.extent)?;
    if !scene.is_finite() {
        return Err(Error::NonFinite("optimized scene".into()));
    }
    report.final_psnr = trajectory
        .poses
        .iter()
        .zip(targets.frames())
        .map(|(pose, target)| psnr(&render(&scene, pose, &intr, bg)?.0, target))
        .collect::<Result<_>>()?;
    report.final_splats = scene.len();
    report.seconds = started.elapsed().as_secs_f64();
    Ok((scene, report))
}

/// [`fit_splats`] with `max_splats = budget`; an initialization above the
/// budget keeps its first `budget` splats.
pub fn fit_splats_capped(
    targets: &VideoClip,
    init: &SplatScene,
    budget: usize,
    config: &OptimConfig,
) -> Result<(SplatScene, FitReport)> {
    if budget < 1 {
        return Err(Error::Config("splat budget must be at least 1".into()));
    }
    let cfg = OptimConfig { max_splats: budget, ..config.clone() };
    let mut init = init.clone();
    init.splats.truncate(budget);
    fit_splats(targets, &init, &cfg)
}
