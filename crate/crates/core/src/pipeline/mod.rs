//! End-to-end commands: degrade, render, upsample, reconstruct, evaluate and
//! the full `run` (render → upsample → reconstruct → evaluate).
//!
//! A run directory holds `input/`, `lowres/`, `upsampled/`, `scene/`, `eval/`
//! and `report/`, plus `config.json`, the resolved configuration. Each stage
//! reads only the files written by earlier stages, so a rerun that finds a
//! stage's stamp unchanged skips it without changing any later result.

pub mod config;
pub mod io;
mod run_dir;

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

pub use config::{apply_override, load_config};
pub use io::{load_image_set, save_image_set, CameraFile, CameraFrame, CAMERA_FILE};
pub use run_dir::{stamp, RunDir};

use crate::error::{Error, Result};
use crate::frame::VideoClip;
use crate::math::Intrinsics;
use crate::metrics::{evaluate_clips, ColorSpace, MetricReport};
use crate::optim::{fit_splats, fit_splats_capped, FitReport, OptimConfig};
use crate::plugin::{self, PluginDescriptor};
use crate::raster::render_video;
use crate::scene::{init_random_in_sphere, load_ply, save_ply, SplatScene};
use crate::trajectory::{
    orbit_trajectory, perturb_trajectory, split_eval_trajectory, OrbitSpec, PerturbParams, Trajectory,
};
use crate::upsample::{chain, downsample_clip, Filter, UpsamplerStage};
use config::{require_dir, require_file, require_set};

pub const SCENE_FILE: &str = "scene.ply";
pub const FIT_REPORT_FILE: &str = "fit_report.json";
pub const METRICS_FILE: &str = "metrics.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSpec {
    /// A splat PLY.
    Splats(PathBuf),
    /// A posed image set directory.
    Images(PathBuf),
}

impl InputSpec {
    fn validate(&self, what: &str) -> Result<()> {
        match self {
            InputSpec::Splats(p) => require_file(p, what),
            InputSpec::Images(d) => require_file(&d.join(CAMERA_FILE), what),
        }
    }

    fn absolute(&self) -> Self {
        let abs = |p: &Path| fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
        match self {
            InputSpec::Splats(p) => InputSpec::Splats(abs(p)),
            InputSpec::Images(p) => InputSpec::Images(abs(p)),
        }
    }
}

/// Pinhole camera for generated trajectories; `fov_x` in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSpec {
    pub width: u32,
    pub height: u32,
    pub fov_x: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self { width: 64, height: 64, fov_x: 0.8 }
    }
}

impl CameraSpec {
    pub fn intrinsics(&self) -> Result<Intrinsics> {
        Intrinsics::from_fov(self.width, self.height, self.fov_x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BaseTrajectory {
    /// Orbit around the scene center.
    Orbit(OrbitSpec),
    /// Poses from a camera file.
    CameraFile(PathBuf),
}

impl Default for BaseTrajectory {
    fn default() -> Self {
        BaseTrajectory::Orbit(OrbitSpec::default())
    }
}

impl BaseTrajectory {
    /// Camera-file poses keep the file's intrinsics unless `camera` is given;
    /// orbits use `camera` or the default camera.
    pub fn build(&self, center: &Vector3<f64>, up: &Vector3<f64>, camera: Option<CameraSpec>) -> Result<Trajectory> {
        match self {
            BaseTrajectory::Orbit(spec) => orbit_trajectory(center, spec, up, camera.unwrap_or_default().intrinsics()?),
            BaseTrajectory::CameraFile(path) => {
                let t = io::load_trajectory(path)?;
                Ok(match camera {
                    Some(c) => t.with_intrinsics(c.intrinsics()?),
                    None => t,
                })
            }
        }
    }

    fn absolute(&self) -> Self {
        match self {
            BaseTrajectory::CameraFile(p) => {
                BaseTrajectory::CameraFile(fs::canonicalize(p).unwrap_or_else(|_| p.clone()))
            }
            other => other.clone(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            BaseTrajectory::CameraFile(p) => require_file(p, "trajectory camera file"),
            BaseTrajectory::Orbit(_) => Ok(()),
        }
    }
}

fn default_up() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}

fn up_vector(up: [f64; 3]) -> Result<Vector3<f64>> {
    let v = Vector3::from(up);
    if !(v.norm() > 1e-9) || !v.iter().all(|c| c.is_finite()) {
        return Err(Error::Config(format!("up vector {up:?} is degenerate")));
    }
    Ok(v.normalize())
}

/// Rough bounds of what a set of cameras looks at: the least-squares
/// intersection of their optical axes, and the radius of the largest ball
/// around it that fits in the nearest camera's horizontal field of view.
pub fn bounds_from_poses(t: &Trajectory) -> Result<(Vector3<f64>, f64)> {
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for p in &t.poses {
        let d = p.optical_axis();
        let proj = Matrix3::identity() - d * d.transpose();
        a += proj;
        b += proj * p.center();
    }
    let inv = a
        .try_inverse()
        .filter(|_| a.determinant().abs() > 1e-9 * t.len().pow(3) as f64)
        .ok_or_else(|| Error::Degenerate("optical axes are parallel; cannot locate the scene".into()))?;
    let center = inv * b;
    let nearest = t.poses.iter().map(|p| (p.center() - center).norm()).fold(f64::INFINITY, f64::min);
    let half_fov = (t.intrinsics.width as f64 / (2.0 * t.intrinsics.fx)).atan();
    let radius = nearest * half_fov.sin();
    if !(radius > 0.0) {
        return Err(Error::Degenerate("a camera sits at the estimated scene center".into()));
    }
    Ok((center, radius))
}

fn concat(clips: Vec<VideoClip>) -> Result<VideoClip> {
    let mut frames = Vec::new();
    let mut poses = Vec::new();
    let mut intr = None;
    for clip in clips {
        let (f, t) = clip.into_parts();
        let t = t.ok_or_else(|| Error::Config("training frames must be posed".into()))?;
        if intr.is_some_and(|k| k != t.intrinsics) {
            return Err(Error::Dimension("training clips have different intrinsics".into()));
        }
        intr = Some(t.intrinsics);
        frames.extend(f);
        poses.extend(t.poses);
    }
    let intr = intr.ok_or_else(|| Error::Config("no training frames".into()))?;
    VideoClip::new(frames, Some(Trajectory::new(poses, intr)?))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?).map_err(Error::file(path))
}

fn fit_from(
    targets: &VideoClip,
    init: Option<SplatScene>,
    random_points: usize,
    optim: &OptimConfig,
) -> Result<(SplatScene, FitReport)> {
    let init = match init {
        Some(s) => s,
        None => {
            let (center, radius) = bounds_from_poses(targets.poses().expect("posed"))?;
            init_random_in_sphere(center, radius, random_points, optim.seed)?
        }
    };
    fit_splats(targets, &init, optim)
}

// ---------------------------------------------------------------- degrade

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradeConfig {
    /// Posed high-resolution image set.
    pub input: PathBuf,
    pub output: PathBuf,
    pub factor: u32,
    /// When set, also fit a scene with at most this many splats to the low-res images.
    pub budget: Option<usize>,
    pub random_points: usize,
    pub optim: OptimConfig,
}

impl Default for DegradeConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            output: PathBuf::new(),
            factor: 8,
            budget: None,
            random_points: 1000,
            optim: OptimConfig::default(),
        }
    }
}

#[derive(Debug)]
pub struct DegradeOutput {
    pub clip: VideoClip,
    pub scene: Option<(SplatScene, FitReport)>,
}

/// Box-downsamples a posed image set and optionally fits a budget-capped scene to it.
pub fn cmd_degrade(cfg: &DegradeConfig) -> Result<DegradeOutput> {
    require_file(&cfg.input.join(CAMERA_FILE), "degrade input")?;
    require_set(&cfg.output, "degrade output")?;
    if cfg.factor < 1 {
        return Err(Error::Config("degrade factor must be at least 1".into()));
    }
    if cfg.budget == Some(0) {
        return Err(Error::Config("splat budget must be at least 1".into()));
    }
    cfg.optim.validate()?;
    let clip = load_image_set(&cfg.input)?;
    let low = downsample_clip(&clip, cfg.factor)?;
    save_image_set(&low, &cfg.output)?;
    let scene = match cfg.budget {
        Some(budget) => {
            let (center, radius) = bounds_from_poses(low.poses().expect("posed"))?;
            let init = init_random_in_sphere(center, radius, cfg.random_points.max(1), cfg.optim.seed)?;
            let (scene, report) = fit_splats_capped(&low, &init, budget, &cfg.optim)?;
            save_ply(&scene, cfg.output.join(SCENE_FILE))?;
            write_json(&cfg.output.join(FIT_REPORT_FILE), &report)?;
            Some((scene, report))
        }
        None => None,
    };
    Ok(DegradeOutput { clip: low, scene })
}

// ---------------------------------------------------------------- render

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub scene: PathBuf,
    pub output: PathBuf,
    pub trajectory: BaseTrajectory,
    /// Perturbs the base trajectory when set.
    pub perturb: Option<PerturbParams>,
    pub camera: Option<CameraSpec>,
    #[serde(default = "default_up")]
    pub up: [f64; 3],
    pub background: [f64; 3],
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            scene: PathBuf::new(),
            output: PathBuf::new(),
            trajectory: BaseTrajectory::default(),
            perturb: None,
            camera: None,
            up: default_up(),
            background: [0.0; 3],
        }
    }
}

/// Renders a PLY along a trajectory into `%06d.png` frames plus `cameras.json`.
pub fn cmd_render(cfg: &RenderConfig) -> Result<VideoClip> {
    require_file(&cfg.scene, "render scene")?;
    require_set(&cfg.output, "render output")?;
    cfg.trajectory.validate()?;
    let up = up_vector(cfg.up)?;
    let scene = load_ply(&cfg.scene)?;
    let mut traj = cfg.trajectory.build(&scene.center, &up, cfg.camera)?;
    if let Some(p) = &cfg.perturb {
        traj = perturb_trajectory(&traj, &scene.center, scene.extent, &up, p)?;
    }
    let clip = render_video(&scene, &traj, cfg.background)?;
    save_image_set(&clip, &cfg.output)?;
    Ok(clip)
}

// ---------------------------------------------------------------- upsample

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpsampleConfig {
    /// Frame directory; `cameras.json` is carried over with scaled intrinsics when present.
    pub input: PathBuf,
    pub output: PathBuf,
    pub stages: Vec<UpsamplerStage>,
}

fn default_stages() -> Vec<UpsamplerStage> {
    vec![UpsamplerStage::builtin(Filter::Lanczos3, 4)]
}

impl Default for UpsampleConfig {
    fn default() -> Self {
        Self { input: PathBuf::new(), output: PathBuf::new(), stages: default_stages() }
    }
}

pub fn cmd_upsample(cfg: &UpsampleConfig) -> Result<VideoClip> {
    require_dir(&cfg.input, "upsample input")?;
    require_set(&cfg.output, "upsample output")?;
    if cfg.stages.is_empty() {
        return Err(Error::Config("no upsampling stages configured".into()));
    }
    let clip = if cfg.input.join(CAMERA_FILE).is_file() {
        load_image_set(&cfg.input)?
    } else {
        VideoClip::new(io::load_frames(&cfg.input)?, None)?
    };
    let out = chain(&cfg.stages, &clip)?;
    save_image_set(&out, &cfg.output)?;
    Ok(out)
}

// ---------------------------------------------------------------- reconstruct

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructConfig {
    /// Posed image set to fit.
    pub input: PathBuf,
    pub output: PathBuf,
    /// Initial splats; random points in the cameras' view volume otherwise.
    pub init: Option<PathBuf>,
    pub random_points: usize,
    pub optim: OptimConfig,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            output: PathBuf::new(),
            init: None,
            random_points: 1000,
            optim: OptimConfig::default(),
        }
    }
}

pub fn cmd_reconstruct(cfg: &ReconstructConfig) -> Result<(SplatScene, FitReport)> {
    require_file(&cfg.input.join(CAMERA_FILE), "reconstruct input")?;
    require_set(&cfg.output, "reconstruct output")?;
    if let Some(p) = &cfg.init {
        require_file(p, "initial scene")?;
    }
    if cfg.init.is_none() && cfg.random_points == 0 {
        return Err(Error::Config("random_points must be positive without an initial scene".into()));
    }
    cfg.optim.validate()?;
    let targets = load_image_set(&cfg.input)?;
    let init = cfg.init.as_ref().map(load_ply).transpose()?;
    let (scene, report) = fit_from(&targets, init, cfg.random_points, &cfg.optim)?;
    fs::create_dir_all(&cfg.output).map_err(Error::file(&cfg.output))?;
    save_ply(&scene, cfg.output.join(SCENE_FILE))?;
    write_json(&cfg.output.join(FIT_REPORT_FILE), &report)?;
    Ok((scene, report))
}

// ---------------------------------------------------------------- evaluate

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub pred: PathBuf,
    pub gt: PathBuf,
    /// Directory receiving `metrics.json`.
    pub output: PathBuf,
    pub plugins: Vec<PluginDescriptor>,
    pub color_space: ColorSpace,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            pred: PathBuf::new(),
            gt: PathBuf::new(),
            output: PathBuf::new(),
            plugins: Vec::new(),
            color_space: ColorSpace::Linear,
        }
    }
}

fn frame_names(dir: &Path) -> Result<Vec<String>> {
    Ok(plugin::list_frames(dir)?
        .iter()
        .map(|p| p.file_name().expect("frame file").to_string_lossy().into_owned())
        .collect())
}

pub fn cmd_evaluate(cfg: &EvaluateConfig) -> Result<MetricReport> {
    require_dir(&cfg.pred, "evaluate pred")?;
    require_dir(&cfg.gt, "evaluate gt")?;
    require_set(&cfg.output, "evaluate output")?;
    let (p, g) = (frame_names(&cfg.pred)?, frame_names(&cfg.gt)?);
    if p != g {
        let extra_pred: Vec<_> = p.iter().filter(|n| !g.contains(n)).cloned().collect();
        let extra_gt: Vec<_> = g.iter().filter(|n| !p.contains(n)).cloned().collect();
        return Err(Error::Dimension(format!(
            "frame sets differ: only in pred {extra_pred:?}, only in gt {extra_gt:?}"
        )));
    }
    let pred = VideoClip::new(io::load_frames(&cfg.pred)?, None)?;
    let gt = VideoClip::new(io::load_frames(&cfg.gt)?, None)?;
    let report = evaluate_clips(&pred, &gt, &cfg.plugins, cfg.color_space)?;
    fs::create_dir_all(&cfg.output).map_err(Error::file(&cfg.output))?;
    write_json(&cfg.output.join(METRICS_FILE), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------- run

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryConfig {
    /// Original path whose camera centers are pulled toward the scene center and perturbed.
    pub base: BaseTrajectory,
    /// The perturbation; its `seed` must stay 0, seeds come from the run seed.
    pub perturb: PerturbParams,
    /// Number of independent upsampling trajectories.
    pub count: usize,
    /// Seed of the evaluation trajectory; defaults to `seed + count`.
    pub eval_seed: Option<u64>,
    #[serde(default = "default_up")]
    pub up: [f64; 3],
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            base: BaseTrajectory::default(),
            perturb: PerturbParams::default(),
            count: 1,
            eval_seed: None,
            up: default_up(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    /// Start from the input splats when the input is a scene.
    pub from_input: bool,
    pub random_points: usize,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self { from_input: true, random_points: 1000 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Ground truth. An image set also fixes the evaluation cameras; otherwise the
    /// evaluation trajectory is rendered from this scene (default: the input scene).
    pub reference: Option<InputSpec>,
    pub color_space: ColorSpace,
    pub plugins: Vec<PluginDescriptor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: Option<InputSpec>,
    pub output: PathBuf,
    /// Low-resolution camera for rendering a scene input.
    pub camera: Option<CameraSpec>,
    pub trajectory: TrajectoryConfig,
    pub upsampler: Vec<UpsamplerStage>,
    pub optim: OptimConfig,
    pub init: InitConfig,
    pub evaluation: EvaluationConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: None,
            output: PathBuf::new(),
            camera: None,
            trajectory: TrajectoryConfig::default(),
            upsampler: default_stages(),
            optim: OptimConfig::default(),
            init: InitConfig::default(),
            evaluation: EvaluationConfig::default(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let input = self.input.as_ref().ok_or_else(|| Error::Config("input is not set".into()))?;
        input.validate("input")?;
        require_set(&self.output, "output")?;
        if self.upsampler.is_empty() {
            return Err(Error::Config("no upsampling stages configured".into()));
        }
        for s in &self.upsampler {
            s.validate()?;
        }
        self.optim.validate()?;
        if self.optim.seed != 0 || self.trajectory.perturb.seed != 0 {
            return Err(Error::Config("set the top-level `seed`; section seeds are derived from it".into()));
        }
        self.trajectory.perturb.validate()?;
        self.trajectory.base.validate()?;
        up_vector(self.trajectory.up)?;
        if self.trajectory.count < 1 {
            return Err(Error::Config("trajectory.count must be at least 1".into()));
        }
        if let Some(e) = self.trajectory.eval_seed {
            if (self.seed..self.seed + self.trajectory.count as u64).contains(&e) {
                return Err(Error::Config(format!("eval_seed {e} collides with an upsampling trajectory seed")));
            }
        }
        if let Some(c) = &self.camera {
            c.intrinsics()?;
        }
        if let Some(r) = &self.evaluation.reference {
            r.validate("evaluation reference")?;
        }
        match input {
            InputSpec::Images(_) if !matches!(self.evaluation.reference, Some(InputSpec::Images(_))) => {
                return Err(Error::Config("an image-set input needs evaluation.reference to be an image set".into()))
            }
            InputSpec::Images(_) if self.init.random_points == 0 => {
                return Err(Error::Config("init.random_points must be positive for an image-set input".into()))
            }
            _ => {}
        }
        for p in &self.evaluation.plugins {
            p.validate()?;
        }
        Ok(())
    }

    /// The configuration with defaults filled in, input paths made absolute and
    /// derived seeds written out.
    pub fn resolved(&self) -> Self {
        let mut r = self.clone();
        r.input = r.input.map(|i| i.absolute());
        r.evaluation.reference = r.evaluation.reference.map(|i| i.absolute());
        r.trajectory.base = r.trajectory.base.absolute();
        r.trajectory.eval_seed = Some(self.eval_seed());
        r
    }

    fn eval_seed(&self) -> u64 {
        self.trajectory.eval_seed.unwrap_or(self.seed + self.trajectory.count as u64)
    }

    fn total_factor(&self) -> u32 {
        self.upsampler.iter().map(|s| s.factor).product()
    }
}

#[derive(Debug)]
pub struct RunOutput {
    pub scene: SplatScene,
    pub metrics: MetricReport,
    /// Stages that ran rather than being reused.
    pub ran: Vec<String>,
}

fn traj_dir(i: usize) -> String {
    format!("traj_{i:03}")
}

const EVAL_CAMERAS: &str = "eval_cameras.json";

/// Runs every stage, reusing those whose stamps match.
pub fn cmd_run(cfg: &PipelineConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let cfg = cfg.resolved();
    let input = cfg.input.clone().expect("validated");
    let run = RunDir::open(&cfg.output)?;
    write_json(&run.root().join("config.json"), &cfg)?;
    let mut ran = Vec::new();
    let mut mark = |name: &str, did: bool| {
        if did {
            ran.push(name.to_string());
        }
    };

    // input: a private copy of what the run consumes.
    let input_path = match &input {
        InputSpec::Splats(p) | InputSpec::Images(p) => p.clone(),
    };
    let kind = match &input {
        InputSpec::Splats(_) => "splats",
        InputSpec::Images(_) => "images",
    };
    let s = stamp("input", &kind, &[&input_path])?;
    let did = run.stage("input", &s, |dir| match &input {
        InputSpec::Splats(p) => {
            fs::copy(p, dir.join(SCENE_FILE)).map_err(Error::file(p))?;
            Ok(())
        }
        InputSpec::Images(d) => save_image_set(&load_image_set(d)?, &dir.join("images")),
    })?;
    mark("input", did);
    let input_dir = run.stage_dir("input");

    // lowres: the videos the upsampler sees, and the evaluation cameras.
    let lowres_cfg = (&cfg.camera, &cfg.trajectory, cfg.optim.background, cfg.seed);
    let s = stamp("lowres", &lowres_cfg, &[&input_dir])?;
    let did = run.stage("lowres", &s, |dir| match &input {
        InputSpec::Images(_) => save_image_set(&load_image_set(&input_dir.join("images"))?, &dir.join(traj_dir(0))),
        InputSpec::Splats(_) => {
            let scene = load_ply(input_dir.join(SCENE_FILE))?;
            let t = &cfg.trajectory;
            let up = up_vector(t.up)?;
            let base = t.base.build(&scene.center, &up, cfg.camera)?;
            for i in 0..t.count {
                let params = PerturbParams { seed: cfg.seed + i as u64, ..t.perturb.clone() };
                let traj = if i == 0 {
                    let (traj, eval) =
                        split_eval_trajectory(&base, &scene.center, scene.extent, &up, &params, cfg.eval_seed())?;
                    io::save_trajectory(&eval, &dir.join(EVAL_CAMERAS))?;
                    traj
                } else {
                    perturb_trajectory(&base, &scene.center, scene.extent, &up, &params)?
                };
                save_image_set(&render_video(&scene, &traj, cfg.optim.background)?, &dir.join(traj_dir(i)))?;
            }
            Ok(())
        }
    })?;
    mark("lowres", did);
    let lowres_dir = run.stage_dir("lowres");
    let count = match input {
        InputSpec::Images(_) => 1,
        InputSpec::Splats(_) => cfg.trajectory.count,
    };

    // upsampled: each trajectory is upsampled as its own video.
    let s = stamp("upsampled", &cfg.upsampler, &[&lowres_dir])?;
    let did = run.stage("upsampled", &s, |dir| {
        for i in 0..count {
            let clip = load_image_set(&lowres_dir.join(traj_dir(i)))?;
            save_image_set(&chain(&cfg.upsampler, &clip)?, &dir.join(traj_dir(i)))?;
        }
        Ok(())
    })?;
    mark("upsampled", did);
    let upsampled_dir = run.stage_dir("upsampled");

    // scene: the high-resolution fit.
    let optim = OptimConfig { seed: cfg.seed, ..cfg.optim.clone() };
    let s = stamp("scene", &(&optim, &cfg.init), &[&upsampled_dir, &input_dir])?;
    let did = run.stage("scene", &s, |dir| {
        let clips = (0..count).map(|i| load_image_set(&upsampled_dir.join(traj_dir(i)))).collect::<Result<Vec<_>>>()?;
        let targets = concat(clips)?;
        let init = match input {
            InputSpec::Splats(_) if cfg.init.from_input => Some(load_ply(input_dir.join(SCENE_FILE))?),
            _ => None,
        };
        let (scene, report) = fit_from(&targets, init, cfg.init.random_points, &optim)?;
        save_ply(&scene, dir.join(SCENE_FILE))?;
        write_json(&dir.join(FIT_REPORT_FILE), &report)
    })?;
    mark("scene", did);
    let scene_dir = run.stage_dir("scene");

    // eval: predicted and reference frames on the evaluation cameras.
    let reference_path = cfg.evaluation.reference.as_ref().map(|r| match r {
        InputSpec::Splats(p) | InputSpec::Images(p) => p.clone(),
    });
    let mut eval_inputs: Vec<&Path> = vec![&scene_dir, &lowres_dir, &input_dir];
    if let Some(p) = &reference_path {
        eval_inputs.push(p);
    }
    let eval_cfg = (&cfg.evaluation.reference, cfg.total_factor(), cfg.optim.background);
    let s = stamp("eval", &eval_cfg, &eval_inputs)?;
    let did = run.stage("eval", &s, |dir| {
        let scene = load_ply(scene_dir.join(SCENE_FILE))?;
        let bg = cfg.optim.background;
        let (gt, traj) = match &cfg.evaluation.reference {
            Some(InputSpec::Images(d)) => {
                let gt = load_image_set(d)?;
                let traj = gt.poses().expect("posed").clone();
                (gt, traj)
            }
            reference => {
                let lowres_eval = io::load_trajectory(&lowres_dir.join(EVAL_CAMERAS))?;
                let traj = lowres_eval.with_intrinsics(lowres_eval.intrinsics.upscaled(cfg.total_factor()));
                let ref_scene = match reference {
                    Some(InputSpec::Splats(p)) => load_ply(p)?,
                    _ => load_ply(input_dir.join(SCENE_FILE))?,
                };
                (render_video(&ref_scene, &traj, bg)?, traj)
            }
        };
        save_image_set(&gt, &dir.join("gt"))?;
        save_image_set(&render_video(&scene, &traj, bg)?, &dir.join("pred"))
    })?;
    mark("eval", did);
    let eval_dir = run.stage_dir("eval");

    // report: metrics on the stored frames.
    let report_cfg = (&cfg.evaluation.color_space, &cfg.evaluation.plugins);
    let s = stamp("report", &report_cfg, &[&eval_dir])?;
    let did = run.stage("report", &s, |dir| {
        let ev = EvaluateConfig {
            pred: eval_dir.join("pred"),
            gt: eval_dir.join("gt"),
            output: dir.to_path_buf(),
            plugins: cfg.evaluation.plugins.clone(),
            color_space: cfg.evaluation.color_space,
        };
        cmd_evaluate(&ev).map(|_| ())
    })?;
    mark("report", did);

    let metrics_path = run.stage_dir("report").join(METRICS_FILE);
    let metrics: MetricReport = serde_json::from_slice(&fs::read(&metrics_path).map_err(Error::file(&metrics_path))?)?;
    let scene = load_ply(scene_dir.join(SCENE_FILE))?;
    Ok(RunOutput { scene, metrics, ran })
}
