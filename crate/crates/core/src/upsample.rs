//! Video upsampling stages: classical separable filters, external plugins,
//! chaining, and the box-filter degradation used to make low-res inputs.
//!
//! Output pixel `X` samples the input at `(X + 0.5) / r - 0.5` (pixel-center
//! alignment). Taps outside the image clamp to the edge and filter weights are
//! renormalized to sum to one.

use std::f64::consts::PI;
use std::fmt;
use std::fs;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{ImageFrame, VideoClip};
use crate::plugin::{self, Manifest, PluginDescriptor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Filter {
    Nearest,
    Bilinear,
    Bicubic,
    #[default]
    Lanczos3,
}

impl Filter {
    pub const ALL: [Filter; 4] = [Filter::Nearest, Filter::Bilinear, Filter::Bicubic, Filter::Lanczos3];

    fn radius(self) -> i64 {
        match self {
            Filter::Nearest | Filter::Bilinear => 1,
            Filter::Bicubic => 2,
            Filter::Lanczos3 => 3,
        }
    }

    fn weight(self, t: f64) -> f64 {
        let t = t.abs();
        match self {
            Filter::Nearest => unreachable!("nearest is sampled directly"),
            Filter::Bilinear => (1.0 - t).max(0.0),
            // Keys cubic convolution, a = -0.5.
            Filter::Bicubic => {
                let a = -0.5;
                if t <= 1.0 {
                    (a + 2.0) * t.powi(3) - (a + 3.0) * t * t + 1.0
                } else if t < 2.0 {
                    a * t.powi(3) - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
                } else {
                    0.0
                }
            }
            Filter::Lanczos3 => {
                if t < 1e-12 {
                    1.0
                } else if t < 3.0 {
                    let p = PI * t;
                    3.0 * p.sin() * (p / 3.0).sin() / (p * p)
                } else {
                    0.0
                }
            }
        }
    }
}

impl fmt::Display for Filter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Filter::Nearest => "nearest",
            Filter::Bilinear => "bilinear",
            Filter::Bicubic => "bicubic",
            Filter::Lanczos3 => "lanczos3",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StageKind {
    Builtin(Filter),
    External(PluginDescriptor),
}

/// One upsampling stage. In JSON either `{"builtin": "lanczos3", "factor": 4}`
/// or `{"command": "...", "args": [...], "factor": 4, "timeout_s": 600}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StageSpec", into = "StageSpec")]
pub struct UpsamplerStage {
    pub kind: StageKind,
    pub factor: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StageSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    builtin: Option<Filter>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    command: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    args: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    timeout_s: Option<f64>,
    factor: u32,
}

impl TryFrom<StageSpec> for UpsamplerStage {
    type Error = Error;

    fn try_from(s: StageSpec) -> Result<Self> {
        let kind = match (s.builtin, s.command) {
            (Some(f), None) if s.args.is_empty() && s.timeout_s.is_none() => StageKind::Builtin(f),
            (Some(_), None) => return Err(Error::Config("builtin stages take no args or timeout_s".into())),
            (None, Some(command)) => StageKind::External(PluginDescriptor {
                command,
                args: s.args,
                timeout_s: s.timeout_s.unwrap_or(plugin::DEFAULT_TIMEOUT_S),
            }),
            _ => return Err(Error::Config("a stage needs exactly one of `builtin` or `command`".into())),
        };
        let stage = UpsamplerStage { kind, factor: s.factor };
        stage.validate()?;
        Ok(stage)
    }
}

impl From<UpsamplerStage> for StageSpec {
    fn from(s: UpsamplerStage) -> Self {
        match s.kind {
            StageKind::Builtin(f) => {
                StageSpec { builtin: Some(f), command: None, args: vec![], timeout_s: None, factor: s.factor }
            }
            StageKind::External(d) => StageSpec {
                builtin: None,
                command: Some(d.command),
                args: d.args,
                timeout_s: Some(d.timeout_s),
                factor: s.factor,
            },
        }
    }
}

impl UpsamplerStage {
    pub fn builtin(filter: Filter, factor: u32) -> Self {
        Self { kind: StageKind::Builtin(filter), factor }
    }

    pub fn external(desc: PluginDescriptor, factor: u32) -> Self {
        Self { kind: StageKind::External(desc), factor }
    }

    pub fn validate(&self) -> Result<()> {
        if self.factor < 1 {
            return Err(Error::Config("upsampling factor must be at least 1".into()));
        }
        if let StageKind::External(d) = &self.kind {
            d.validate()?;
        }
        Ok(())
    }
}

/// Per output coordinate: `(source index, weight)` taps.
fn taps(filter: Filter, src_len: u32, factor: u32) -> Vec<Vec<(usize, f64)>> {
    let r = factor as f64;
    let last = src_len as i64 - 1;
    (0..src_len * factor)
        .map(|x| {
            let s = (x as f64 + 0.5) / r - 0.5;
            if filter == Filter::Nearest {
                return vec![((x / factor) as usize, 1.0)];
            }
            let base = s.floor() as i64;
            let mut out: Vec<(usize, f64)> = Vec::new();
            for j in base - filter.radius() + 1..=base + filter.radius() {
                let w = filter.weight(s - j as f64);
                if w == 0.0 {
                    continue;
                }
                let idx = j.clamp(0, last) as usize;
                match out.iter_mut().find(|t| t.0 == idx) {
                    Some(t) => t.1 += w,
                    None => out.push((idx, w)),
                }
            }
            let sum: f64 = out.iter().map(|t| t.1).sum();
            out.iter_mut().for_each(|t| t.1 /= sum);
            out
        })
        .collect()
}

pub fn upsample_frame(frame: &ImageFrame, filter: Filter, factor: u32) -> Result<ImageFrame> {
    if factor < 1 {
        return Err(Error::Config("upsampling factor must be at least 1".into()));
    }
    let (w, h) = frame.dims();
    let (ow, oh) = (w * factor, h * factor);
    let tx = taps(filter, w, factor);
    let ty = taps(filter, h, factor);
    let src = frame.data();
    let mut rows = vec![0.0; (ow * h * 3) as usize];
    for y in 0..h as usize {
        for (x, t) in tx.iter().enumerate() {
            for ch in 0..3 {
                rows[(y * ow as usize + x) * 3 + ch] =
                    t.iter().map(|&(i, wt)| wt * src[(y * w as usize + i) * 3 + ch]).sum();
            }
        }
    }
    let mut out = vec![0.0; (ow * oh * 3) as usize];
    for (y, t) in ty.iter().enumerate() {
        for x in 0..ow as usize {
            for ch in 0..3 {
                let v: f64 = t.iter().map(|&(j, wt)| wt * rows[(j * ow as usize + x) * 3 + ch]).sum();
                out[(y * ow as usize + x) * 3 + ch] = v.clamp(0.0, 1.0);
            }
        }
    }
    ImageFrame::new(ow, oh, out)
}

/// Averages `factor × factor` blocks (area-weighted reduction).
pub fn downsample_bilinear(frame: &ImageFrame, factor: u32) -> Result<ImageFrame> {
    let (w, h) = frame.dims();
    if factor < 1 || w % factor != 0 || h % factor != 0 {
        return Err(Error::Dimension(format!("{w}x{h} is not divisible by factor {factor}")));
    }
    let (ow, oh) = (w / factor, h / factor);
    let norm = 1.0 / (factor * factor) as f64;
    Ok(ImageFrame::from_fn(ow, oh, |x, y| {
        let mut acc = [0.0; 3];
        for j in 0..factor {
            for i in 0..factor {
                let p = frame.pixel(x * factor + i, y * factor + j);
                for ch in 0..3 {
                    acc[ch] += p[ch];
                }
            }
        }
        acc.map(|v| v * norm)
    }))
}

pub fn downsample_clip(clip: &VideoClip, factor: u32) -> Result<VideoClip> {
    let frames = clip.frames().par_iter().map(|f| downsample_bilinear(f, factor)).collect::<Result<Vec<_>>>()?;
    let poses = clip.poses().map(|t| t.intrinsics.downscaled(factor).map(|k| t.with_intrinsics(k))).transpose()?;
    VideoClip::new(frames, poses)
}

pub fn upsample(stage: &UpsamplerStage, clip: &VideoClip) -> Result<VideoClip> {
    stage.validate()?;
    if clip.is_empty() {
        return Err(Error::Config("cannot upsample an empty clip".into()));
    }
    let frames = match &stage.kind {
        StageKind::Builtin(filter) => {
            clip.frames().par_iter().map(|f| upsample_frame(f, *filter, stage.factor)).collect::<Result<Vec<_>>>()?
        }
        StageKind::External(desc) => run_external_plugin(desc, stage.factor, clip)?,
    };
    let poses = clip.poses().map(|t| t.with_intrinsics(t.intrinsics.upscaled(stage.factor)));
    VideoClip::new(frames, poses)
}

pub fn chain(stages: &[UpsamplerStage], clip: &VideoClip) -> Result<VideoClip> {
    let (first, rest) = stages.split_first().ok_or_else(|| Error::Config("upsampler chain is empty".into()))?;
    let mut out = upsample(first, clip)?;
    for s in rest {
        out = upsample(s, &out)?;
    }
    Ok(out)
}

/// Runs a plugin over the whole clip and returns exactly `T` frames of `rW × rH`.
pub fn run_external_plugin(desc: &PluginDescriptor, factor: u32, clip: &VideoClip) -> Result<Vec<ImageFrame>> {
    let (w, h) = clip.dims().ok_or_else(|| Error::Config("cannot upsample an empty clip".into()))?;
    let work = tempfile::tempdir()?;
    let (in_dir, out_dir) = (work.path().join("in"), work.path().join("out"));
    plugin::write_frames(&in_dir, clip.frames())?;
    Manifest { factor, frame_count: clip.len(), width: w, height: h }.write(&in_dir)?;
    fs::create_dir_all(&out_dir)?;
    desc.invoke(&in_dir, &out_dir)?;
    plugin::read_frames(&out_dir, clip.len(), w * factor, h * factor)
}
