//! Reference image metrics (PSNR, SSIM with its pixel gradient) and clip evaluation.
//!
//! SSIM uses an 11×11 Gaussian window (σ = 1.5), `K1 = 0.01`, `K2 = 0.03` and
//! dynamic range 1. Only windows lying fully inside the image contribute; the
//! score is the mean over those windows and over the three channels.

use std::collections::BTreeMap;
use std::fs;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{linear_to_srgb_u8, ImageFrame, VideoClip};
use crate::plugin::{self, Manifest, PluginDescriptor};

pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

pub fn psnr(a: &ImageFrame, b: &ImageFrame) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let n = a.data().len() as f64;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

pub fn ssim(a: &ImageFrame, b: &ImageFrame) -> Result<f64> {
    Ok(ssim_impl(a, b, false)?.0)
}

/// SSIM and its gradient with respect to the first image.
pub fn ssim_with_grad(a: &ImageFrame, b: &ImageFrame) -> Result<(f64, ImageFrame)> {
    let (v, g) = ssim_impl(a, b, true)?;
    Ok((v, g.expect("gradient requested")))
}

fn window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w: [f64; SSIM_WINDOW] =
        std::array::from_fn(|k| (-(k as f64 - half).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable valid-mode filtering: `w × h` in, `(w-10) × (h-10)` out.
fn filter(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&line[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for (t, kt) in k.iter().enumerate() {
            let src_row = &rows[(y + t) * ow..(y + t + 1) * ow];
            let dst = &mut out[y * ow..(y + 1) * ow];
            dst.iter_mut().zip(src_row).for_each(|(d, s)| *d += kt * s);
        }
    }
    out
}

/// Adjoint of [`filter`]: scatters a window map back onto the `w × h` image.
fn filter_adjoint(map: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * h];
    for y in 0..oh {
        for (t, kt) in k.iter().enumerate() {
            let src = &map[y * ow..(y + 1) * ow];
            let dst = &mut rows[(y + t) * ow..(y + t + 1) * ow];
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += kt * s);
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = rows[y * ow + x];
            for (t, kt) in k.iter().enumerate() {
                out[y * w + x + t] += kt * v;
            }
        }
    }
    out
}

fn ssim_impl(a: &ImageFrame, b: &ImageFrame, want_grad: bool) -> Result<(f64, Option<ImageFrame>)> {
    a.ensure_same_dims(b)?;
    let (w, h) = (a.width() as usize, a.height() as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Dimension(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}")));
    }
    let k = window();
    let n_win = ((w + 1 - SSIM_WINDOW) * (h + 1 - SSIM_WINDOW)) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; w * h * 3]);
    for ch in 0..3 {
        let x: Vec<f64> = a.data().iter().skip(ch).step_by(3).copied().collect();
        let y: Vec<f64> = b.data().iter().skip(ch).step_by(3).copied().collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, my) = (filter(&x, w, h, &k), filter(&y, w, h, &k));
        let (exx, eyy, exy) = (filter(&xx, w, h, &k), filter(&yy, w, h, &k), filter(&xy, w, h, &k));

        let m = mx.len();
        let (mut g_mu, mut g_var, mut g_cov) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
        for i in 0..m {
            let (ux, uy) = (mx[i], my[i]);
            let vx = exx[i] - ux * ux;
            let vy = eyy[i] - uy * uy;
            let cxy = exy[i] - ux * uy;
            let n1 = 2.0 * ux * uy + C1;
            let n2 = 2.0 * cxy + C2;
            let d1 = ux * ux + uy * uy + C1;
            let d2 = vx + vy + C2;
            let s = n1 * n2 / (d1 * d2);
            total += s;
            if want_grad {
                // ∂S/∂μx, ∂S/∂σx², ∂S/∂σxy, rewritten in terms of E[x], E[x²], E[xy].
                let ds_mu = s * (2.0 * uy / n1 - 2.0 * ux / d1);
                let ds_var = -s / d2;
                let ds_cov = 2.0 * s / n2;
                g_mu[i] = ds_mu - 2.0 * ux * ds_var - uy * ds_cov;
                g_var[i] = ds_var;
                g_cov[i] = ds_cov;
            }
        }
        if let Some(grad) = grad.as_mut() {
            let scale = 1.0 / (3.0 * n_win);
            let (gm, gv, gc) =
                (filter_adjoint(&g_mu, w, h, &k), filter_adjoint(&g_var, w, h, &k), filter_adjoint(&g_cov, w, h, &k));
            for p in 0..w * h {
                grad[p * 3 + ch] = scale * (gm[p] + 2.0 * x[p] * gv[p] + y[p] * gc[p]);
            }
        }
    }
    let value = total / (3.0 * n_win);
    let grad = grad.map(|g| ImageFrame::new(a.width(), a.height(), g).expect("sized to match"));
    Ok((value, grad))
}

/// Value encoding the metrics are computed in.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorSpace {
    /// Linear float values, as used by the training loss.
    #[default]
    Linear,
    /// 8-bit sRGB codes scaled to [0, 1], matching tools that read PNGs directly.
    Srgb8,
}

fn encode(frame: &ImageFrame, space: ColorSpace) -> ImageFrame {
    match space {
        ColorSpace::Linear => frame.clone(),
        ColorSpace::Srgb8 => {
            let data = frame.data().iter().map(|&v| linear_to_srgb_u8(v) as f64 / 255.0).collect();
            ImageFrame::new(frame.width(), frame.height(), data).expect("same size")
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub per_frame: Vec<f64>,
    pub mean: f64,
}

impl MetricSeries {
    pub fn new(per_frame: Vec<f64>) -> Self {
        let mean = if per_frame.is_empty() { 0.0 } else { per_frame.iter().sum::<f64>() / per_frame.len() as f64 };
        Self { per_frame, mean }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub frame_count: usize,
    pub color_space: ColorSpace,
    pub metrics: BTreeMap<String, MetricSeries>,
    /// External metrics that failed, keyed by plugin command.
    #[serde(default)]
    pub errors: BTreeMap<String, String>,
}

impl MetricReport {
    pub fn get(&self, name: &str) -> Option<&MetricSeries> {
        self.metrics.get(name)
    }
}

pub fn evaluate_clips(
    pred: &VideoClip,
    gt: &VideoClip,
    external: &[PluginDescriptor],
    space: ColorSpace,
) -> Result<MetricReport> {
    if pred.len() != gt.len() {
        return Err(Error::Dimension(format!("{} predicted frames vs {} reference frames", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::Dimension("no frames to evaluate".into()));
    }
    let scores = pred
        .frames()
        .par_iter()
        .zip(gt.frames().par_iter())
        .map(|(p, g)| {
            let (p, g) = (encode(p, space), encode(g, space));
            Ok((psnr(&p, &g)?, ssim(&p, &g)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut metrics = BTreeMap::new();
    metrics.insert("psnr".to_string(), MetricSeries::new(scores.iter().map(|s| s.0).collect()));
    metrics.insert("ssim".to_string(), MetricSeries::new(scores.iter().map(|s| s.1).collect()));

    let mut errors = BTreeMap::new();
    for desc in external {
        match run_metric_plugin(desc, pred, gt) {
            Ok(found) => {
                for (name, values) in found {
                    metrics.insert(name, MetricSeries::new(values));
                }
            }
            Err(e) => {
                log::warn!("external metric {} failed: {e}", desc.command);
                errors.insert(desc.command.clone(), e.to_string());
            }
        }
    }
    Ok(MetricReport { frame_count: pred.len(), color_space: space, metrics, errors })
}

/// Writes `pred/` and `gt/` frame sets plus a manifest and reads back `metrics.json`.
pub fn run_metric_plugin(
    desc: &PluginDescriptor,
    pred: &VideoClip,
    gt: &VideoClip,
) -> Result<BTreeMap<String, Vec<f64>>> {
    let work = tempfile::tempdir()?;
    let (in_dir, out_dir) = (work.path().join("in"), work.path().join("out"));
    plugin::write_frames(&in_dir.join("pred"), pred.frames())?;
    plugin::write_frames(&in_dir.join("gt"), gt.frames())?;
    let (width, height) = pred.dims().unwrap_or((0, 0));
    Manifest { factor: 1, frame_count: pred.len(), width, height }.write(&in_dir)?;
    fs::create_dir_all(&out_dir)?;
    desc.invoke(&in_dir, &out_dir)?;
    let path = out_dir.join("metrics.json");
    let bytes = fs::read(&path).map_err(|_| Error::Contract(format!("plugin wrote no {}", path.display())))?;
    let found: BTreeMap<String, Vec<f64>> = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Contract(format!("metrics.json is not {{name: [values]}}: {e}")))?;
    for (name, values) in &found {
        if values.len() != pred.len() {
            return Err(Error::Contract(format!(
                "metric `{name}` has {} values for {} frames",
                values.len(),
                pred.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("metric `{name}` has non-finite values")));
        }
    }
    Ok(found)
}
