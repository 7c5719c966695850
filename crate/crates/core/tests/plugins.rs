mod common;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatsr::frame::{ImageFrame, VideoClip};
use splatsr::math::Intrinsics;
use splatsr::metrics::{evaluate_clips, ColorSpace};
use splatsr::plugin::PluginDescriptor;
use splatsr::upsample::{upsample, upsample_frame, Filter, UpsamplerStage};
use splatsr::Error;

fn clip(seed: u64, w: u32, h: u32, frames: usize) -> VideoClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let traj = orbit(frames, 4.0, 0.2, 0.0, Intrinsics::from_fov(w, h, 0.8).unwrap());
    let frames = (0..frames)
        .map(|_| ImageFrame::from_fn(w, h, |_, _| std::array::from_fn(|_| rng.gen_range(0.0..1.0))))
        .collect();
    VideoClip::new(frames, Some(traj)).unwrap()
}

fn shell(cmd: String) -> PluginDescriptor {
    PluginDescriptor { command: cmd, args: vec![], timeout_s: 60.0 }
}

fn self_plugin(args: &[&str]) -> PluginDescriptor {
    PluginDescriptor { command: bin().into(), args: args.iter().map(|s| s.to_string()).collect(), timeout_s: 60.0 }
}

#[test]
fn copy_plugin_at_factor_one_round_trips_quantized_frames() {
    let tmp = tempfile::tempdir().unwrap();
    let copy = script(tmp.path(), "copy.sh", r#"cp "$1"/*.png "$2"/"#);
    let c = clip(1, 12, 9, 4);
    let out = upsample(&UpsamplerStage::external(shell(copy), 1), &c).unwrap();
    assert_eq!(out.len(), 4);
    for (a, b) in out.frames().iter().zip(c.frames()) {
        assert_eq!(a, &b.quantized());
    }
    assert_eq!(out.poses(), c.poses());
}

#[test]
fn plugin_dropping_a_frame_is_a_contract_error() {
    let tmp = tempfile::tempdir().unwrap();
    let drop_last = script(tmp.path(), "drop.sh", "cp \"$1\"/*.png \"$2\"/\nrm \"$2\"/000003.png");
    let err = upsample(&UpsamplerStage::external(shell(drop_last), 1), &clip(2, 8, 8, 4)).unwrap_err();
    assert!(matches!(err, Error::Contract(_)), "{err}");
    assert!(err.to_string().contains("000003.png"), "{err}");
}

#[test]
fn plugin_with_wrong_size_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let copy = script(tmp.path(), "copy.sh", r#"cp "$1"/*.png "$2"/"#);
    let err = upsample(&UpsamplerStage::external(shell(copy), 2), &clip(3, 8, 8, 2)).unwrap_err();
    assert!(matches!(err, Error::Dimension(_) | Error::Contract(_)), "{err}");
}

#[test]
fn plugin_reads_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let log = tmp.path().join("manifest-copy.json");
    let spy =
        script(tmp.path(), "spy.sh", &format!("cp \"$1\"/manifest.json {}\ncp \"$1\"/*.png \"$2\"/", log.display()));
    upsample(&UpsamplerStage::external(shell(spy), 1), &clip(4, 10, 6, 3)).unwrap();
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(log).unwrap()).unwrap();
    assert_eq!(m["factor"], 1);
    assert_eq!(m["frame_count"], 3);
    assert_eq!(m["width"], 10);
    assert_eq!(m["height"], 6);
}

#[test]
fn bicubic_loopback_matches_builtin() {
    let c = clip(5, 20, 14, 3);
    let stage = UpsamplerStage::external(self_plugin(&["plugin", "upsample", "--filter", "bicubic"]), 3);
    let out = upsample(&stage, &c).unwrap();
    assert_eq!(out.dims(), Some((60, 42)));
    for (p, f) in out.frames().iter().zip(c.frames()) {
        let want = upsample_frame(&f.quantized(), Filter::Bicubic, 3).unwrap().quantized();
        let (a, b) = (p.to_rgb8(), want.to_rgb8());
        let worst = a.as_raw().iter().zip(b.as_raw()).map(|(x, y)| x.abs_diff(*y)).max().unwrap();
        assert!(worst <= 2, "{worst} codes");
    }
}

#[test]
fn metric_loopback_matches_builtin_psnr() {
    let pred = clip(6, 24, 24, 3);
    let gt = clip(7, 24, 24, 3);
    let q = |c: &VideoClip| VideoClip::new(c.frames().iter().map(|f| f.quantized()).collect(), None).unwrap();
    let (pred, gt) = (q(&pred), q(&gt));
    let r = evaluate_clips(&pred, &gt, &[self_plugin(&["plugin", "psnr"])], ColorSpace::Linear).unwrap();
    assert!(r.errors.is_empty(), "{:?}", r.errors);
    let ours = &r.get("psnr").unwrap().per_frame;
    let theirs = &r.get("psnr_plugin").unwrap().per_frame;
    for (a, b) in ours.iter().zip(theirs) {
        assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
    }
}

#[test]
fn broken_metric_plugin_is_reported_not_fatal() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = script(tmp.path(), "bad.sh", "echo '{\"m\": [1.0]}' > \"$2\"/metrics.json");
    let c = clip(8, 16, 16, 2);
    let r = evaluate_clips(&c, &c, &[shell(bad)], ColorSpace::Linear).unwrap();
    assert_eq!(r.errors.len(), 1);
    assert!(r.get("m").is_none());
    assert_eq!(r.get("ssim").unwrap().mean, 1.0);
}
