//! C interface to scene loading, rendering, image metrics and upsampling.
//!
//! Every fallible call returns a [`SplatsrStatus`]; on failure the message is
//! available from [`splatsr_last_error`] on the same thread. Images cross the
//! boundary as row-major interleaved RGB `double`s in `[0, 1]`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use splatsr::frame::ImageFrame;
use splatsr::math::{CameraPose, Intrinsics, UnitQuaternion};
use splatsr::metrics;
use splatsr::raster;
use splatsr::scene::{load_ply, save_ply, SplatScene};
use splatsr::upsample::{self, Filter};
use splatsr::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplatsrStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    Io = 4,
    Parse = 5,
    Dimension = 6,
    Degenerate = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplatsrFilter {
    Nearest = 0,
    Bilinear = 1,
    Bicubic = 2,
    Lanczos3 = 3,
}

/// Pinhole camera; the pose maps camera to world and the camera looks down +z.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct SplatsrCamera {
    pub quaternion_wxyz: [f64; 4],
    pub translation: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

/// Opaque scene handle.
pub struct SplatsrScene(SplatScene);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(SplatsrStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io(_) | Error::File { .. } => SplatsrStatus::Io,
            Error::PlyHeader(_)
            | Error::PlyMissingField(_)
            | Error::PlyTruncated { .. }
            | Error::Image(_)
            | Error::Json(_) => SplatsrStatus::Parse,
            Error::Dimension(_) => SplatsrStatus::Dimension,
            Error::Degenerate(_) | Error::EmptyScene | Error::NonFinite(_) => SplatsrStatus::Degenerate,
            _ => SplatsrStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: SplatsrStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SplatsrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SplatsrStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            SplatsrStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(fail(SplatsrStatus::NullArgument, "path is null"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| fail(SplatsrStatus::InvalidArgument, "path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn scene_arg<'a>(s: *const SplatsrScene) -> Result<&'a SplatScene, Failure> {
    s.as_ref().map(|s| &s.0).ok_or_else(|| fail(SplatsrStatus::NullArgument, "scene is null"))
}

fn pixel_count(width: u32, height: u32) -> Result<usize, Failure> {
    if width == 0 || height == 0 {
        return Err(fail(SplatsrStatus::InvalidArgument, format!("image size {width}x{height} is empty")));
    }
    Ok(width as usize * height as usize * 3)
}

unsafe fn image_arg(data: *const f64, width: u32, height: u32) -> Result<ImageFrame, Failure> {
    let n = pixel_count(width, height)?;
    if data.is_null() {
        return Err(fail(SplatsrStatus::NullArgument, "image buffer is null"));
    }
    Ok(ImageFrame::new(width, height, std::slice::from_raw_parts(data, n).to_vec())?)
}

unsafe fn write_image(frame: &ImageFrame, out: *mut f64, out_len: usize) -> Result<(), Failure> {
    if out.is_null() {
        return Err(fail(SplatsrStatus::NullArgument, "output buffer is null"));
    }
    let data = frame.data();
    if out_len < data.len() {
        return Err(fail(
            SplatsrStatus::BufferTooSmall,
            format!("output holds {out_len} values, {} needed", data.len()),
        ));
    }
    ptr::copy_nonoverlapping(data.as_ptr(), out, data.len());
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn splatsr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a binary little-endian splat PLY into `*out`; free it with `splatsr_scene_free`.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn splatsr_scene_load(path: *const c_char, out: *mut *mut SplatsrScene) -> SplatsrStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(SplatsrStatus::NullArgument, "out is null"));
        }
        *out = ptr::null_mut();
        let scene = load_ply(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(SplatsrScene(scene)));
        Ok(())
    })
}

/// # Safety
/// `scene` must come from `splatsr_scene_load`; `path` must be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn splatsr_scene_save(scene: *const SplatsrScene, path: *const c_char) -> SplatsrStatus {
    guard(|| Ok(save_ply(scene_arg(scene)?, path_arg(path)?)?))
}

/// Number of splats, 0 for a null handle.
///
/// # Safety
/// `scene` must be null or come from `splatsr_scene_load`.
#[no_mangle]
pub unsafe extern "C" fn splatsr_scene_len(scene: *const SplatsrScene) -> usize {
    scene.as_ref().map_or(0, |s| s.0.len())
}

/// # Safety
/// `scene` must be null or come from `splatsr_scene_load`, and is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn splatsr_scene_free(scene: *mut SplatsrScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Renders into `out`, which must hold `width * height * 3` doubles.
///
/// # Safety
/// `camera` and `background` (3 doubles) must be valid; `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn splatsr_render(
    scene: *const SplatsrScene,
    camera: *const SplatsrCamera,
    background: *const f64,
    out: *mut f64,
    out_len: usize,
) -> SplatsrStatus {
    guard(|| {
        let scene = scene_arg(scene)?;
        let cam = camera.as_ref().ok_or_else(|| fail(SplatsrStatus::NullArgument, "camera is null"))?;
        if background.is_null() {
            return Err(fail(SplatsrStatus::NullArgument, "background is null"));
        }
        let bg = [*background, *background.add(1), *background.add(2)];
        let intr = Intrinsics::new(cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height)?;
        let pose = CameraPose::new(UnitQuaternion::from_wxyz(cam.quaternion_wxyz), cam.translation.into());
        if !pose.is_finite() {
            return Err(fail(SplatsrStatus::InvalidArgument, "camera pose is not finite"));
        }
        let (frame, _) = raster::render(scene, &pose, &intr, bg)?;
        write_image(&frame, out, out_len)
    })
}

/// PSNR in dB, capped at 99 for identical images.
///
/// # Safety
/// `a` and `b` must hold `width * height * 3` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn splatsr_psnr(
    a: *const f64,
    b: *const f64,
    width: u32,
    height: u32,
    out: *mut f64,
) -> SplatsrStatus {
    guard(|| {
        let v = metrics::psnr(&image_arg(a, width, height)?, &image_arg(b, width, height)?)?;
        *out.as_mut().ok_or_else(|| fail(SplatsrStatus::NullArgument, "out is null"))? = v;
        Ok(())
    })
}

/// Mean SSIM over valid 11x11 windows; both sides must be at least 11 pixels.
///
/// # Safety
/// `a` and `b` must hold `width * height * 3` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn splatsr_ssim(
    a: *const f64,
    b: *const f64,
    width: u32,
    height: u32,
    out: *mut f64,
) -> SplatsrStatus {
    guard(|| {
        let v = metrics::ssim(&image_arg(a, width, height)?, &image_arg(b, width, height)?)?;
        *out.as_mut().ok_or_else(|| fail(SplatsrStatus::NullArgument, "out is null"))? = v;
        Ok(())
    })
}

/// Upsamples by an integer factor into `out` of `(factor * width) * (factor * height) * 3` doubles.
///
/// # Safety
/// `src` must hold `width * height * 3` doubles and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn splatsr_upsample(
    src: *const f64,
    width: u32,
    height: u32,
    filter: SplatsrFilter,
    factor: u32,
    out: *mut f64,
    out_len: usize,
) -> SplatsrStatus {
    guard(|| {
        let frame = image_arg(src, width, height)?;
        let filter = match filter {
            SplatsrFilter::Nearest => Filter::Nearest,
            SplatsrFilter::Bilinear => Filter::Bilinear,
            SplatsrFilter::Bicubic => Filter::Bicubic,
            SplatsrFilter::Lanczos3 => Filter::Lanczos3,
        };
        write_image(&upsample::upsample_frame(&frame, filter, factor)?, out, out_len)
    })
}
