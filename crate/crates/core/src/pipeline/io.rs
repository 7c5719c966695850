//! Camera files and posed image sets on disk.
//!
//! A posed image set is a directory of `%06d.png` frames next to a
//! `cameras.json`:
//!
//! ```json
//! {
//!   "intrinsics": {"fx": 70.0, "fy": 70.0, "cx": 31.5, "cy": 31.5, "width": 64, "height": 64},
//!   "frames": [{"file": "000000.png", "quaternion_wxyz": [1, 0, 0, 0], "translation": [0, 0, -4]}]
//! }
//! ```
//!
//! Poses are camera-to-world; quaternions are normalized on load.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{frame_file_name, ImageFrame, VideoClip};
use crate::math::{CameraPose, Intrinsics, UnitQuaternion};
use crate::trajectory::Trajectory;

pub const CAMERA_FILE: &str = "cameras.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraFrame {
    pub file: String,
    pub quaternion_wxyz: [f64; 4],
    pub translation: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraFile {
    pub intrinsics: Intrinsics,
    pub frames: Vec<CameraFrame>,
}

impl CameraFile {
    /// Frames named `%06d.png` in trajectory order.
    pub fn from_trajectory(t: &Trajectory) -> Self {
        let frames = t
            .poses
            .iter()
            .enumerate()
            .map(|(i, p)| CameraFrame {
                file: frame_file_name(i),
                quaternion_wxyz: p.rotation.wxyz(),
                translation: [p.translation.x, p.translation.y, p.translation.z],
            })
            .collect();
        Self { intrinsics: t.intrinsics, frames }
    }

    pub fn trajectory(&self) -> Result<Trajectory> {
        self.intrinsics.validate()?;
        let poses = self
            .frames
            .iter()
            .map(|f| {
                let q = f.quaternion_wxyz;
                if q.iter().chain(&f.translation).any(|v| !v.is_finite()) || q.iter().all(|&v| v == 0.0) {
                    return Err(Error::Config(format!("camera for {} has an invalid pose", f.file)));
                }
                Ok(CameraPose::new(UnitQuaternion::from_wxyz(q), Vector3::from(f.translation)))
            })
            .collect::<Result<Vec<_>>>()?;
        Trajectory::new(poses, self.intrinsics)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(Error::file(path))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(Error::file(path))
    }
}

pub fn save_trajectory(t: &Trajectory, path: &Path) -> Result<()> {
    CameraFile::from_trajectory(t).save(path)
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    CameraFile::load(path)?.trajectory()
}

/// Writes frames and, when posed, the camera file.
pub fn save_image_set(clip: &VideoClip, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::file(dir))?;
    for (i, f) in clip.frames().iter().enumerate() {
        f.save_png(dir.join(frame_file_name(i)))?;
    }
    if let Some(t) = clip.poses() {
        save_trajectory(t, &dir.join(CAMERA_FILE))?;
    }
    Ok(())
}

/// Loads the frames listed in `cameras.json`, checking they match its intrinsics.
pub fn load_image_set(dir: &Path) -> Result<VideoClip> {
    let cams = CameraFile::load(&dir.join(CAMERA_FILE))?;
    let traj = cams.trajectory()?;
    let frames = cams
        .frames
        .iter()
        .map(|f| {
            let path = dir.join(&f.file);
            if !path.is_file() {
                return Err(Error::Config(format!("{} lists missing frame {}", CAMERA_FILE, path.display())));
            }
            ImageFrame::load_png(&path)
        })
        .collect::<Result<Vec<_>>>()?;
    VideoClip::new(frames, Some(traj))
}

/// Loads `%06d.png` frames from a directory, ignoring any camera file.
pub fn load_frames(dir: &Path) -> Result<Vec<ImageFrame>> {
    crate::plugin::list_frames(dir)?.iter().map(ImageFrame::load_png).collect()
}
