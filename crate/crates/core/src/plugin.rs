//! External-process directory protocol shared by upsampler and metric plugins.
//!
//! Frames are exchanged as `%06d.png` (8-bit sRGB) next to a `manifest.json`
//! holding `{factor, frame_count, width, height}`. The plugin is run as
//! `<command> [args...] <in_dir> <out_dir>` and must exit with status 0.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{frame_file_name, ImageFrame};

pub const DEFAULT_TIMEOUT_S: f64 = 600.0;

fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT_S
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PluginDescriptor {
    pub command: String,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
}

impl PluginDescriptor {
    pub fn new(command: impl Into<String>) -> Self {
        Self { command: command.into(), args: Vec::new(), timeout_s: DEFAULT_TIMEOUT_S }
    }

    pub fn validate(&self) -> Result<()> {
        if self.command.trim().is_empty() {
            return Err(Error::Config("plugin command is empty".into()));
        }
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err(Error::Config(format!("plugin timeout must be positive, got {}", self.timeout_s)));
        }
        Ok(())
    }

    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Plugin { command: self.command.clone(), reason: reason.into() }
    }

    /// Runs the plugin to completion, killing it once the timeout elapses.
    pub fn invoke(&self, in_dir: &Path, out_dir: &Path) -> Result<()> {
        self.validate()?;
        let logs = tempfile::tempdir()?;
        let stderr_path = logs.path().join("stderr");
        let stderr = fs::File::create(&stderr_path)?;
        let mut child = Command::new(&self.command)
            .args(&self.args)
            .arg(in_dir)
            .arg(out_dir)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(stderr)
            .spawn()
            .map_err(|e| self.fail(format!("could not start: {e}")))?;
        let deadline = Instant::now() + Duration::from_secs_f64(self.timeout_s);
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break status;
            }
            if Instant::now() >= deadline {
                let _ = child.kill();
                let _ = child.wait();
                return Err(self.fail(format!("timed out after {} s", self.timeout_s)));
            }
            std::thread::sleep(Duration::from_millis(10));
        };
        if !status.success() {
            let text = fs::read_to_string(&stderr_path).unwrap_or_default();
            let tail: Vec<&str> = text.lines().rev().take(5).collect();
            let tail: Vec<&str> = tail.into_iter().rev().collect();
            return Err(self.fail(format!("exited with {status}: {}", tail.join(" | "))));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub factor: u32,
    pub frame_count: usize,
    pub width: u32,
    pub height: u32,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_vec_pretty(self)?).map_err(Error::file(path))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let bytes = fs::read(&path).map_err(Error::file(&path))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

pub fn write_frames(dir: &Path, frames: &[ImageFrame]) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::file(dir))?;
    for (i, f) in frames.iter().enumerate() {
        f.save_png(dir.join(frame_file_name(i)))?;
    }
    Ok(())
}

/// Reads exactly `count` frames of the given size; anything else is a contract violation.
pub fn read_frames(dir: &Path, count: usize, width: u32, height: u32) -> Result<Vec<ImageFrame>> {
    let mut frames = Vec::with_capacity(count);
    for i in 0..count {
        let path = dir.join(frame_file_name(i));
        if !path.is_file() {
            return Err(Error::Contract(format!("missing output frame {} (index {i})", path.display())));
        }
        let f = ImageFrame::load_png(&path)
            .map_err(|e| Error::Contract(format!("unreadable output frame {}: {e}", path.display())))?;
        if f.dims() != (width, height) {
            return Err(Error::Contract(format!(
                "{} is {}x{}, expected {width}x{height}",
                path.display(),
                f.width(),
                f.height()
            )));
        }
        frames.push(f);
    }
    Ok(frames)
}

/// Sorted `%06d.png` files in `dir`, failing on gaps in the numbering.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut indices = Vec::new();
    for entry in fs::read_dir(dir).map_err(Error::file(dir))? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if let Some(stem) = name.strip_suffix(".png") {
            if stem.len() == 6 {
                if let Ok(i) = stem.parse::<usize>() {
                    indices.push(i);
                }
            }
        }
    }
    indices.sort_unstable();
    for (expect, &i) in indices.iter().enumerate() {
        if i != expect {
            return Err(Error::Contract(format!("{}: frame {} missing", dir.display(), frame_file_name(expect))));
        }
    }
    Ok(indices.into_iter().map(|i| dir.join(frame_file_name(i))).collect())
}
