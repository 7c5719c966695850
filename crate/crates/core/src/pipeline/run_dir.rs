//! Run directories: one lock per directory, content-hash stamped stages, and
//! `failed/` for the partial output of a stage that errored.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const LOCK_FILE: &str = ".lock";
const STAMP_FILE: &str = ".stamp";

/// Holds the directory lock until dropped.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn open(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(Error::file(root))?;
        let lock = root.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => return Err(Error::Locked(root.to_path_buf())),
            Err(e) => return Err(Error::File { path: lock, source: e }),
        }
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stage_dir(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Runs `work` into a scratch directory that replaces `<root>/<name>` on
    /// success. Skips the work when the existing output carries `stamp`.
    /// Returns whether the stage ran.
    pub fn stage(&self, name: &str, stamp: &str, work: impl FnOnce(&Path) -> Result<()>) -> Result<bool> {
        let out = self.stage_dir(name);
        if fs::read_to_string(out.join(STAMP_FILE)).is_ok_and(|s| s.trim() == stamp) {
            log::info!("stage {name}: up to date");
            return Ok(false);
        }
        log::info!("stage {name}: running");
        let scratch = self.root.join(format!(".partial-{name}"));
        remove_if_exists(&scratch)?;
        fs::create_dir_all(&scratch).map_err(Error::file(&scratch))?;
        if let Err(e) = work(&scratch) {
            let failed = self.root.join("failed").join(name);
            remove_if_exists(&failed)?;
            fs::create_dir_all(failed.parent().expect("has parent"))?;
            fs::rename(&scratch, &failed).map_err(Error::file(&failed))?;
            return Err(Error::Stage { stage: name.to_string(), source: Box::new(e) });
        }
        fs::write(scratch.join(STAMP_FILE), stamp).map_err(Error::file(&scratch))?;
        remove_if_exists(&out)?;
        fs::rename(&scratch, &out).map_err(Error::file(&out))?;
        Ok(true)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.root.join(LOCK_FILE));
    }
}

fn remove_if_exists(path: &Path) -> Result<()> {
    if path.is_dir() {
        fs::remove_dir_all(path).map_err(Error::file(path))?;
    } else if path.exists() {
        fs::remove_file(path).map_err(Error::file(path))?;
    }
    Ok(())
}

fn hash_path(h: &mut Sha256, base: &Path, path: &Path) -> Result<()> {
    let rel = path.strip_prefix(base).unwrap_or(path);
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .map_err(Error::file(path))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        entries.sort();
        for e in entries {
            if e.file_name().is_some_and(|n| n == STAMP_FILE) {
                continue;
            }
            hash_path(h, base, &e)?;
        }
    } else {
        let bytes = fs::read(path).map_err(Error::file(path))?;
        h.update(rel.to_string_lossy().as_bytes());
        h.update([0]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(())
}

/// SHA-256 of a stage name, its configuration and the contents of its input
/// files or directories.
pub fn stamp(stage: &str, config: &impl Serialize, inputs: &[&Path]) -> Result<String> {
    let mut h = Sha256::new();
    h.update(stage.as_bytes());
    h.update([0]);
    h.update(serde_json::to_vec(config)?);
    for input in inputs {
        h.update([1]);
        match input.parent() {
            Some(base) if input.is_file() => hash_path(&mut h, base, input)?,
            _ => hash_path(&mut h, input, input)?,
        }
    }
    Ok(hex::encode(h.finalize()))
}
