//! Work directory layout and the per-directory lock.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::{CliError, CliResult};

pub const LOCK_FILE: &str = ".dfd.lock";

#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn render_dir(&self) -> PathBuf {
        self.root.join("render")
    }
    pub fn view_image(&self, k: usize) -> PathBuf {
        self.render_dir().join(format!("view_{k}.png"))
    }
    pub fn cameras(&self) -> PathBuf {
        self.render_dir().join("cameras.json")
    }
    pub fn samples(&self) -> PathBuf {
        self.render_dir().join("samples.rsmp")
    }
    pub fn render_mesh(&self) -> PathBuf {
        self.render_dir().join("render_mesh.obj")
    }
    pub fn render_report(&self) -> PathBuf {
        self.render_dir().join("render.json")
    }
    pub fn features_dir(&self) -> PathBuf {
        self.root.join("features")
    }
    pub fn fmap(dir: &Path, k: usize) -> PathBuf {
        dir.join(format!("view_{k}.fmap"))
    }
    pub fn field(&self) -> PathBuf {
        self.root.join("field.dfdf")
    }
    pub fn distill_report(&self) -> PathBuf {
        self.root.join("distill.json")
    }
}

/// Held while a command writes into a work directory.
#[derive(Debug)]
pub struct WorkLock {
    path: PathBuf,
}

impl WorkLock {
    pub fn acquire(root: &Path) -> CliResult<Self> {
        fs::create_dir_all(root).map_err(|e| CliError::bad_input(format!("cannot create {}: {e}", root.display())))?;
        let path = root.join(LOCK_FILE);
        let mut f: File = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => CliError::bad_input(format!(
                    "work directory {} is in use (remove {} if no other dfd command is running)",
                    root.display(),
                    path.display()
                )),
                _ => CliError::internal(format!("cannot create {}: {e}", path.display())),
            })?;
        let _ = writeln!(f, "{}", std::process::id());
        Ok(WorkLock { path })
    }
}

impl Drop for WorkLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::internal(format!("cannot create {}: {e}", dir.display())))
}
