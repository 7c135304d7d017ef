//! Output directory handling. Every file a command writes is registered so
//! that a failed command can remove what it left behind.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

pub const OUT_ENV: &str = "HDB_BIDDER_OUT";

pub struct Outputs {
    dir: PathBuf,
    created_dir: bool,
    written: Vec<PathBuf>,
}

impl Outputs {
    pub fn create(dir: &Path) -> Result<Self> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            created_dir,
            written: vec![],
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Returns the path of artifact `name`. Files that did not exist before
    /// are registered for removal on failure.
    pub fn path(&mut self, name: &str) -> Result<PathBuf> {
        let p = self.dir.join(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        if !p.exists() && !self.written.contains(&p) {
            self.written.push(p.clone());
        }
        Ok(p)
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let p = self.path(name)?;
        fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }

    /// Removes every registered artifact (and the directory if this command
    /// created it and it is now empty). Pre-existing files are left alone.
    pub fn discard(self) {
        for p in &self.written {
            let _ = fs::remove_file(p);
            let _ = fs::remove_file(p.with_extension("json.partial"));
        }
        if self.created_dir {
            let _ = remove_empty_dirs(&self.dir);
        }
    }
}

fn remove_empty_dirs(dir: &Path) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            remove_empty_dirs(&p)?;
        }
    }
    fs::remove_dir(dir)
}
