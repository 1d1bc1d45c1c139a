//! Outputs are staged in temporary files next to their destination and only
//! moved into place once every output of a command has been written.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use tempfile::NamedTempFile;

pub struct Staged {
    files: Vec<(NamedTempFile, PathBuf)>,
}

pub fn check_parent(path: &Path) -> anyhow::Result<()> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if !parent.is_dir() {
        bail!("output directory {} does not exist", parent.display());
    }
    Ok(())
}

impl Staged {
    pub fn new() -> Self {
        Self { files: Vec::new() }
    }

    /// Writes one output with `f`; nothing is visible at `path` yet.
    pub fn write<F>(&mut self, path: &Path, f: F) -> anyhow::Result<()>
    where
        F: FnOnce(&mut dyn Write) -> anyhow::Result<()>,
    {
        check_parent(path)?;
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let mut tmp = NamedTempFile::new_in(dir).with_context(|| format!("creating temporary file in {}", dir.display()))?;
        {
            let mut w = BufWriter::new(tmp.as_file_mut());
            f(&mut w)?;
            w.flush()?;
        }
        tmp.as_file().sync_all()?;
        self.files.push((tmp, path.to_path_buf()));
        Ok(())
    }

    pub fn commit(self) -> anyhow::Result<()> {
        let mut done: Vec<PathBuf> = Vec::new();
        for (tmp, path) in self.files {
            if let Err(e) = tmp.persist(&path) {
                for p in &done {
                    let _ = std::fs::remove_file(p);
                }
                return Err(e.error).with_context(|| format!("writing {}", path.display()));
            }
            done.push(path);
        }
        Ok(())
    }
}
