//! Output directory with all-or-nothing publication: files are staged in a
//! hidden sibling directory and moved into place only by [`OutputDir::commit`].

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::error::{HarnessError, Result};

pub struct OutputDir {
    root: PathBuf,
    staging: PathBuf,
    files: Vec<PathBuf>,
    committed: bool,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| HarnessError::io(root, e))?;
        let staging = root.join(format!(".partial-{}", std::process::id()));
        if staging.exists() {
            std::fs::remove_dir_all(&staging).map_err(|e| HarnessError::io(&staging, e))?;
        }
        std::fs::create_dir_all(&staging).map_err(|e| HarnessError::io(&staging, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            staging,
            files: Vec::new(),
            committed: false,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Final location of a relative output name.
    pub fn final_path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Stages `bytes` under the relative name `name` (may contain `/`).
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<String> {
        let path = self.staging.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| HarnessError::io(&path, e))?;
        let rel = PathBuf::from(name);
        if !self.files.contains(&rel) {
            self.files.push(rel);
        }
        Ok(name.to_string())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<String> {
        let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Path inside the staging area, for writers that need a file path.
    pub fn staged_path(&mut self, name: &str) -> Result<PathBuf> {
        let path = self.staging.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
        }
        let rel = PathBuf::from(name);
        if !self.files.contains(&rel) {
            self.files.push(rel);
        }
        Ok(path)
    }

    /// Moves every staged file into the output directory.
    pub fn commit(mut self) -> Result<Vec<PathBuf>> {
        let mut published = Vec::with_capacity(self.files.len());
        for rel in &self.files {
            let from = self.staging.join(rel);
            let to = self.root.join(rel);
            if let Some(parent) = to.parent() {
                std::fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
            }
            std::fs::rename(&from, &to).map_err(|e| HarnessError::io(&to, e))?;
            published.push(to);
        }
        std::fs::remove_dir_all(&self.staging).map_err(|e| HarnessError::io(&self.staging, e))?;
        self.committed = true;
        Ok(published)
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        if !self.committed {
            let _ = std::fs::remove_dir_all(&self.staging);
        }
    }
}

/// Wall-clock phases, written to `timings.json` apart from the report so
/// reports stay byte-identical across reruns.
#[derive(Debug, Default, Serialize)]
pub struct Timings {
    pub phases: Vec<(String, f64)>,
}

impl Timings {
    pub fn time<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.phases.push((phase.to_string(), start.elapsed().as_secs_f64()));
        out
    }

    pub fn total(&self) -> f64 {
        self.phases.iter().map(|(_, t)| t).sum()
    }
}

/// CSV text from a header and rows of already formatted cells.
pub fn csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
