//! Atomic output files.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::CliError;

/// Output directory that refuses to replace existing reports unless forced.
pub struct OutDir {
    root: PathBuf,
    force: bool,
}

impl OutDir {
    /// Creates the directory if needed and checks `guard` (the primary
    /// report) does not already exist.
    pub fn open(root: &Path, guard: &str, force: bool) -> Result<Self, CliError> {
        let target = root.join(guard);
        if target.exists() && !force {
            return Err(CliError::config(format!(
                "{} already exists; pass --force to overwrite",
                target.display()
            )));
        }
        std::fs::create_dir_all(root).map_err(|e| CliError::runtime(format!("{}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            force,
        })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn subdir(&self, name: &str) -> Result<OutDir, CliError> {
        let root = self.root.join(name);
        std::fs::create_dir_all(&root).map_err(|e| CliError::runtime(format!("{}: {e}", root.display())))?;
        Ok(OutDir {
            root,
            force: self.force,
        })
    }

    /// Writes through a temporary file in the same directory, then renames.
    pub fn write(&self, name: &str, contents: &[u8]) -> Result<(), CliError> {
        let target = self.root.join(name);
        let io = |e: std::io::Error| CliError::runtime(format!("{}: {e}", target.display()));
        let mut tmp = tempfile::NamedTempFile::new_in(&self.root).map_err(io)?;
        tmp.write_all(contents).map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        tmp.persist(&target).map_err(|e| io(e.error))?;
        Ok(())
    }

    pub fn write_json<T: serde::Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::runtime(format!("serializing {name}: {e}")))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }
}
