use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::CliError;

/// Fails with a config-invalid error when an input is missing.
pub fn require(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::config(format!("{what} not found: {}", path.display())))
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T, CliError> {
    require(path, what)?;
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{what} {}: {e}", path.display())))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Output directory guard. Existing outputs are only overwritten with `--force`.
pub struct OutDir {
    pub root: PathBuf,
    force: bool,
}

impl OutDir {
    pub fn open(root: &Path, force: bool) -> Result<Self, CliError> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            force,
        })
    }

    /// Whole-directory guard for commands that own the directory.
    pub fn fresh(root: &Path, force: bool) -> Result<Self, CliError> {
        let occupied = root.is_dir() && fs::read_dir(root)?.next().is_some();
        if occupied && !force {
            return Err(CliError::config(format!(
                "output directory {} is not empty (use --force to overwrite)",
                root.display()
            )));
        }
        Self::open(root, force)
    }

    /// Path of an output file, refusing to clobber without `--force`.
    pub fn file(&self, name: &str) -> Result<PathBuf, CliError> {
        let p = self.root.join(name);
        if p.exists() && !self.force {
            return Err(CliError::config(format!(
                "{} already exists (use --force to overwrite)",
                p.display()
            )));
        }
        Ok(p)
    }

    /// Path of an input file expected in the output directory.
    pub fn input(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}
