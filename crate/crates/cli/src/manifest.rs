use std::path::{Component, Path, PathBuf};

use patn::{Error, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "run_manifest.json";

/// Everything needed to reproduce one CLI invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, as given.
    pub argv: Vec<String>,
    /// Effective configuration after file and flag overrides.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub versions: Versions,
    pub outputs: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub patn: String,
    pub patn_cli: String,
}

impl Versions {
    pub fn current() -> Self {
        Versions { patn: patn::VERSION.to_string(), patn_cli: env!("CARGO_PKG_VERSION").to_string() }
    }
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Maps user-supplied output paths into the output root.
#[derive(Clone, Debug)]
pub struct OutputRoot {
    root: Option<PathBuf>,
}

impl OutputRoot {
    pub fn new(root: Option<PathBuf>) -> Self {
        OutputRoot { root }
    }

    /// Relative paths are joined onto the root; absolute paths and `..` must stay inside it.
    pub fn resolve(&self, path: &Path) -> Result<PathBuf> {
        let Some(root) = &self.root else {
            return Ok(path.to_path_buf());
        };
        if path.components().any(|c| matches!(c, Component::ParentDir)) {
            return Err(Error::usage(format!("output path {} may not contain '..'", path.display())));
        }
        if path.is_absolute() {
            if !path.starts_with(root) {
                return Err(Error::usage(format!(
                    "output path {} lies outside the output root {}",
                    path.display(),
                    root.display()
                )));
            }
            return Ok(path.to_path_buf());
        }
        Ok(root.join(path))
    }
}
