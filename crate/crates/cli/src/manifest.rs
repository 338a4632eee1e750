//! Run-directory manifest: what each command read, wrote and with which settings.

use std::error::Error;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use dygraphad::training::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

impl FileRecord {
    pub fn new(role: &str, path: &Path) -> Result<Self, Box<dyn Error>> {
        Ok(Self {
            role: role.to_string(),
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub command: String,
    pub seed: Option<u64>,
    pub config: Option<TrainConfig>,
    pub kernel: String,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub steps: Vec<Step>,
}

impl RunManifest {
    /// Existing manifest of `dir`, or an empty one.
    pub fn open(dir: &Path) -> Result<Self, Box<dyn Error>> {
        let path = dir.join(MANIFEST);
        if path.exists() {
            let text = std::fs::read_to_string(&path)?;
            return serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()).into());
        }
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            steps: Vec::new(),
        })
    }

    /// Appends `step` to the manifest in `dir`.
    pub fn record(dir: &Path, step: Step) -> Result<(), Box<dyn Error>> {
        let mut manifest = Self::open(dir)?;
        manifest.steps.push(step);
        std::fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    /// Most recent input with the given role.
    pub fn latest_input(&self, role: &str) -> Option<&FileRecord> {
        self.steps.iter().rev().flat_map(|s| &s.inputs).find(|f| f.role == role)
    }
}

pub fn sha256_file(path: &Path) -> Result<String, Box<dyn Error>> {
    let mut file = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Records for every existing file in `dir` named in `names`.
pub fn outputs(dir: &Path, names: &[&str]) -> Result<Vec<FileRecord>, Box<dyn Error>> {
    names
        .iter()
        .map(|n| dir.join(n))
        .filter(|p| p.exists())
        .map(|p| FileRecord::new("output", &p))
        .collect()
}
