use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Content hash in the style of a git blob id: `sha256("blob <len>\0" ++ data)`.
pub fn content_hash(data: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", data.len()).as_bytes());
    h.update(data);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_hash(path: &Path) -> Result<String> {
    Ok(content_hash(&std::fs::read(path)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub hash: String,
}

/// Description of a run directory sufficient to reproduce it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub program_version: String,
    pub command: String,
    pub seed: u64,
    pub config: String,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<String>,
    /// Set while the run is in progress or when it failed.
    pub partial: bool,
    pub reynolds: Option<f64>,
    pub notes: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config: String) -> Self {
        Self {
            program_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            partial: true,
            reynolds: None,
            notes: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let hash = file_hash(path)?;
        self.inputs.push(InputRecord {
            path: path.to_path_buf(),
            hash,
        });
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let s = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(dir.join("manifest.json"), s)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(dir.join("manifest.json"))?;
        serde_json::from_str(&s).map_err(|e| Error::Format(format!("manifest: {e}")))
    }
}
