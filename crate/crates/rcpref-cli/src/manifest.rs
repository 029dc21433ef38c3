use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments as given, without the program name.
    pub argv: Vec<String>,
    pub config: RunConfig,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub tool_version: String,
    pub duration_secs: f64,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> rcpref::Result<()> {
        rcpref::io::write_json(&dir.join(FILE_NAME), self)
    }

    pub fn read(path: &Path) -> rcpref::Result<Self> {
        rcpref::io::read_json(path)
    }
}
