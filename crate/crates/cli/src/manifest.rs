//! Run manifests: everything needed to repeat a command.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dpn_core::config::RunConfig;
use sha2::{Digest, Sha256};

use crate::Result;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const CONFIG_SECTION: &str = "[config]";

/// Plain-text record of one command. The `[config]` section is the fully
/// resolved configuration in the config-file syntax and comes last.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub command: String,
    pub seeds: Vec<u64>,
    /// `(path, sha256 hex digest)` of every file read.
    pub inputs: Vec<(PathBuf, String)>,
    /// File names relative to the output directory.
    pub outputs: Vec<String>,
    pub config: RunConfig,
}

pub fn tool_version() -> String {
    format!("dpn {}", env!("CARGO_PKG_VERSION"))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(dpn_core::Error::from)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

impl Manifest {
    pub fn new(command: impl Into<String>, seeds: Vec<u64>, config: RunConfig) -> Self {
        Self {
            command: command.into(),
            seeds,
            inputs: Vec::new(),
            outputs: Vec::new(),
            config,
        }
    }

    pub fn input(mut self, path: &Path) -> Result<Self> {
        let digest = sha256_file(path)?;
        self.inputs.push((path.to_path_buf(), digest));
        Ok(self)
    }

    pub fn outputs(mut self, names: &[&str]) -> Self {
        self.outputs.extend(names.iter().map(|s| s.to_string()));
        self
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "tool = {}", tool_version());
        let _ = writeln!(s, "command = {}", self.command);
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(s, "seeds = {}", seeds.join(", "));
        let _ = writeln!(s, "[inputs]");
        for (path, digest) in &self.inputs {
            let _ = writeln!(s, "sha256:{digest} {}", path.display());
        }
        let _ = writeln!(s, "[outputs]");
        for name in &self.outputs {
            let _ = writeln!(s, "{name}");
        }
        let _ = writeln!(s, "{CONFIG_SECTION}");
        s.push_str(&self.config.to_text());
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join(MANIFEST_FILE), self.to_text()).map_err(dpn_core::Error::from)?;
        Ok(())
    }
}

/// Recovers the configuration recorded in a manifest.
pub fn config_from_manifest(text: &str, origin: &Path) -> Result<RunConfig> {
    let (_, config) = text
        .split_once(&format!("{CONFIG_SECTION}\n"))
        .ok_or_else(|| crate::CliError::Usage(format!("{}: no {CONFIG_SECTION} section", origin.display())))?;
    Ok(RunConfig::parse(config, origin)?)
}
