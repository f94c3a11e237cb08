//! Run manifests written next to every output.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::Result;
use crate::io::{sha256_file, sha256_hex};

pub const FILE_NAME: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub version: String,
    pub config: RunConfig,
    /// sha256 of the effective configuration in TOML form.
    pub config_hash: String,
    /// sha256 of every input weight file, by path.
    pub inputs: BTreeMap<String, String>,
    /// sha256 of every file written, by file name.
    pub outputs: BTreeMap<String, String>,
    /// Architecture choices not fixed by the layer tables.
    pub architecture_flags: BTreeMap<String, bool>,
    pub threads: usize,
    pub wall_seconds: f64,
    pub host: HostInfo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HostInfo {
    pub os: String,
    pub arch: String,
    pub cpus: usize,
}

impl HostInfo {
    pub fn current() -> Self {
        Self {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, config: RunConfig, threads: usize) -> Result<Self> {
        let config_hash = sha256_hex(config.to_toml()?.as_bytes());
        Ok(Self {
            command: command.into(),
            args,
            version: env!("CARGO_PKG_VERSION").into(),
            config,
            config_hash,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            architecture_flags: BTreeMap::from([
                ("encoder.conv3.bias".to_string(), true),
                ("lstm.recurrent_dropout".to_string(), false),
            ]),
            threads,
            wall_seconds: 0.0,
            host: HostInfo::current(),
        })
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    /// Hash every regular file in `dir` except the manifest itself.
    pub fn record_outputs(&mut self, dir: &Path) -> Result<()> {
        self.outputs.clear();
        for e in std::fs::read_dir(dir)? {
            let e = e?;
            let name = e.file_name().to_string_lossy().into_owned();
            if name != FILE_NAME && e.file_type()?.is_file() {
                self.outputs.insert(name, sha256_file(&e.path())?);
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(FILE_NAME), serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(dir.join(FILE_NAME))?)?)
    }
}
