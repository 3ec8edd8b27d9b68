use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use confadapt_core::{Error, Result};

use crate::config::Resolved;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConfigValue {
    pub value: String,
    pub source: String,
}

/// Record of one invocation. Contains no timestamps or host details, so
/// identical inputs give an identical manifest.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub toolkit_version: String,
    pub seed: u64,
    pub config: BTreeMap<String, ConfigValue>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    Ok(sha256_hex(&bytes))
}

impl RunManifest {
    pub fn new(subcommand: &str, resolved: &Resolved) -> Self {
        RunManifest {
            subcommand: subcommand.into(),
            toolkit_version: env!("CARGO_PKG_VERSION").into(),
            seed: resolved.seed(),
            config: resolved
                .values
                .iter()
                .map(|(k, (v, s))| (k.clone(), ConfigValue { value: v.clone(), source: (*s).into() }))
                .collect(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), file_digest(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.insert(path.display().to_string(), file_digest(path)?);
        Ok(())
    }

    pub fn stdout(&mut self, bytes: &[u8]) {
        self.outputs.insert("<stdout>".into(), sha256_hex(bytes));
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        std::fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
    }
}

/// `<first output>.manifest.json`, or `confadapt-<subcommand>.manifest.json`
/// in the working directory when everything went to stdout.
pub fn default_path(subcommand: &str, first_output: Option<&Path>) -> PathBuf {
    match first_output {
        Some(p) => {
            let mut s = p.as_os_str().to_owned();
            s.push(".manifest.json");
            PathBuf::from(s)
        }
        None => PathBuf::from(format!("confadapt-{subcommand}.manifest.json")),
    }
}
