//! Run manifests: each command writes one listing the parameters it ran
//! with and a sha-256 digest of every deterministic artifact. A manifest is
//! itself a valid config file, so rerunning the command with it reproduces
//! the artifacts byte for byte; `boxdiff verify` rechecks the digests.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::{file_err, CliError};

pub struct Manifest {
    lines: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str) -> Manifest {
        let mut m = Manifest {
            lines: BTreeMap::new(),
        };
        m.set("command", command);
        m
    }

    pub fn set(&mut self, key: &str, value: impl fmt::Display) {
        self.lines.insert(key.to_string(), value.to_string());
    }

    /// Record `name` under `dir` as digest.<name>=<hex>.
    pub fn digest(&mut self, dir: &Path, name: &str) -> Result<(), CliError> {
        let hex = sha256_hex(&dir.join(name))?;
        self.set(&format!("digest.{}", name), hex);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut text = String::new();
        for (key, value) in &self.lines {
            text.push_str(key);
            text.push('=');
            text.push_str(value);
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| file_err(path, e))
    }
}

pub fn sha256_hex(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| file_err(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// The digest lines of a written manifest, as (file name, hex digest).
pub fn digest_lines(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    let mut out = Vec::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("digest.") {
            if let Some((name, hex)) = rest.split_once('=') {
                out.push((name.to_string(), hex.to_string()));
            }
        }
    }
    Ok(out)
}
