//! Run manifests.
//!
//! Every subcommand writes `<command>_manifest.json` next to its outputs:
//! the effective config, sha-256 digests of the inputs it read, and the
//! package version. Manifests carry no timestamps, so a rerun of the same
//! command over the same inputs reproduces the file byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: BTreeMap<String, String>,
    /// Input path -> sha-256 hex digest.
    pub inputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, config: BTreeMap<String, String>) -> RunManifest {
        RunManifest {
            command: command.to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            config,
            inputs: BTreeMap::new(),
        }
    }

    /// Records one input file's digest.
    pub fn digest(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    /// Records every regular file under a directory, in sorted order.
    pub fn digest_dir(&mut self, dir: &Path) -> Result<()> {
        let mut paths: Vec<_> = fs::read_dir(dir)
            .with_context(|| format!("cannot list {}", dir.display()))?
            .map(|entry| entry.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        paths.sort();
        for path in paths {
            if path.is_file() {
                self.digest(&path)?;
            }
        }
        Ok(())
    }

    /// Writes `<out_dir>/<command>_manifest.json`.
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        let path = out_dir.join(format!("{}_manifest.json", self.command));
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file =
        fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buffer = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buffer)?;
        if n == 0 {
            break;
        }
        hasher.update(&buffer[..n]);
    }
    let mut hex = String::with_capacity(64);
    for byte in hasher.finalize() {
        write!(hex, "{byte:02x}").unwrap();
    }
    Ok(hex)
}
