//! Run manifests: the effective settings of a command plus SHA-256 digests
//! of what it read and wrote. Paths are recorded as given and relative to
//! their root, and nothing time-dependent goes in, so identical runs give
//! identical manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const RUN_MANIFEST: &str = "run-manifest.json";

pub type Digests = BTreeMap<String, String>;

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: Value,
    pub inputs: BTreeMap<String, Digests>,
    pub outputs: Digests,
    pub summary: Value,
}

impl RunManifest {
    pub fn new(command: &str, config: Value) -> Self {
        Self {
            tool: "irac-kg",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config,
            inputs: BTreeMap::new(),
            outputs: Digests::new(),
            summary: Value::Null,
        }
    }

    /// Digests a file or every file below a directory under `role`.
    pub fn input(&mut self, role: &str, path: &Path) -> anyhow::Result<()> {
        self.inputs.insert(role.to_string(), digest_path(path)?);
        Ok(())
    }

    /// Digests everything under `out` and writes the manifest there.
    pub fn finish(mut self, out: &Path, summary: impl Serialize) -> anyhow::Result<()> {
        self.summary = serde_json::to_value(summary)?;
        self.outputs = digest_path(out)?;
        let body = serde_json::to_string_pretty(&self)? + "\n";
        let path = out.join(RUN_MANIFEST);
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
    }
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// `relative path -> sha256` for a file, or for every file below a
/// directory except run manifests.
pub fn digest_path(path: &Path) -> anyhow::Result<Digests> {
    let mut out = Digests::new();
    if path.is_file() {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        out.insert(name, sha256_file(path)?);
        return Ok(out);
    }
    for entry in walkdir::WalkDir::new(path).sort_by_file_name() {
        let entry = entry.with_context(|| format!("walking {}", path.display()))?;
        if !entry.file_type().is_file() || entry.file_name() == RUN_MANIFEST {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(path)
            .unwrap_or(entry.path())
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        out.insert(rel, sha256_file(entry.path())?);
    }
    Ok(out)
}
