//! Run manifests and manifest-stamped artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance record of one invocation. The `id` hashes only the fields that
/// determine the outputs, so it is stable across reruns and worker counts.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub id: String,
    pub command: String,
    pub arguments: BTreeMap<String, Value>,
    pub model_path: String,
    pub model_hash: String,
    pub seed: u64,
    pub grid_resolution: Option<usize>,
    pub workers: usize,
    pub version: String,
    pub status: String,
    pub wall_time_seconds: Option<f64>,
    pub outputs: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn new(
        command: &str,
        arguments: BTreeMap<String, Value>,
        model_path: &Path,
        model_bytes: &[u8],
        seed: u64,
        grid_resolution: Option<usize>,
        workers: usize,
    ) -> Self {
        let model_hash = sha256_hex(model_bytes);
        let version = env!("CARGO_PKG_VERSION").to_string();
        let key = serde_json::json!({
            "command": command,
            "arguments": arguments,
            "model_hash": model_hash,
            "seed": seed,
            "grid_resolution": grid_resolution,
            "version": version,
        });
        let id = sha256_hex(key.to_string().as_bytes())[..16].to_string();
        Self {
            id,
            command: command.to_string(),
            arguments,
            model_path: model_path.display().to_string(),
            model_hash,
            seed,
            grid_resolution,
            workers,
            version,
            status: "running".into(),
            wall_time_seconds: None,
            outputs: Vec::new(),
        }
    }
}

/// Output directory of a run. The manifest is written on creation and
/// rewritten by [`RunDir::finish`].
pub struct RunDir {
    dir: PathBuf,
    pub manifest: RunManifest,
    started: Instant,
}

/// 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

impl RunDir {
    pub fn create(dir: &Path, manifest: RunManifest) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let run = Self {
            dir: dir.to_path_buf(),
            manifest,
            started: Instant::now(),
        };
        run.write_manifest()?;
        Ok(run)
    }

    pub fn id(&self) -> &str {
        &self.manifest.id
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write_manifest(&self) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(self.dir.join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }

    fn record(&mut self, name: &str) {
        if !self.manifest.outputs.iter().any(|o| o == name) {
            self.manifest.outputs.push(name.to_string());
        }
    }

    /// Writes `value` as a JSON object whose first field is `manifest`.
    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut v = serde_json::Map::new();
        v.insert("manifest".into(), Value::String(self.manifest.id.clone()));
        match serde_json::to_value(value)? {
            Value::Object(map) => v.extend(map),
            other => {
                v.insert("value".into(), other);
            }
        }
        std::fs::write(self.path(name), serde_json::to_string_pretty(&v)? + "\n")?;
        self.record(name);
        Ok(())
    }

    /// Writes a CSV whose first line is `# manifest: <id>`.
    pub fn write_csv(&mut self, name: &str, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let mut text = String::new();
        writeln!(text, "# manifest: {}", self.manifest.id).unwrap();
        writeln!(text, "{}", header.join(",")).unwrap();
        for row in rows {
            writeln!(text, "{}", row.join(",")).unwrap();
        }
        std::fs::write(self.path(name), text)?;
        self.record(name);
        Ok(())
    }

    /// Registers a file written by other means.
    pub fn register(&mut self, name: &str) {
        self.record(name);
    }

    pub fn finish(&mut self, status: &str) -> Result<()> {
        self.manifest.status = status.to_string();
        self.manifest.wall_time_seconds = Some(self.started.elapsed().as_secs_f64());
        self.write_manifest()
    }
}
