//! Atomic artifact writing plus the run manifest.
//!
//! Every artifact is rendered in memory and lands via temp-file + rename,
//! so a crashed run never leaves a half-written file behind. Content files
//! are byte-identical across reruns of the same config and seed; wall-clock
//! timestamps live only in the sidecar `manifest.json`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Writes `bytes` to `path` atomically (temp file in the same directory,
/// then rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .ok_or_else(|| CliError::Runtime(format!("{}: no parent directory", path.display())))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| CliError::Runtime(format!("{}: cannot create temp file: {e}", dir.display())))?;
    tmp.write_all(bytes)
        .and_then(|()| tmp.flush())
        .map_err(|e| CliError::Runtime(format!("{}: write failed: {e}", path.display())))?;
    tmp.persist(path)
        .map_err(|e| CliError::Runtime(format!("{}: rename failed: {e}", path.display())))?;
    Ok(())
}

/// Collects artifacts for one command run and writes the manifest at the end.
pub struct RunWriter {
    dir: PathBuf,
    command: &'static str,
    config_path: String,
    seed: u64,
    started_unix_ms: u128,
    files: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config: &'a str,
    seed: u64,
    started_unix_ms: u128,
    finished_unix_ms: u128,
    files: &'a [String],
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

impl RunWriter {
    pub fn new(dir: &Path, command: &'static str, config_path: &Path, seed: u64) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| {
            CliError::Runtime(format!("cannot create output directory {}: {e}", dir.display()))
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command,
            config_path: config_path.display().to_string(),
            seed,
            started_unix_ms: now_ms(),
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes one named artifact atomically and records it for the manifest.
    pub fn emit(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// Serializes `value` as pretty JSON with a trailing newline.
    pub fn emit_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut bytes = serde_json::to_vec_pretty(value)
            .map_err(|e| CliError::Runtime(format!("{name}: JSON encoding failed: {e}")))?;
        bytes.push(b'\n');
        self.emit(name, &bytes)
    }

    /// Writes the sidecar manifest; timestamps live here and nowhere else.
    pub fn finish(mut self) -> CliResult<()> {
        self.files.push("manifest.json".to_string());
        let manifest = Manifest {
            command: self.command,
            config: &self.config_path,
            seed: self.seed,
            started_unix_ms: self.started_unix_ms,
            finished_unix_ms: now_ms(),
            files: &self.files,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)
            .map_err(|e| CliError::Runtime(format!("manifest.json: JSON encoding failed: {e}")))?;
        bytes.push(b'\n');
        write_atomic(&self.dir.join("manifest.json"), &bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_and_never_leaves_temps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.txt");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"second");
        let names: Vec<_> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        assert_eq!(names, vec!["a.txt".to_string()]);
    }

    #[test]
    fn manifest_lists_artifacts_and_timestamps() {
        let dir = tempfile::tempdir().unwrap();
        let mut w =
            RunWriter::new(dir.path(), "simulate", Path::new("cfg.toml"), 9).unwrap();
        w.emit("data.bin", &[1, 2, 3]).unwrap();
        w.finish().unwrap();
        let manifest: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap())
                .unwrap();
        assert_eq!(manifest["command"], "simulate");
        assert_eq!(manifest["seed"], 9);
        assert_eq!(manifest["files"][0], "data.bin");
        assert_eq!(manifest["files"][1], "manifest.json");
        assert!(manifest["finished_unix_ms"].as_u64().unwrap() >= manifest["started_unix_ms"].as_u64().unwrap());
    }
}
