//! Run manifests: what was run, on what, producing which files.
//!
//! Every command writes one. The manifest records the subcommand, the
//! argument vector it was invoked with, the fully resolved configuration
//! (defaults included), the seeds used, content digests of every input and
//! output file, the tool version, and timestamps. Replaying `argv` against
//! the same inputs reproduces the outputs; the digests let a reader verify
//! both sides without rerunning anything.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use radlabel_core::date::IsoDate;

use crate::artifact::{file_digest, read_to_string, write_atomic};

/// File name used when the output location is a directory.
pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the binary name, verbatim.
    pub argv: Vec<String>,
    pub version: String,
    pub created: String,
    pub created_unix: u64,
    pub seeds: Vec<u64>,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl RunManifest {
    pub fn new(command: &str, argv: Vec<String>) -> Self {
        let created_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            command: command.to_string(),
            argv,
            version: env!("CARGO_PKG_VERSION").to_string(),
            created: iso_utc(created_unix),
            created_unix,
            seeds: Vec::new(),
            config: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: file_digest(path).context("digesting input")?,
        });
        Ok(())
    }

    pub fn record_output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: file_digest(path).context("digesting output")?,
        });
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        write_atomic(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        serde_json::from_str(&read_to_string(path)?)
            .with_context(|| format!("manifest file {}", path.display()))
    }
}

/// Sidecar manifest location for commands whose `--out` is a single file:
/// the output path with `.manifest.json` appended.
pub fn sidecar_path(out: &Path) -> std::path::PathBuf {
    let mut os = out.as_os_str().to_owned();
    os.push(".manifest.json");
    std::path::PathBuf::from(os)
}

fn iso_utc(secs: u64) -> String {
    let date = IsoDate::from_day_number((secs / 86_400) as i64);
    let rem = secs % 86_400;
    format!(
        "{date}T{:02}:{:02}:{:02}Z",
        rem / 3600,
        (rem % 3600) / 60,
        rem % 60
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iso_utc_formats_known_instants() {
        assert_eq!(iso_utc(0), "1970-01-01T00:00:00Z");
        // 2026-08-25 00:00:00 UTC is day 20690 of the unix epoch.
        assert_eq!(iso_utc(20_690 * 86_400), "2026-08-25T00:00:00Z");
        assert_eq!(iso_utc(20_690 * 86_400 + 3_661), "2026-08-25T01:01:01Z");
    }

    #[test]
    fn manifest_roundtrip_with_digests() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        let output = dir.path().join("out.txt");
        write_atomic(&input, b"in").unwrap();
        write_atomic(&output, b"out").unwrap();

        let mut manifest = RunManifest::new(
            "synth",
            vec!["synth".to_string(), "--out".to_string(), "out.txt".to_string()],
        );
        manifest.seeds = vec![7];
        manifest.config.insert("seed".to_string(), "7".to_string());
        manifest.record_input(&input).unwrap();
        manifest.record_output(&output).unwrap();

        let path = dir.path().join(RUN_MANIFEST_FILE);
        manifest.save(&path).unwrap();
        let back = RunManifest::load(&path).unwrap();
        assert_eq!(back, manifest);
        assert_eq!(back.inputs[0].sha256.len(), 64);
    }

    #[test]
    fn sidecar_appends_to_the_file_name() {
        let path = sidecar_path(Path::new("runs/corpus.jsonl"));
        assert_eq!(path.to_str().unwrap(), "runs/corpus.jsonl.manifest.json");
    }
}
