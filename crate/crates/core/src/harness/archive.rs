//! Run archives: persistence and provenance.
//!
//! An archive directory is self-describing: `archive.json` echoes the full
//! experiment config, the corpus content hash, and the list of persisted run
//! logs, so any analysis is recomputable offline and any run reproducible
//! from the embedded config. Files are written atomically
//! (temp-then-rename).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_runtime, ExperimentConfig, HarnessError};
use crate::trainer::TrajectoryLog;

const ARCHIVE_FILE: &str = "archive.json";

/// FNV-1a over the dataset files; enough to detect a corpus swap between
/// run and analysis.
pub fn corpus_hash(dir: &Path) -> Result<String, HarnessError> {
    let mut hash: u64 = 0xcbf29ce484222325;
    for name in ["relations.json", "instances.jsonl", "splits.json"] {
        let path = dir.join(name);
        if !path.exists() {
            continue;
        }
        let bytes = fs::read(&path).map_err(|e| io_runtime("hashing corpus", e))?;
        for b in bytes {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
    }
    Ok(format!("{hash:016x}"))
}

/// Write-temp-then-rename so concurrent readers never see partial files.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_runtime("creating output dir", e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| io_runtime("writing temp file", e))?;
    fs::rename(&tmp, path).map_err(|e| io_runtime("renaming into place", e))?;
    Ok(())
}

/// One persisted run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub seed: u64,
    pub arm: String,
    /// Memory size override for sweep runs; absent otherwise.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub memory_size: Option<usize>,
    /// Log path relative to the archive root.
    pub log: String,
}

/// Archive manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArchive {
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub corpus_hash: String,
    /// Dataset location: "dataset" (relative, generated) or an absolute path.
    pub dataset_dir: String,
    pub runs: Vec<RunEntry>,
}

impl RunArchive {
    pub fn save(&self, root: &Path) -> Result<(), HarnessError> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| HarnessError::Runtime(format!("serialize archive: {e}")))?;
        write_atomic(&root.join(ARCHIVE_FILE), (json + "\n").as_bytes())
    }

    /// Absolute dataset directory for this archive.
    pub fn dataset_path(&self, root: &Path) -> PathBuf {
        let p = PathBuf::from(&self.dataset_dir);
        if p.is_absolute() {
            p
        } else {
            root.join(p)
        }
    }
}

pub fn load_archive(root: &Path) -> Result<RunArchive, HarnessError> {
    let path = root.join(ARCHIVE_FILE);
    let text = fs::read_to_string(&path).map_err(|e| {
        HarnessError::Runtime(format!("cannot read archive {}: {e}", path.display()))
    })?;
    serde_json::from_str(&text)
        .map_err(|e| HarnessError::Runtime(format!("parse {}: {e}", path.display())))
}

/// Persist one run log.
pub fn save_log(root: &Path, entry: &RunEntry, log: &TrajectoryLog) -> Result<(), HarnessError> {
    let json = serde_json::to_string(log)
        .map_err(|e| HarnessError::Runtime(format!("serialize log: {e}")))?;
    write_atomic(&root.join(&entry.log), json.as_bytes())
}

/// Load the logs of an archive, optionally filtered by arm label.
pub fn load_logs(
    root: &Path,
    archive: &RunArchive,
    arm: Option<&str>,
) -> Result<Vec<(RunEntry, TrajectoryLog)>, HarnessError> {
    let mut out = Vec::new();
    for entry in &archive.runs {
        if arm.is_some_and(|a| a != entry.arm) {
            continue;
        }
        let path = root.join(&entry.log);
        let text = fs::read_to_string(&path).map_err(|e| {
            HarnessError::Runtime(format!("cannot read log {}: {e}", path.display()))
        })?;
        let log: TrajectoryLog = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Runtime(format!("parse {}: {e}", path.display())))?;
        out.push((entry.clone(), log));
    }
    Ok(out)
}
