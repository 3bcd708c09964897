//! Run manifest and output-directory locking.
//!
//! Every subcommand appends a phase record and content hashes for the files
//! it wrote to `manifest.json` in the output directory, so a finished run
//! carries a verifiable inventory of its artifacts. A `.lock` sentinel file
//! serializes access to the directory across processes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::util::sha256_hex;
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const LOCK_FILE: &str = ".lock";

/// Inventory of a run: tool version, master seed, resolved configuration,
/// wall-clock per phase, and a content hash per artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub master_seed: u64,
    pub config: serde_json::Value,
    pub phases: Vec<PhaseRecord>,
    /// Relative artifact path (forward slashes) to hex SHA-256 of contents.
    pub artifacts: BTreeMap<String, String>,
}

/// One completed subcommand invocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub command: String,
    pub seconds: f64,
}

impl Manifest {
    /// Loads the manifest from `out_dir`, or starts a fresh one. The master
    /// seed and configuration snapshot always reflect the current invocation.
    pub fn load_or_new(
        out_dir: &Path,
        master_seed: u64,
        config: serde_json::Value,
    ) -> Result<Manifest> {
        let path = out_dir.join(MANIFEST_FILE);
        let mut manifest = if path.exists() {
            let text = fs::read_to_string(&path)?;
            serde_json::from_str::<Manifest>(&text)
                .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?
        } else {
            Manifest {
                tool_version: String::new(),
                master_seed,
                config: serde_json::Value::Null,
                phases: Vec::new(),
                artifacts: BTreeMap::new(),
            }
        };
        manifest.tool_version = env!("CARGO_PKG_VERSION").to_string();
        manifest.master_seed = master_seed;
        manifest.config = config;
        Ok(manifest)
    }

    /// Records a finished phase.
    pub fn record_phase(&mut self, command: &str, seconds: f64) {
        self.phases.push(PhaseRecord { command: command.to_string(), seconds });
    }

    /// Records (or refreshes) the content hash of one artifact.
    pub fn record_artifact(&mut self, relpath: &str, contents: &[u8]) {
        self.artifacts.insert(relpath.to_string(), sha256_hex(contents));
    }

    pub fn save(&self, out_dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Structural(format!("manifest serialization: {e}")))?;
        fs::write(out_dir.join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }

    /// Checks every recorded artifact hash against the file currently on
    /// disk. A missing or altered artifact is a harness fault.
    pub fn verify(&self, out_dir: &Path) -> Result<()> {
        for (relpath, expected) in &self.artifacts {
            let path = out_dir.join(relpath);
            let bytes = fs::read(&path)
                .map_err(|e| Error::Harness(format!("artifact {relpath} unreadable: {e}")))?;
            let actual = sha256_hex(&bytes);
            if &actual != expected {
                return Err(Error::Harness(format!(
                    "artifact {relpath} does not match its recorded hash"
                )));
            }
        }
        Ok(())
    }
}

/// Exclusive lock on an output directory, held for the life of the guard.
///
/// The lock is a sentinel file created with `create_new`; a crash can leave
/// it behind, in which case `--force` clears it.
#[derive(Debug)]
pub struct LockGuard {
    path: PathBuf,
}

impl LockGuard {
    pub fn acquire(out_dir: &Path, force: bool) -> Result<LockGuard> {
        let path = out_dir.join(LOCK_FILE);
        if force {
            let _ = fs::remove_file(&path);
        }
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(LockGuard { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::Locked(path))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
