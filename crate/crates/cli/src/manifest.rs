//! Run manifest: configuration hash, tool version, seed, timestamp, and
//! per-stage records. `key: value` lines, parsed back by `Manifest::read`.
//!
//! The timestamp honors SOURCE_DATE_EPOCH so runs can be byte-reproducible.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::config::ExperimentConfig;
use crate::CliError;

pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(config: &ExperimentConfig) -> Self {
        let timestamp = std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|v| v.parse::<u64>().ok())
            .unwrap_or_else(|| {
                SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0)
            });
        let mut manifest = Self {
            entries: Vec::new(),
        };
        // The hash identifies the experiment, not where it is written.
        let mut canonical = config.clone();
        canonical.out_dir = std::path::PathBuf::new();
        manifest.record(
            "config_hash",
            &format!("{:016x}", fnv1a(&format!("{canonical:?}"))),
        );
        manifest.record("version", env!("CARGO_PKG_VERSION"));
        manifest.record("seed", &config.seed.to_string());
        manifest.record("timestamp_epoch", &timestamp.to_string());
        manifest
    }

    pub fn record(&mut self, key: &str, value: &str) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut out = String::new();
        for (key, value) in &self.entries {
            let _ = writeln!(out, "{key}: {value}");
        }
        std::fs::write(path, out)
            .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> Result<Vec<(String, String)>, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once(": ") else {
                return Err(CliError::data(format!(
                    "{}:{}: expected 'key: value'",
                    path.display(),
                    idx + 1
                )));
            };
            entries.push((key.to_string(), value.to_string()));
        }
        Ok(entries)
    }
}

/// FNV-1a, stable across runs and platforms.
fn fnv1a(text: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in text.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
