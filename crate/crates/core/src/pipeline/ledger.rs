use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::PipelineError;

pub const LEDGER_FILE: &str = "ledger.jsonl";

/// One completed stage. Timestamps live here and nowhere else, so every
/// other artifact stays byte-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub stage: String,
    pub finished_at: String,
    pub wall_seconds: f64,
    pub seed: u64,
    /// Paths relative to the run directory.
    pub artifacts: Vec<String>,
    pub summary: serde_json::Value,
}

impl LedgerEntry {
    pub fn new(stage: &str, started: Instant, seed: u64, artifacts: Vec<String>, summary: serde_json::Value) -> Self {
        Self {
            stage: stage.to_string(),
            finished_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            wall_seconds: started.elapsed().as_secs_f64(),
            seed,
            artifacts,
            summary,
        }
    }
}

/// Append-only JSON-lines log in the run directory.
pub struct Ledger {
    path: PathBuf,
}

impl Ledger {
    pub fn new(dir: &Path) -> Self {
        Self {
            path: dir.join(LEDGER_FILE),
        }
    }

    pub fn append(&self, entry: &LedgerEntry) -> Result<(), PipelineError> {
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?;
        let line = serde_json::to_string(entry).map_err(|e| PipelineError::Io(e.to_string()))?;
        writeln!(f, "{line}")?;
        Ok(())
    }

    pub fn entries(&self) -> Result<Vec<LedgerEntry>, PipelineError> {
        let text = match std::fs::read_to_string(&self.path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(vec![]),
            Err(e) => return Err(e.into()),
        };
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| PipelineError::Artifact(format!("ledger: {e}"))))
            .collect()
    }

    /// Latest entry for a stage.
    pub fn last(&self, stage: &str) -> Result<Option<LedgerEntry>, PipelineError> {
        Ok(self.entries()?.into_iter().rev().find(|e| e.stage == stage))
    }
}
