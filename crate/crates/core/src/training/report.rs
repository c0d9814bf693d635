use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Trace of one training phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub phase: String,
    pub group: Option<usize>,
    /// Mean training loss of every completed epoch.
    pub epoch_losses: Vec<f64>,
    /// Validation NDCG after every epoch, when a validation set was given.
    pub validation: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    pub wall_clock_secs: f64,
    /// Checksum of the parameters the phase returned.
    pub checksum: String,
}

impl TrainReport {
    pub fn new(phase: &str) -> Self {
        Self {
            phase: phase.to_string(),
            group: None,
            epoch_losses: Vec::new(),
            validation: Vec::new(),
            best_epoch: None,
            stopped_early: false,
            wall_clock_secs: 0.0,
            checksum: String::new(),
        }
    }

    pub fn epochs_completed(&self) -> usize {
        self.epoch_losses.len()
    }
}

/// One JSON object per line.
pub fn write_reports_jsonl(reports: &[TrainReport], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for r in reports {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::InvalidInput(e.to_string()))?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}
