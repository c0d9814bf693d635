use serde::{Deserialize, Serialize};

use super::{DeviceSequence, InteractionLog};
use crate::error::{Error, Result};

/// Temporal history/real-time split settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    /// Leading fraction of each device's events that becomes history.
    pub history_fraction: f64,
    /// Real-time window size W used by the editor.
    pub window: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { history_fraction: 0.7, window: 10 }
    }
}

/// Per-device history and real-time streams. `history[i]` and
/// `realtime[i]` belong to the same device.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub history: Vec<DeviceSequence>,
    pub realtime: Vec<DeviceSequence>,
    pub vocab_size: usize,
    pub window: usize,
    /// Devices skipped because they had fewer than two events.
    pub dropped: usize,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.history_fraction) {
            return Err(Error::Config("history_fraction must be in [0,1]".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("window must be >= 1".into()));
        }
        Ok(())
    }

    /// Index of the first real-time event for a device of `timestamps`.
    /// Equal timestamps are never split across the boundary.
    pub fn split_point(&self, timestamps: &[i64]) -> usize {
        let n = timestamps.len();
        let mut p = ((n as f64) * self.history_fraction).floor() as usize;
        p = p.min(n);
        while p > 0 && p < n && timestamps[p] == timestamps[p - 1] {
            p += 1;
        }
        p
    }
}

/// Splits every device temporally. Devices with fewer than two events are
/// dropped and counted.
pub fn split_history_realtime(log: &InteractionLog, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let mut history = Vec::new();
    let mut realtime = Vec::new();
    let mut dropped = 0;
    for d in &log.devices {
        if d.len() < 2 {
            dropped += 1;
            continue;
        }
        let p = spec.split_point(&d.timestamps);
        history.push(DeviceSequence {
            device_id: d.device_id,
            items: d.items[..p].to_vec(),
            timestamps: d.timestamps[..p].to_vec(),
        });
        realtime.push(DeviceSequence {
            device_id: d.device_id,
            items: d.items[p..].to_vec(),
            timestamps: d.timestamps[p..].to_vec(),
        });
    }
    if dropped > 0 {
        eprintln!("warning: dropped {dropped} device(s) with fewer than 2 events");
    }
    Ok(Split { history, realtime, vocab_size: log.vocab_size, window: spec.window, dropped })
}
