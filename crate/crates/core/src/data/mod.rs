//! Interaction logs: a synthetic shifting-preference generator, CSV
//! ingestion and export, temporal history/real-time splitting, and
//! training-window construction.

mod csv_io;
mod split;
mod synthetic;
mod windows;

pub use csv_io::{load_csv, load_labels, write_csv, write_labels, write_mapping};
pub use split::{split_history_realtime, Split, SplitSpec};
pub use synthetic::{gen_synthetic, ArchetypeLabels, MixtureSpec};
pub use windows::{eval_negatives, make_training_windows, sample_negatives, split_validation, NegativeConfig, TrainingExample};

/// One device's interactions, sorted by timestamp.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeviceSequence {
    pub device_id: u32,
    pub items: Vec<u32>,
    pub timestamps: Vec<i64>,
}

impl DeviceSequence {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// A single `(device, item, timestamp)` record.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Interaction {
    pub device_id: u32,
    pub item_id: u32,
    pub timestamp: i64,
}

/// Interactions grouped by device with dense item ids in `[0, vocab_size)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InteractionLog {
    pub devices: Vec<DeviceSequence>,
    pub vocab_size: usize,
    /// Original item id for each dense id, when loaded from a file.
    pub item_ids: Option<Vec<i64>>,
    /// Original device id for each dense device id, when loaded from a file.
    pub device_ids: Option<Vec<i64>>,
}

impl InteractionLog {
    pub fn device_count(&self) -> usize {
        self.devices.len()
    }

    pub fn interaction_count(&self) -> usize {
        self.devices.iter().map(DeviceSequence::len).sum()
    }

    pub fn records(&self) -> impl Iterator<Item = Interaction> + '_ {
        self.devices.iter().flat_map(|d| {
            d.items.iter().zip(&d.timestamps).map(move |(&item_id, &timestamp)| Interaction {
                device_id: d.device_id,
                item_id,
                timestamp,
            })
        })
    }

    /// Checks sorted timestamps and in-range item ids.
    pub fn validate(&self) -> crate::Result<()> {
        for d in &self.devices {
            if d.items.len() != d.timestamps.len() {
                return Err(crate::Error::Data(format!("device {} has mismatched columns", d.device_id)));
            }
            if d.timestamps.windows(2).any(|w| w[0] > w[1]) {
                return Err(crate::Error::Data(format!("device {} timestamps not sorted", d.device_id)));
            }
            if let Some(bad) = d.items.iter().find(|&&i| i as usize >= self.vocab_size) {
                return Err(crate::Error::Data(format!("item {bad} outside vocabulary {}", self.vocab_size)));
            }
        }
        Ok(())
    }
}
