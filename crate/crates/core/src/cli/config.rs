use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::MixtureSpec;
use crate::error::{Error, Result};
use crate::model::Pooling;
use crate::prototypes::AssignmentGranularity;
use crate::numerics::OptimizerKind;
use crate::training::{EditorScope, GroupTraining, TrainConfig};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Device-model sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    /// Recurrent state width, used by `gru_lite` pooling.
    pub hidden_dim: usize,
    pub pooling: Pooling,
    /// Hidden widths of the adaptive chain; layers = entries + 1.
    pub adaptive_hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { embed_dim: 16, hidden_dim: 16, pooling: Pooling::Last, adaptive_hidden: vec![16] }
    }
}

/// Editor sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditorConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Width of the shared embedding and the per-layer contexts.
    pub context_dim: usize,
}

impl Default for EditorConfig {
    fn default() -> Self {
        Self { embed_dim: 16, hidden_dim: 32, context_dim: 32 }
    }
}

/// Grids of the canned sweeps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub thresholds: Vec<f64>,
    pub group_counts: Vec<usize>,
    /// Group counts at which global and group prototypes are compared.
    pub prototype_group_counts: Vec<usize>,
    /// Adaptive layer count used by the cross-layer transfer sweep.
    pub clkt_layers: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            thresholds: vec![0.1, 0.5, 1.0, 5.0],
            group_counts: vec![2, 3, 5, 10],
            prototype_group_counts: vec![5, 10],
            clkt_layers: 3,
        }
    }
}

/// Training schedule for the device model and the global editor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Device model first, then the editor against the frozen model.
    #[default]
    TwoPhase,
    /// Alternate one device-model epoch with one editor epoch.
    JointAlternating,
}

/// Every tunable of a run. Unknown keys are rejected and every field has a
/// default, so an empty file is a complete configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Edit bound T.
    pub threshold: f64,
    /// Number of group prototypes.
    pub group_count: usize,
    /// Cross-layer transfer in the editor.
    pub clkt: bool,
    /// Real-time window size W.
    pub window: usize,
    /// Sync cadence K in device events; 0 disables syncing.
    pub sync_every: usize,
    pub history_fraction: f64,
    pub eval_negatives: usize,
    /// Keep items of a device's own history out of its training negatives.
    pub exclude_history_negatives: bool,
    pub granularity: AssignmentGranularity,
    /// Cluster per-layer normalized edits instead of raw ones.
    pub normalize_edits: bool,
    pub kmeans_max_iters: usize,
    pub schedule: Schedule,
    /// Simulation worker threads; 1 is the deterministic mode.
    pub threads: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Interaction CSV to use instead of the synthetic mixture.
    pub dataset: Option<PathBuf>,
    /// Include the on-device fine-tune condition in evaluations.
    pub eval_finetune: bool,
    pub model: ModelConfig,
    pub editor: EditorConfig,
    pub mixture: MixtureSpec,
    pub dam_training: TrainConfig,
    pub editor_training: TrainConfig,
    pub group_training: GroupTraining,
    /// On-device fine-tune baseline.
    pub finetune: TrainConfig,
    pub sweep: SweepConfig,
    /// Serve requests timed by the latency experiment.
    pub latency_requests: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            threshold: 1.0,
            group_count: 5,
            clkt: true,
            window: 10,
            sync_every: 5,
            history_fraction: 0.7,
            eval_negatives: 49,
            exclude_history_negatives: true,
            granularity: AssignmentGranularity::Window,
            normalize_edits: false,
            kmeans_max_iters: 100,
            schedule: Schedule::TwoPhase,
            threads: 1,
            seeds: vec![0, 1, 2, 3, 4],
            output_dir: PathBuf::from("runs/default"),
            dataset: None,
            eval_finetune: false,
            model: ModelConfig::default(),
            editor: EditorConfig::default(),
            mixture: MixtureSpec::default(),
            dam_training: TrainConfig { negatives_per_positive: 20, ..TrainConfig::default() },
            editor_training: TrainConfig { learning_rate: 0.005, negatives_per_positive: 20, ..TrainConfig::default() },
            group_training: GroupTraining {
                base: TrainConfig { epochs: 5, learning_rate: 0.005, negatives_per_positive: 20, ..TrainConfig::default() },
                editor: TrainConfig { epochs: 5, learning_rate: 0.005, negatives_per_positive: 20, edit_penalty: 1.0, ..TrainConfig::default() },
                refine_base: true,
                editor_scope: EditorScope::All,
            },
            finetune: TrainConfig { optimizer: OptimizerKind::Sgd, ..TrainConfig::default() },
            sweep: SweepConfig::default(),
            latency_requests: 200,
        }
    }
}

impl RunConfig {
    /// Parses a config file. Keys it leaves out keep their values from
    /// [`RunConfig::default`], at any nesting depth.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Self::from_table(user)
    }

    /// Like [`RunConfig::from_toml_str`] for an already parsed table.
    pub fn from_table(user: toml::Table) -> Result<Self> {
        let mut merged = toml::Table::try_from(RunConfig::default()).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, user);
        let cfg: RunConfig = toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Version { found: self.schema_version, expected: CONFIG_SCHEMA_VERSION });
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::Config(format!("threshold must be > 0, got {}", self.threshold)));
        }
        if self.group_count == 0 {
            return Err(Error::Config("group_count must be >= 1".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("window must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.eval_negatives < 9 {
            return Err(Error::Config("eval_negatives must be >= 9 so HR@10 is defined".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        self.mixture.validate()?;
        for t in [&self.dam_training, &self.editor_training, &self.group_training.base, &self.group_training.editor, &self.finetune] {
            t.validate()?;
        }
        Ok(())
    }

    pub fn sync_every(&self) -> Option<usize> {
        (self.sync_every > 0).then_some(self.sync_every)
    }
}

fn merge(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml_str(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::from_toml_str("bogus = 1"), Err(Error::Config(_))));
        assert!(RunConfig::from_toml_str("[model]\nwidth = 3").is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_toml_str("threshold = 0.0").is_err());
        assert!(RunConfig::from_toml_str("group_count = 0").is_err());
        assert!(matches!(RunConfig::from_toml_str("schema_version = 9"), Err(Error::Version { found: 9, .. })));
    }

    #[test]
    fn nested_override() {
        let c = RunConfig::from_toml_str("threshold = 0.5\n[mixture]\narchetypes = 3\n").unwrap();
        assert_eq!(c.threshold, 0.5);
        assert_eq!(c.mixture.archetypes, 3);
        assert_eq!(c.mixture.vocab_size, 500);
    }

    #[test]
    fn partial_section_keeps_run_defaults() {
        let c = RunConfig::from_toml_str("[group_training.editor]\nepochs = 2\n").unwrap();
        let d = RunConfig::default();
        assert_eq!(c.group_training.editor.epochs, 2);
        assert_eq!(c.group_training.editor.edit_penalty, d.group_training.editor.edit_penalty);
        assert_eq!(c.group_training.base, d.group_training.base);
    }
}
