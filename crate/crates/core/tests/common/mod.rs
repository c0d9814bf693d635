#![allow(dead_code)]

use persona::cli::RunConfig;

/// A run small enough for a test: three archetypes, short sequences and a
/// few epochs per phase.
pub fn small_config() -> RunConfig {
    let mut cfg = RunConfig { group_count: 3, seeds: vec![0], ..RunConfig::default() };
    cfg.mixture.archetypes = 3;
    cfg.mixture.item_clusters = 12;
    cfg.mixture.devices_per_archetype = 8;
    cfg.mixture.seq_len = 50;
    cfg.mixture.vocab_size = 200;
    cfg.dam_training.epochs = 4;
    cfg.editor_training.epochs = 4;
    cfg.group_training.base.epochs = 2;
    cfg.group_training.editor.epochs = 2;
    cfg
}
