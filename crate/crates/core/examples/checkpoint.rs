//! Saves a trained prototype set, loads it back and shows that the loaded
//! set serves the same groups; a second save is byte-identical.
//!
//!     cargo run --release --example checkpoint

use persona::cli::checkpoint::{from_bytes, to_bytes};
use persona::cli::{load_checkpoint, recipes, save_checkpoint, Checkpoint, RunConfig, Stage};
use persona::prototypes::dynamic_assign;

fn main() -> persona::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.mixture.archetypes = 3;
    cfg.mixture.item_clusters = 12;
    cfg.mixture.devices_per_archetype = 8;
    cfg.mixture.seq_len = 50;
    cfg.group_count = 3;
    let run = recipes::run_pipeline(&cfg, 0)?;

    let path = std::env::temp_dir().join("persona-example.ckpt");
    save_checkpoint(&path, &Checkpoint { config: cfg.clone(), stage: Stage::Prototypes(run.set.clone()) })?;
    let loaded = load_checkpoint(&path)?;
    let bytes = std::fs::read(&path).map_err(|e| persona::Error::Io { path: path.clone(), source: e })?;
    println!("{} bytes written to {}", bytes.len(), path.display());
    assert_eq!(to_bytes(&from_bytes(&bytes)?)?, bytes);

    let set = loaded.prototypes()?;
    let windows = run.prepared.train_windows();
    let same = windows.iter().filter(|w| dynamic_assign(set, w).unwrap().chosen_group == dynamic_assign(&run.set, w).unwrap().chosen_group).count();
    println!("same group for {same} of {} windows after the 32-bit round trip", windows.len());
    Ok(())
}
