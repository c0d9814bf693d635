//! Trains every model of one seed stage by stage: the device model, the
//! global parameter editor, the partition of historical edits and the group
//! prototypes.
//!
//!     cargo run --release --example train_pipeline

use persona::cli::{recipes, RunConfig};
use persona::numerics::Params;

fn main() -> persona::Result<()> {
    let cfg = RunConfig::default();
    let prep = recipes::prepare(&cfg, 0)?;
    println!("{} training windows, {} validation windows", prep.train.len(), prep.validation.len());

    let (dam, r) = recipes::train_dam_phase(&cfg, &prep)?;
    println!("device model: {} adaptive params, validation ndcg@5 per epoch {:.3?}", dam.adaptive.param_count(), r.validation);

    let (global, r) = recipes::train_editor_phase(&cfg, &prep, &dam)?;
    println!("global editor: {} params, validation ndcg@5 per epoch {:.3?}", global.editor.param_count(), r.validation);

    let partition = recipes::partition_phase(&cfg, &global, &prep)?;
    let ari = recipes::archetype_agreement(&partition, &prep)?.unwrap_or(f64::NAN);
    println!("partition sizes {:?}, agreement with true archetypes (ARI) {ari:.3}", partition.sizes());

    let (set, reports) = recipes::build_groups_phase(&cfg, &global, &partition, &prep)?;
    for r in &reports {
        println!("{} group {:?}: {} epochs, final loss {:.4}", r.phase, r.group, r.epoch_losses.len(), r.epoch_losses.last().unwrap_or(&f64::NAN));
    }
    println!("prototype set checksum {}", &set.checksum()[..16]);
    Ok(())
}
