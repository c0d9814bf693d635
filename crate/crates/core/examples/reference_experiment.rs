//! Runs the reference experiment (static model, single prototype, multiple
//! prototypes) on the synthetic mixture and prints mean metrics per
//! condition.
//!
//!     cargo run --release --example reference_experiment -- [config.toml]

use std::time::Instant;

use persona::cli::{recipes, RunConfig};
use persona::eval::summarize;

fn main() -> persona::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => RunConfig::load(path.as_ref())?,
        None => RunConfig::default(),
    };
    let start = Instant::now();
    let out = recipes::reference_experiment(&cfg)?;
    for (seed, ari) in &out.archetype_ari {
        println!("seed {seed}: partition vs archetypes ARI {ari:.3}");
    }
    for r in &out.reports {
        println!("{:>10} seed {} hr@5 {:.4} ndcg@5 {:.4} auc {:.4}", r.condition, r.seed, r.hr5, r.ndcg5, r.auc);
    }
    for row in summarize(&out.reports) {
        println!("{:>10} hr@5 {:.4} ndcg@5 {:.4}", row.condition, row.mean("hr@5").unwrap_or(f64::NAN), row.mean("ndcg@5").unwrap_or(f64::NAN));
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
