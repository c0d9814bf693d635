//! Median time of a cloud edit versus a 10-epoch on-device fine-tune on the
//! same windows.
//!
//!     cargo run --release --example latency

use persona::cli::{recipes, RunConfig};
use persona::harness::latency_ratio_experiment;

fn main() -> persona::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.mixture.devices_per_archetype = 10;
    cfg.mixture.seq_len = 80;
    let run = recipes::run_pipeline(&cfg, 0)?;
    let windows: Vec<Vec<u32>> = run.prepared.split.realtime.iter().flat_map(|d| d.items.chunks_exact(20).map(<[u32]>::to_vec)).take(cfg.latency_requests).collect();
    let r = latency_ratio_experiment(&run.set, &windows, &cfg.finetune)?;
    println!(
        "{} requests: serve median {:.1} us, fine-tune median {:.1} us, ratio {:.1}x",
        r.requests,
        r.serve_median_ns as f64 / 1e3,
        r.finetune_median_ns as f64 / 1e3,
        r.ratio
    );
    Ok(())
}
