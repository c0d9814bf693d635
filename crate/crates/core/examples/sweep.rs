//! Runs one ablation axis and prints per-seed rows and the mean of each
//! sweep point.
//!
//!     cargo run --release --example sweep -- threshold [config.toml]
//!
//! Axes: threshold, groups, clkt, prototype.

use std::collections::BTreeMap;
use std::time::Instant;

use clap::ValueEnum;
use persona::cli::{recipes, RunConfig, SweepAxis};

fn main() -> persona::Result<()> {
    let mut args = std::env::args().skip(1);
    let axis = args.next().unwrap_or_else(|| "threshold".into());
    let axis = SweepAxis::from_str(&axis, true).map_err(persona::Error::Config)?;
    let cfg = match args.next() {
        Some(path) => RunConfig::load(path.as_ref())?,
        None => RunConfig::default(),
    };
    let start = Instant::now();
    let out = recipes::run_sweep(&cfg, axis)?;

    let mut means: BTreeMap<(String, String), (f64, f64, usize)> = BTreeMap::new();
    for r in &out.reports {
        println!("{:>10} {:>9} seed {} hr@5 {:.4} ndcg@5 {:.4}", r.condition, r.axis_value, r.seed, r.hr5, r.ndcg5);
        let e = means.entry((r.condition.clone(), r.axis_value.clone())).or_default();
        e.0 += r.hr5;
        e.1 += r.ndcg5;
        e.2 += 1;
    }
    for ((cond, value), (hr, ndcg, n)) in &means {
        println!("mean {cond:>10} {value:>9} hr@5 {:.4} ndcg@5 {:.4}", hr / *n as f64, ndcg / *n as f64);
    }
    for row in &out.consistency {
        println!("consistency {:>3} seed {} {:.4}", row.axis_value, row.seed, row.consistency);
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
