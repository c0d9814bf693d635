//! Follows one device whose preferences switch mid-stream and prints the
//! group the cloud assigns to each of its real-time windows, next to the
//! device's true archetype.
//!
//!     cargo run --release --example dynamic_assignment

use persona::cli::{recipes, RunConfig};
use persona::prototypes::dynamic_assign;

fn main() -> persona::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.mixture.shift_window = (0.75, 0.85);
    let run = recipes::run_pipeline(&cfg, 0)?;
    let prep = &run.prepared;
    let labels = prep.labels.as_ref().expect("synthetic data has labels");

    let device = labels.per_event.iter().position(|l| l.first() != l.last()).expect("some device switches");
    let history = &prep.split.history[device].items;
    let stream: Vec<u32> = history.iter().chain(&prep.split.realtime[device].items).copied().collect();
    println!("device {device}: {} history events, switch inside the real-time part", history.len());
    for t in (history.len()..stream.len()).step_by(cfg.sync_every.max(1)) {
        let window = &stream[t.saturating_sub(cfg.window)..t];
        let r = dynamic_assign(&run.set, window)?;
        let norms: Vec<String> = r.norms.iter().map(|n| format!("{n:.2}")).collect();
        println!("event {t:>3}  archetype {}  group {}  norms [{}]", labels.per_event[device][t], r.chosen_group, norms.join(", "));
    }
    Ok(())
}
