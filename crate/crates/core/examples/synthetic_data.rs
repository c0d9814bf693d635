//! Generates the synthetic archetype mixture, splits it into history and
//! real-time streams, and round-trips it through the CSV loader.
//!
//!     cargo run --example synthetic_data

use persona::data::{gen_synthetic, load_csv, split_history_realtime, write_csv, MixtureSpec, SplitSpec};

fn main() -> persona::Result<()> {
    let spec = MixtureSpec { devices_per_archetype: 6, seq_len: 40, ..MixtureSpec::default() };
    let (log, labels) = gen_synthetic(&spec)?;
    println!("{} devices, {} interactions, vocabulary {}", log.device_count(), log.interaction_count(), log.vocab_size);

    let switched = labels.per_event.iter().filter(|l| l.first() != l.last()).count();
    println!("{switched} devices switch archetype mid-stream");
    let d0 = &log.devices[0];
    println!("device 0 starts with items {:?} (archetype {})", &d0.items[..8], labels.per_event[0][0]);

    let split = split_history_realtime(&log, &SplitSpec { history_fraction: 0.7, window: 10 })?;
    println!("history events {}, real-time events {}", split.history.iter().map(|s| s.len()).sum::<usize>(), split.realtime.iter().map(|s| s.len()).sum::<usize>());

    let dir = std::env::temp_dir().join("persona-example-data");
    std::fs::create_dir_all(&dir).map_err(|e| persona::Error::Io { path: dir.clone(), source: e })?;
    let path = dir.join("interactions.csv");
    write_csv(&log, &path)?;
    let back = load_csv(&path)?;
    println!("reloaded {} interactions from {}", back.interaction_count(), path.display());
    Ok(())
}
