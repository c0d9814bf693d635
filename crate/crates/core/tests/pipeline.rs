mod common;

use persona::cli::{recipes, RunConfig};
use persona::eval::condition;
use persona::harness::SyncRecord;
use persona::prototypes::dynamic_assign;

fn without_latency(records: &[SyncRecord]) -> Vec<SyncRecord> {
    records.iter().map(|r| SyncRecord { cloud_latency_ns: 0, ..r.clone() }).collect()
}

#[test]
fn same_seed_same_models_and_logs() {
    let cfg = common::small_config();
    let a = recipes::run_pipeline(&cfg, 3).unwrap();
    let b = recipes::run_pipeline(&cfg, 3).unwrap();
    assert_eq!(a.set.checksum(), b.set.checksum());
    let last = |r: &recipes::SeedRun| r.train_reports.iter().map(|t| t.checksum.clone()).collect::<Vec<_>>();
    assert_eq!(last(&a), last(&b));

    let serial = recipes::simulate_condition(&cfg, &a.prepared, &a.set, condition::PERSONA_M).unwrap();
    let threaded_cfg = RunConfig { threads: 3, ..cfg.clone() };
    let threaded = recipes::simulate_condition(&threaded_cfg, &b.prepared, &b.set, condition::PERSONA_M).unwrap();
    assert_eq!(serial.predictions, threaded.predictions);
    let mut s = without_latency(&serial.records);
    let mut t = without_latency(&threaded.records);
    let key = |r: &SyncRecord| (r.device_id, r.event_index);
    s.sort_by_key(key);
    t.sort_by_key(key);
    assert_eq!(s, t);
}

#[test]
fn different_seeds_differ() {
    let cfg = common::small_config();
    let a = recipes::run_pipeline(&cfg, 0).unwrap();
    let b = recipes::run_pipeline(&cfg, 1).unwrap();
    assert_ne!(a.set.checksum(), b.set.checksum());
}

/// Devices whose archetype switches should be moved to another group far
/// more often than devices whose archetype stays put.
#[test]
fn shifted_devices_change_group() {
    let mut cfg = common::small_config();
    cfg.mixture.shift_window = (0.75, 0.8);
    cfg.mixture.devices_per_archetype = 12;
    let (mut shifted, mut shifted_moves, mut steady, mut steady_moves) = (0, 0, 0, 0);
    for seed in 0..3 {
        let run = recipes::run_pipeline(&cfg, seed).unwrap();
        let prep = &run.prepared;
        let labels = prep.labels.as_ref().unwrap();
        for (d, per_event) in labels.per_event.iter().enumerate() {
            let stream: Vec<u32> = prep.split.history[d].items.iter().chain(&prep.split.realtime[d].items).copied().collect();
            let n = stream.len();
            let first = &stream[..cfg.window];
            let last = &stream[n - cfg.window..];
            let moved = dynamic_assign(&run.set, first).unwrap().chosen_group != dynamic_assign(&run.set, last).unwrap().chosen_group;
            if per_event[0] != per_event[n - 1] {
                shifted += 1;
                shifted_moves += moved as usize;
            } else {
                steady += 1;
                steady_moves += moved as usize;
            }
        }
    }
    let shifted_rate = shifted_moves as f64 / shifted as f64;
    let steady_rate = steady_moves as f64 / steady as f64;
    println!("group changed for {shifted_moves}/{shifted} shifted and {steady_moves}/{steady} steady devices");
    assert!(shifted > 10 && steady > 10);
    assert!(shifted_rate > 0.5, "shifted devices moved at rate {shifted_rate:.2}");
    assert!(shifted_rate > steady_rate + 0.25, "shifted {shifted_rate:.2} vs steady {steady_rate:.2}");
}
