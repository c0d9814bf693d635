//! One sync by hand through the wire format, then a full replay of every
//! device's real-time stream with syncs every few events.
//!
//!     cargo run --release --example device_cloud_sync

use persona::cli::{recipes, RunConfig};
use persona::eval::{condition, MetricReport};
use persona::harness::wire::{decode_download, encode_upload, upload_len, UploadMessage};
use persona::harness::cloud_serve;

fn main() -> persona::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.mixture.archetypes = 3;
    cfg.mixture.item_clusters = 12;
    cfg.mixture.devices_per_archetype = 10;
    cfg.mixture.seq_len = 60;
    cfg.group_count = 3;
    let run = recipes::run_pipeline(&cfg, 0)?;
    let set = &run.set;

    let window = run.prepared.split.history[0].items.iter().rev().take(cfg.window).rev().copied().collect::<Vec<_>>();
    let request = encode_upload(&UploadMessage { device_id: 0, window: window.clone() });
    assert_eq!(request.len(), upload_len(window.len()));
    let before = set.checksum();
    let out = cloud_serve(set, &request, None);
    assert_eq!(set.checksum(), before, "serving never mutates prototypes");
    let reply = decode_download(&out.response, &set.global.base.shapes())?;
    println!(
        "upload {} bytes, download {} bytes, group {}, edit norm {:.3}, {:?}",
        request.len(),
        out.response.len(),
        reply.group,
        out.edit_norm,
        out.latency
    );

    for cond in [condition::BASELINE, condition::PERSONA_M] {
        let sim = recipes::simulate_condition(&cfg, &run.prepared, set, cond)?;
        let report = MetricReport::from_predictions(cond, 0, &sim.all_predictions())?;
        let up: usize = sim.records.iter().map(|r| r.upload_bytes).sum();
        let down: usize = sim.records.iter().map(|r| r.download_bytes).sum();
        println!("{cond:>10}: {} syncs, {up} bytes up, {down} bytes down, hr@5 {:.4}", sim.records.len(), report.hr5);
    }
    Ok(())
}
