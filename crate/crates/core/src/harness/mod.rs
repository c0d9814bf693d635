//! In-process device-cloud simulation. Devices predict each next item
//! before it is revealed, upload their recent window every few events, and
//! install the adaptive layers the cloud sends back.

pub mod wire;

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::data::{eval_negatives, sample_negatives, DeviceSequence, TrainingExample};
use crate::editor::{apply_edit, edit_norm};
use crate::error::{Error, Result};
use crate::eval::RankedPrediction;
use crate::model::{score_with, AdaptiveLayerSet, Backbone};
use crate::numerics::rng_from_seed;
use crate::prototypes::{dynamic_assign, AssignmentGranularity, PrototypeSet};
use crate::training::{finetune_on_device_baseline, TrainConfig};
use wire::{decode_download, decode_upload, encode_download, encode_error, encode_upload, DownloadMessage, UploadMessage};

/// One simulated device.
#[derive(Clone, Debug)]
pub struct DeviceSession {
    pub device_id: u32,
    stream: Vec<u32>,
    position: usize,
    window: VecDeque<u32>,
    window_size: usize,
    pub installed: Arc<AdaptiveLayerSet>,
    pub assigned_group: Option<usize>,
    events_since_sync: usize,
    pub installs: usize,
}

impl DeviceSession {
    /// `seed_window` pre-fills the window (typically the tail of history).
    pub fn new(device_id: u32, stream: Vec<u32>, seed_window: &[u32], window_size: usize, installed: Arc<AdaptiveLayerSet>) -> Self {
        let window_size = window_size.max(1);
        let start = seed_window.len().saturating_sub(window_size);
        Self {
            device_id,
            stream,
            position: 0,
            window: seed_window[start..].iter().copied().collect(),
            window_size,
            installed,
            assigned_group: None,
            events_since_sync: 0,
            installs: 0,
        }
    }

    /// Sessions over a split: real-time streams primed with history tails.
    pub fn from_split(history: &[DeviceSequence], realtime: &[DeviceSequence], window: usize, installed: &Arc<AdaptiveLayerSet>) -> Vec<Self> {
        history
            .iter()
            .zip(realtime)
            .map(|(h, r)| Self::new(r.device_id, r.items.clone(), &h.items, window, installed.clone()))
            .collect()
    }

    pub fn window(&self) -> Vec<u32> {
        self.window.iter().copied().collect()
    }

    pub fn remaining(&self) -> usize {
        self.stream.len() - self.position
    }

    fn push(&mut self, item: u32) {
        if self.window.len() == self.window_size {
            self.window.pop_front();
        }
        self.window.push_back(item);
    }

    pub fn install(&mut self, layers: AdaptiveLayerSet) -> Result<()> {
        if !layers.same_shapes(&self.installed) {
            return Err(Error::Protocol("downloaded layers do not match the installed shapes".into()));
        }
        self.installed = Arc::new(layers);
        self.installs += 1;
        Ok(())
    }
}

/// The upload frame for a session's current window, or `None` when the
/// window is empty and the sync is skipped.
pub fn device_sync_request(session: &DeviceSession) -> Option<Vec<u8>> {
    if session.window.is_empty() {
        return None;
    }
    Some(encode_upload(&UploadMessage { device_id: session.device_id, window: session.window() }))
}

/// Accounting of one completed sync.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyncRecord {
    pub device_id: u32,
    pub event_index: usize,
    pub chosen_group: usize,
    pub edit_norm: f64,
    pub upload_bytes: usize,
    pub download_bytes: usize,
    pub cloud_latency_ns: u64,
}

/// Reply of [`cloud_serve`]. `chosen_group` is `None` when the request was
/// rejected and `response` is an error frame.
#[derive(Clone, Debug)]
pub struct ServeOutcome {
    pub response: Vec<u8>,
    pub chosen_group: Option<usize>,
    pub edit_norm: f64,
    pub latency: Duration,
}

/// Cloud side of one sync: parse the upload, pick the group with the least
/// edit (or `forced_group`), edit that group's base and serialize the
/// resulting adaptive layers. Reads `protoset` only.
pub fn cloud_serve(protoset: &PrototypeSet, request: &[u8], forced_group: Option<usize>) -> ServeOutcome {
    serve(protoset, request, forced_group, true)
}

fn serve(protoset: &PrototypeSet, request: &[u8], forced_group: Option<usize>, edited: bool) -> ServeOutcome {
    let start = Instant::now();
    let result = (|| -> Result<(Vec<u8>, usize, f64)> {
        let up = decode_upload(request)?;
        let (group, edit) = match forced_group {
            Some(j) => {
                let g = protoset.groups.get(j).ok_or_else(|| Error::Protocol(format!("no group {j}")))?;
                (j, g.generate_edit(&up.window)?)
            }
            None => {
                let r = dynamic_assign(protoset, &up.window)?;
                (r.chosen_group, r.edit)
            }
        };
        let base = &protoset.groups[group].base;
        let layers = if edited { apply_edit(base, &edit)? } else { base.clone() };
        let group16 = u16::try_from(group).map_err(|_| Error::Protocol("group index overflow".into()))?;
        let bytes = encode_download(&DownloadMessage { group: group16, layers: layers.into_layers() })?;
        Ok((bytes, group, edit_norm(&edit)))
    })();
    match result {
        Ok((response, group, norm)) => ServeOutcome { response, chosen_group: Some(group), edit_norm: norm, latency: start.elapsed() },
        Err(e) => ServeOutcome { response: encode_error(&e.to_string()), chosen_group: None, edit_norm: 0.0, latency: start.elapsed() },
    }
}

/// Event counter and per-phase wall-clock.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimulationClock {
    pub events: u64,
    pub predict: Duration,
    pub serve: Duration,
    pub install: Duration,
}

impl SimulationClock {
    fn merge(&mut self, other: &SimulationClock) {
        self.events += other.events;
        self.predict += other.predict;
        self.serve += other.serve;
        self.install += other.install;
    }
}

/// What a device does when its sync is due.
#[derive(Clone, Debug)]
pub enum SyncStrategy<'a> {
    /// Never update: the deployed model stays as shipped.
    Static,
    /// Upload to the cloud and install the edited layers.
    Cloud { protoset: &'a PrototypeSet, granularity: AssignmentGranularity },
    /// Upload to the cloud, which picks a group as usual but sends back
    /// that group's fine-tuned base without an edit.
    GroupBase { protoset: &'a PrototypeSet, granularity: AssignmentGranularity },
    /// Fine-tune the base layers on the device's own window.
    Finetune { backbone: &'a Backbone, base: &'a AdaptiveLayerSet, cfg: TrainConfig },
}

/// Simulation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Sync every this many events; `None` never syncs.
    pub sync_every: Option<usize>,
    pub eval_negatives: usize,
    pub eval_seed: u64,
    /// Worker threads; 1 runs the deterministic round-robin loop.
    pub threads: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { sync_every: Some(5), eval_negatives: 49, eval_seed: 0, threads: 1 }
    }
}

/// One logged prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionEntry {
    pub device_id: u32,
    pub event_index: usize,
    pub group: Option<usize>,
    pub prediction: RankedPrediction,
}

#[derive(Clone, Debug, Default)]
pub struct SimulationOutput {
    pub records: Vec<SyncRecord>,
    /// Predictions per session, in session order.
    pub predictions: Vec<Vec<PredictionEntry>>,
    pub clock: SimulationClock,
}

impl SimulationOutput {
    pub fn all_predictions(&self) -> Vec<RankedPrediction> {
        self.predictions.iter().flatten().map(|p| p.prediction.clone()).collect()
    }

    pub fn write_records_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for r in &self.records {
            serde_json::to_writer(&mut out, r).map_err(|e| Error::InvalidInput(e.to_string()))?;
            out.push(b'\n');
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }
}

fn finetune_samples(window: &[u32], vocab: usize, count: usize, seed: u64) -> Vec<TrainingExample> {
    let mut rng = rng_from_seed(seed);
    let mut mask = vec![false; vocab];
    for &i in window {
        mask[i as usize] = true;
    }
    (1..window.len())
        .map(|t| TrainingExample {
            device: 0,
            event: t,
            window: window[..t].to_vec(),
            positive: window[t],
            negatives: sample_negatives(&mut rng, vocab, &mask, window[t], count),
        })
        .collect()
}

/// Advances one session by one event. Returns false once the stream is done.
fn step_session(
    s: &mut DeviceSession,
    backbone: &Backbone,
    strategy: &SyncStrategy<'_>,
    cfg: &SimConfig,
    clock: &mut SimulationClock,
    log: &mut Vec<PredictionEntry>,
    records: &mut Vec<SyncRecord>,
) -> Result<bool> {
    if s.position >= s.stream.len() {
        return Ok(false);
    }
    let event_index = s.position;
    let item = s.stream[event_index];
    let vocab = backbone.spec.vocab_size;
    if !s.window.is_empty() {
        let t = Instant::now();
        let mut cands = vec![item];
        cands.extend(eval_negatives(vocab, item, cfg.eval_negatives, cfg.eval_seed, s.device_id, event_index));
        let scores = score_with(backbone, &s.installed, &s.window(), &cands)?;
        log.push(PredictionEntry {
            device_id: s.device_id,
            event_index,
            group: s.assigned_group,
            prediction: RankedPrediction::from_candidates(&cands, &scores)?,
        });
        clock.predict += t.elapsed();
    }
    s.push(item);
    s.position += 1;
    s.events_since_sync += 1;
    clock.events += 1;
    let due = cfg.sync_every.is_some_and(|k| k > 0 && s.events_since_sync >= k);
    if !due {
        return Ok(true);
    }
    s.events_since_sync = 0;
    match strategy {
        SyncStrategy::Static => {}
        SyncStrategy::Cloud { protoset, granularity } | SyncStrategy::GroupBase { protoset, granularity } => {
            let Some(upload) = device_sync_request(s) else { return Ok(true) };
            let forced = match granularity {
                AssignmentGranularity::Device => s.assigned_group,
                AssignmentGranularity::Window => None,
            };
            let edited = matches!(strategy, SyncStrategy::Cloud { .. });
            let out = serve(protoset, &upload, forced, edited);
            clock.serve += out.latency;
            let t = Instant::now();
            let shapes = s.installed.shapes();
            let msg = decode_download(&out.response, &shapes)?;
            s.install(AdaptiveLayerSet::new(msg.layers)?)?;
            s.assigned_group = Some(msg.group as usize);
            clock.install += t.elapsed();
            records.push(SyncRecord {
                device_id: s.device_id,
                event_index,
                chosen_group: msg.group as usize,
                edit_norm: out.edit_norm,
                upload_bytes: upload.len(),
                download_bytes: out.response.len(),
                cloud_latency_ns: out.latency.as_nanos() as u64,
            });
        }
        SyncStrategy::Finetune { backbone: bb, base, cfg: ft } => {
            let w = s.window();
            let seed = ft.seed ^ ((s.device_id as u64) << 32) ^ event_index as u64;
            let samples = finetune_samples(&w, vocab, ft.negatives_per_positive, seed);
            let (tuned, took) = finetune_on_device_baseline(bb, base, &samples, &ft.with_seed(seed))?;
            clock.serve += took;
            s.install(tuned)?;
        }
    }
    Ok(true)
}

fn run_serial(
    sessions: &mut [DeviceSession],
    backbone: &Backbone,
    strategy: &SyncStrategy<'_>,
    cfg: &SimConfig,
) -> Result<SimulationOutput> {
    let mut out = SimulationOutput { predictions: vec![Vec::new(); sessions.len()], ..Default::default() };
    loop {
        let mut progressed = false;
        for (i, s) in sessions.iter_mut().enumerate() {
            progressed |= step_session(s, backbone, strategy, cfg, &mut out.clock, &mut out.predictions[i], &mut out.records)?;
        }
        if !progressed {
            break;
        }
    }
    Ok(out)
}

/// Runs every session to the end of its stream. With one thread, devices
/// advance round-robin one event at a time; with more, disjoint device
/// subsets run concurrently and the logs are merged into the same order.
pub fn run_simulation(
    backbone: &Backbone,
    sessions: &mut [DeviceSession],
    strategy: &SyncStrategy<'_>,
    cfg: &SimConfig,
) -> Result<SimulationOutput> {
    if sessions.is_empty() {
        return Err(Error::InvalidInput("no sessions to simulate".into()));
    }
    if cfg.threads <= 1 {
        return run_serial(sessions, backbone, strategy, cfg);
    }
    let n = sessions.len();
    let chunk = n.div_ceil(cfg.threads);
    let parts: Vec<Result<(usize, SimulationOutput)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = sessions
            .chunks_mut(chunk)
            .enumerate()
            .map(|(c, part)| scope.spawn(move || run_serial(part, backbone, strategy, cfg).map(|o| (c * chunk, o))))
            .collect();
        handles.into_iter().map(|h| h.join().expect("simulation worker panicked")).collect()
    });
    let mut out = SimulationOutput { predictions: vec![Vec::new(); n], ..Default::default() };
    let mut keyed = Vec::new();
    for part in parts {
        let (offset, o) = part?;
        out.clock.merge(&o.clock);
        for (i, p) in o.predictions.into_iter().enumerate() {
            out.predictions[offset + i] = p;
        }
        let index_of: std::collections::HashMap<u32, usize> =
            sessions[offset..].iter().enumerate().map(|(i, s)| (s.device_id, offset + i)).collect();
        keyed.extend(o.records.into_iter().map(|r| ((r.event_index, index_of[&r.device_id]), r)));
    }
    keyed.sort_by_key(|(k, _)| *k);
    out.records = keyed.into_iter().map(|(_, r)| r).collect();
    Ok(out)
}

/// Medians of cloud serving and on-device fine-tuning over the same windows.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatencyReport {
    pub requests: usize,
    pub serve_median_ns: u64,
    pub finetune_median_ns: u64,
    pub ratio: f64,
}

fn median(mut xs: Vec<u64>) -> u64 {
    xs.sort_unstable();
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2
    }
}

/// Times `cloud_serve` and the fine-tune baseline on each window; the ratio
/// is fine-tune median over serve median.
pub fn latency_ratio_experiment(protoset: &PrototypeSet, windows: &[Vec<u32>], finetune: &TrainConfig) -> Result<LatencyReport> {
    if windows.is_empty() {
        return Err(Error::InvalidInput("no windows to time".into()));
    }
    let vocab = protoset.global.backbone.spec.vocab_size;
    let mut serve = Vec::with_capacity(windows.len());
    let mut tune = Vec::with_capacity(windows.len());
    for (i, w) in windows.iter().enumerate() {
        let up = encode_upload(&UploadMessage { device_id: i as u32, window: w.clone() });
        let out = cloud_serve(protoset, &up, None);
        if out.chosen_group.is_none() {
            return Err(Error::Protocol(String::from_utf8_lossy(&out.response[wire::HEADER_LEN..]).into_owned()));
        }
        serve.push(out.latency.as_nanos() as u64);
        let samples = finetune_samples(w, vocab, finetune.negatives_per_positive, finetune.seed ^ i as u64);
        let (_, took) = finetune_on_device_baseline(&protoset.global.backbone, &protoset.global.base, &samples, finetune)?;
        tune.push(took.as_nanos() as u64);
    }
    let s = median(serve).max(1);
    let f = median(tune);
    Ok(LatencyReport { requests: windows.len(), serve_median_ns: s, finetune_median_ns: f, ratio: f as f64 / s as f64 })
}
