//! Command-line front end. Every pipeline stage reads the artifacts of the
//! previous one from the run directory and writes its own next to them:
//!
//! ```text
//! <output_dir>/config.toml            effective configuration
//! <output_dir>/manifest.json          every artifact with size and sha256
//! <output_dir>/seed-<s>/...           per-seed data, checkpoints, logs
//! <output_dir>/report*.csv|json       metrics written by `eval`
//! <output_dir>/sweep_<axis>*.csv      metrics written by `sweep`
//! ```

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Stage};
use super::config::{RunConfig, Schedule};
use super::recipes::{self, Prepared, SweepAxis};
use crate::data::{load_csv, load_labels, write_csv, write_labels};
use crate::error::{Error, Result};
use crate::eval::{emit_report, summarize, MetricReport};
use crate::harness::{latency_ratio_experiment, PredictionEntry};
use crate::prototypes::PrototypeSet;
use crate::training::{write_reports_jsonl, TrainReport};

/// Overrides `output_dir` from the config file; `--output-dir` wins over it.
pub const OUTPUT_DIR_ENV: &str = "PERSONA_OUTPUT_DIR";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Parser, Debug)]
#[command(name = "persona", version, about = "Prototype-based parameter editing: training, serving simulation and evaluation")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// TOML config file; missing keys take their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Artifact root; beats the config file and the environment.
    #[arg(long, global = true, value_name = "DIR")]
    output_dir: Option<PathBuf>,
    /// Run a single seed instead of every configured one.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Replace the configured seed list.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Edit bound T.
    #[arg(long, global = true)]
    threshold: Option<f64>,
    /// Number of group prototypes.
    #[arg(long, global = true)]
    groups: Option<usize>,
    /// Cross-layer transfer in the editor.
    #[arg(long, global = true)]
    clkt: Option<bool>,
    /// Real-time window size W.
    #[arg(long, global = true)]
    window: Option<usize>,
    /// Sync every K device events; 0 never syncs.
    #[arg(long, global = true)]
    sync_every: Option<usize>,
    /// Simulation worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Interaction CSV to use instead of the synthetic mixture.
    #[arg(long, global = true, value_name = "CSV")]
    dataset: Option<PathBuf>,
    /// Any config key, dotted for nested tables, e.g. `mixture.peakedness=0.8`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate (or import) the interaction log of every seed.
    GenData,
    /// Train the device model.
    TrainDam,
    /// Train the global parameter editor.
    TrainEditor,
    /// Cluster historical edits into groups.
    Partition,
    /// Fine-tune one prototype per group.
    BuildGroups,
    /// Replay the real-time streams through the device-cloud protocol.
    Simulate {
        /// Conditions to run; defaults to the reference set.
        #[arg(long, value_delimiter = ',')]
        conditions: Option<Vec<String>>,
    },
    /// Compute metrics from simulated predictions.
    Eval {
        #[arg(long, value_delimiter = ',')]
        conditions: Option<Vec<String>>,
    },
    /// Run one ablation axis end to end.
    Sweep {
        #[arg(long, value_enum)]
        axis: SweepAxis,
    },
    /// Compare cloud serving latency with on-device fine-tuning.
    Latency,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::TrainDam => "train-dam",
            Command::TrainEditor => "train-editor",
            Command::Partition => "partition",
            Command::BuildGroups => "build-groups",
            Command::Simulate { .. } => "simulate",
            Command::Eval { .. } => "eval",
            Command::Sweep { .. } => "sweep",
            Command::Latency => "latency",
        }
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 1 on a usage error, 2 on a runtime error.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = e.print();
                    if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand { 1 } else { 0 }
                }
                _ => {
                    let _ = e.print();
                    eprintln!("\n{}", Cli::command().render_help());
                    1
                }
            };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| Error::Config(format!("empty key in {key:?}")))?;
    let mut t = table;
    for p in parts {
        let slot = t.entry(p).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = slot.as_table_mut().ok_or_else(|| Error::Config(format!("{p} in {key:?} is not a table")))?;
    }
    t.insert(last.to_string(), value);
    Ok(())
}

fn resolve_config(g: &GlobalArgs) -> Result<RunConfig> {
    let mut table = match &g.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            text.parse::<toml::Table>().map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => toml::Table::new(),
    };
    if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
        if !dir.is_empty() {
            set_path(&mut table, "output_dir", toml::Value::String(dir))?;
        }
    }
    for s in &g.sets {
        let (k, v) = s.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
        set_path(&mut table, k.trim(), parse_value(v.trim()))?;
    }
    let path_value = |p: &Path| toml::Value::String(p.to_string_lossy().into_owned());
    let int = |n: u64| toml::Value::Integer(n as i64);
    let mut flags: Vec<(&str, toml::Value)> = Vec::new();
    if let Some(d) = &g.output_dir {
        flags.push(("output_dir", path_value(d)));
    }
    if let Some(s) = &g.seeds {
        flags.push(("seeds", toml::Value::Array(s.iter().map(|&x| int(x)).collect())));
    }
    if let Some(t) = g.threshold {
        flags.push(("threshold", toml::Value::Float(t)));
    }
    if let Some(k) = g.groups {
        flags.push(("group_count", int(k as u64)));
    }
    if let Some(c) = g.clkt {
        flags.push(("clkt", toml::Value::Boolean(c)));
    }
    if let Some(w) = g.window {
        flags.push(("window", int(w as u64)));
    }
    if let Some(k) = g.sync_every {
        flags.push(("sync_every", int(k as u64)));
    }
    if let Some(t) = g.threads {
        flags.push(("threads", int(t as u64)));
    }
    if let Some(d) = &g.dataset {
        flags.push(("dataset", path_value(d)));
    }
    for (k, v) in flags {
        set_path(&mut table, k, v)?;
    }
    RunConfig::from_table(table)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub command: String,
    pub seed: Option<u64>,
    pub bytes: u64,
    pub sha256: String,
}

/// Index of everything written under a run directory, keyed by path
/// relative to it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifacts: BTreeMap<String, ArtifactEntry>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        match std::fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| Error::Format { line: 0, msg: format!("{}: {e}", path.display()) }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(Error::io(path, e)),
        }
    }
}

struct Run {
    cfg: RunConfig,
    seeds: Vec<u64>,
    dir: PathBuf,
    command: &'static str,
    manifest: Manifest,
}

const DATA_FILE: &str = "interactions.csv";
const LABELS_FILE: &str = "labels.csv";
const DAM_CKPT: &str = "dam.ckpt";
const GLOBAL_CKPT: &str = "global.ckpt";
const PARTITION_CKPT: &str = "partitioned.ckpt";
const PROTOTYPES_CKPT: &str = "prototypes.ckpt";

impl Run {
    fn seed_dir(&self, seed: u64) -> PathBuf {
        self.dir.join(format!("seed-{seed}"))
    }

    fn record(&mut self, path: &Path, seed: Option<u64>) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let key = path.strip_prefix(&self.dir).unwrap_or(path).to_string_lossy().replace('\\', "/");
        let entry = ArtifactEntry {
            command: self.command.to_string(),
            seed,
            bytes: bytes.len() as u64,
            sha256: Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect(),
        };
        self.manifest.artifacts.insert(key, entry);
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        let cfg_path = self.dir.join("config.toml");
        std::fs::write(&cfg_path, self.cfg.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
        self.record(&cfg_path, None)?;
        let path = self.dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest).map_err(|e| Error::InvalidInput(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    fn require(&self, seed: u64, file: &str, producer: &str) -> Result<PathBuf> {
        let path = self.seed_dir(seed).join(file);
        if !path.exists() {
            return Err(Error::Lifecycle(format!("{} is missing; run `{producer}` first", path.display())));
        }
        Ok(path)
    }

    fn prepared(&self, seed: u64) -> Result<Prepared> {
        let log = load_csv(&self.require(seed, DATA_FILE, "gen-data")?)?;
        let labels_path = self.seed_dir(seed).join(LABELS_FILE);
        let labels = if labels_path.exists() { Some(load_labels(&labels_path)?) } else { None };
        recipes::prepare_from(&self.cfg, log, labels, seed)
    }

    fn checkpoint(&self, seed: u64, file: &str, producer: &str) -> Result<Checkpoint> {
        load_checkpoint(&self.require(seed, file, producer)?)
    }

    fn save(&mut self, seed: u64, file: &str, stage: Stage) -> Result<()> {
        let path = self.seed_dir(seed).join(file);
        save_checkpoint(&path, &Checkpoint { config: self.cfg.clone(), stage })?;
        self.record(&path, Some(seed))
    }

    fn write_train_reports(&mut self, seed: u64, file: &str, reports: &[TrainReport]) -> Result<()> {
        let path = self.seed_dir(seed).join(file);
        write_reports_jsonl(reports, &path)?;
        self.record(&path, Some(seed))
    }
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, &item).map_err(|e| Error::InvalidInput(e.to_string()))?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Parse { line: i as u64 + 1, msg: e.to_string() }))
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli.global)?;
    let seeds = match cli.global.seed {
        Some(s) => vec![s],
        None => cfg.seeds.clone(),
    };
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let manifest = Manifest::load(&dir)?;
    let mut run = Run { cfg, seeds, dir, command: cli.command.name(), manifest };
    match &cli.command {
        Command::GenData => gen_data(&mut run)?,
        Command::TrainDam => train_dam(&mut run)?,
        Command::TrainEditor => train_editor(&mut run)?,
        Command::Partition => partition(&mut run)?,
        Command::BuildGroups => build_groups(&mut run)?,
        Command::Simulate { conditions } => simulate(&mut run, conditions.as_deref())?,
        Command::Eval { conditions } => eval(&mut run, conditions.as_deref())?,
        Command::Sweep { axis } => sweep(&mut run, *axis)?,
        Command::Latency => latency(&mut run)?,
    }
    run.finish()
}

fn gen_data(run: &mut Run) -> Result<()> {
    for seed in run.seeds.clone() {
        let dir = run.seed_dir(seed);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let (log, labels) = recipes::load_data(&run.cfg, seed)?;
        let path = dir.join(DATA_FILE);
        write_csv(&log, &path)?;
        run.record(&path, Some(seed))?;
        if let Some(labels) = labels {
            let path = dir.join(LABELS_FILE);
            write_labels(&labels, &path)?;
            run.record(&path, Some(seed))?;
        }
        println!("seed {seed}: {} devices, {} interactions", log.device_count(), log.interaction_count());
    }
    Ok(())
}

fn train_dam(run: &mut Run) -> Result<()> {
    for seed in run.seeds.clone() {
        let prep = run.prepared(seed)?;
        let (stage, reports) = match run.cfg.schedule {
            Schedule::TwoPhase => {
                let (dam, r) = recipes::train_dam_phase(&run.cfg, &prep)?;
                (Stage::Dam(dam), vec![r])
            }
            // The joint schedule trains the editor alongside the model.
            Schedule::JointAlternating => {
                let (global, r) = recipes::train_global(&run.cfg, &prep)?;
                (Stage::Prototypes(PrototypeSet::single(global)), r)
            }
        };
        run.save(seed, DAM_CKPT, stage)?;
        run.write_train_reports(seed, "train_dam.jsonl", &reports)?;
        println!("seed {seed}: device model trained, best epoch {:?}", reports[0].best_epoch);
    }
    Ok(())
}

fn train_editor(run: &mut Run) -> Result<()> {
    for seed in run.seeds.clone() {
        let ckpt = run.checkpoint(seed, DAM_CKPT, "train-dam")?;
        let set = match ckpt.stage {
            Stage::Dam(dam) => {
                let prep = run.prepared(seed)?;
                let (global, r) = recipes::train_editor_phase(&run.cfg, &prep, &dam)?;
                run.write_train_reports(seed, "train_editor.jsonl", &[r])?;
                PrototypeSet::single(global)
            }
            Stage::Prototypes(set) if set.global.editor.trained => set,
            _ => return Err(Error::Lifecycle("device-model checkpoint holds no model".into())),
        };
        run.save(seed, GLOBAL_CKPT, Stage::Prototypes(set))?;
        println!("seed {seed}: global editor ready");
    }
    Ok(())
}

#[derive(Serialize)]
struct PartitionSummary {
    group_count: usize,
    sizes: Vec<usize>,
    iterations: usize,
    inertia: Option<f64>,
    archetype_ari: Option<f64>,
}

fn partition(run: &mut Run) -> Result<()> {
    for seed in run.seeds.clone() {
        let ckpt = run.checkpoint(seed, GLOBAL_CKPT, "train-editor")?;
        let mut set = ckpt.prototypes()?.clone();
        let prep = run.prepared(seed)?;
        let map = recipes::partition_phase(&run.cfg, &set.global, &prep)?;
        let ari = recipes::archetype_agreement(&map, &prep)?;
        let dir = run.seed_dir(seed);
        let csv = dir.join("partition.csv");
        map.write_csv(&csv)?;
        run.record(&csv, Some(seed))?;
        let summary = PartitionSummary {
            group_count: map.group_count,
            sizes: map.sizes(),
            iterations: map.iterations,
            inertia: map.inertia_trace.last().copied(),
            archetype_ari: ari,
        };
        let json = dir.join("partition.json");
        let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::InvalidInput(e.to_string()))?;
        std::fs::write(&json, text + "\n").map_err(|e| Error::io(&json, e))?;
        run.record(&json, Some(seed))?;
        match ari {
            Some(a) => println!("seed {seed}: sizes {:?}, archetype ARI {a:.3}", summary.sizes),
            None => println!("seed {seed}: sizes {:?}", summary.sizes),
        }
        set.partition = Some(map);
        run.save(seed, PARTITION_CKPT, Stage::Prototypes(set))?;
    }
    Ok(())
}

fn build_groups(run: &mut Run) -> Result<()> {
    for seed in run.seeds.clone() {
        let ckpt = run.checkpoint(seed, PARTITION_CKPT, "partition")?;
        let set = ckpt.prototypes()?;
        let map = set.partition.as_ref().ok_or_else(|| Error::Lifecycle("checkpoint has no partition".into()))?;
        let prep = run.prepared(seed)?;
        let (groups, reports) = recipes::build_groups_phase(&run.cfg, &set.global, map, &prep)?;
        run.write_train_reports(seed, "train_groups.jsonl", &reports)?;
        run.save(seed, PROTOTYPES_CKPT, Stage::Prototypes(groups))?;
        println!("seed {seed}: {} group prototypes built", map.group_count);
    }
    Ok(())
}

fn conditions_or_default(cfg: &RunConfig, given: Option<&[String]>) -> Vec<String> {
    match given {
        Some(c) => c.to_vec(),
        None => recipes::reference_conditions(cfg).into_iter().map(String::from).collect(),
    }
}

fn simulate(run: &mut Run, given: Option<&[String]>) -> Result<()> {
    let conds = conditions_or_default(&run.cfg, given);
    for seed in run.seeds.clone() {
        let ckpt = run.checkpoint(seed, PROTOTYPES_CKPT, "build-groups")?;
        let set = ckpt.prototypes()?;
        let prep = run.prepared(seed)?;
        for c in &conds {
            let out = recipes::simulate_condition(&run.cfg, &prep, set, c)?;
            let dir = run.seed_dir(seed);
            let preds = dir.join(format!("predictions_{c}.jsonl"));
            write_jsonl(&preds, out.predictions.iter().flatten())?;
            run.record(&preds, Some(seed))?;
            if !out.records.is_empty() {
                let sync = dir.join(format!("sync_{c}.jsonl"));
                out.write_records_jsonl(&sync)?;
                run.record(&sync, Some(seed))?;
            }
            println!("seed {seed}: {c} {} predictions, {} syncs", out.predictions.iter().map(Vec::len).sum::<usize>(), out.records.len());
        }
    }
    Ok(())
}

fn eval(run: &mut Run, given: Option<&[String]>) -> Result<()> {
    let conds = conditions_or_default(&run.cfg, given);
    let mut reports = Vec::new();
    for seed in run.seeds.clone() {
        for c in &conds {
            let path = run.require(seed, &format!("predictions_{c}.jsonl"), "simulate")?;
            let entries: Vec<PredictionEntry> = read_jsonl(&path)?;
            let preds: Vec<_> = entries.into_iter().map(|e| e.prediction).collect();
            reports.push(MetricReport::from_predictions(c, seed, &preds)?);
        }
    }
    let files = emit_report(&run.dir, "report", &reports, None)?;
    for p in [&files.rows, &files.summary, &files.summary_json] {
        run.record(p, None)?;
    }
    print_summary(&reports);
    Ok(())
}

fn print_summary(reports: &[MetricReport]) {
    for row in summarize(reports) {
        let m = |k: &str| row.mean(k).unwrap_or(f64::NAN);
        let axis = if row.axis_value.is_empty() { String::new() } else { format!(" [{}]", row.axis_value) };
        println!(
            "{}{axis}: hr@5 {:.4} ndcg@5 {:.4} hr@10 {:.4} auc {:.4} over {} seeds",
            row.condition,
            m("hr@5"),
            m("ndcg@5"),
            m("hr@10"),
            m("auc"),
            row.seeds
        );
    }
}

fn sweep(run: &mut Run, axis: SweepAxis) -> Result<()> {
    let cfg = RunConfig { seeds: run.seeds.clone(), ..run.cfg.clone() };
    let out = recipes::run_sweep(&cfg, axis)?;
    let stem = format!("sweep_{}", axis.as_str());
    let files = emit_report(&run.dir, &stem, &out.reports, Some(axis.as_str()))?;
    for p in [Some(&files.rows), Some(&files.summary), Some(&files.summary_json), files.sweep.as_ref()].into_iter().flatten() {
        run.record(p, None)?;
    }
    if !out.consistency.is_empty() {
        let path = run.dir.join(format!("{stem}_consistency.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::io(&path, std::io::Error::other(e)))?;
        for row in &out.consistency {
            w.serialize(row).map_err(|e| Error::io(&path, std::io::Error::other(e)))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        run.record(&path, None)?;
        for row in &out.consistency {
            println!("consistency clkt {} seed {}: {:.4}", row.axis_value, row.seed, row.consistency);
        }
    }
    print_summary(&out.reports);
    Ok(())
}

fn latency(run: &mut Run) -> Result<()> {
    let mut all = Vec::new();
    for seed in run.seeds.clone() {
        let ckpt = run.checkpoint(seed, PROTOTYPES_CKPT, "build-groups")?;
        let prep = run.prepared(seed)?;
        let pool = prep.train_windows();
        let windows: Vec<Vec<u32>> = pool.iter().cycle().take(run.cfg.latency_requests.max(1)).cloned().collect();
        let report = latency_ratio_experiment(ckpt.prototypes()?, &windows, &run.cfg.finetune)?;
        println!(
            "seed {seed}: serve median {:.3} ms, fine-tune median {:.3} ms, ratio {:.0}x over {} requests",
            report.serve_median_ns as f64 / 1e6,
            report.finetune_median_ns as f64 / 1e6,
            report.ratio,
            report.requests
        );
        all.push(serde_json::json!({ "seed": seed, "report": report }));
    }
    let path = run.dir.join("latency.json");
    let text = serde_json::to_string_pretty(&all).map_err(|e| Error::InvalidInput(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    run.record(&path, None)
}
