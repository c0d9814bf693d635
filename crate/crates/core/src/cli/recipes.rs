//! The reference experiment and the canned ablation sweeps, built from the
//! library phases. Every function here is deterministic in `(config, seed)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::{RunConfig, Schedule};
use crate::data::{
    eval_negatives, gen_synthetic, load_csv, make_training_windows, split_history_realtime, split_validation, ArchetypeLabels, InteractionLog,
    MixtureSpec, NegativeConfig, Split, SplitSpec, TrainingExample,
};
use crate::editor::{EditorNetwork, EditorSpec};
use crate::error::{Error, Result};
use crate::eval::{condition, MetricReport};
use crate::harness::{run_simulation, DeviceSession, SimConfig, SimulationOutput, SyncStrategy};
use crate::model::{BackboneSpec, DeviceModel};
use crate::prototypes::{adjusted_rand_index, build_groups, compute_history_edits, kmeans, partition_consistency, PartitionMap, PrototypeModel, PrototypeSet};
use crate::training::{train_editor, train_global_dam, train_joint_alternating, DamSpec, TrainReport};

/// Data of one seed, ready for training and simulation.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub seed: u64,
    pub log: InteractionLog,
    /// Ground-truth archetypes, for synthetic data only.
    pub labels: Option<ArchetypeLabels>,
    pub split: Split,
    pub train: Vec<TrainingExample>,
    /// Last history example per device, ranked against evaluation negatives.
    pub validation: Vec<TrainingExample>,
}

impl Prepared {
    pub fn vocab(&self) -> usize {
        self.split.vocab_size
    }

    pub fn train_windows(&self) -> Vec<Vec<u32>> {
        self.train.iter().map(|e| e.window.clone()).collect()
    }

    /// Archetype of each training example's positive, when known.
    pub fn train_labels(&self) -> Option<Vec<usize>> {
        let labels = self.labels.as_ref()?;
        Some(
            self.train
                .iter()
                .map(|e| {
                    let dev = self.split.history[e.device].device_id as usize;
                    labels.per_event[dev][e.event] as usize
                })
                .collect(),
        )
    }
}

/// The mixture spec a given run seed generates from.
pub fn mixture_for_seed(cfg: &RunConfig, seed: u64) -> MixtureSpec {
    MixtureSpec { seed: cfg.mixture.seed.wrapping_add(seed), ..cfg.mixture.clone() }
}

/// The configured dataset file, or the synthetic mixture for `seed`.
pub fn load_data(cfg: &RunConfig, seed: u64) -> Result<(InteractionLog, Option<ArchetypeLabels>)> {
    match &cfg.dataset {
        Some(path) => Ok((load_csv(path)?, None)),
        None => {
            let (log, labels) = gen_synthetic(&mixture_for_seed(cfg, seed))?;
            Ok((log, Some(labels)))
        }
    }
}

pub fn prepare_from(cfg: &RunConfig, log: InteractionLog, labels: Option<ArchetypeLabels>, seed: u64) -> Result<Prepared> {
    let spec = SplitSpec { history_fraction: cfg.history_fraction, window: cfg.window };
    spec.validate()?;
    let split = split_history_realtime(&log, &spec)?;
    let negatives = NegativeConfig { count: cfg.dam_training.negatives_per_positive, exclude_history: cfg.exclude_history_negatives };
    let examples = make_training_windows(&split.history, split.vocab_size, cfg.window, &negatives, seed);
    let (train, mut validation) = split_validation(examples);
    for v in &mut validation {
        let device = split.history[v.device].device_id;
        v.negatives = eval_negatives(split.vocab_size, v.positive, cfg.eval_negatives, seed, device, v.event);
    }
    if train.is_empty() {
        return Err(Error::Data("no training examples after the split".into()));
    }
    Ok(Prepared { seed, log, labels, split, train, validation })
}

pub fn prepare(cfg: &RunConfig, seed: u64) -> Result<Prepared> {
    let (log, labels) = load_data(cfg, seed)?;
    prepare_from(cfg, log, labels, seed)
}

pub fn dam_spec(cfg: &RunConfig, vocab: usize) -> DamSpec {
    DamSpec {
        backbone: BackboneSpec {
            vocab_size: vocab,
            embed_dim: cfg.model.embed_dim,
            hidden_dim: cfg.model.hidden_dim,
            pooling: cfg.model.pooling,
        },
        adaptive_hidden: cfg.model.adaptive_hidden.clone(),
    }
}

pub fn editor_spec(cfg: &RunConfig, vocab: usize, layer_shapes: Vec<(usize, usize)>) -> EditorSpec {
    EditorSpec {
        vocab_size: vocab,
        embed_dim: cfg.editor.embed_dim,
        hidden_dim: cfg.editor.hidden_dim,
        context_dim: cfg.editor.context_dim,
        layer_shapes,
        clkt: cfg.clkt,
        threshold: cfg.threshold,
    }
}

pub fn train_dam_phase(cfg: &RunConfig, prep: &Prepared) -> Result<(DeviceModel, TrainReport)> {
    let spec = dam_spec(cfg, prep.vocab());
    train_global_dam(&prep.train, &prep.validation, &spec, &cfg.dam_training.with_seed(cfg.dam_training.seed ^ prep.seed))
}

pub fn train_editor_phase(cfg: &RunConfig, prep: &Prepared, dam: &DeviceModel) -> Result<(PrototypeModel, TrainReport)> {
    let spec = editor_spec(cfg, prep.vocab(), dam.adaptive.shapes());
    let editor = EditorNetwork::new(spec, prep.seed.wrapping_add(1))?;
    let tcfg = cfg.editor_training.with_seed(cfg.editor_training.seed ^ prep.seed);
    let (editor, report) = train_editor(editor, &dam.backbone, &dam.adaptive, &prep.train, &prep.validation, &tcfg)?;
    Ok((PrototypeModel::new(dam.backbone.clone(), (*dam.adaptive).clone(), editor)?, report))
}

/// The single-prototype model under the configured schedule.
pub fn train_global(cfg: &RunConfig, prep: &Prepared) -> Result<(PrototypeModel, Vec<TrainReport>)> {
    match cfg.schedule {
        Schedule::TwoPhase => {
            let (dam, r1) = train_dam_phase(cfg, prep)?;
            let (proto, r2) = train_editor_phase(cfg, prep, &dam)?;
            Ok((proto, vec![r1, r2]))
        }
        Schedule::JointAlternating => {
            let spec = dam_spec(cfg, prep.vocab());
            let editor = EditorNetwork::new(editor_spec(cfg, prep.vocab(), spec.layer_shapes()), prep.seed.wrapping_add(1))?;
            train_joint_alternating(&prep.train, &prep.validation, &spec, editor, &cfg.dam_training.with_seed(cfg.dam_training.seed ^ prep.seed))
        }
    }
}

/// Clusters the global prototype's edits of every training window.
pub fn partition_phase(cfg: &RunConfig, global: &PrototypeModel, prep: &Prepared) -> Result<PartitionMap> {
    let edits = compute_history_edits(global, &prep.train_windows(), cfg.normalize_edits)?;
    kmeans(&edits, cfg.group_count, prep.seed, cfg.kmeans_max_iters)
}

/// Agreement between a partition and the ground-truth archetypes.
pub fn archetype_agreement(partition: &PartitionMap, prep: &Prepared) -> Result<Option<f64>> {
    match prep.train_labels() {
        Some(truth) => adjusted_rand_index(&partition.assignments, &truth).map(Some),
        None => Ok(None),
    }
}

pub fn build_groups_phase(
    cfg: &RunConfig,
    global: &PrototypeModel,
    partition: &PartitionMap,
    prep: &Prepared,
) -> Result<(PrototypeSet, Vec<TrainReport>)> {
    let mut training = cfg.group_training.clone();
    training.base.seed ^= prep.seed;
    training.editor.seed ^= prep.seed;
    build_groups(global, partition, &prep.train, &training)
}

pub fn sim_config(cfg: &RunConfig, prep: &Prepared) -> SimConfig {
    SimConfig { sync_every: cfg.sync_every(), eval_negatives: cfg.eval_negatives, eval_seed: prep.seed, threads: cfg.threads }
}

/// Every evaluable condition.
pub const CONDITIONS: [&str; 5] = [condition::BASELINE, condition::PERSONA_S, condition::PERSONA_M, condition::FINETUNE, condition::GROUP_FINETUNE];

/// Replays the real-time streams under one condition. Every device starts
/// from the global adaptive layers.
pub fn simulate_condition(cfg: &RunConfig, prep: &Prepared, set: &PrototypeSet, cond: &str) -> Result<SimulationOutput> {
    let installed = Arc::new(set.global.base.clone());
    let mut sessions = DeviceSession::from_split(&prep.split.history, &prep.split.realtime, cfg.window, &installed);
    let single;
    let strategy = match cond {
        condition::BASELINE => SyncStrategy::Static,
        condition::PERSONA_S => {
            single = PrototypeSet::single(set.global.clone());
            SyncStrategy::Cloud { protoset: &single, granularity: cfg.granularity }
        }
        condition::PERSONA_M => SyncStrategy::Cloud { protoset: set, granularity: cfg.granularity },
        condition::FINETUNE => SyncStrategy::Finetune {
            backbone: &set.global.backbone,
            base: &set.global.base,
            cfg: cfg.finetune.with_seed(cfg.finetune.seed ^ prep.seed),
        },
        condition::GROUP_FINETUNE => SyncStrategy::GroupBase { protoset: set, granularity: cfg.granularity },
        other => return Err(Error::Config(format!("unknown condition {other:?}"))),
    };
    run_simulation(&set.global.backbone, &mut sessions, &strategy, &sim_config(cfg, prep))
}

pub fn evaluate_conditions(cfg: &RunConfig, prep: &Prepared, set: &PrototypeSet, conds: &[&str]) -> Result<Vec<MetricReport>> {
    conds
        .iter()
        .map(|c| {
            let out = simulate_condition(cfg, prep, set, c)?;
            MetricReport::from_predictions(c, prep.seed, &out.all_predictions())
        })
        .collect()
}

/// Everything the pipeline produced for one seed.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub prepared: Prepared,
    pub set: PrototypeSet,
    pub train_reports: Vec<TrainReport>,
    /// Adjusted agreement of the partition with the archetypes.
    pub archetype_ari: Option<f64>,
}

/// Data, global training, partition and group prototypes for one seed.
pub fn run_pipeline(cfg: &RunConfig, seed: u64) -> Result<SeedRun> {
    let prep = prepare(cfg, seed)?;
    let (global, mut reports) = train_global(cfg, &prep)?;
    let (set, ari, mut r) = groups_from_global(cfg, &prep, &global)?;
    reports.append(&mut r);
    Ok(SeedRun { prepared: prep, set, train_reports: reports, archetype_ari: ari })
}

fn groups_from_global(cfg: &RunConfig, prep: &Prepared, global: &PrototypeModel) -> Result<(PrototypeSet, Option<f64>, Vec<TrainReport>)> {
    let partition = partition_phase(cfg, global, prep)?;
    let ari = archetype_agreement(&partition, prep)?;
    let (set, reports) = build_groups_phase(cfg, global, &partition, prep)?;
    Ok((set, ari, reports))
}

/// Conditions the reference experiment reports.
pub fn reference_conditions(cfg: &RunConfig) -> Vec<&'static str> {
    let mut c = vec![condition::BASELINE, condition::PERSONA_S, condition::PERSONA_M];
    if cfg.eval_finetune {
        c.push(condition::FINETUNE);
    }
    c
}

/// Result of the reference experiment over all configured seeds.
#[derive(Clone, Debug, Default)]
pub struct ReferenceOutcome {
    pub reports: Vec<MetricReport>,
    /// `(seed, adjusted agreement)` where archetypes are known.
    pub archetype_ari: Vec<(u64, f64)>,
}

pub fn reference_experiment(cfg: &RunConfig) -> Result<ReferenceOutcome> {
    let mut out = ReferenceOutcome::default();
    let conds = reference_conditions(cfg);
    for &seed in &cfg.seeds {
        let run = run_pipeline(cfg, seed)?;
        if let Some(a) = run.archetype_ari {
            out.archetype_ari.push((seed, a));
        }
        out.reports.extend(evaluate_conditions(cfg, &run.prepared, &run.set, &conds)?);
    }
    Ok(out)
}

/// The canned ablation axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Edit bound T.
    Threshold,
    /// Number of group prototypes.
    Groups,
    /// Cross-layer transfer on and off.
    Clkt,
    /// Global versus group prototypes.
    Prototype,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Threshold => "threshold",
            Self::Groups => "groups",
            Self::Clkt => "clkt",
            Self::Prototype => "prototype",
        }
    }
}

/// Partition consistency of one sweep point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub axis_value: String,
    pub seed: u64,
    pub consistency: f64,
}

#[derive(Clone, Debug, Default)]
pub struct SweepOutcome {
    pub reports: Vec<MetricReport>,
    /// Filled by the `clkt` axis only.
    pub consistency: Vec<ConsistencyRow>,
}

/// Config used by the `clkt` axis: the adaptive chain is stretched or cut
/// to the sweep's layer count, keeping the first hidden width.
pub fn clkt_config(cfg: &RunConfig) -> RunConfig {
    let mut c = cfg.clone();
    let width = cfg.model.adaptive_hidden.first().copied().unwrap_or(cfg.model.embed_dim);
    c.model.adaptive_hidden = vec![width; cfg.sweep.clkt_layers.saturating_sub(1)];
    c
}

/// Runs one ablation axis over every configured seed. The device model is
/// trained once per seed and shared by all sweep points; editors are shared
/// too where the axis leaves them unchanged.
pub fn run_sweep(cfg: &RunConfig, axis: SweepAxis) -> Result<SweepOutcome> {
    let mut out = SweepOutcome::default();
    let base_cfg = if axis == SweepAxis::Clkt { clkt_config(cfg) } else { cfg.clone() };
    for &seed in &cfg.seeds {
        let prep = prepare(&base_cfg, seed)?;
        let (dam, _) = train_dam_phase(&base_cfg, &prep)?;
        match axis {
            SweepAxis::Threshold => {
                for &t in &cfg.sweep.thresholds {
                    let c = RunConfig { threshold: t, ..base_cfg.clone() };
                    let (global, _) = train_editor_phase(&c, &prep, &dam)?;
                    let (set, _, _) = groups_from_global(&c, &prep, &global)?;
                    for r in evaluate_conditions(&c, &prep, &set, &[condition::PERSONA_M])? {
                        out.reports.push(r.with_axis_value(t));
                    }
                }
            }
            SweepAxis::Groups => {
                let (global, _) = train_editor_phase(&base_cfg, &prep, &dam)?;
                for &k in &cfg.sweep.group_counts {
                    let c = RunConfig { group_count: k, ..base_cfg.clone() };
                    let (set, _, _) = groups_from_global(&c, &prep, &global)?;
                    for r in evaluate_conditions(&c, &prep, &set, &[condition::PERSONA_M, condition::GROUP_FINETUNE])? {
                        out.reports.push(r.with_axis_value(k));
                    }
                }
            }
            SweepAxis::Clkt => {
                for on in [true, false] {
                    let label = if on { "on" } else { "off" };
                    let c = RunConfig { clkt: on, ..base_cfg.clone() };
                    let (global, _) = train_editor_phase(&c, &prep, &dam)?;
                    let consistency = partition_consistency(&global.editor, &prep.train_windows(), c.group_count, seed)?;
                    out.consistency.push(ConsistencyRow { axis_value: label.into(), seed, consistency });
                    let (set, _, _) = groups_from_global(&c, &prep, &global)?;
                    for r in evaluate_conditions(&c, &prep, &set, &[condition::PERSONA_M])? {
                        out.reports.push(r.with_axis_value(label));
                    }
                }
            }
            SweepAxis::Prototype => {
                let (global, _) = train_editor_phase(&base_cfg, &prep, &dam)?;
                for &k in &cfg.sweep.prototype_group_counts {
                    let c = RunConfig { group_count: k, ..base_cfg.clone() };
                    let partition = partition_phase(&c, &global, &prep)?;
                    for refine in [false, true] {
                        let mut cc = c.clone();
                        cc.group_training.refine_base = refine;
                        let (set, _) = build_groups_phase(&cc, &global, &partition, &prep)?;
                        let label = format!("{}_{k}", if refine { "group" } else { "global" });
                        for r in evaluate_conditions(&cc, &prep, &set, &[condition::PERSONA_M])? {
                            out.reports.push(r.with_axis_value(&label));
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}
