//! Optimization pipelines: device-model pretraining, editor training,
//! group fine-tuning and the on-device fine-tune baseline.

mod report;

pub use report::{write_reports_jsonl, TrainReport};

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{eval_negatives, TrainingExample};
use crate::editor::{apply_edit, edited_sample_loss_and_grad_penalized, EditorNetwork};
use crate::error::{Error, Result};
use crate::eval::{ndcg_at_k, RankedPrediction};
use crate::model::{sample_loss_and_grad, score_with, AdaptiveLayerSet, Backbone, BackboneMode, BackboneSpec, DeviceModel};
use crate::numerics::{rng_from_seed, FreezeLedger, Matrix, OptimizerKind, OptimizerState, ParamTensor, Params};
use crate::prototypes::PrototypeModel;

/// Settings of one optimization phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub negatives_per_positive: usize,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub early_stop_patience: usize,
    pub optimizer: OptimizerKind,
    /// Weight of the squared edit norm added to editor losses.
    pub edit_penalty: f64,
    /// Draw fresh uniform negatives for every example each epoch instead of
    /// reusing the ones stored with it.
    pub resample_negatives: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.01,
            negatives_per_positive: 4,
            seed: 0,
            early_stop_patience: 3,
            optimizer: OptimizerKind::Adam,
            edit_penalty: 0.0,
            resample_negatives: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.negatives_per_positive == 0 || self.early_stop_patience == 0 {
            return Err(Error::Config("batch_size, negatives_per_positive and early_stop_patience must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(self.edit_penalty >= 0.0 && self.edit_penalty.is_finite()) {
            return Err(Error::Config(format!("edit_penalty must be >= 0, got {}", self.edit_penalty)));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Device-model architecture: backbone plus hidden widths of the adaptive
/// chain. The chain runs from the backbone feature width to the embedding
/// width, so it has `adaptive_hidden.len() + 1` layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DamSpec {
    pub backbone: BackboneSpec,
    pub adaptive_hidden: Vec<usize>,
}

impl DamSpec {
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.backbone.feature_dim()];
        w.extend(&self.adaptive_hidden);
        w.push(self.backbone.embed_dim);
        w
    }

    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.widths().windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Backbone plus adaptive layers as one trainable bundle.
#[derive(Clone, Debug)]
struct DamParams {
    backbone: Backbone,
    layers: Vec<ParamTensor>,
}

impl Params for DamParams {
    fn visit_params(&self, f: &mut dyn FnMut(&ParamTensor)) {
        self.backbone.visit_params(f);
        self.layers.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut ParamTensor)) {
        self.backbone.visit_params_mut(f);
        self.layers.visit_params_mut(f);
    }
}

fn layer_values(layers: &[ParamTensor]) -> Vec<Matrix> {
    layers.iter().map(|p| p.value.clone()).collect()
}

fn zero_like(layers: &[Matrix]) -> Vec<Matrix> {
    layers.iter().map(|l| Matrix::zeros(l.rows(), l.cols())).collect()
}

fn add_into_grads(layers: &mut [ParamTensor], grads: &[Matrix]) -> Result<()> {
    for (p, g) in layers.iter_mut().zip(grads) {
        p.grad.add_assign_scaled(g, 1.0)?;
    }
    Ok(())
}

fn scale_grads(params: &mut dyn Params, s: f64) {
    params.visit_params_mut(&mut |p| p.grad.scale(s));
}

/// Validation NDCG@5 (or @candidates when fewer) of a scoring function.
pub fn validation_ndcg(
    examples: &[TrainingExample],
    mut score: impl FnMut(&TrainingExample, &[u32]) -> Result<Vec<f64>>,
) -> Result<Option<f64>> {
    if examples.is_empty() {
        return Ok(None);
    }
    let mut preds = Vec::with_capacity(examples.len());
    let mut k = 5;
    for ex in examples {
        let c = ex.candidates();
        k = k.min(c.len());
        let s = score(ex, &c)?;
        preds.push(RankedPrediction::from_candidates(&c, &s)?);
    }
    Ok(Some(ndcg_at_k(&preds, k)?))
}

/// Candidates of example `i` in `epoch`: the stored ones, or the positive
/// plus `negatives_per_positive` fresh uniform negatives.
fn epoch_candidates(ex: &TrainingExample, i: usize, epoch: usize, vocab: usize, cfg: &TrainConfig) -> Vec<u32> {
    if !cfg.resample_negatives {
        return ex.candidates();
    }
    let key = cfg.seed ^ ((epoch as u64) << 40) ^ i as u64;
    let mut c = vec![ex.positive];
    c.extend(eval_negatives(vocab, ex.positive, cfg.negatives_per_positive, key, ex.device as u32, ex.event));
    c
}

/// Mini-batch loop shared by every phase. `sample` accumulates the
/// gradient of one example and returns its loss; gradients are averaged
/// over the batch. With a validation score the best epoch's parameters are
/// kept and training stops after `patience` epochs without improvement.
fn run_epochs<P: Params + Clone>(
    phase: &str,
    params: &mut P,
    cfg: &TrainConfig,
    n_examples: usize,
    mut sample: impl FnMut(&mut P, usize, usize) -> Result<f64>,
    mut validate: impl FnMut(&P) -> Result<Option<f64>>,
) -> Result<TrainReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mut report = TrainReport::new(phase);
    if cfg.epochs == 0 || n_examples == 0 {
        report.checksum = params.checksum();
        report.wall_clock_secs = start.elapsed().as_secs_f64();
        return Ok(report);
    }
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, params)?;
    let mut rng = rng_from_seed(cfg.seed);
    let mut order: Vec<usize> = (0..n_examples).collect();
    let mut best: Option<(f64, P, usize)> = None;
    let mut since_best = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            params.zero_grads();
            for &i in batch {
                let loss = sample(params, i, epoch).map_err(|e| match e {
                    Error::Numeric(m) => Error::Training { epoch, reason: format!("{phase}: {m}") },
                    other => other,
                })?;
                if !loss.is_finite() {
                    return Err(Error::Training { epoch, reason: format!("{phase}: non-finite loss") });
                }
                total += loss;
            }
            scale_grads(params, 1.0 / batch.len() as f64);
            opt.step(params)?;
        }
        let mut finite = true;
        params.visit_params(&mut |p| finite &= p.value.is_finite());
        if !finite {
            return Err(Error::Training { epoch, reason: format!("{phase}: parameters diverged") });
        }
        report.epoch_losses.push(total / n_examples as f64);
        if let Some(v) = validate(params)? {
            report.validation.push(v);
            if best.as_ref().is_none_or(|(b, _, _)| v > *b) {
                best = Some((v, params.clone(), epoch));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.early_stop_patience {
                    report.stopped_early = true;
                    break;
                }
            }
        }
    }
    if let Some((_, p, epoch)) = best {
        *params = p;
        report.best_epoch = Some(epoch);
    }
    params.zero_grads();
    report.checksum = params.checksum();
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Trains backbone and adaptive base jointly on every device's history.
pub fn train_global_dam(
    examples: &[TrainingExample],
    validation: &[TrainingExample],
    spec: &DamSpec,
    cfg: &TrainConfig,
) -> Result<(DeviceModel, TrainReport)> {
    let mut rng = rng_from_seed(cfg.seed);
    let backbone = Backbone::new(spec.backbone, &mut rng)?;
    let adaptive = AdaptiveLayerSet::init(&spec.widths(), &mut rng)?;
    let mut params = DamParams { backbone, layers: adaptive.to_params("dam") };
    let vocab = spec.backbone.vocab_size;
    let report = run_epochs(
        "train_dam",
        &mut params,
        cfg,
        examples.len(),
        |p, i, epoch| {
            let ex = &examples[i];
            let layers = layer_values(&p.layers);
            let mut grads = zero_like(&layers);
            let loss = sample_loss_and_grad(BackboneMode::Train(&mut p.backbone), &layers, &mut grads, &ex.window, &epoch_candidates(ex, i, epoch, vocab, cfg), 0)?;
            add_into_grads(&mut p.layers, &grads)?;
            Ok(loss)
        },
        |p| {
            let adaptive = AdaptiveLayerSet::from_params(&p.layers)?;
            validation_ndcg(validation, |ex, c| score_with(&p.backbone, &adaptive, &ex.window, c))
        },
    )?;
    let adaptive = AdaptiveLayerSet::from_params(&params.layers)?;
    Ok((DeviceModel::new(Arc::new(params.backbone), adaptive)?, report))
}

/// Adaptive layers only, backbone frozen, no edit in the path.
pub fn train_adaptive(
    phase: &str,
    backbone: &Backbone,
    base: &AdaptiveLayerSet,
    examples: &[TrainingExample],
    validation: &[TrainingExample],
    cfg: &TrainConfig,
) -> Result<(AdaptiveLayerSet, TrainReport)> {
    let mut layers = base.to_params("adaptive");
    let vocab = backbone.spec.vocab_size;
    let report = run_epochs(
        phase,
        &mut layers,
        cfg,
        examples.len(),
        |p, i, epoch| {
            let ex = &examples[i];
            let values = layer_values(p);
            let mut grads = zero_like(&values);
            let loss = sample_loss_and_grad(BackboneMode::Frozen(backbone), &values, &mut grads, &ex.window, &epoch_candidates(ex, i, epoch, vocab, cfg), 0)?;
            add_into_grads(p, &grads)?;
            Ok(loss)
        },
        |p| {
            let adaptive = AdaptiveLayerSet::from_params(p)?;
            validation_ndcg(validation, |ex, c| score_with(backbone, &adaptive, &ex.window, c))
        },
    )?;
    Ok((AdaptiveLayerSet::from_params(&layers)?, report))
}

/// Trains only the editor: each sample's loss is taken under
/// `base + editor(window)` with backbone and base frozen.
pub fn train_editor(
    editor: EditorNetwork,
    backbone: &Backbone,
    base: &AdaptiveLayerSet,
    examples: &[TrainingExample],
    validation: &[TrainingExample],
    cfg: &TrainConfig,
) -> Result<(EditorNetwork, TrainReport)> {
    if editor.spec.layer_shapes != base.shapes() {
        return Err(Error::Config("editor heads do not match the base layers".into()));
    }
    let mut ledger = FreezeLedger::new();
    let base_params = base.to_params("base");
    ledger.freeze("backbone", backbone);
    ledger.freeze("base", &base_params);
    let mut editor = editor;
    let vocab = backbone.spec.vocab_size;
    let report = run_epochs(
        "train_editor",
        &mut editor,
        cfg,
        examples.len(),
        |e, i, epoch| {
            let ex = &examples[i];
            edited_sample_loss_and_grad_penalized(e, backbone, base, &ex.window, &epoch_candidates(ex, i, epoch, vocab, cfg), 0, cfg.edit_penalty)
        },
        |e| {
            validation_ndcg(validation, |ex, c| {
                let edit = e.generate_edit(&ex.window, &base.shapes())?;
                score_with(backbone, &apply_edit(base, &edit)?, &ex.window, c)
            })
        },
    )?;
    ledger.verify("backbone", backbone)?;
    ledger.verify("base", &base.to_params("base"))?;
    editor.trained = true;
    Ok((editor, report))
}

/// Alternates one device-model epoch (backbone and base) with one editor
/// epoch, as a comparison schedule to the default two-phase training.
pub fn train_joint_alternating(
    examples: &[TrainingExample],
    validation: &[TrainingExample],
    spec: &DamSpec,
    editor: EditorNetwork,
    cfg: &TrainConfig,
) -> Result<(PrototypeModel, Vec<TrainReport>)> {
    let mut reports = Vec::new();
    let one = TrainConfig { epochs: 0, ..cfg.clone() };
    let (mut model, r) = train_global_dam(examples, validation, spec, &one)?;
    reports.push(r);
    let mut backbone = (*model.backbone).clone();
    let mut base = (*model.adaptive).clone();
    let mut editor = editor;
    for epoch in 0..cfg.epochs {
        let step = TrainConfig { epochs: 1, seed: cfg.seed.wrapping_add(epoch as u64), ..cfg.clone() };
        let mut params = DamParams { backbone, layers: base.to_params("dam") };
        let vocab = spec.backbone.vocab_size;
        let r = run_epochs(
            "joint_dam",
            &mut params,
            &step,
            examples.len(),
            |p, i, epoch| {
                let ex = &examples[i];
                let layers = layer_values(&p.layers);
                let mut grads = zero_like(&layers);
                let loss = sample_loss_and_grad(BackboneMode::Train(&mut p.backbone), &layers, &mut grads, &ex.window, &epoch_candidates(ex, i, epoch, vocab, &step), 0)?;
                add_into_grads(&mut p.layers, &grads)?;
                Ok(loss)
            },
            |_| Ok(None),
        )?;
        reports.push(r);
        backbone = params.backbone;
        base = AdaptiveLayerSet::from_params(&params.layers)?;
        let (e, r) = train_editor(editor, &backbone, &base, examples, &[], &step)?;
        editor = e;
        reports.push(r);
    }
    model = DeviceModel::new(Arc::new(backbone), base)?;
    let proto = PrototypeModel::new(model.backbone.clone(), (*model.adaptive).clone(), editor)?;
    Ok((proto, reports))
}

/// Settings for spawning group prototypes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupTraining {
    /// Phase (a): adaptive base on group data, editor detached.
    pub base: TrainConfig,
    /// Phase (b): group editor against the new base.
    pub editor: TrainConfig,
    /// When false, phase (a) is skipped and group editors edit the global base.
    pub refine_base: bool,
    /// Samples phase (b) trains the group editor on.
    pub editor_scope: EditorScope,
}

/// Which samples a group editor is fine-tuned on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditorScope {
    /// Only the group's own samples.
    #[default]
    Group,
    /// Every historical sample, edited against the group's base.
    All,
}

impl Default for GroupTraining {
    fn default() -> Self {
        Self {
            base: TrainConfig { epochs: 5, learning_rate: 0.005, ..TrainConfig::default() },
            editor: TrainConfig { epochs: 5, learning_rate: 0.005, ..TrainConfig::default() },
            refine_base: true,
            editor_scope: EditorScope::Group,
        }
    }
}

/// Copies the global prototype and fine-tunes it on one group's samples:
/// first the adaptive base, then the editor against that base.
pub fn finetune_group(
    global: &PrototypeModel,
    members: &[TrainingExample],
    training: &GroupTraining,
    group: usize,
) -> Result<(PrototypeModel, Vec<TrainReport>)> {
    finetune_group_with(global, members, members, training, group)
}

/// As [`finetune_group`], with the editor phase run on `editor_samples`.
pub fn finetune_group_with(
    global: &PrototypeModel,
    members: &[TrainingExample],
    editor_samples: &[TrainingExample],
    training: &GroupTraining,
    group: usize,
) -> Result<(PrototypeModel, Vec<TrainReport>)> {
    let salt = (group as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut reports = Vec::new();
    let base = if training.refine_base {
        let cfg = training.base.with_seed(training.base.seed ^ salt);
        let (b, mut r) = train_adaptive("group_base", &global.backbone, &global.base, members, &[], &cfg)?;
        r.group = Some(group);
        reports.push(r);
        b
    } else {
        global.base.clone()
    };
    let cfg = training.editor.with_seed(training.editor.seed ^ salt);
    let (editor, mut r) = train_editor(global.editor.clone(), &global.backbone, &base, editor_samples, &[], &cfg)?;
    r.phase = "group_editor".into();
    r.group = Some(group);
    reports.push(r);
    Ok((PrototypeModel { backbone: global.backbone.clone(), base, editor }, reports))
}

/// Gradient fine-tuning of the adaptive layers on a device's own labelled
/// window, as a device would do without the cloud editor. Returns the tuned
/// layers and the wall-clock spent.
pub fn finetune_on_device_baseline(
    backbone: &Backbone,
    adaptive: &AdaptiveLayerSet,
    samples: &[TrainingExample],
    cfg: &TrainConfig,
) -> Result<(AdaptiveLayerSet, Duration)> {
    let start = Instant::now();
    if cfg.epochs == 0 || samples.is_empty() {
        return Ok((adaptive.clone(), start.elapsed()));
    }
    let cfg = TrainConfig { batch_size: cfg.batch_size.max(1), ..cfg.clone() };
    let (tuned, _) = train_adaptive("finetune", backbone, adaptive, samples, &[], &cfg)?;
    Ok((tuned, start.elapsed()))
}
