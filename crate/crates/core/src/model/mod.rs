//! The on-device adaptive model: a frozen shared backbone plus swappable
//! adaptive layers whose weights arrive from the cloud.

mod adaptive;
mod backbone;
mod gated;
mod loss;

use std::cmp::Ordering;
use std::sync::{Arc, RwLock};

pub use adaptive::{adaptive_backward, adaptive_forward_traced, AdaptiveLayerSet, AdaptiveTrace};
pub use backbone::{Backbone, BackboneSpec, BackboneTrace, Pooling};
pub use gated::{GatedCell, GatedStep};
pub use loss::{loss_ce, loss_ce_with_grad};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Backbone plus the currently installed adaptive layers.
#[derive(Clone, Debug, PartialEq)]
pub struct DeviceModel {
    pub backbone: Arc<Backbone>,
    pub adaptive: Arc<AdaptiveLayerSet>,
}

impl DeviceModel {
    pub fn new(backbone: Arc<Backbone>, adaptive: AdaptiveLayerSet) -> Result<Self> {
        check_compatible(&backbone, &adaptive)?;
        Ok(Self {
            backbone,
            adaptive: Arc::new(adaptive),
        })
    }

    pub fn backbone_forward(&self, sequence: &[u32]) -> Result<Vec<f64>> {
        self.backbone.forward(sequence)
    }

    /// Query vector for a sequence under the installed adaptive layers.
    pub fn query(&self, sequence: &[u32]) -> Result<Vec<f64>> {
        query_with(&self.backbone, &self.adaptive, sequence)
    }

    pub fn score(&self, sequence: &[u32], candidates: &[u32]) -> Result<Vec<f64>> {
        score_with(&self.backbone, &self.adaptive, sequence, candidates)
    }

    pub fn predict_topk(&self, sequence: &[u32], candidates: &[u32], k: usize) -> Result<Vec<u32>> {
        if k > candidates.len() {
            return Err(Error::InvalidInput(format!(
                "k={k} exceeds {} candidates",
                candidates.len()
            )));
        }
        let scores = self.score(sequence, candidates)?;
        let mut ranked = rank_candidates(candidates, &scores);
        ranked.truncate(k);
        Ok(ranked)
    }

    /// Swaps in a new adaptive layer set in one step.
    pub fn install_adaptive(&mut self, weights: AdaptiveLayerSet) -> Result<()> {
        if !self.adaptive.same_shapes(&weights) {
            return Err(Error::Protocol(format!(
                "adaptive shapes {:?} do not match installed {:?}",
                weights.shapes(),
                self.adaptive.shapes()
            )));
        }
        self.adaptive = Arc::new(weights);
        Ok(())
    }
}

fn check_compatible(backbone: &Backbone, adaptive: &AdaptiveLayerSet) -> Result<()> {
    if backbone.feature_dim() != adaptive.input_dim() {
        return Err(Error::InvalidShape(format!(
            "backbone emits {} features, adaptive layer 1 takes {}",
            backbone.feature_dim(),
            adaptive.input_dim()
        )));
    }
    if adaptive.output_dim() != backbone.spec.embed_dim {
        return Err(Error::InvalidShape(format!(
            "adaptive output {} must equal item embedding dim {}",
            adaptive.output_dim(),
            backbone.spec.embed_dim
        )));
    }
    Ok(())
}

pub fn query_with(backbone: &Backbone, adaptive: &AdaptiveLayerSet, sequence: &[u32]) -> Result<Vec<f64>> {
    let features = backbone.forward(sequence)?;
    adaptive.forward(&features)
}

pub fn score_with(backbone: &Backbone, adaptive: &AdaptiveLayerSet, sequence: &[u32], candidates: &[u32]) -> Result<Vec<f64>> {
    backbone.check_items(candidates)?;
    let q = query_with(backbone, adaptive, sequence)?;
    Ok(backbone.score(&q, candidates))
}

/// Sorts candidates by score descending, ties by ascending item id.
pub fn rank_candidates(candidates: &[u32], scores: &[f64]) -> Vec<u32> {
    let mut order: Vec<(u32, f64)> = candidates.iter().copied().zip(scores.iter().copied()).collect();
    order.sort_by(|a, b| match b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal) {
        Ordering::Equal => a.0.cmp(&b.0),
        o => o,
    });
    order.into_iter().map(|(c, _)| c).collect()
}

/// Device model whose adaptive layers can be replaced while other threads
/// are scoring. Readers always see one complete layer set.
#[derive(Debug)]
pub struct LiveDeviceModel {
    backbone: Arc<Backbone>,
    adaptive: RwLock<Arc<AdaptiveLayerSet>>,
}

impl LiveDeviceModel {
    pub fn new(model: DeviceModel) -> Self {
        Self {
            backbone: model.backbone,
            adaptive: RwLock::new(model.adaptive),
        }
    }

    pub fn snapshot(&self) -> Arc<AdaptiveLayerSet> {
        Arc::clone(&self.adaptive.read().expect("adaptive lock poisoned"))
    }

    pub fn score(&self, sequence: &[u32], candidates: &[u32]) -> Result<Vec<f64>> {
        let adaptive = self.snapshot();
        score_with(&self.backbone, &adaptive, sequence, candidates)
    }

    pub fn install_adaptive(&self, weights: AdaptiveLayerSet) -> Result<()> {
        let mut slot = self.adaptive.write().expect("adaptive lock poisoned");
        if !slot.same_shapes(&weights) {
            return Err(Error::Protocol("adaptive shape mismatch on install".into()));
        }
        *slot = Arc::new(weights);
        Ok(())
    }
}

/// How backbone gradients are handled during a sample backward pass.
pub enum BackboneMode<'a> {
    Train(&'a mut Backbone),
    Frozen(&'a Backbone),
}

impl BackboneMode<'_> {
    fn backbone(&self) -> &Backbone {
        match self {
            BackboneMode::Train(b) => b,
            BackboneMode::Frozen(b) => b,
        }
    }
}

/// Cross-entropy of one (sequence, candidates) sample scored with the given
/// adaptive weights, accumulating `dL/dK_n` into `layer_grads` and, in train
/// mode, backbone gradients. Returns the loss.
pub fn sample_loss_and_grad(
    mut backbone: BackboneMode<'_>,
    layers: &[Matrix],
    layer_grads: &mut [Matrix],
    sequence: &[u32],
    candidates: &[u32],
    target: usize,
) -> Result<f64> {
    let bb = backbone.backbone();
    bb.check_items(candidates)?;
    let (features, bb_trace) = bb.forward_traced(sequence)?;
    let (q, trace) = adaptive_forward_traced(layers, &features)?;
    let scores = bb.score(&q, candidates);
    let (loss, d_scores) = loss_ce_with_grad(&scores, target)?;
    match &mut backbone {
        BackboneMode::Train(b) => {
            let d_q = b.score_backward(&q, candidates, &d_scores);
            let d_features = adaptive_backward(layers, &trace, &d_q, layer_grads);
            b.backward(&bb_trace, &d_features);
        }
        BackboneMode::Frozen(b) => {
            let d_q = b.score_query_grad(candidates, &d_scores);
            adaptive_backward(layers, &trace, &d_q, layer_grads);
        }
    }
    Ok(loss)
}

/// Loss only, for evaluation and finite differences.
pub fn sample_loss(backbone: &Backbone, layers: &[Matrix], sequence: &[u32], candidates: &[u32], target: usize) -> Result<f64> {
    backbone.check_items(candidates)?;
    let features = backbone.forward(sequence)?;
    let (q, _) = adaptive_forward_traced(layers, &features)?;
    loss_ce(&backbone.score(&q, candidates), target)
}
