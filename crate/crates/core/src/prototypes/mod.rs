//! Multiple prototypes: historical edits, clustering into groups, group
//! fine-tuning, and least-edit assignment at serving time.

mod agreement;
mod kmeans;

pub use agreement::{adjusted_rand_index, rand_index};
pub use kmeans::{kmeans, PartitionMap, DEFAULT_MAX_ITERS};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::TrainingExample;
use crate::editor::{apply_edit, edit_norm, flatten_edit, flatten_edit_normalized, EditSet, EditorNetwork};
use crate::error::{Error, Result};
use crate::model::{AdaptiveLayerSet, Backbone};
use crate::numerics::{checksum_params, Params};
use crate::training::{finetune_group_with, EditorScope, GroupTraining, TrainReport};

/// One editor paired with the adaptive base it edits, over a shared backbone.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeModel {
    pub backbone: Arc<Backbone>,
    pub base: AdaptiveLayerSet,
    pub editor: EditorNetwork,
}

impl PrototypeModel {
    pub fn new(backbone: Arc<Backbone>, base: AdaptiveLayerSet, editor: EditorNetwork) -> Result<Self> {
        if editor.spec.layer_shapes != base.shapes() {
            return Err(Error::Config(format!(
                "editor built for {:?}, base layers are {:?}",
                editor.spec.layer_shapes,
                base.shapes()
            )));
        }
        Ok(Self { backbone, base, editor })
    }

    pub fn generate_edit(&self, window: &[u32]) -> Result<EditSet> {
        self.editor.generate_edit(window, &self.base.shapes())
    }

    /// Edit for `window` and the resulting adaptive layers.
    pub fn edited(&self, window: &[u32]) -> Result<(EditSet, AdaptiveLayerSet)> {
        let edit = self.generate_edit(window)?;
        let layers = apply_edit(&self.base, &edit)?;
        Ok((edit, layers))
    }

    pub fn checksum(&self) -> String {
        let base = self.base.to_params("base");
        checksum_params(&[self.backbone.as_ref(), &base, &self.editor])
    }
}

/// How often a device is re-assigned to a group.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentGranularity {
    /// Every sync picks the group anew from the current window.
    #[default]
    Window,
    /// The first sync's choice sticks for the rest of the session.
    Device,
}

/// The global prototype, the group prototypes and the partition behind them.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeSet {
    pub global: PrototypeModel,
    pub groups: Vec<PrototypeModel>,
    pub partition: Option<PartitionMap>,
}

/// Outcome of [`dynamic_assign`].
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentResult {
    pub chosen_group: usize,
    pub norms: Vec<f64>,
    pub edit: EditSet,
}

impl PrototypeSet {
    /// A set whose only group is the global prototype.
    pub fn single(global: PrototypeModel) -> Self {
        Self { groups: vec![global.clone()], global, partition: None }
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    /// Every group shares the global backbone, bit for bit.
    pub fn shares_backbone(&self) -> bool {
        let g = self.global.backbone.checksum();
        self.groups.iter().all(|p| Arc::ptr_eq(&p.backbone, &self.global.backbone) || p.backbone.checksum() == g)
    }

    pub fn checksum(&self) -> String {
        let mut parts: Vec<Vec<crate::numerics::ParamTensor>> = Vec::new();
        parts.push(self.global.base.to_params("global.base"));
        for (j, g) in self.groups.iter().enumerate() {
            parts.push(g.base.to_params(&format!("group{j}.base")));
        }
        let mut all: Vec<&dyn Params> = vec![self.global.backbone.as_ref(), &self.global.editor];
        all.extend(parts.iter().map(|p| p as &dyn Params));
        all.extend(self.groups.iter().map(|g| &g.editor as &dyn Params));
        checksum_params(&all)
    }
}

/// One flattened edit per window from the global prototype.
pub fn compute_history_edits(proto: &PrototypeModel, windows: &[Vec<u32>], normalize: bool) -> Result<Vec<Vec<f64>>> {
    if !proto.editor.trained {
        return Err(Error::Lifecycle("editor has not been trained".into()));
    }
    windows
        .iter()
        .map(|w| {
            let e = proto.generate_edit(w)?;
            Ok(if normalize { flatten_edit_normalized(&e) } else { flatten_edit(&e) })
        })
        .collect()
}

/// Chooses the group whose editor needs the smallest edit for `window`;
/// the lowest index wins exact ties.
pub fn dynamic_assign(protoset: &PrototypeSet, window: &[u32]) -> Result<AssignmentResult> {
    if protoset.groups.is_empty() {
        return Err(Error::Lifecycle("prototype set has no groups".into()));
    }
    let mut best: Option<(usize, EditSet)> = None;
    let mut norms = Vec::with_capacity(protoset.groups.len());
    for (j, g) in protoset.groups.iter().enumerate() {
        let mut edit = g.generate_edit(window)?;
        edit.source_group = Some(j);
        let n = edit_norm(&edit);
        let better = match &best {
            None => true,
            Some((b, _)) => n < norms[*b],
        };
        norms.push(n);
        if better {
            best = Some((j, edit));
        }
    }
    let (chosen_group, edit) = best.expect("at least one group");
    Ok(AssignmentResult { chosen_group, norms, edit })
}

/// Clusters each layer's deltas separately and reports the mean pairwise
/// Rand agreement between the per-layer clusterings.
pub fn partition_consistency(editor: &EditorNetwork, windows: &[Vec<u32>], k: usize, seed: u64) -> Result<f64> {
    let n_layers = editor.layer_count();
    if n_layers < 2 {
        return Err(Error::InvalidInput("partition consistency needs at least two layers".into()));
    }
    let shapes = editor.spec.layer_shapes.clone();
    let mut per_layer: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(windows.len()); n_layers];
    for w in windows {
        let e = editor.generate_edit(w, &shapes)?;
        for (l, d) in e.deltas.iter().enumerate() {
            per_layer[l].push(d.data().to_vec());
        }
    }
    let labels = per_layer
        .iter()
        .map(|v| kmeans(v, k, seed, DEFAULT_MAX_ITERS).map(|p| p.assignments))
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    let mut count = 0.0;
    for a in 0..n_layers {
        for b in a + 1..n_layers {
            total += rand_index(&labels[a], &labels[b])?;
            count += 1.0;
        }
    }
    Ok(total / count)
}

/// Spawns one prototype per group of `partition` by fine-tuning copies of
/// the global prototype on that group's samples.
pub fn build_groups(
    global: &PrototypeModel,
    partition: &PartitionMap,
    samples: &[TrainingExample],
    training: &GroupTraining,
) -> Result<(PrototypeSet, Vec<TrainReport>)> {
    if partition.assignments.len() != samples.len() {
        return Err(Error::Partition(format!(
            "partition covers {} samples, history has {}",
            partition.assignments.len(),
            samples.len()
        )));
    }
    let mut groups = Vec::with_capacity(partition.group_count);
    let mut reports = Vec::new();
    for j in 0..partition.group_count {
        let members: Vec<TrainingExample> = partition.members(j).into_iter().map(|i| samples[i].clone()).collect();
        if members.is_empty() {
            return Err(Error::Partition(format!("group {j} is empty")));
        }
        let editor_samples = match training.editor_scope {
            EditorScope::Group => &members[..],
            EditorScope::All => samples,
        };
        let (model, mut r) = finetune_group_with(global, &members, editor_samples, training, j)?;
        groups.push(model);
        reports.append(&mut r);
    }
    Ok((PrototypeSet { global: global.clone(), groups, partition: Some(partition.clone()) }, reports))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::editor::EditorSpec;
    use crate::model::{BackboneSpec, Pooling};
    use crate::numerics::rng_from_seed;

    pub(crate) fn toy_proto(seed: u64, clkt: bool, layers: usize) -> PrototypeModel {
        let mut rng = rng_from_seed(seed);
        let backbone = Backbone::new(BackboneSpec { vocab_size: 30, embed_dim: 4, hidden_dim: 4, pooling: Pooling::Mean }, &mut rng).unwrap();
        let widths = vec![4; layers + 1];
        let base = AdaptiveLayerSet::init(&widths, &mut rng).unwrap();
        let spec = EditorSpec {
            vocab_size: 30,
            embed_dim: 4,
            hidden_dim: 6,
            context_dim: 5,
            layer_shapes: base.shapes(),
            clkt,
            threshold: 1.0,
        };
        let mut editor = EditorNetwork::new(spec, seed + 100).unwrap();
        editor.trained = true;
        PrototypeModel::new(Arc::new(backbone), base, editor).unwrap()
    }

    #[test]
    fn untrained_editor_refuses_history_edits() {
        let mut p = toy_proto(0, false, 2);
        p.editor.trained = false;
        assert!(matches!(compute_history_edits(&p, &[vec![1]], false), Err(Error::Lifecycle(_))));
    }

    #[test]
    fn history_edits_one_per_window_within_bound() {
        let p = toy_proto(1, true, 2);
        let windows = vec![vec![1, 2], vec![1, 2], vec![3, 4, 5]];
        let v = compute_history_edits(&p, &windows, false).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v[0], v[1]);
        assert!(v.iter().flatten().all(|x| x.abs() <= 1.0));
    }

    #[test]
    fn identical_groups_tie_to_zero() {
        let p = toy_proto(2, false, 2);
        let set = PrototypeSet { global: p.clone(), groups: vec![p.clone(), p.clone(), p], partition: None };
        let r = dynamic_assign(&set, &[1, 2, 3]).unwrap();
        assert_eq!(r.chosen_group, 0);
        assert_eq!(r.norms[0], r.norms[2]);
        assert_eq!(r.edit.source_group, Some(0));
    }

    #[test]
    fn assignment_picks_smallest_norm() {
        let groups: Vec<_> = (0..4).map(|s| toy_proto(10 + s, false, 2)).collect();
        let set = PrototypeSet { global: groups[0].clone(), groups, partition: None };
        let r = dynamic_assign(&set, &[4, 7]).unwrap();
        let min = r.norms.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(r.norms[r.chosen_group], min);
        assert_eq!(edit_norm(&r.edit), min);
    }

    #[test]
    fn empty_set_is_lifecycle_error() {
        let p = toy_proto(3, false, 1);
        let set = PrototypeSet { global: p, groups: vec![], partition: None };
        assert!(matches!(dynamic_assign(&set, &[1]), Err(Error::Lifecycle(_))));
    }

    #[test]
    fn consistency_needs_two_layers() {
        let p = toy_proto(4, false, 1);
        assert!(partition_consistency(&p.editor, &[vec![1], vec![2]], 2, 0).is_err());
        let p = toy_proto(4, true, 3);
        let windows: Vec<Vec<u32>> = (0..20).map(|i| vec![i, (i * 7) % 30]).collect();
        let c = partition_consistency(&p.editor, &windows, 3, 0).unwrap();
        assert!((0.0..=1.0).contains(&c));
    }

    #[test]
    fn checksum_sees_group_changes() {
        let p = toy_proto(5, false, 2);
        let mut set = PrototypeSet::single(p);
        let before = set.checksum();
        assert!(set.shares_backbone());
        set.groups[0].editor.heads[0].bias.value.data_mut()[0] += 1e-3;
        assert_ne!(before, set.checksum());
    }
}
