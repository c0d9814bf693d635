//! The parameter editor: generates clipped per-layer weight deltas from a
//! real-time window and applies them additively to a prototype's adaptive
//! layers.

mod network;

pub use network::{EditorNetwork, EditorSpec, EditorTrace, Linear};

use crate::error::{Error, Result};
use crate::model::{sample_loss_and_grad, AdaptiveLayerSet, Backbone, BackboneMode};
use crate::numerics::Matrix;

/// Per-layer weight deltas, every entry within `[-threshold_used, threshold_used]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EditSet {
    pub deltas: Vec<Matrix>,
    pub source_group: Option<usize>,
    pub threshold_used: f64,
}

impl EditSet {
    pub fn zeros(shapes: &[(usize, usize)], threshold: f64) -> Self {
        Self {
            deltas: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            source_group: None,
            threshold_used: threshold,
        }
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.deltas.iter().map(Matrix::shape).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.deltas.iter().map(Matrix::max_abs).fold(0.0, f64::max)
    }

    pub fn within_bound(&self) -> bool {
        self.deltas
            .iter()
            .all(|d| d.data().iter().all(|v| v.abs() <= self.threshold_used))
    }
}

/// `base + edit`, layer by layer. `base` is left untouched.
pub fn apply_edit(base: &AdaptiveLayerSet, edit: &EditSet) -> Result<AdaptiveLayerSet> {
    if base.shapes() != edit.shapes() {
        return Err(Error::Protocol(format!(
            "edit shapes {:?} do not match base {:?}",
            edit.shapes(),
            base.shapes()
        )));
    }
    let layers = base
        .layers()
        .iter()
        .zip(&edit.deltas)
        .map(|(w, d)| w.try_add(d))
        .collect::<Result<Vec<_>>>()?;
    AdaptiveLayerSet::new(layers)
}

/// Frobenius norm over all layers' deltas together.
pub fn edit_norm(edit: &EditSet) -> f64 {
    edit.deltas
        .iter()
        .flat_map(|d| d.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Layer-order, row-major concatenation of the deltas.
pub fn flatten_edit(edit: &EditSet) -> Vec<f64> {
    edit.deltas.iter().flat_map(|d| d.data().iter().copied()).collect()
}

/// Like [`flatten_edit`] but each layer scaled to unit Frobenius norm.
pub fn flatten_edit_normalized(edit: &EditSet) -> Vec<f64> {
    edit.deltas
        .iter()
        .flat_map(|d| {
            let n = d.frobenius_norm();
            let s = if n > 0.0 { 1.0 / n } else { 0.0 };
            d.data().iter().map(move |v| v * s)
        })
        .collect()
}

/// Inverse of [`flatten_edit`] for known layer shapes.
pub fn unflatten_edit(flat: &[f64], shapes: &[(usize, usize)], threshold: f64) -> Result<EditSet> {
    let total: usize = shapes.iter().map(|(r, c)| r * c).sum();
    if total != flat.len() {
        return Err(Error::InvalidShape(format!(
            "{} values cannot fill layers {shapes:?}",
            flat.len()
        )));
    }
    let mut offset = 0;
    let mut deltas = Vec::with_capacity(shapes.len());
    for &(r, c) in shapes {
        deltas.push(Matrix::from_vec(r, c, flat[offset..offset + r * c].to_vec())?);
        offset += r * c;
    }
    Ok(EditSet {
        deltas,
        source_group: None,
        threshold_used: threshold,
    })
}

/// One training sample's composite loss with the edit in the path:
/// `edit = editor(window)`, `K = base + edit`, loss = CE under `K`.
/// Accumulates editor gradients only; backbone and base stay frozen.
pub fn edited_sample_loss_and_grad(
    editor: &mut EditorNetwork,
    backbone: &Backbone,
    base: &AdaptiveLayerSet,
    window: &[u32],
    candidates: &[u32],
    target: usize,
) -> Result<f64> {
    edited_sample_loss_and_grad_penalized(editor, backbone, base, window, candidates, target, 0.0)
}

/// As [`edited_sample_loss_and_grad`] plus `penalty * ||edit||_F^2`.
pub fn edited_sample_loss_and_grad_penalized(
    editor: &mut EditorNetwork,
    backbone: &Backbone,
    base: &AdaptiveLayerSet,
    window: &[u32],
    candidates: &[u32],
    target: usize,
    penalty: f64,
) -> Result<f64> {
    let (edit, trace) = editor.generate_edit_traced(window)?;
    let edited = apply_edit(base, &edit)?;
    let mut d_layers: Vec<Matrix> = edited.layers().iter().map(|l| Matrix::zeros(l.rows(), l.cols())).collect();
    let mut loss = sample_loss_and_grad(BackboneMode::Frozen(backbone), edited.layers(), &mut d_layers, window, candidates, target)?;
    if penalty > 0.0 {
        let n = edit_norm(&edit);
        loss += penalty * n * n;
        for (g, d) in d_layers.iter_mut().zip(&edit.deltas) {
            g.add_assign_scaled(d, 2.0 * penalty)?;
        }
    }
    editor.backward(&trace, &d_layers);
    Ok(loss)
}

/// Loss only for the composite path.
pub fn edited_sample_loss(
    editor: &EditorNetwork,
    backbone: &Backbone,
    base: &AdaptiveLayerSet,
    window: &[u32],
    candidates: &[u32],
    target: usize,
) -> Result<f64> {
    let edit = editor.generate_edit(window, &base.shapes())?;
    let edited = apply_edit(base, &edit)?;
    crate::model::sample_loss(backbone, edited.layers(), window, candidates, target)
}
