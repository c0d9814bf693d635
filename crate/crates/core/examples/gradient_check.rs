//! Checks the analytic gradient of the edited-prototype loss (encoder,
//! cross-layer chain, heads, clip, apply, ranking loss) against central
//! differences.
//!
//!     cargo run --example gradient_check

use std::sync::Arc;

use persona::editor::{edited_sample_loss_and_grad, EditorNetwork, EditorSpec};
use persona::model::{AdaptiveLayerSet, Backbone, BackboneSpec, Pooling};
use persona::numerics::{grad_check, rng_from_seed};

fn main() -> persona::Result<()> {
    let mut rng = rng_from_seed(7);
    let backbone = Arc::new(Backbone::new(BackboneSpec { vocab_size: 20, embed_dim: 4, hidden_dim: 4, pooling: Pooling::GruLite }, &mut rng)?);
    let base = AdaptiveLayerSet::init(&[4, 5, 4], &mut rng)?;
    let spec = EditorSpec {
        vocab_size: 20,
        embed_dim: 3,
        hidden_dim: 5,
        context_dim: 4,
        layer_shapes: base.shapes(),
        clkt: true,
        threshold: 10.0,
    };
    let mut editor = EditorNetwork::new(spec, 3)?;
    let window = [1u32, 5, 7, 2];
    let candidates = [3u32, 9, 11, 4];

    let err = grad_check(&mut editor, 1e-6, |ed| edited_sample_loss_and_grad(ed, &backbone, &base, &window, &candidates, 0))?;
    println!("editor composite loss: max relative error {err:.2e}");
    assert!(err < 1e-4);
    Ok(())
}
