//! Ranking metrics on a handful of hand-made predictions.
//!
//!     cargo run --example metrics

use persona::eval::{auc, hr_at_k, ndcg_at_k, RankedPrediction};

fn main() -> persona::Result<()> {
    let preds = vec![
        // positive ranked first
        RankedPrediction::from_candidates(&[10, 1, 2, 3], &[0.9, 0.1, 0.2, 0.3])?,
        // positive ranked third
        RankedPrediction::from_candidates(&[11, 1, 2, 3], &[0.25, 0.1, 0.5, 0.3])?,
        // tie with a lower item id ranks the positive behind it
        RankedPrediction::from_candidates(&[12, 4, 5, 6], &[0.5, 0.5, 0.1, 0.0])?,
    ];
    for p in &preds {
        println!("positive {} at rank {}", p.positive, p.rank());
    }
    println!("auc {:.4}", auc(&preds)?);
    for k in [1, 2, 3] {
        println!("hr@{k} {:.4}  ndcg@{k} {:.4}", hr_at_k(&preds, k)?, ndcg_at_k(&preds, k)?);
    }
    Ok(())
}
