//! Ranking metrics and report emission.

mod report;

pub use report::{emit_report, summarize, ReportFiles, SummaryRow};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Condition labels used by the canned experiments.
pub mod condition {
    pub const BASELINE: &str = "baseline";
    pub const PERSONA_S: &str = "persona_s";
    pub const PERSONA_M: &str = "persona_m";
    pub const FINETUNE: &str = "finetune";
    pub const GROUP_FINETUNE: &str = "group_finetune";
}

/// Scores of one evaluation event: the positive and its negatives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedPrediction {
    pub positive: u32,
    pub positive_score: f64,
    pub negatives: Vec<u32>,
    pub negative_scores: Vec<f64>,
}

impl RankedPrediction {
    /// Builds from a candidate list whose first entry is the positive.
    pub fn from_candidates(candidates: &[u32], scores: &[f64]) -> Result<Self> {
        if candidates.len() != scores.len() || candidates.len() < 2 {
            return Err(Error::InvalidInput("need matching candidates and scores, at least two".into()));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Numeric("non-finite score".into()));
        }
        Ok(Self {
            positive: candidates[0],
            positive_score: scores[0],
            negatives: candidates[1..].to_vec(),
            negative_scores: scores[1..].to_vec(),
        })
    }

    pub fn candidate_count(&self) -> usize {
        1 + self.negatives.len()
    }

    /// 1-based rank of the positive; ties go to the lower item id.
    pub fn rank(&self) -> usize {
        1 + self
            .negatives
            .iter()
            .zip(&self.negative_scores)
            .filter(|(&id, &s)| s > self.positive_score || (s == self.positive_score && id < self.positive))
            .count()
    }

    /// Full candidate order, best first.
    pub fn ranked(&self) -> Vec<u32> {
        let mut ids = vec![self.positive];
        ids.extend(&self.negatives);
        let mut scores = vec![self.positive_score];
        scores.extend(&self.negative_scores);
        crate::model::rank_candidates(&ids, &scores)
    }

    fn pair_auc(&self) -> f64 {
        let mut s = 0.0;
        for &n in &self.negative_scores {
            if self.positive_score > n {
                s += 1.0;
            } else if self.positive_score == n {
                s += 0.5;
            }
        }
        s / self.negative_scores.len() as f64
    }
}

fn check_nonempty(predictions: &[RankedPrediction]) -> Result<()> {
    if predictions.is_empty() {
        return Err(Error::InvalidInput("no predictions".into()));
    }
    if predictions.iter().any(|p| p.negatives.is_empty()) {
        return Err(Error::InvalidInput("prediction without negatives".into()));
    }
    Ok(())
}

fn check_k(predictions: &[RankedPrediction], k: usize) -> Result<()> {
    check_nonempty(predictions)?;
    if k == 0 {
        return Err(Error::InvalidInput("k must be >= 1".into()));
    }
    if let Some(p) = predictions.iter().find(|p| k > p.candidate_count()) {
        return Err(Error::InvalidInput(format!("k={k} exceeds {} candidates", p.candidate_count())));
    }
    Ok(())
}

/// Mean per-prediction pairwise AUC; ties count one half.
pub fn auc(predictions: &[RankedPrediction]) -> Result<f64> {
    check_nonempty(predictions)?;
    Ok(predictions.iter().map(RankedPrediction::pair_auc).sum::<f64>() / predictions.len() as f64)
}

pub fn hr_at_k(predictions: &[RankedPrediction], k: usize) -> Result<f64> {
    check_k(predictions, k)?;
    let hits = predictions.iter().filter(|p| p.rank() <= k).count();
    Ok(hits as f64 / predictions.len() as f64)
}

pub fn ndcg_at_k(predictions: &[RankedPrediction], k: usize) -> Result<f64> {
    check_k(predictions, k)?;
    let total: f64 = predictions
        .iter()
        .map(|p| {
            let r = p.rank();
            if r <= k {
                1.0 / ((r + 1) as f64).log2()
            } else {
                0.0
            }
        })
        .sum();
    Ok(total / predictions.len() as f64)
}

/// Top-1 accuracy.
pub fn accuracy(predictions: &[RankedPrediction]) -> Result<f64> {
    hr_at_k(predictions, 1)
}

/// Metrics of one condition under one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub condition: String,
    /// Value of the swept parameter, empty outside sweeps.
    pub axis_value: String,
    pub seed: u64,
    pub samples: usize,
    pub auc: f64,
    pub hr5: f64,
    pub hr10: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
}

impl MetricReport {
    pub fn from_predictions(condition: &str, seed: u64, predictions: &[RankedPrediction]) -> Result<Self> {
        Ok(Self {
            condition: condition.to_string(),
            axis_value: String::new(),
            seed,
            samples: predictions.len(),
            auc: auc(predictions)?,
            hr5: hr_at_k(predictions, 5)?,
            hr10: hr_at_k(predictions, 10)?,
            ndcg5: ndcg_at_k(predictions, 5)?,
            ndcg10: ndcg_at_k(predictions, 10)?,
        })
    }

    pub fn with_axis_value(mut self, v: impl ToString) -> Self {
        self.axis_value = v.to_string();
        self
    }

    pub(crate) fn metrics(&self) -> [(&'static str, f64); 5] {
        [("auc", self.auc), ("hr@5", self.hr5), ("hr@10", self.hr10), ("ndcg@5", self.ndcg5), ("ndcg@10", self.ndcg10)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(pos: f64, negs: &[f64]) -> RankedPrediction {
        RankedPrediction {
            positive: 0,
            positive_score: pos,
            negatives: (1..=negs.len() as u32).collect(),
            negative_scores: negs.to_vec(),
        }
    }

    fn at_rank(r: usize, n: usize) -> RankedPrediction {
        let negs: Vec<f64> = (0..n).map(|i| if i + 1 < r { 2.0 } else { 0.0 }).collect();
        pred(1.0, &negs)
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[pred(0.9, &[0.1, 0.8])]).unwrap(), 1.0);
        assert_eq!(auc(&[pred(0.5, &[0.5, 0.5])]).unwrap(), 0.5);
        assert_eq!(auc(&[pred(0.0, &[0.1, 0.8])]).unwrap(), 0.0);
        assert!(auc(&[]).is_err());
    }

    #[test]
    fn hr_examples() {
        assert_eq!(hr_at_k(&[at_rank(1, 9)], 5).unwrap(), 1.0);
        assert_eq!(hr_at_k(&[at_rank(6, 9)], 5).unwrap(), 0.0);
        assert_eq!(hr_at_k(&[at_rank(10, 9), at_rank(3, 9)], 10).unwrap(), 1.0);
        assert!(hr_at_k(&[at_rank(1, 9)], 11).is_err());
        assert!(hr_at_k(&[at_rank(1, 9)], 0).is_err());
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_k(&[at_rank(1, 9)], 5).unwrap(), 1.0);
        assert!((ndcg_at_k(&[at_rank(2, 9)], 5).unwrap() - 0.6309297535714574).abs() < 1e-15);
        assert_eq!(ndcg_at_k(&[at_rank(7, 9)], 5).unwrap(), 0.0);
    }

    #[test]
    fn ties_break_by_id() {
        let p = RankedPrediction { positive: 5, positive_score: 1.0, negatives: vec![3, 9], negative_scores: vec![1.0, 1.0] };
        assert_eq!(p.rank(), 2);
        assert_eq!(p.ranked(), vec![3, 5, 9]);
    }

    #[test]
    fn report_invariants() {
        let preds: Vec<_> = (1..=12).map(|r| at_rank(r, 11)).collect();
        let r = MetricReport::from_predictions(condition::PERSONA_M, 0, &preds).unwrap();
        assert!(r.hr5 <= r.hr10 && r.ndcg5 <= r.hr5 && r.ndcg10 <= r.hr10);
        assert_eq!(r.samples, 12);
    }
}
