use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DeviceSequence;
use crate::numerics::rng_from_seed;

/// Negative sampling settings for training examples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NegativeConfig {
    pub count: usize,
    /// Exclude every item in the device's history, not only the positive.
    pub exclude_history: bool,
}

impl Default for NegativeConfig {
    fn default() -> Self {
        Self { count: 20, exclude_history: true }
    }
}

/// One next-item example: the preceding window, the true next item and
/// sampled negatives.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingExample {
    /// Index of the device in the sequence list it was built from.
    pub device: usize,
    /// Position of the positive in the device's sequence.
    pub event: usize,
    pub window: Vec<u32>,
    pub positive: u32,
    pub negatives: Vec<u32>,
}

impl TrainingExample {
    /// Candidate list with the positive at index 0.
    pub fn candidates(&self) -> Vec<u32> {
        let mut c = Vec::with_capacity(1 + self.negatives.len());
        c.push(self.positive);
        c.extend(&self.negatives);
        c
    }
}

/// Draws up to `count` distinct items uniformly from `[0, vocab)` minus
/// `excluded`. Falls back to excluding only `positive` when the exclusion
/// leaves nothing.
pub fn sample_negatives(rng: &mut impl Rng, vocab: usize, excluded: &[bool], positive: u32, count: usize) -> Vec<u32> {
    let mut eligible: Vec<u32> = (0..vocab as u32)
        .filter(|&i| i != positive && !excluded.get(i as usize).copied().unwrap_or(false))
        .collect();
    if eligible.is_empty() {
        eligible = (0..vocab as u32).filter(|&i| i != positive).collect();
    }
    let n = count.min(eligible.len());
    rand::seq::index::sample(rng, eligible.len(), n).into_iter().map(|i| eligible[i]).collect()
}

/// Sliding next-item windows of at most `window` items over each history.
pub fn make_training_windows(
    history: &[DeviceSequence],
    vocab: usize,
    window: usize,
    negatives: &NegativeConfig,
    seed: u64,
) -> Vec<TrainingExample> {
    let window = window.max(1);
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::new();
    let mut mask = vec![false; vocab];
    for (d, seq) in history.iter().enumerate() {
        mask.iter_mut().for_each(|m| *m = false);
        if negatives.exclude_history {
            for &i in &seq.items {
                if let Some(m) = mask.get_mut(i as usize) {
                    *m = true;
                }
            }
        }
        for t in 1..seq.len() {
            let positive = seq.items[t];
            out.push(TrainingExample {
                device: d,
                event: t,
                window: seq.items[t.saturating_sub(window)..t].to_vec(),
                positive,
                negatives: sample_negatives(&mut rng, vocab, &mask, positive, negatives.count),
            });
        }
    }
    out
}

/// Leave-last-out: the final example of every device becomes validation.
pub fn split_validation(examples: Vec<TrainingExample>) -> (Vec<TrainingExample>, Vec<TrainingExample>) {
    let mut last = std::collections::HashMap::new();
    for (i, ex) in examples.iter().enumerate() {
        last.insert(ex.device, i);
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, ex) in examples.into_iter().enumerate() {
        if last[&ex.device] == i {
            val.push(ex);
        } else {
            train.push(ex);
        }
    }
    (train, val)
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fixed evaluation negatives for `(seed, device, event)`. Only the
/// positive is excluded, so every condition ranks the same candidates.
pub fn eval_negatives(vocab: usize, positive: u32, count: usize, seed: u64, device: u32, event: usize) -> Vec<u32> {
    let key = mix(mix(mix(seed) ^ device as u64) ^ event as u64);
    let mut rng = rng_from_seed(key);
    sample_negatives(&mut rng, vocab, &[], positive, count)
}
