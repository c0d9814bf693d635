use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gated::{GatedCell, GatedStep};
use crate::error::{Error, Result};
use crate::numerics::{xavier_init_with, ParamTensor, Params};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Mean,
    Last,
    GruLite,
}

impl Pooling {
    pub fn as_str(self) -> &'static str {
        match self {
            Pooling::Mean => "mean",
            Pooling::Last => "last",
            Pooling::GruLite => "gru_lite",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub pooling: Pooling,
}

impl BackboneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config(format!("backbone dims must be >= 1: {self:?}")));
        }
        Ok(())
    }

    /// Length of the feature vector the backbone emits.
    pub fn feature_dim(&self) -> usize {
        match self.pooling {
            Pooling::Mean | Pooling::Last => self.embed_dim,
            Pooling::GruLite => self.hidden_dim,
        }
    }
}

/// Shared layers: item embeddings plus an optional recurrent pooling cell.
/// Candidate items are scored against the same embedding table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Backbone {
    pub spec: BackboneSpec,
    pub item_embeddings: ParamTensor,
    pub cell: Option<GatedCell>,
}

#[derive(Clone, Debug)]
pub enum BackboneTrace {
    Mean { items: Vec<u32> },
    Last { item: u32 },
    GruLite { items: Vec<u32>, steps: Vec<GatedStep> },
}

impl Backbone {
    pub fn new(spec: BackboneSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let mut emb = xavier_init_with(spec.vocab_size, spec.embed_dim, rng)?;
        // Glorot over a (vocab x dim) table is tiny for large vocabularies.
        let scale = (1.0 / spec.embed_dim as f64).sqrt() / (6.0 / (spec.vocab_size + spec.embed_dim) as f64).sqrt();
        emb.scale(scale);
        let cell = match spec.pooling {
            Pooling::GruLite => Some(GatedCell::new("backbone.cell", spec.embed_dim, spec.hidden_dim, rng)?),
            _ => None,
        };
        Ok(Self {
            spec,
            item_embeddings: ParamTensor::new("backbone.item_embeddings", emb),
            cell,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim()
    }

    pub fn embedding(&self, item: u32) -> &[f64] {
        self.item_embeddings.value.row(item as usize)
    }

    pub fn check_items(&self, items: &[u32]) -> Result<()> {
        if let Some(&bad) = items.iter().find(|&&i| i as usize >= self.spec.vocab_size) {
            return Err(Error::Data(format!(
                "item id {bad} outside vocabulary of {}",
                self.spec.vocab_size
            )));
        }
        Ok(())
    }

    pub fn forward(&self, sequence: &[u32]) -> Result<Vec<f64>> {
        Ok(self.forward_traced(sequence)?.0)
    }

    pub fn forward_traced(&self, sequence: &[u32]) -> Result<(Vec<f64>, BackboneTrace)> {
        if sequence.is_empty() {
            return Err(Error::InvalidInput("empty sequence".into()));
        }
        self.check_items(sequence)?;
        match self.spec.pooling {
            Pooling::Mean => {
                let mut out = vec![0.0; self.spec.embed_dim];
                for &i in sequence {
                    crate::numerics::axpy(1.0, self.embedding(i), &mut out);
                }
                let inv = 1.0 / sequence.len() as f64;
                out.iter_mut().for_each(|v| *v *= inv);
                Ok((out, BackboneTrace::Mean { items: sequence.to_vec() }))
            }
            Pooling::Last => {
                let item = *sequence.last().expect("non-empty");
                Ok((self.embedding(item).to_vec(), BackboneTrace::Last { item }))
            }
            Pooling::GruLite => {
                let cell = self.cell.as_ref().ok_or_else(|| Error::Config("gru_lite backbone without cell".into()))?;
                let mut h = vec![0.0; self.spec.hidden_dim];
                let mut steps = Vec::with_capacity(sequence.len());
                for &i in sequence {
                    let step = cell.step(&h, self.embedding(i));
                    h = step.out.clone();
                    steps.push(step);
                }
                Ok((h, BackboneTrace::GruLite { items: sequence.to_vec(), steps }))
            }
        }
    }

    /// Accumulates gradients for a feature-vector upstream gradient.
    pub fn backward(&mut self, trace: &BackboneTrace, d_feature: &[f64]) {
        match trace {
            BackboneTrace::Mean { items } => {
                let inv = 1.0 / items.len() as f64;
                for &i in items {
                    crate::numerics::axpy(inv, d_feature, self.item_embeddings.grad.row_mut(i as usize));
                }
            }
            BackboneTrace::Last { item } => {
                crate::numerics::axpy(1.0, d_feature, self.item_embeddings.grad.row_mut(*item as usize));
            }
            BackboneTrace::GruLite { items, steps } => {
                let cell = self.cell.as_mut().expect("gru trace implies cell");
                let mut d_h = d_feature.to_vec();
                for (step, &item) in steps.iter().zip(items).rev() {
                    let (d_prev, d_input) = cell.backward(step, &d_h);
                    crate::numerics::axpy(1.0, &d_input, self.item_embeddings.grad.row_mut(item as usize));
                    d_h = d_prev;
                }
            }
        }
    }

    /// Scores candidates against a query: `score_j = q . emb(candidate_j)`.
    pub fn score(&self, query: &[f64], candidates: &[u32]) -> Vec<f64> {
        candidates
            .iter()
            .map(|&c| crate::numerics::dot(query, self.embedding(c)))
            .collect()
    }

    /// Backward of [`Backbone::score`]: accumulates candidate-embedding
    /// gradients and returns the gradient with respect to the query.
    pub fn score_backward(&mut self, query: &[f64], candidates: &[u32], d_scores: &[f64]) -> Vec<f64> {
        let mut d_query = vec![0.0; query.len()];
        for (&c, &ds) in candidates.iter().zip(d_scores) {
            crate::numerics::axpy(ds, self.embedding(c), &mut d_query);
        }
        for (&c, &ds) in candidates.iter().zip(d_scores) {
            crate::numerics::axpy(ds, query, self.item_embeddings.grad.row_mut(c as usize));
        }
        d_query
    }

    /// Gradient of the query only, leaving backbone grads untouched.
    pub fn score_query_grad(&self, candidates: &[u32], d_scores: &[f64]) -> Vec<f64> {
        let mut d_query = vec![0.0; self.spec.embed_dim];
        for (&c, &ds) in candidates.iter().zip(d_scores) {
            crate::numerics::axpy(ds, self.embedding(c), &mut d_query);
        }
        d_query
    }
}

impl Params for Backbone {
    fn visit_params(&self, f: &mut dyn FnMut(&ParamTensor)) {
        f(&self.item_embeddings);
        if let Some(cell) = &self.cell {
            cell.visit_params(f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut ParamTensor)) {
        f(&mut self.item_embeddings);
        if let Some(cell) = &mut self.cell {
            cell.visit_params_mut(f);
        }
    }
}
