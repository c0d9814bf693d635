use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EditSet;
use crate::error::{Error, Result};
use crate::model::{GatedCell, GatedStep};
use crate::numerics::{axpy, clamp_backward, clamp_with_subgradient, rng_from_seed, xavier_init_with, Matrix, ParamTensor, Params};

/// Sizes of the editor network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditorSpec {
    pub vocab_size: usize,
    /// Encoder item-embedding width.
    pub embed_dim: usize,
    /// Encoder perceptron hidden width.
    pub hidden_dim: usize,
    /// Shared embedding / context width `d_e`.
    pub context_dim: usize,
    /// `(N_in, N_out)` of every adaptive layer, in order.
    pub layer_shapes: Vec<(usize, usize)>,
    pub clkt: bool,
    pub threshold: f64,
}

impl EditorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.embed_dim == 0 || self.hidden_dim == 0 || self.context_dim == 0 {
            return Err(Error::Config("editor dims must be >= 1".into()));
        }
        if self.layer_shapes.is_empty() || self.layer_shapes.iter().any(|&(r, c)| r == 0 || c == 0) {
            return Err(Error::Config("editor needs at least one non-empty layer shape".into()));
        }
        if self.threshold.is_nan() || self.threshold <= 0.0 {
            return Err(Error::Config(format!("threshold must be > 0, got {}", self.threshold)));
        }
        Ok(())
    }
}

/// An affine map `y = W x + b` stored as `(out x in)` weight and `(1 x out)` bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamTensor,
    pub bias: ParamTensor,
}

impl Linear {
    fn new(name: &str, input: usize, output: usize, scale: f64, rng: &mut impl Rng) -> Result<Self> {
        let mut w = xavier_init_with(output, input, rng)?;
        w.scale(scale);
        Ok(Self {
            weight: ParamTensor::new(format!("{name}.weight"), w),
            bias: ParamTensor::new(format!("{name}.bias"), Matrix::zeros(1, output)),
        })
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weight.value.matvec(x);
        axpy(1.0, self.bias.value.data(), &mut y);
        y
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    fn backward(&mut self, x: &[f64], d_y: &[f64]) -> Vec<f64> {
        self.weight.grad.add_outer(d_y, x, 1.0);
        axpy(1.0, d_y, self.bias.grad.data_mut());
        self.weight.value.vecmat(d_y)
    }

    fn visit(&self, f: &mut dyn FnMut(&ParamTensor)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut ParamTensor)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Cloud-side parameter editor.
///
/// A window of item ids is mean-pooled through the encoder's own item
/// embeddings and a two-layer perceptron into a shared embedding `e`. Each
/// adaptive layer `n` gets a context `e^n = A_n(s_n)` where `s_n = e` without
/// cross-layer transfer, or the state of a gated chain run over the layer
/// index (`s_0 = 0`, `s_n = cell(s_{n-1}, e)`) with it. A linear head maps
/// `e^n` to `N_in * N_out` values which are reshaped row-major and clamped to
/// `[-T, T]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EditorNetwork {
    pub spec: EditorSpec,
    pub item_embeddings: ParamTensor,
    pub encoder_hidden: Linear,
    pub encoder_out: Linear,
    pub transition: GatedCell,
    pub adapters: Vec<Linear>,
    pub heads: Vec<Linear>,
    /// Set once the editor has been trained against a prototype.
    pub trained: bool,
}

/// Forward intermediates for [`EditorNetwork::backward`].
#[derive(Clone, Debug)]
pub struct EditorTrace {
    items: Vec<u32>,
    pooled: Vec<f64>,
    hidden: Vec<f64>,
    embedding: Vec<f64>,
    chain: Vec<GatedStep>,
    adapter_inputs: Vec<Vec<f64>>,
    contexts: Vec<Vec<f64>>,
    pass: Vec<Vec<bool>>,
}

const HEAD_INIT_SCALE: f64 = 0.1;

impl EditorNetwork {
    pub fn new(spec: EditorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng_from_seed(seed);
        let mut emb = xavier_init_with(spec.vocab_size, spec.embed_dim, &mut rng)?;
        let bound = (6.0 / (spec.vocab_size + spec.embed_dim) as f64).sqrt();
        emb.scale((1.0 / spec.embed_dim as f64).sqrt() / bound);
        let d = spec.context_dim;
        let encoder_hidden = Linear::new("editor.encoder.hidden", spec.embed_dim, spec.hidden_dim, 1.0, &mut rng)?;
        let encoder_out = Linear::new("editor.encoder.out", spec.hidden_dim, d, 1.0, &mut rng)?;
        let transition = GatedCell::new("editor.clkt", d, d, &mut rng)?;
        let adapters = (0..spec.layer_shapes.len())
            .map(|n| Linear::new(&format!("editor.adapter{n}"), d, d, 1.0, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let heads = spec
            .layer_shapes
            .iter()
            .enumerate()
            .map(|(n, &(r, c))| Linear::new(&format!("editor.head{n}"), d, r * c, HEAD_INIT_SCALE, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            item_embeddings: ParamTensor::new("editor.item_embeddings", emb),
            encoder_hidden,
            encoder_out,
            transition,
            adapters,
            heads,
            spec,
            trained: false,
        })
    }

    pub fn threshold(&self) -> f64 {
        self.spec.threshold
    }

    pub fn clkt_enabled(&self) -> bool {
        self.spec.clkt
    }

    pub fn layer_count(&self) -> usize {
        self.spec.layer_shapes.len()
    }

    pub fn set_threshold(&mut self, threshold: f64) -> Result<()> {
        if threshold.is_nan() || threshold <= 0.0 {
            return Err(Error::Config(format!("threshold must be > 0, got {threshold}")));
        }
        self.spec.threshold = threshold;
        Ok(())
    }

    fn check_items(&self, batch: &[u32]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        if let Some(&bad) = batch.iter().find(|&&i| i as usize >= self.spec.vocab_size) {
            return Err(Error::Data(format!("item id {bad} outside editor vocabulary")));
        }
        Ok(())
    }

    fn pool(&self, batch: &[u32]) -> Vec<f64> {
        let mut m = vec![0.0; self.spec.embed_dim];
        for &i in batch {
            axpy(1.0, self.item_embeddings.value.row(i as usize), &mut m);
        }
        let inv = 1.0 / batch.len() as f64;
        m.iter_mut().for_each(|v| *v *= inv);
        m
    }

    /// Shared embedding `e` of a real-time window.
    pub fn encode_batch(&self, batch: &[u32]) -> Result<Vec<f64>> {
        self.check_items(batch)?;
        let pooled = self.pool(batch);
        let hidden: Vec<f64> = self.encoder_hidden.forward(&pooled).into_iter().map(f64::tanh).collect();
        Ok(self.encoder_out.forward(&hidden))
    }

    /// Per-layer contexts `e^1..e^{N_l}` derived from `e`.
    pub fn layer_contexts(&self, embedding: &[f64]) -> Vec<Vec<f64>> {
        self.contexts_traced(embedding).0
    }

    fn contexts_traced(&self, embedding: &[f64]) -> (Vec<Vec<f64>>, Vec<GatedStep>, Vec<Vec<f64>>) {
        let n_layers = self.layer_count();
        let mut chain = Vec::new();
        let mut inputs = Vec::with_capacity(n_layers);
        if self.spec.clkt {
            let mut state = vec![0.0; self.spec.context_dim];
            for _ in 0..n_layers {
                let step = self.transition.step(&state, embedding);
                state = step.out.clone();
                inputs.push(step.out.clone());
                chain.push(step);
            }
        } else {
            inputs = vec![embedding.to_vec(); n_layers];
        }
        let contexts = self.adapters.iter().zip(&inputs).map(|(a, x)| a.forward(x)).collect();
        (contexts, chain, inputs)
    }

    fn check_target(&self, target: &[(usize, usize)]) -> Result<()> {
        if target != self.spec.layer_shapes.as_slice() {
            return Err(Error::Config(format!(
                "editor heads built for {:?}, target layers are {:?}",
                self.spec.layer_shapes, target
            )));
        }
        Ok(())
    }

    /// Clipped per-layer edit for `batch` against adaptive layers of shape `target`.
    pub fn generate_edit(&self, batch: &[u32], target: &[(usize, usize)]) -> Result<EditSet> {
        self.check_target(target)?;
        Ok(self.generate_edit_traced(batch)?.0)
    }

    pub fn generate_edit_traced(&self, batch: &[u32]) -> Result<(EditSet, EditorTrace)> {
        self.check_items(batch)?;
        let pooled = self.pool(batch);
        let hidden: Vec<f64> = self.encoder_hidden.forward(&pooled).into_iter().map(f64::tanh).collect();
        let embedding = self.encoder_out.forward(&hidden);
        let (contexts, chain, adapter_inputs) = self.contexts_traced(&embedding);
        let mut deltas = Vec::with_capacity(self.layer_count());
        let mut pass = Vec::with_capacity(self.layer_count());
        for ((head, ctx), &(r, c)) in self.heads.iter().zip(&contexts).zip(&self.spec.layer_shapes) {
            let raw = Matrix::from_vec(r, c, head.forward(ctx))
                .map_err(|e| Error::Numeric(format!("editor head produced invalid output: {e}")))?;
            let clamped = clamp_with_subgradient(&raw, self.spec.threshold);
            deltas.push(clamped.value);
            pass.push(clamped.pass);
        }
        let edit = EditSet {
            deltas,
            source_group: None,
            threshold_used: self.spec.threshold,
        };
        let trace = EditorTrace {
            items: batch.to_vec(),
            pooled,
            hidden,
            embedding,
            chain,
            adapter_inputs,
            contexts,
            pass,
        };
        Ok((edit, trace))
    }

    /// Backpropagates `dL/d delta_n` (gradients with respect to the clamped
    /// deltas) into every editor parameter.
    pub fn backward(&mut self, trace: &EditorTrace, d_deltas: &[Matrix]) {
        let d = self.spec.context_dim;
        let n_layers = self.layer_count();
        let mut d_inputs = vec![vec![0.0; d]; n_layers];
        for n in 0..n_layers {
            let d_raw = clamp_backward(&d_deltas[n], &trace.pass[n]);
            let d_ctx = self.heads[n].backward(&trace.contexts[n], d_raw.data());
            d_inputs[n] = self.adapters[n].backward(&trace.adapter_inputs[n], &d_ctx);
        }
        let mut d_embedding = vec![0.0; d];
        if self.spec.clkt {
            let mut d_state = vec![0.0; d];
            for n in (0..n_layers).rev() {
                axpy(1.0, &d_inputs[n], &mut d_state);
                let (d_prev, d_in) = self.transition.backward(&trace.chain[n], &d_state);
                axpy(1.0, &d_in, &mut d_embedding);
                d_state = d_prev;
            }
        } else {
            for d_in in &d_inputs {
                axpy(1.0, d_in, &mut d_embedding);
            }
        }
        let d_hidden = self.encoder_out.backward(&trace.hidden, &d_embedding);
        let d_pre: Vec<f64> = d_hidden.iter().zip(&trace.hidden).map(|(g, h)| g * (1.0 - h * h)).collect();
        let d_pooled = self.encoder_hidden.backward(&trace.pooled, &d_pre);
        let inv = 1.0 / trace.items.len() as f64;
        for &i in &trace.items {
            axpy(inv, &d_pooled, self.item_embeddings.grad.row_mut(i as usize));
        }
    }
}

impl EditorTrace {
    pub fn embedding(&self) -> &[f64] {
        &self.embedding
    }

    pub fn contexts(&self) -> &[Vec<f64>] {
        &self.contexts
    }
}

impl Params for EditorNetwork {
    fn visit_params(&self, f: &mut dyn FnMut(&ParamTensor)) {
        f(&self.item_embeddings);
        self.encoder_hidden.visit(f);
        self.encoder_out.visit(f);
        self.transition.visit_params(f);
        self.adapters.iter().for_each(|a| a.visit(f));
        self.heads.iter().for_each(|h| h.visit(f));
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut ParamTensor)) {
        f(&mut self.item_embeddings);
        self.encoder_hidden.visit_mut(f);
        self.encoder_out.visit_mut(f);
        self.transition.visit_params_mut(f);
        self.adapters.iter_mut().for_each(|a| a.visit_mut(f));
        self.heads.iter_mut().for_each(|h| h.visit_mut(f));
    }
}
