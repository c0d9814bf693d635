use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{xavier_init_with, Matrix, ParamTensor, Params};

/// The swappable layers of the device model. Layer `n` is an
/// `N_in x N_out` weight matrix applied as `a_n = a_{n-1}^T K_n`, with ReLU
/// between layers and none after the last. No biases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveLayerSet {
    layers: Vec<Matrix>,
}

/// Intermediate activations of one adaptive forward pass.
#[derive(Clone, Debug)]
pub struct AdaptiveTrace {
    /// Input to each layer (`a_{n-1}`).
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each layer.
    pub pre: Vec<Vec<f64>>,
}

impl AdaptiveLayerSet {
    pub fn new(layers: Vec<Matrix>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidShape("adaptive set needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].cols() != pair[1].rows() {
                return Err(Error::InvalidShape(format!(
                    "layer output {} does not feed next input {}",
                    pair[0].cols(),
                    pair[1].rows()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Xavier-initialized chain through `widths` (`widths[0]` is the input
    /// dimension, the last entry the output dimension).
    pub fn init(widths: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidShape("need at least input and output width".into()));
        }
        let layers = widths
            .windows(2)
            .map(|w| xavier_init_with(w[0], w[1], rng))
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(Matrix::shape).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].cols()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Matrix::len).sum()
    }

    pub fn same_shapes(&self, other: &AdaptiveLayerSet) -> bool {
        self.shapes() == other.shapes()
    }

    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        Ok(adaptive_forward_traced(&self.layers, features)?.0)
    }

    pub fn into_layers(self) -> Vec<Matrix> {
        self.layers
    }

    /// Trainable view: one [`ParamTensor`] per layer.
    pub fn to_params(&self, prefix: &str) -> Vec<ParamTensor> {
        self.layers
            .iter()
            .enumerate()
            .map(|(i, m)| ParamTensor::new(format!("{prefix}.layer{i}"), m.clone()))
            .collect()
    }

    pub fn from_params(params: &[ParamTensor]) -> Result<Self> {
        Self::new(params.iter().map(|p| p.value.clone()).collect())
    }

    pub fn checksum(&self) -> String {
        self.to_params("adaptive").checksum()
    }
}

/// Chained affine layers with ReLU between them.
pub fn adaptive_forward_traced(layers: &[Matrix], features: &[f64]) -> Result<(Vec<f64>, AdaptiveTrace)> {
    let first = layers
        .first()
        .ok_or_else(|| Error::InvalidShape("no adaptive layers".into()))?;
    if features.len() != first.rows() {
        return Err(Error::InvalidShape(format!(
            "feature length {} != first layer input {}",
            features.len(),
            first.rows()
        )));
    }
    let mut inputs = Vec::with_capacity(layers.len());
    let mut pre = Vec::with_capacity(layers.len());
    let mut a = features.to_vec();
    for (n, k) in layers.iter().enumerate() {
        if a.len() != k.rows() {
            return Err(Error::InvalidShape(format!("layer {n} expects {} inputs, got {}", k.rows(), a.len())));
        }
        let s = k.vecmat(&a);
        inputs.push(a);
        a = if n + 1 < layers.len() {
            s.iter().map(|v| v.max(0.0)).collect()
        } else {
            s.clone()
        };
        pre.push(s);
    }
    Ok((a, AdaptiveTrace { inputs, pre }))
}

/// Backward through [`adaptive_forward_traced`]. Adds `dL/dK_n` into
/// `layer_grads` and returns `dL/d features`.
pub fn adaptive_backward(layers: &[Matrix], trace: &AdaptiveTrace, d_out: &[f64], layer_grads: &mut [Matrix]) -> Vec<f64> {
    let mut d_s = d_out.to_vec();
    for n in (0..layers.len()).rev() {
        layer_grads[n].add_outer(&trace.inputs[n], &d_s, 1.0);
        let mut d_a = layers[n].matvec(&d_s);
        if n > 0 {
            for (g, &s) in d_a.iter_mut().zip(&trace.pre[n - 1]) {
                if s <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        d_s = d_a;
    }
    d_s
}
