use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numerics::{sigmoid, xavier_init_with, Matrix, ParamTensor, Params};

/// Minimal gated recurrent cell:
///
/// ```text
/// z  = sigmoid(Wz x + Uz h + bz)
/// c  = tanh(Wc x + Uc h + bc)
/// h' = (1 - z) * h + z * c
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatedCell {
    pub w_gate: ParamTensor,
    pub u_gate: ParamTensor,
    pub b_gate: ParamTensor,
    pub w_cand: ParamTensor,
    pub u_cand: ParamTensor,
    pub b_cand: ParamTensor,
}

/// Values kept from one forward step for the backward pass.
#[derive(Clone, Debug)]
pub struct GatedStep {
    pub input: Vec<f64>,
    pub prev: Vec<f64>,
    pub gate: Vec<f64>,
    pub cand: Vec<f64>,
    pub out: Vec<f64>,
}

impl GatedCell {
    pub fn new(prefix: &str, input_dim: usize, state_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            w_gate: ParamTensor::new(format!("{prefix}.w_gate"), xavier_init_with(state_dim, input_dim, rng)?),
            u_gate: ParamTensor::new(format!("{prefix}.u_gate"), xavier_init_with(state_dim, state_dim, rng)?),
            b_gate: ParamTensor::new(format!("{prefix}.b_gate"), Matrix::zeros(1, state_dim)),
            w_cand: ParamTensor::new(format!("{prefix}.w_cand"), xavier_init_with(state_dim, input_dim, rng)?),
            u_cand: ParamTensor::new(format!("{prefix}.u_cand"), xavier_init_with(state_dim, state_dim, rng)?),
            b_cand: ParamTensor::new(format!("{prefix}.b_cand"), Matrix::zeros(1, state_dim)),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.u_gate.value.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_gate.value.cols()
    }

    pub fn step(&self, prev: &[f64], input: &[f64]) -> GatedStep {
        let zx = self.w_gate.value.matvec(input);
        let zh = self.u_gate.value.matvec(prev);
        let cx = self.w_cand.value.matvec(input);
        let ch = self.u_cand.value.matvec(prev);
        let n = self.state_dim();
        let mut gate = vec![0.0; n];
        let mut cand = vec![0.0; n];
        let mut out = vec![0.0; n];
        for i in 0..n {
            gate[i] = sigmoid(zx[i] + zh[i] + self.b_gate.value.data()[i]);
            cand[i] = (cx[i] + ch[i] + self.b_cand.value.data()[i]).tanh();
            out[i] = (1.0 - gate[i]) * prev[i] + gate[i] * cand[i];
        }
        GatedStep {
            input: input.to_vec(),
            prev: prev.to_vec(),
            gate,
            cand,
            out,
        }
    }

    /// Backward through one step. Accumulates parameter gradients and
    /// returns `(d_prev, d_input)`.
    pub fn backward(&mut self, step: &GatedStep, d_out: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.state_dim();
        let mut d_prev = vec![0.0; n];
        let mut d_pre_gate = vec![0.0; n];
        let mut d_pre_cand = vec![0.0; n];
        for i in 0..n {
            let z = step.gate[i];
            let c = step.cand[i];
            d_prev[i] = d_out[i] * (1.0 - z);
            d_pre_gate[i] = d_out[i] * (c - step.prev[i]) * z * (1.0 - z);
            d_pre_cand[i] = d_out[i] * z * (1.0 - c * c);
        }
        self.w_gate.grad.add_outer(&d_pre_gate, &step.input, 1.0);
        self.u_gate.grad.add_outer(&d_pre_gate, &step.prev, 1.0);
        self.w_cand.grad.add_outer(&d_pre_cand, &step.input, 1.0);
        self.u_cand.grad.add_outer(&d_pre_cand, &step.prev, 1.0);
        for i in 0..n {
            self.b_gate.grad.data_mut()[i] += d_pre_gate[i];
            self.b_cand.grad.data_mut()[i] += d_pre_cand[i];
        }
        let mut d_input = self.w_gate.value.vecmat(&d_pre_gate);
        crate::numerics::axpy(1.0, &self.w_cand.value.vecmat(&d_pre_cand), &mut d_input);
        crate::numerics::axpy(1.0, &self.u_gate.value.vecmat(&d_pre_gate), &mut d_prev);
        crate::numerics::axpy(1.0, &self.u_cand.value.vecmat(&d_pre_cand), &mut d_prev);
        (d_prev, d_input)
    }
}

impl Params for GatedCell {
    fn visit_params(&self, f: &mut dyn FnMut(&ParamTensor)) {
        f(&self.w_gate);
        f(&self.u_gate);
        f(&self.b_gate);
        f(&self.w_cand);
        f(&self.u_cand);
        f(&self.b_cand);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut ParamTensor)) {
        f(&mut self.w_gate);
        f(&mut self.u_gate);
        f(&mut self.b_gate);
        f(&mut self.w_cand);
        f(&mut self.u_cand);
        f(&mut self.b_cand);
    }
}
