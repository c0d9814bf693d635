use serde::{Deserialize, Serialize};

use super::{Matrix, Params};
use crate::error::{Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Optimizer over one fixed parameter collection.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    kind: OptimizerKind,
    learning_rate: f64,
    first_moment: Vec<Matrix>,
    second_moment: Vec<Matrix>,
    step_count: u64,
}

impl OptimizerState {
    /// Creates the optimizer, allocating Adam moments shaped like `params`.
    pub fn new(kind: OptimizerKind, learning_rate: f64, params: &dyn Params) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        let mut first_moment = Vec::new();
        let mut second_moment = Vec::new();
        if kind == OptimizerKind::Adam {
            params.visit_params(&mut |p| {
                let (r, c) = p.shape();
                first_moment.push(Matrix::zeros(r, c));
                second_moment.push(Matrix::zeros(r, c));
            });
        }
        Ok(Self {
            kind,
            learning_rate,
            first_moment,
            second_moment,
            step_count: 0,
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn has_moments(&self) -> bool {
        !self.first_moment.is_empty()
    }

    /// Applies one update from the gradients currently stored in `params`.
    /// Gradients are left as they are.
    pub fn step(&mut self, params: &mut dyn Params) -> Result<()> {
        let mut shape_error = None;
        let mut index = 0usize;
        params.visit_params(&mut |p| {
            if p.value.shape() != p.grad.shape() && shape_error.is_none() {
                shape_error = Some(format!("{}: value {:?} vs grad {:?}", p.name, p.value.shape(), p.grad.shape()));
            }
            index += 1;
        });
        if let Some(msg) = shape_error {
            return Err(Error::InvalidShape(msg));
        }
        if self.kind == OptimizerKind::Adam && index != self.first_moment.len() {
            return Err(Error::InvalidShape(format!(
                "optimizer built for {} tensors, got {index}",
                self.first_moment.len()
            )));
        }

        self.step_count += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => params.visit_params_mut(&mut |p| {
                let g = p.grad.data().to_vec();
                for (v, g) in p.value.data_mut().iter_mut().zip(g) {
                    *v -= lr * g;
                }
            }),
            OptimizerKind::Adam => {
                let t = self.step_count as i32;
                let bias1 = 1.0 - BETA1.powi(t);
                let bias2 = 1.0 - BETA2.powi(t);
                let mut i = 0;
                let (m_all, v_all) = (&mut self.first_moment, &mut self.second_moment);
                let mut mismatch = None;
                params.visit_params_mut(&mut |p| {
                    let m = &mut m_all[i];
                    let v = &mut v_all[i];
                    i += 1;
                    if m.shape() != p.value.shape() {
                        mismatch.get_or_insert_with(|| p.name.clone());
                        return;
                    }
                    let grads = p.grad.data();
                    let values = p.value.data_mut();
                    for (((w, &g), mi), vi) in values
                        .iter_mut()
                        .zip(grads)
                        .zip(m.data_mut().iter_mut())
                        .zip(v.data_mut().iter_mut())
                    {
                        *mi = BETA1 * *mi + (1.0 - BETA1) * g;
                        *vi = BETA2 * *vi + (1.0 - BETA2) * g * g;
                        let m_hat = *mi / bias1;
                        let v_hat = *vi / bias2;
                        *w -= lr * m_hat / (v_hat.sqrt() + EPS);
                    }
                });
                if let Some(name) = mismatch {
                    return Err(Error::InvalidShape(format!("moment buffer shape mismatch for {name}")));
                }
            }
        }
        Ok(())
    }
}
