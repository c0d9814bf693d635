use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Matrix;
use crate::error::{Error, Result};

/// A named trainable tensor together with its accumulated gradient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }
}

/// Anything that owns a fixed, ordered collection of parameter tensors.
///
/// Visit order must be stable: optimizers key their moment buffers on it
/// and checkpoints serialize in it.
pub trait Params {
    fn visit_params(&self, f: &mut dyn FnMut(&ParamTensor));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut ParamTensor));

    fn zero_grads(&mut self) {
        self.visit_params_mut(&mut |p| p.zero_grad());
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.value.len());
        n
    }

    /// Content hash over names, shapes and the exact bit patterns of values.
    fn checksum(&self) -> String {
        let mut h = Sha256::new();
        self.visit_params(&mut |p| hash_tensor(&mut h, p));
        hex(&h.finalize())
    }
}

impl Params for ParamTensor {
    fn visit_params(&self, f: &mut dyn FnMut(&ParamTensor)) {
        f(self)
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut ParamTensor)) {
        f(self)
    }
}

impl Params for [ParamTensor] {
    fn visit_params(&self, f: &mut dyn FnMut(&ParamTensor)) {
        self.iter().for_each(f)
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut ParamTensor)) {
        self.iter_mut().for_each(f)
    }
}

impl Params for Vec<ParamTensor> {
    fn visit_params(&self, f: &mut dyn FnMut(&ParamTensor)) {
        self.as_slice().visit_params(f)
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut ParamTensor)) {
        self.as_mut_slice().visit_params_mut(f)
    }
}

fn hash_tensor(h: &mut Sha256, p: &ParamTensor) {
    h.update(p.name.as_bytes());
    h.update((p.value.rows() as u64).to_le_bytes());
    h.update((p.value.cols() as u64).to_le_bytes());
    for v in p.value.data() {
        h.update(v.to_bits().to_le_bytes());
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Checksum over several parameter groups, in order.
pub fn checksum_params(groups: &[&dyn Params]) -> String {
    let mut h = Sha256::new();
    for g in groups {
        g.visit_params(&mut |p| hash_tensor(&mut h, p));
    }
    hex(&h.finalize())
}

/// Records per-tensor hashes of parameters a training phase must not touch,
/// and reports any tensor whose content changed.
#[derive(Debug, Default, Clone)]
pub struct FreezeLedger {
    frozen: BTreeMap<String, String>,
}

impl FreezeLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Freezes every tensor of `params` under `scope`.
    pub fn freeze(&mut self, scope: &str, params: &dyn Params) {
        params.visit_params(&mut |p| {
            let mut h = Sha256::new();
            hash_tensor(&mut h, p);
            self.frozen
                .insert(format!("{scope}/{}", p.name), hex(&h.finalize()));
        });
    }

    /// Fails with the names of every frozen tensor under `scope` whose
    /// content differs from the snapshot.
    pub fn verify(&self, scope: &str, params: &dyn Params) -> Result<()> {
        let mut violations = Vec::new();
        params.visit_params(&mut |p| {
            let key = format!("{scope}/{}", p.name);
            if let Some(expected) = self.frozen.get(&key) {
                let mut h = Sha256::new();
                hash_tensor(&mut h, p);
                if &hex(&h.finalize()) != expected {
                    violations.push(key);
                }
            }
        });
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Lifecycle(format!(
                "frozen parameters mutated: {}",
                violations.join(", ")
            )))
        }
    }

    pub fn len(&self) -> usize {
        self.frozen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frozen.is_empty()
    }
}
