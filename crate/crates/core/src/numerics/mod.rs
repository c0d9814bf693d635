//! Dense 64-bit numeric core: matrices, trainable parameters, optimizers,
//! the straight-through clamp and a central-difference gradient checker.

mod clamp;
mod gradcheck;
mod init;
mod matrix;
mod optim;
mod param;

pub use clamp::{clamp, clamp_backward, clamp_with_subgradient, Clamped};
pub use gradcheck::{grad_check, numeric_gradient};
pub use init::{rng_from_seed, xavier_init, xavier_init_with};
pub use matrix::Matrix;
pub use optim::{OptimizerKind, OptimizerState};
pub use param::{checksum_params, FreezeLedger, ParamTensor, Params};

/// Numerically stable `log(sum(exp(x)))`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_matches_naive_for_small_values() {
        let xs = [0.5, -1.0, 2.0];
        let naive = xs.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - naive).abs() < 1e-14);
    }

    #[test]
    fn log_sum_exp_is_stable_for_large_values() {
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn sigmoid_is_symmetric() {
        for x in [-30.0, -2.0, 0.0, 0.7, 40.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
        }
    }
}
