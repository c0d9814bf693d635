use super::Params;
use crate::error::{Error, Result};

/// Compares the analytic gradient written by `loss_and_grad` against central
/// differences over every parameter entry.
///
/// `loss_and_grad` must return the loss and accumulate gradients into the
/// model's `grad` buffers; grads are zeroed before every call. Returns the
/// maximum of `|analytic - numeric| / max(1, |analytic|)`.
pub fn grad_check<M, F>(model: &mut M, epsilon: f64, mut loss_and_grad: F) -> Result<f64>
where
    M: Params + ?Sized,
    F: FnMut(&mut M) -> Result<f64>,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::InvalidInput(format!(
            "epsilon {epsilon} outside [1e-7, 1e-3]"
        )));
    }
    model.zero_grads();
    let base = loss_and_grad(model)?;
    if !base.is_finite() {
        return Err(Error::Numeric(format!("loss is {base}")));
    }
    let mut analytic = Vec::new();
    model.visit_params(&mut |p| analytic.push(p.grad.data().to_vec()));

    let mut worst = 0.0f64;
    for (t, grads) in analytic.iter().enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            let original = entry(model, t, j);
            set_entry(model, t, j, original + epsilon);
            model.zero_grads();
            let plus = loss_and_grad(model)?;
            set_entry(model, t, j, original - epsilon);
            model.zero_grads();
            let minus = loss_and_grad(model)?;
            set_entry(model, t, j, original);
            if !(plus.is_finite() && minus.is_finite()) {
                return Err(Error::Numeric("non-finite loss under perturbation".into()));
            }
            let numeric = (plus - minus) / (2.0 * epsilon);
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    model.zero_grads();
    loss_and_grad(model)?;
    Ok(worst)
}

fn entry<M: Params + ?Sized>(model: &M, tensor: usize, j: usize) -> f64 {
    let mut i = 0;
    let mut out = 0.0;
    model.visit_params(&mut |p| {
        if i == tensor {
            out = p.value.data()[j];
        }
        i += 1;
    });
    out
}

fn set_entry<M: Params + ?Sized>(model: &mut M, tensor: usize, j: usize, v: f64) {
    let mut i = 0;
    model.visit_params_mut(&mut |p| {
        if i == tensor {
            p.value.data_mut()[j] = v;
        }
        i += 1;
    });
}

/// Central-difference gradient of a scalar function of a flat vector.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], epsilon: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + epsilon;
            let plus = f(&probe);
            probe[i] = x[i] - epsilon;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * epsilon)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Matrix, ParamTensor};

    #[test]
    fn quadratic() {
        let mut p = vec![ParamTensor::new("w", Matrix::filled(1, 1, 3.0))];
        let err = grad_check(&mut p, 1e-5, |p| {
            let w = p[0].value.get(0, 0);
            p[0].grad.set(0, 0, 2.0 * w);
            Ok(w * w)
        })
        .unwrap();
        assert!(err < 1e-8, "{err}");
        assert_eq!(p[0].grad.get(0, 0), 6.0);
    }

    #[test]
    fn linear_sum() {
        let mut p = vec![ParamTensor::new(
            "w",
            Matrix::from_vec(2, 3, vec![0.1, -4.0, 2.5, 7.0, 0.0, -0.3]).unwrap(),
        )];
        // Central differences are exact for a linear map; a wide step keeps
        // cancellation error below the bound.
        let err = grad_check(&mut p, 1e-3, |p| {
            p[0].grad.fill(1.0);
            Ok(p[0].value.data().iter().sum())
        })
        .unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let mut p = vec![ParamTensor::new("w", Matrix::filled(1, 1, 3.0))];
        let err = grad_check(&mut p, 1e-5, |p| {
            let w = p[0].value.get(0, 0);
            p[0].grad.set(0, 0, w);
            Ok(w * w)
        })
        .unwrap();
        assert!(err > 0.4);
    }

    #[test]
    fn epsilon_range_and_non_finite_loss() {
        let mut p = vec![ParamTensor::new("w", Matrix::filled(1, 1, 1.0))];
        assert!(grad_check(&mut p, 1e-2, |_| Ok(0.0)).is_err());
        assert!(matches!(
            grad_check(&mut p, 1e-5, |_| Ok(f64::NAN)),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn numeric_gradient_of_product() {
        let g = numeric_gradient(|x| x[0] * x[1], &[2.0, 5.0], 1e-6);
        assert!((g[0] - 5.0).abs() < 1e-8 && (g[1] - 2.0).abs() < 1e-8);
    }
}
