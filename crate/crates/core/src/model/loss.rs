use crate::error::{Error, Result};
use crate::numerics::log_sum_exp;

/// Softmax cross-entropy of `logits` against the `target` index.
pub fn loss_ce(logits: &[f64], target: usize) -> Result<f64> {
    Ok(loss_ce_with_grad(logits, target)?.0)
}

/// Cross-entropy and its gradient `softmax(logits) - onehot(target)`.
pub fn loss_ce_with_grad(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if logits.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 candidates, got {}",
            logits.len()
        )));
    }
    if target >= logits.len() {
        return Err(Error::InvalidInput(format!(
            "target {target} out of range for {} candidates",
            logits.len()
        )));
    }
    let lse = log_sum_exp(logits);
    if !lse.is_finite() {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    let loss = (lse - logits[target]).max(0.0);
    let mut grad: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();
    grad[target] -= 1.0;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_c() {
        let l = loss_ce(&[0.3; 4], 2).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert!((l - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn saturated_target_is_near_zero() {
        let l = loss_ce(&[50.0, 0.0, 0.0], 0).unwrap();
        assert!((0.0..1e-20).contains(&l));
    }

    #[test]
    fn hand_computed_two_way_softmax() {
        let l = loss_ce(&[1.0, 0.0], 0).unwrap();
        let e = std::f64::consts::E;
        assert!((l + (e / (e + 1.0)).ln()).abs() < 1e-15);
        assert!((l - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn gradient_sums_to_zero() {
        let (_, g) = loss_ce_with_grad(&[0.2, -1.0, 3.0], 1).unwrap();
        assert!(g.iter().sum::<f64>().abs() < 1e-15);
        assert!(g[1] < 0.0);
    }

    #[test]
    fn rejects_bad_target_and_single_candidate() {
        assert!(matches!(loss_ce(&[1.0, 2.0], 2), Err(Error::InvalidInput(_))));
        assert!(matches!(loss_ce(&[1.0], 0), Err(Error::InvalidInput(_))));
    }
}
