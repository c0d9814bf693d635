use super::Matrix;

/// Result of a forward clamp: the bounded values plus the pass-through mask
/// needed for the backward pass.
#[derive(Clone, Debug)]
pub struct Clamped {
    pub value: Matrix,
    /// `true` where `|x| < bound`, i.e. where the gradient passes through.
    pub pass: Vec<bool>,
}

/// Elementwise clamp into `[-bound, bound]`.
pub fn clamp(x: &Matrix, bound: f64) -> Matrix {
    x.map(|v| v.clamp(-bound, bound))
}

/// Clamp with the straight-through subgradient mask: 1 strictly inside the
/// bound, 0 on or beyond it.
pub fn clamp_with_subgradient(x: &Matrix, bound: f64) -> Clamped {
    let pass = x.data().iter().map(|v| v.abs() < bound).collect();
    Clamped {
        value: clamp(x, bound),
        pass,
    }
}

/// Propagates an upstream gradient through a clamp.
pub fn clamp_backward(upstream: &Matrix, pass: &[bool]) -> Matrix {
    debug_assert_eq!(upstream.len(), pass.len());
    let mut g = upstream.clone();
    for (v, &p) in g.data_mut().iter_mut().zip(pass) {
        if !p {
            *v = 0.0;
        }
    }
    g
}
