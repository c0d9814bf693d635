use std::collections::HashMap;

use crate::error::{Error, Result};

fn pairs(n: usize) -> f64 {
    (n as f64) * (n as f64 - 1.0) / 2.0
}

struct Contingency {
    n: usize,
    cells: f64,
    rows: f64,
    cols: f64,
}

fn contingency(a: &[usize], b: &[usize]) -> Result<Contingency> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput("labelings differ in length".into()));
    }
    let mut cell: HashMap<(usize, usize), usize> = HashMap::new();
    let mut ra: HashMap<usize, usize> = HashMap::new();
    let mut rb: HashMap<usize, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *cell.entry((x, y)).or_default() += 1;
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
    }
    let sum = |m: &mut dyn Iterator<Item = usize>| m.map(pairs).sum::<f64>();
    Ok(Contingency {
        n: a.len(),
        cells: sum(&mut cell.into_values()),
        rows: sum(&mut ra.into_values()),
        cols: sum(&mut rb.into_values()),
    })
}

/// Fraction of sample pairs on which two labelings agree about being in
/// the same group.
pub fn rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    let c = contingency(a, b)?;
    let total = pairs(c.n);
    if total == 0.0 {
        return Ok(1.0);
    }
    Ok((total + 2.0 * c.cells - c.rows - c.cols) / total)
}

/// Rand index corrected for chance (Hubert and Arabie).
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    let c = contingency(a, b)?;
    let total = pairs(c.n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = c.rows * c.cols / total;
    let max = 0.5 * (c.rows + c.cols);
    if max == expected {
        return Ok(1.0);
    }
    Ok((c.cells - expected) / (max - expected))
}
