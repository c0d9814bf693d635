use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Matrix;
use crate::error::{Error, Result};

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Glorot-uniform matrix: entries uniform in `±sqrt(6 / (rows + cols))`.
pub fn xavier_init(rows: usize, cols: usize, rng_seed: u64) -> Result<Matrix> {
    xavier_init_with(rows, cols, &mut rng_from_seed(rng_seed))
}

pub fn xavier_init_with(rows: usize, cols: usize, rng: &mut impl Rng) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidShape(format!(
            "xavier init needs non-zero dims, got {rows}x{cols}"
        )));
    }
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_entry_within_sqrt3() {
        let m = xavier_init(1, 1, 7).unwrap();
        assert!(m.get(0, 0).abs() <= 3f64.sqrt());
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        assert_eq!(xavier_init(4, 4, 7).unwrap(), xavier_init(4, 4, 7).unwrap());
        assert_ne!(xavier_init(4, 4, 7).unwrap(), xavier_init(4, 4, 8).unwrap());
    }

    #[test]
    fn eight_by_two_within_sqrt_point_six() {
        let m = xavier_init(8, 2, 1).unwrap();
        let bound = 0.6f64.sqrt();
        assert!(m.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn zero_dimension_is_rejected() {
        assert!(matches!(xavier_init(0, 3, 1), Err(Error::InvalidShape(_))));
        assert!(matches!(xavier_init(3, 0, 1), Err(Error::InvalidShape(_))));
    }
}
