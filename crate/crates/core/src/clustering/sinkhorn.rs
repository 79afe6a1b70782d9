use serde::{Deserialize, Serialize};

use super::SoftTargetMatrix;
use crate::dataio::EmbeddingMatrix;
use crate::error::{Result, TflowError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub iters: usize,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            iters: 3,
        }
    }
}

/// Balanced soft assignments from an `m x k` logit matrix.
///
/// `Q = exp((logits - max) / epsilon)` is scaled so that columns carry mass
/// `1/k` and rows `1/m`, alternately, `iters` times. Rows of the result are
/// rescaled to sum to 1.
pub fn sinkhorn_pseudo_labels(logits: &EmbeddingMatrix, epsilon: f64, iters: usize) -> Result<SoftTargetMatrix> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(TflowError::InvalidConfig(format!("epsilon must be positive, got {epsilon}")));
    }
    if iters == 0 {
        return Err(TflowError::InvalidConfig("sinkhorn needs at least one iteration".into()));
    }
    let (m, k) = (logits.rows(), logits.cols());
    let max = logits.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut q: Vec<f64> = logits.as_slice().iter().map(|v| ((v - max) / epsilon).exp()).collect();
    if let Some(row) = q.chunks_exact(k).position(|r| r.iter().all(|&v| v == 0.0)) {
        return Err(TflowError::NumericalUnderflow(row));
    }
    let total: f64 = q.iter().sum();
    q.iter_mut().for_each(|v| *v /= total);

    let (col_mass, row_mass) = (1.0 / k as f64, 1.0 / m as f64);
    let mut col_sums = vec![0.0; k];
    for _ in 0..iters {
        col_sums.iter_mut().for_each(|s| *s = 0.0);
        for row in q.chunks_exact(k) {
            col_sums.iter_mut().zip(row).for_each(|(s, v)| *s += v);
        }
        for row in q.chunks_exact_mut(k) {
            for (v, s) in row.iter_mut().zip(&col_sums) {
                if *s > 0.0 {
                    *v *= col_mass / s;
                }
            }
        }
        for row in q.chunks_exact_mut(k) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v *= row_mass / s);
        }
    }
    for row in q.chunks_exact_mut(k) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    SoftTargetMatrix::new(EmbeddingMatrix::new(m, k, q)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equal_logits_give_uniform() {
        let logits = EmbeddingMatrix::new(6, 4, vec![0.7; 24]).unwrap();
        let q = sinkhorn_pseudo_labels(&logits, 0.05, 3).unwrap();
        assert!(q.as_slice().iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn strongly_diagonal_logits_give_identity() {
        let m = 5;
        let data: Vec<f64> = (0..m * m).map(|i| if i / m == i % m { 100.0 } else { 0.0 }).collect();
        let logits = EmbeddingMatrix::new(m, m, data).unwrap();
        let q = sinkhorn_pseudo_labels(&logits, 0.05, 3).unwrap();
        for i in 0..m {
            for j in 0..m {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((q.get(i, j) - expected).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let shifted: Vec<f64> = data.iter().map(|v| v + 37.0).collect();
        let a = sinkhorn_pseudo_labels(&EmbeddingMatrix::new(10, 4, data).unwrap(), 0.5, 3).unwrap();
        let b = sinkhorn_pseudo_labels(&EmbeddingMatrix::new(10, 4, shifted).unwrap(), 0.5, 3).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn underflow_and_bad_config() {
        let logits = EmbeddingMatrix::from_rows(&[[0.0, 0.0], [-1000.0, -1000.0]]).unwrap();
        assert!(matches!(
            sinkhorn_pseudo_labels(&logits, 0.05, 3),
            Err(TflowError::NumericalUnderflow(1))
        ));
        let ok = EmbeddingMatrix::from_rows(&[[0.0, 1.0]]).unwrap();
        assert!(sinkhorn_pseudo_labels(&ok, 0.0, 3).is_err());
        assert!(sinkhorn_pseudo_labels(&ok, 0.05, 0).is_err());
    }
}
