use std::ops::Deref;

use crate::dataio::{first_non_simplex_row, EmbeddingMatrix, LabelVector, SIMPLEX_TOL};
use crate::error::{Result, TflowError};

/// `m x k` matrix whose rows are probability vectors (within 1e-6).
#[derive(Debug, Clone, PartialEq)]
pub struct SoftTargetMatrix(EmbeddingMatrix);

impl SoftTargetMatrix {
    pub fn new(matrix: EmbeddingMatrix) -> Result<Self> {
        match first_non_simplex_row(&matrix, SIMPLEX_TOL) {
            Some((row, sum)) => Err(TflowError::NotASimplexRow { row, sum }),
            None => Ok(Self(matrix)),
        }
    }

    pub fn into_inner(self) -> EmbeddingMatrix {
        self.0
    }
}

impl Deref for SoftTargetMatrix {
    type Target = EmbeddingMatrix;
    fn deref(&self) -> &EmbeddingMatrix {
        &self.0
    }
}

impl AsRef<EmbeddingMatrix> for SoftTargetMatrix {
    fn as_ref(&self) -> &EmbeddingMatrix {
        &self.0
    }
}

/// One-hot encoding of ground-truth labels.
pub fn one_hot(labels: &LabelVector) -> SoftTargetMatrix {
    let k = labels.class_count();
    let mut data = vec![0.0; labels.len() * k];
    for (i, &l) in labels.as_slice().iter().enumerate() {
        data[i * k + l] = 1.0;
    }
    SoftTargetMatrix(EmbeddingMatrix::new(labels.len(), k, data).expect("non-empty labels"))
}

/// `alpha * gt + (1 - alpha) * pl`, entrywise.
pub fn mix_targets(gt: &SoftTargetMatrix, pl: &SoftTargetMatrix, alpha: f64) -> Result<SoftTargetMatrix> {
    if gt.rows() != pl.rows() || gt.cols() != pl.cols() {
        return Err(TflowError::ShapeMismatch {
            left: (gt.rows(), gt.cols()),
            right: (pl.rows(), pl.cols()),
        });
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(TflowError::AlphaOutOfRange(alpha));
    }
    let beta = 1.0 - alpha;
    let data = gt
        .as_slice()
        .iter()
        .zip(pl.as_slice())
        .map(|(g, p)| alpha * g + beta * p)
        .collect();
    Ok(SoftTargetMatrix(EmbeddingMatrix::new(gt.rows(), gt.cols(), data)?))
}
