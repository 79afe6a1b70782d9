//! Bounded kernels and the mean-pairwise-distance bandwidth grid.
//!
//! Conventions, fixed for reproducibility:
//!
//! * Gaussian: `exp(-||x - y||_2^2 / (2 h^2))`
//! * Laplacian: `exp(-||x - y||_1 / h)`
//!
//! Both satisfy `K(x, x) = 1`, so the uniform bound `kappa` is 1.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::EmbeddingMatrix;
use crate::error::{Result, TflowError};
use crate::numeric::CompensatedSum;

/// Multipliers of the base bandwidth: h/4, h/2, h, 2h, 4h.
pub const DEFAULT_MULTIPLIERS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Gaussian,
    Laplacian,
}

impl KernelFamily {
    /// The distance each family is built on.
    pub fn metric(self) -> Metric {
        match self {
            KernelFamily::Gaussian => Metric::L2,
            KernelFamily::Laplacian => Metric::L1,
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::Laplacian => "laplacian",
        })
    }
}

impl FromStr for KernelFamily {
    type Err = TflowError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "rbf" => Ok(KernelFamily::Gaussian),
            "laplacian" => Ok(KernelFamily::Laplacian),
            other => Err(TflowError::InvalidConfig(format!(
                "unknown kernel family {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    L2,
    L1,
}

#[inline]
pub fn squared_l2(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum()
}

#[inline]
pub fn l1(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum()
}

impl Metric {
    #[inline]
    pub fn distance(self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Metric::L2 => squared_l2(x, y).sqrt(),
            Metric::L1 => l1(x, y),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, bandwidth: f64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(TflowError::InvalidConfig(format!(
                "bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        Ok(Self { family, bandwidth })
    }

    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, bandwidth)
    }

    pub fn laplacian(bandwidth: f64) -> Result<Self> {
        Self::new(KernelFamily::Laplacian, bandwidth)
    }

    /// Uniform bound on `sqrt(K(x, x))`.
    pub fn kappa(&self) -> f64 {
        1.0
    }

    /// The pre-kernel quantity: squared L2 distance for Gaussian, L1 for Laplacian.
    #[inline]
    pub(crate) fn base_distance(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Gaussian => squared_l2(x, y),
            KernelFamily::Laplacian => l1(x, y),
        }
    }

    #[inline]
    pub(crate) fn from_base_distance(&self, dist: f64) -> f64 {
        let h = self.bandwidth;
        match self.family {
            KernelFamily::Gaussian => (-dist / (2.0 * h * h)).exp(),
            KernelFamily::Laplacian => (-dist / h).exp(),
        }
    }

    /// Kernel value without the dimension check.
    #[inline]
    pub fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        self.from_base_distance(self.base_distance(x, y))
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(TflowError::DimensionMismatch {
                left: x.len(),
                right: y.len(),
            });
        }
        Ok(self.eval_unchecked(x, y))
    }
}

pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    spec.eval(x, y)
}

/// Mean distance over all ordered pairs `i != j`.
pub fn mean_pairwise_distance(matrix: &EmbeddingMatrix, metric: Metric) -> Result<f64> {
    let n = matrix.rows();
    if n < 2 {
        return Err(TflowError::TooFewRows(n));
    }
    // Rows are visited in lexicographic order of their values and partials
    // reduced in that order, so the result depends neither on row order nor
    // on the thread count.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        matrix
            .row(a)
            .iter()
            .zip(matrix.row(b))
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let sorted = matrix.select_rows(&order)?;
    let partials: Vec<CompensatedSum> = (0..n)
        .into_par_iter()
        .map(|p| {
            let xi = sorted.row(p);
            ((p + 1)..n)
                .map(|j| metric.distance(xi, sorted.row(j)))
                .collect()
        })
        .collect();
    let mut total = CompensatedSum::new();
    partials.iter().for_each(|p| total.merge(p));
    let pairs = (n * (n - 1) / 2) as f64;
    let h = total.value() / pairs;
    if h <= 0.0 {
        return Err(TflowError::DegenerateData);
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthGrid {
    pub family: KernelFamily,
    pub base: f64,
    pub multipliers: Vec<f64>,
}

impl BandwidthGrid {
    pub fn new(family: KernelFamily, base: f64, multipliers: Vec<f64>) -> Result<Self> {
        if !(base.is_finite() && base > 0.0) {
            return Err(TflowError::InvalidConfig(format!(
                "base bandwidth must be positive, got {base}"
            )));
        }
        if multipliers.is_empty() {
            return Err(TflowError::InvalidConfig("empty bandwidth grid".into()));
        }
        if multipliers.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(TflowError::InvalidConfig(
                "bandwidth multipliers must be positive".into(),
            ));
        }
        if multipliers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(TflowError::InvalidConfig(
                "bandwidth multipliers must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            family,
            base,
            multipliers,
        })
    }

    pub fn specs(&self) -> Vec<KernelSpec> {
        self.multipliers
            .iter()
            .map(|m| KernelSpec {
                family: self.family,
                bandwidth: self.base * m,
            })
            .collect()
    }
}

/// Default five-bandwidth grid around the mean pairwise distance.
pub fn make_grid(
    matrix: &EmbeddingMatrix,
    family: KernelFamily,
) -> Result<(BandwidthGrid, Vec<KernelSpec>)> {
    make_grid_with(matrix, family, &DEFAULT_MULTIPLIERS, None)
}

/// Grid with custom multipliers; `base` overrides the distance heuristic.
pub fn make_grid_with(
    matrix: &EmbeddingMatrix,
    family: KernelFamily,
    multipliers: &[f64],
    base: Option<f64>,
) -> Result<(BandwidthGrid, Vec<KernelSpec>)> {
    let base = match base {
        Some(b) => b,
        None => mean_pairwise_distance(matrix, family.metric())?,
    };
    let grid = BandwidthGrid::new(family, base, multipliers.to_vec())?;
    let specs = grid.specs();
    Ok((grid, specs))
}

/// Dense kernel matrix between the rows of `a` and `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gram {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Gram {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn transpose(&self) -> Gram {
        let mut data = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                data[j * self.rows + i] = self.get(i, j);
            }
        }
        Gram {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }
}

pub fn gram_matrix(spec: &KernelSpec, a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<Gram> {
    if a.cols() != b.cols() {
        return Err(TflowError::DimensionMismatch {
            left: a.cols(),
            right: b.cols(),
        });
    }
    let cols = b.rows();
    let mut data = vec![0.0; a.rows() * cols];
    data.par_chunks_mut(cols).enumerate().for_each(|(i, out)| {
        let ai = a.row(i);
        for (j, slot) in out.iter_mut().enumerate() {
            *slot = spec.eval_unchecked(ai, b.row(j));
        }
    });
    Ok(Gram {
        rows: a.rows(),
        cols,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn col(values: &[f64]) -> EmbeddingMatrix {
        EmbeddingMatrix::new(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn gaussian_and_laplacian_values() {
        let g = KernelSpec::gaussian(2.0).unwrap();
        let v = g.eval(&[0.0, 0.0], &[0.0, 2.0]).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
        assert!((v - 0.60653).abs() < 1e-5);

        let l = KernelSpec::laplacian(1.0).unwrap();
        let v = l.eval(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((v - (-2.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.13534).abs() < 1e-5);

        assert_eq!(g.eval(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(l.eval(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 1.0);
        assert!(matches!(
            g.eval(&[0.0], &[0.0, 1.0]),
            Err(TflowError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn invalid_bandwidth_rejected() {
        assert!(KernelSpec::gaussian(0.0).is_err());
        assert!(KernelSpec::laplacian(f64::NAN).is_err());
    }

    #[test]
    fn mean_distance_small_cases() {
        assert_eq!(mean_pairwise_distance(&col(&[0.0, 1.0]), Metric::L2).unwrap(), 1.0);
        // pairs (0,1), (0,2), (1,2): distances 1, 2, 1
        let h = mean_pairwise_distance(&col(&[0.0, 1.0, 2.0]), Metric::L2).unwrap();
        assert!((h - 4.0 / 3.0).abs() < 1e-15);
        assert!(matches!(
            mean_pairwise_distance(&col(&[5.0, 5.0, 5.0]), Metric::L2),
            Err(TflowError::DegenerateData)
        ));
        assert!(matches!(
            mean_pairwise_distance(&col(&[5.0]), Metric::L1),
            Err(TflowError::TooFewRows(1))
        ));
    }

    #[test]
    fn grids() {
        let (grid, specs) = make_grid(&col(&[0.0, 1.0]), KernelFamily::Gaussian).unwrap();
        assert_eq!(grid.base, 1.0);
        let bws: Vec<f64> = specs.iter().map(|s| s.bandwidth).collect();
        assert_eq!(bws, vec![0.25, 0.5, 1.0, 2.0, 4.0]);

        let (grid, specs) = make_grid(&col(&[0.0, 1.0, 2.0]), KernelFamily::Gaussian).unwrap();
        assert!((grid.base - 4.0 / 3.0).abs() < 1e-15);
        let expected = [1.0 / 3.0, 2.0 / 3.0, 4.0 / 3.0, 8.0 / 3.0, 16.0 / 3.0];
        for (s, e) in specs.iter().zip(expected) {
            assert!((s.bandwidth - e).abs() < 1e-14);
        }

        let (_, specs) =
            make_grid_with(&col(&[0.0, 1.0]), KernelFamily::Laplacian, &[1.0], None).unwrap();
        assert_eq!(specs.len(), 1);
        assert_eq!(specs[0].bandwidth, 1.0);

        assert!(BandwidthGrid::new(KernelFamily::Gaussian, 1.0, vec![]).is_err());
        assert!(BandwidthGrid::new(KernelFamily::Gaussian, 1.0, vec![2.0, 1.0]).is_err());
    }

    #[test]
    fn gram_basics() {
        let spec = KernelSpec::gaussian(2.0).unwrap();
        let a = col(&[0.0]);
        let b = col(&[0.0, 2.0]);
        let g = gram_matrix(&spec, &a, &b).unwrap();
        assert_eq!(g.get(0, 0), 1.0);
        assert_eq!(g.get(0, 1), (-0.5f64).exp());

        let x = EmbeddingMatrix::from_rows(&[[0.3, -1.0], [2.0, 0.5]]).unwrap();
        let gx = gram_matrix(&spec, &x, &x).unwrap();
        assert_eq!(gx.get(0, 0), 1.0);
        assert_eq!(gx.get(1, 1), 1.0);
        assert_eq!(gram_matrix(&spec, &a, &b).unwrap(), gram_matrix(&spec, &b, &a).unwrap().transpose());

        let y = EmbeddingMatrix::from_rows(&[[0.0, 0.0, 0.0]]).unwrap();
        assert!(gram_matrix(&spec, &x, &y).is_err());
    }

    fn point(d: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-50.0f64..50.0, d)
    }

    proptest! {
        #[test]
        fn bounded_and_symmetric(
            (x, y) in (1usize..8).prop_flat_map(|d| (point(d), point(d))),
            h in 0.01f64..100.0,
            laplacian in any::<bool>(),
        ) {
            let family = if laplacian { KernelFamily::Laplacian } else { KernelFamily::Gaussian };
            let spec = KernelSpec::new(family, h).unwrap();
            let kxy = spec.eval(&x, &y).unwrap();
            prop_assert!(kxy >= 0.0 && kxy <= 1.0);
            prop_assert_eq!(kxy, spec.eval(&y, &x).unwrap());
            prop_assert_eq!(spec.eval(&x, &x).unwrap(), 1.0);
        }

        #[test]
        fn increasing_in_bandwidth(
            (x, y) in (1usize..4).prop_flat_map(|d| (point(d), point(d))),
            h in 0.5f64..5.0,
        ) {
            prop_assume!(x != y);
            for family in [KernelFamily::Gaussian, KernelFamily::Laplacian] {
                let lo = KernelSpec::new(family, h).unwrap().eval(&x, &y).unwrap();
                let hi = KernelSpec::new(family, 2.0 * h).unwrap().eval(&x, &y).unwrap();
                // Both may underflow to 0 for far-apart points.
                prop_assert!(hi > lo || (hi == 0.0 && lo == 0.0));
            }
        }
    }
}
