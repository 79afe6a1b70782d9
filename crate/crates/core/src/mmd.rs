//! Unbiased squared MMD between two groups of rows of one matrix.
//!
//! For groups `a` and `b` the estimate is
//!
//! ```text
//! mean_{i != j in a} K(x_i, x_j) + mean_{i != j in b} K(x_i, x_j) - 2 mean_{i in a, j in b} K(x_i, x_j)
//! ```
//!
//! It can be negative and is never clamped. With `0 <= K <= 1` each within
//! term lies in `[0, 1]` and the cross term in `[0, 2]`, so the value always
//! lies in `[-2, 4]`.

use crate::dataio::EmbeddingMatrix;
use crate::error::{Result, TflowError};
use crate::kernels::KernelSpec;
use crate::numeric::{DoubleDouble, UnitIntervalSum};

/// Two disjoint index groups into a shared matrix.
#[derive(Debug, Clone)]
pub struct GroupPair<'a> {
    pub source: &'a EmbeddingMatrix,
    pub group_a: Vec<usize>,
    pub group_b: Vec<usize>,
}

impl<'a> GroupPair<'a> {
    pub fn new(source: &'a EmbeddingMatrix, group_a: Vec<usize>, group_b: Vec<usize>) -> Result<Self> {
        let pair = Self {
            source,
            group_a,
            group_b,
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn swapped(&self) -> GroupPair<'a> {
        GroupPair {
            source: self.source,
            group_a: self.group_b.clone(),
            group_b: self.group_a.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for g in [&self.group_a, &self.group_b] {
            if g.len() < 2 {
                return Err(TflowError::GroupTooSmall(g.len()));
            }
        }
        let n = self.source.rows();
        let mut owner = vec![0u8; n];
        for (tag, g) in [(1u8, &self.group_a), (2u8, &self.group_b)] {
            for &i in g {
                if i >= n {
                    return Err(TflowError::IndexOutOfRange { index: i, len: n });
                }
                if owner[i] != 0 && owner[i] != tag {
                    return Err(TflowError::OverlappingGroups(i));
                }
                owner[i] = tag;
            }
        }
        Ok(())
    }
}

/// Kernel sums feeding one MMD estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct PairSums {
    /// Sum of K over unordered pairs inside each group.
    pub within_a: UnitIntervalSum,
    pub within_b: UnitIntervalSum,
    pub n_a: usize,
    pub n_b: usize,
    /// Sum of K over all cross pairs.
    pub cross: UnitIntervalSum,
}

/// The estimator from its three sums, combined in double-double so that
/// cancellation between the terms costs no accuracy. Symmetric in `a`/`b`
/// bit-for-bit.
#[inline]
pub(crate) fn mmd2_from_sums(s: &PairSums) -> f64 {
    let (na, nb) = (s.n_a as f64, s.n_b as f64);
    let a = s.within_a.value_dd().scale(2.0).div_f64(na * (na - 1.0));
    let b = s.within_b.value_dd().scale(2.0).div_f64(nb * (nb - 1.0));
    let c = s.cross.value_dd().scale(2.0).div_f64(na * nb);
    a.add(b).add(c.neg()).value()
}

fn unordered_within(spec: &KernelSpec, x: &EmbeddingMatrix, group: &[usize]) -> UnitIntervalSum {
    let mut acc = UnitIntervalSum::ZERO;
    for (p, &i) in group.iter().enumerate() {
        let xi = x.row(i);
        for &j in &group[p + 1..] {
            acc.add(spec.eval_unchecked(xi, x.row(j)));
        }
    }
    acc
}

/// Unbiased squared MMD. Kernel values are accumulated exactly, so the result
/// does not depend on the order of either group or on which group is first.
pub fn mmd2_unbiased(spec: &KernelSpec, pair: &GroupPair<'_>) -> Result<f64> {
    pair.validate()?;
    let x = pair.source;
    let mut cross = UnitIntervalSum::ZERO;
    for &i in &pair.group_a {
        let xi = x.row(i);
        for &j in &pair.group_b {
            cross.add(spec.eval_unchecked(xi, x.row(j)));
        }
    }
    Ok(mmd2_from_sums(&PairSums {
        within_a: unordered_within(spec, x, &pair.group_a),
        within_b: unordered_within(spec, x, &pair.group_b),
        n_a: pair.group_a.len(),
        n_b: pair.group_b.len(),
        cross,
    }))
}

/// Reference implementation: the displayed formula with explicit loops over
/// ordered pairs and no shared work. Sums are carried in double-double so the
/// reference itself does not lose digits to cancellation.
pub fn mmd2_naive_oracle(spec: &KernelSpec, pair: &GroupPair<'_>) -> Result<f64> {
    pair.validate()?;
    let x = pair.source;
    let ordered_mean = |g: &[usize]| -> Result<DoubleDouble> {
        let mut sum = DoubleDouble::ZERO;
        for &i in g {
            for &j in g {
                if i != j {
                    sum = sum.add_f64(spec.eval(x.row(i), x.row(j))?);
                }
            }
        }
        Ok(sum.div_f64((g.len() * (g.len() - 1)) as f64))
    };
    let a = ordered_mean(&pair.group_a)?;
    let b = ordered_mean(&pair.group_b)?;
    let mut cross = DoubleDouble::ZERO;
    for &i in &pair.group_a {
        for &j in &pair.group_b {
            cross = cross.add_f64(spec.eval(x.row(i), x.row(j))?);
        }
    }
    let c = cross
        .scale(2.0)
        .div_f64((pair.group_a.len() * pair.group_b.len()) as f64);
    Ok(a.add(b).add(c.neg()).value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn col(values: &[f64]) -> EmbeddingMatrix {
        EmbeddingMatrix::new(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn hand_case() {
        // K(0,0)=K(1,1)=1 within, K(0,1)=e^{-1/2} across: 1 + 1 - 2e^{-1/2}
        let x = col(&[0.0, 0.0, 1.0, 1.0]);
        let pair = GroupPair::new(&x, vec![0, 1], vec![2, 3]).unwrap();
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let expected = 2.0 - 2.0 * (-0.5f64).exp();
        let fast = mmd2_unbiased(&spec, &pair).unwrap();
        let naive = mmd2_naive_oracle(&spec, &pair).unwrap();
        assert!((fast - expected).abs() < 1e-15);
        assert!((naive - expected).abs() < 1e-15);
        assert!((fast - 0.78694).abs() < 1e-5);
    }

    #[test]
    fn identical_groups_give_negative_value() {
        // Two copies of the same two points: A = B = k, C = k + 1, total k - 1.
        let x = col(&[0.0, 1.5, 0.0, 1.5]);
        let pair = GroupPair::new(&x, vec![0, 1], vec![2, 3]).unwrap();
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let k = (-1.125f64).exp();
        let v = mmd2_unbiased(&spec, &pair).unwrap();
        assert!((v - (k - 1.0)).abs() < 1e-15);
        assert!(v < 0.0);
    }

    #[test]
    fn group_validation() {
        let x = col(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let pair = GroupPair {
            source: &x,
            group_a: vec![0],
            group_b: vec![1, 2, 3, 4, 5],
        };
        assert!(matches!(
            mmd2_naive_oracle(&spec, &pair),
            Err(TflowError::GroupTooSmall(1))
        ));
        assert!(matches!(
            GroupPair::new(&x, vec![0, 1], vec![1, 2]),
            Err(TflowError::OverlappingGroups(1))
        ));
        assert!(GroupPair::new(&x, vec![0, 9], vec![1, 2]).is_err());
    }

    #[test]
    fn same_distribution_is_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 2000;
        let data: Vec<f64> = (0..2 * n)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let x = EmbeddingMatrix::new(2 * n, 1, data).unwrap();
        let h = crate::kernels::mean_pairwise_distance(&x, crate::kernels::Metric::L2).unwrap();
        let spec = KernelSpec::gaussian(h).unwrap();
        let pair = GroupPair::new(&x, (0..n).collect(), (n..2 * n).collect()).unwrap();
        assert!(mmd2_unbiased(&spec, &pair).unwrap().abs() < 0.01);
    }

    fn instance() -> impl Strategy<Value = (Vec<Vec<f64>>, usize, f64, bool)> {
        (1usize..6, 2usize..12, 2usize..12).prop_flat_map(|(d, na, nb)| {
            (
                prop::collection::vec(prop::collection::vec(-3.0f64..3.0, d), na + nb),
                Just(na),
                0.1f64..5.0,
                any::<bool>(),
            )
        })
    }

    proptest! {
        #[test]
        fn symmetric_bounded_and_matches_oracle((rows, na, h, lap) in instance()) {
            let x = EmbeddingMatrix::from_rows(&rows).unwrap();
            let spec = if lap { KernelSpec::laplacian(h) } else { KernelSpec::gaussian(h) }.unwrap();
            let pair = GroupPair::new(&x, (0..na).collect(), (na..rows.len()).collect()).unwrap();
            let v = mmd2_unbiased(&spec, &pair).unwrap();
            prop_assert_eq!(v.to_bits(), mmd2_unbiased(&spec, &pair.swapped()).unwrap().to_bits());
            prop_assert!((-2.0..=4.0).contains(&v));
            let o = mmd2_naive_oracle(&spec, &pair).unwrap();
            prop_assert!((v - o).abs() <= 1e-12 * o.abs() + 1e-24);
        }
    }
}
