//! Ward-linkage agglomerative clustering.
//!
//! Dissimilarities start as squared Euclidean distances and are updated with
//! the Lance-Williams recurrence for Ward linkage. Each step merges the
//! globally closest pair; ties go to the lexicographically smallest
//! `(i, j)` slot pair. The merged cluster keeps the lower slot.

use super::ClusteringConfig;
use crate::dataio::EmbeddingMatrix;
use crate::error::Result;
use crate::flow::{Provenance, PseudoLabelVector};
use crate::kernels::squared_l2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    /// Surviving slot (the lower index).
    pub kept: usize,
    pub absorbed: usize,
    pub dissimilarity: f64,
    pub size: usize,
}

/// Condensed strict upper triangle.
struct Condensed {
    n: usize,
    data: Vec<f64>,
}

impl Condensed {
    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j);
        i * (2 * self.n - i - 1) / 2 + (j - i - 1)
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.data[self.idx(a, b)]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        let k = self.idx(a, b);
        self.data[k] = v;
    }
}

#[inline]
fn ward_update(d_ax: f64, d_bx: f64, d_ab: f64, na: usize, nb: usize, nx: usize) -> f64 {
    let (na, nb, nx) = (na as f64, nb as f64, nx as f64);
    ((nx + na) * d_ax + (nx + nb) * d_bx - nx * d_ab) / (na + nb + nx)
}

/// Full merge sequence down to `stop_at` clusters.
pub fn ward_merges(x: &EmbeddingMatrix, stop_at: usize) -> Vec<Merge> {
    let n = x.rows();
    let mut dist = Condensed {
        n,
        data: Vec::with_capacity(n * n.saturating_sub(1) / 2),
    };
    for i in 0..n {
        for j in (i + 1)..n {
            dist.data.push(squared_l2(x.row(i), x.row(j)));
        }
    }

    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    // Nearest active slot above each active slot, lowest index on ties.
    let mut nn: Vec<Option<(usize, f64)>> = vec![None; n];
    let scan = |i: usize, active: &[bool], dist: &Condensed| -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for j in (i + 1)..n {
            if active[j] {
                let d = dist.get(i, j);
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((j, d));
                }
            }
        }
        best
    };
    for i in 0..n {
        nn[i] = scan(i, &active, &dist);
    }

    let mut merges = Vec::new();
    let mut clusters = n;
    while clusters > stop_at.max(1) {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            if let Some((j, d)) = nn[i] {
                if best.is_none_or(|(_, _, bd)| d < bd) {
                    best = Some((i, j, d));
                }
            }
        }
        let (a, b, d_ab) = best.expect("at least two active clusters");
        let (na, nb) = (size[a], size[b]);
        for x_slot in 0..n {
            if !active[x_slot] || x_slot == a || x_slot == b {
                continue;
            }
            let updated = ward_update(
                dist.get(a, x_slot),
                dist.get(b, x_slot),
                d_ab,
                na,
                nb,
                size[x_slot],
            );
            dist.set(a, x_slot, updated);
        }
        active[b] = false;
        size[a] = na + nb;
        nn[b] = None;
        clusters -= 1;
        merges.push(Merge {
            kept: a,
            absorbed: b,
            dissimilarity: d_ab,
            size: na + nb,
        });

        for i in 0..n {
            if !active[i] {
                continue;
            }
            let stale = match nn[i] {
                Some((j, _)) => i == a || j == a || j == b,
                None => i == a,
            };
            if stale {
                nn[i] = scan(i, &active, &dist);
            } else if i < a {
                let d = dist.get(i, a);
                if let Some((j, cur)) = nn[i] {
                    if d < cur || (d == cur && a < j) {
                        nn[i] = Some((a, d));
                    }
                }
            }
        }
    }
    merges
}

/// Cuts the Ward tree at `k` clusters. Cluster ids follow the smallest row
/// index each cluster contains.
pub fn agglomerative(x: &EmbeddingMatrix, cfg: &ClusteringConfig) -> Result<PseudoLabelVector> {
    cfg.check_against(x)?;
    let n = x.rows();
    let merges = ward_merges(x, cfg.k);
    let mut parent: Vec<usize> = (0..n).collect();
    for m in &merges {
        parent[m.absorbed] = m.kept;
    }
    let root = |mut i: usize| {
        while parent[i] != i {
            i = parent[i];
        }
        i
    };
    let roots: Vec<usize> = (0..n).map(root).collect();
    PseudoLabelVector::new(&roots, Provenance::Agglomerative)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::testutil::two_blobs;
    use crate::clustering::{hungarian_accuracy, Method};

    fn cfg(k: usize) -> ClusteringConfig {
        ClusteringConfig::new(Method::Agglomerative, k)
    }

    #[test]
    fn recovers_two_blobs() {
        let (x, truth) = two_blobs(100, 1);
        let labels = agglomerative(&x, &cfg(2)).unwrap();
        assert_eq!(hungarian_accuracy(labels.as_slice(), &truth).unwrap(), 1.0);
    }

    #[test]
    fn k_equals_m_is_singletons() {
        let (x, _) = two_blobs(5, 2);
        let labels = agglomerative(&x, &cfg(10)).unwrap();
        assert_eq!(labels.as_slice(), &(0..10).collect::<Vec<_>>()[..]);
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let (x, _) = two_blobs(40, 8);
        let first = agglomerative(&x, &cfg(4)).unwrap();
        for _ in 0..10 {
            assert_eq!(agglomerative(&x, &cfg(4)).unwrap(), first);
        }
    }

    #[test]
    fn ward_cost_matches_variance_increase() {
        // Lance-Williams updates must agree with the direct Ward cost
        // 2 n_a n_b / (n_a + n_b) * ||mean_a - mean_b||^2.
        let x = EmbeddingMatrix::from_rows(&[[0.0], [10.0], [2.0], [3.5]]).unwrap();
        let merges = ward_merges(&x, 1);
        assert_eq!((merges[0].kept, merges[0].absorbed), (2, 3));
        assert_eq!(merges[0].dissimilarity, 2.25);
        // {0} vs {2,3}: 2 * (1 * 2 / 3) * (0 - 2.75)^2
        let expected = 2.0 * (2.0 / 3.0) * 2.75f64.powi(2);
        assert_eq!((merges[1].kept, merges[1].absorbed), (0, 2));
        assert!((merges[1].dissimilarity - expected).abs() < 1e-12);
        // all three vs {10}: 2 * (3 * 1 / 4) * (10 - 5.5/3)^2
        let expected = 2.0 * 0.75 * (10.0 - 5.5 / 3.0f64).powi(2);
        assert!((merges[2].dissimilarity - expected).abs() < 1e-9);
    }

    #[test]
    fn ties_merge_lowest_pair_first() {
        let x = EmbeddingMatrix::from_rows(&[[0.0], [1.0], [5.0], [6.0]]).unwrap();
        let merges = ward_merges(&x, 2);
        assert_eq!((merges[0].kept, merges[0].absorbed), (0, 1));
        assert_eq!((merges[1].kept, merges[1].absorbed), (2, 3));
    }
}
