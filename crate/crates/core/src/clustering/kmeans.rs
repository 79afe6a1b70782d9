use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::ClusteringConfig;
use crate::dataio::EmbeddingMatrix;
use crate::error::Result;
use crate::flow::{Provenance, PseudoLabelVector};
use crate::kernels::squared_l2;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub labels: Vec<usize>,
    /// `k x d`, row `c` is the centroid of cluster `c`.
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squares after each assignment step.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl KMeansFit {
    pub fn objective(&self) -> f64 {
        self.objective_history.last().copied().unwrap_or(0.0)
    }
}

fn plus_plus_init(x: &EmbeddingMatrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let m = x.rows();
    let mut chosen = vec![false; m];
    let first = rng.random_range(0..m);
    chosen[first] = true;
    let mut centroids = vec![x.row(first).to_vec()];
    let mut d2: Vec<f64> = (0..m).map(|i| squared_l2(x.row(i), x.row(first))).collect();

    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut cum = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                cum += w;
                if cum > target {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave `cum` just short of `target`.
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            // Every remaining point coincides with a centroid.
            chosen.iter().position(|c| !c).unwrap()
        };
        chosen[pick] = true;
        let c = x.row(pick).to_vec();
        for (i, slot) in d2.iter_mut().enumerate() {
            *slot = slot.min(squared_l2(x.row(i), &c));
        }
        d2[pick] = 0.0;
        centroids.push(c);
    }
    centroids
}

/// Nearest centroid (lowest index on ties) and its squared distance.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_l2(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Moves the farthest point (from its own centroid, among clusters with at
/// least two members) into each empty cluster.
fn repair_empty(
    x: &EmbeddingMatrix,
    labels: &mut [usize],
    dists: &mut [f64],
    centroids: &mut [Vec<f64>],
) {
    let k = centroids.len();
    let mut sizes = vec![0usize; k];
    labels.iter().for_each(|&l| sizes[l] += 1);
    for c in 0..k {
        if sizes[c] > 0 {
            continue;
        }
        let mut far: Option<(usize, f64)> = None;
        for (i, &d) in dists.iter().enumerate() {
            if sizes[labels[i]] >= 2 && far.is_none_or(|(_, best)| d > best) {
                far = Some((i, d));
            }
        }
        let (i, _) = far.expect("k <= m guarantees a donor cluster");
        sizes[labels[i]] -= 1;
        sizes[c] = 1;
        labels[i] = c;
        dists[i] = 0.0;
        centroids[c] = x.row(i).to_vec();
    }
}

fn means(x: &EmbeddingMatrix, labels: &[usize], k: usize) -> Vec<Vec<f64>> {
    let d = x.cols();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        sums[l].iter_mut().zip(x.row(i)).for_each(|(s, v)| *s += v);
    }
    for (s, n) in sums.iter_mut().zip(counts) {
        s.iter_mut().for_each(|v| *v /= n as f64);
    }
    sums
}

/// Lloyd iterations from k-means++ seeding, run to an assignment fixpoint or
/// `max_iter`.
pub fn kmeans_fit(x: &EmbeddingMatrix, cfg: &ClusteringConfig) -> Result<KMeansFit> {
    cfg.check_against(x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centroids = plus_plus_init(x, cfg.k, &mut rng);
    let mut labels: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        let (mut next, mut dists): (Vec<usize>, Vec<f64>) = (0..x.rows())
            .into_par_iter()
            .map(|i| nearest(x.row(i), &centroids))
            .unzip();
        repair_empty(x, &mut next, &mut dists, &mut centroids);
        history.push(dists.iter().sum());
        if next == labels {
            converged = true;
            break;
        }
        labels = next;
        centroids = means(x, &labels, cfg.k);
    }

    Ok(KMeansFit {
        labels,
        centroids,
        objective_history: history,
        iterations,
        converged,
    })
}

pub fn kmeans(x: &EmbeddingMatrix, cfg: &ClusteringConfig) -> Result<PseudoLabelVector> {
    let fit = kmeans_fit(x, cfg)?;
    PseudoLabelVector::new(&fit.labels, Provenance::KMeans)
}
