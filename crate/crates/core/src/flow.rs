//! Transfer flow and pseudo transfer flow.
//!
//! For labels over `m` rows with index sets `I_c`, each bandwidth contributes
//!
//! ```text
//! sum_{c != c'} |I_c| |I_c'| / (m (m - 1)) * MMD^2(I_c, I_c')
//! ```
//!
//! over *ordered* class pairs, so every unordered pair is counted twice with
//! the same MMD value. Halve the result to compare against a single-count
//! convention. The total is the sum over the bandwidth grid.
//!
//! Kernel values are evaluated once per unordered row pair and shared by all
//! class pairs and bandwidths of the same family, so a call costs `O(m^2)`
//! kernel evaluations per bandwidth regardless of the class count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{EmbeddingMatrix, LabelVector};
use crate::error::{Result, TflowError};
use crate::kernels::{l1, squared_l2, KernelFamily, KernelSpec};
use crate::mmd::{mmd2_from_sums, PairSums};
use crate::numeric::{mean_std, order_independent_sum, UnitIntervalSum};

/// Where a pseudo-label vector came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    KMeans,
    Gmm,
    Agglomerative,
    External,
}

/// Cluster assignment standing in for ground-truth labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoLabelVector {
    pub labels: LabelVector,
    pub provenance: Provenance,
}

impl PseudoLabelVector {
    /// Compacts arbitrary cluster ids to contiguous ids, keeping their order.
    pub fn new(ids: &[usize], provenance: Provenance) -> Result<Self> {
        Ok(Self {
            labels: LabelVector::compact(ids)?,
            provenance,
        })
    }

    pub fn from_labels(labels: LabelVector, provenance: Provenance) -> Self {
        Self { labels, provenance }
    }

    pub fn cluster_count(&self) -> usize {
        self.labels.class_count()
    }

    pub fn as_slice(&self) -> &[usize] {
        self.labels.as_slice()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthFlow {
    pub family: KernelFamily,
    pub bandwidth: f64,
    pub value: f64,
}

/// Weighted contribution of an ordered class pair, summed over bandwidths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairContribution {
    pub c: usize,
    pub c_prime: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub mean: f64,
    pub std: f64,
    pub replicates: usize,
    pub seed: u64,
    pub samples: Vec<f64>,
}

pub const SINGLE_CLASS_WARNING: &str = "single class: no class pairs, flow is 0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    pub per_bandwidth: Vec<BandwidthFlow>,
    pub total: f64,
    pub bootstrap: Option<BootstrapSummary>,
    pub class_pair_table: Vec<PairContribution>,
    pub m: usize,
    pub class_count: usize,
    pub warnings: Vec<String>,
}

impl FlowReport {
    pub fn bootstrap_mean(&self) -> Option<f64> {
        self.bootstrap.as_ref().map(|b| b.mean)
    }

    pub fn bootstrap_std(&self) -> Option<f64> {
        self.bootstrap.as_ref().map(|b| b.std)
    }
}

/// Per-bandwidth kernel sums over class blocks.
#[derive(Debug, Clone)]
pub(crate) struct ClassBlockSums {
    class_count: usize,
    /// `[c * class_count + c']` for `c <= c'`: unordered within sum on the
    /// diagonal, full cross sum above it.
    blocks: Vec<UnitIntervalSum>,
}

impl ClassBlockSums {
    fn pair(&self, c: usize, c_prime: usize, counts: &[usize]) -> PairSums {
        let k = self.class_count;
        let (lo, hi) = if c < c_prime { (c, c_prime) } else { (c_prime, c) };
        PairSums {
            within_a: self.blocks[c * k + c],
            within_b: self.blocks[c_prime * k + c_prime],
            n_a: counts[c],
            n_b: counts[c_prime],
            cross: self.blocks[lo * k + hi],
        }
    }
}

struct BlockAccumulator {
    /// `[g][c][c']`, upper triangle used.
    blocks: Vec<UnitIntervalSum>,
    /// `[row][g][c']` sums for the rows of the current block.
    rows: Vec<UnitIntervalSum>,
}

const ROW_BLOCK: usize = 32;
const COL_TILE: usize = 512;

/// Streams every unordered row pair once, in cache-sized tiles, and bins
/// kernel values by class block. Exact integer accumulation makes the result
/// independent of row order and scheduling.
pub(crate) fn class_block_sums(
    reps: &EmbeddingMatrix,
    labels: &[usize],
    class_count: usize,
    grid: &[KernelSpec],
) -> Vec<ClassBlockSums> {
    let m = reps.rows();
    let k = class_count;
    let g = grid.len();
    let need_l2 = grid.iter().any(|s| s.family == KernelFamily::Gaussian);
    let need_l1 = grid.iter().any(|s| s.family == KernelFamily::Laplacian);

    let stride = g * k;
    let new_acc = || BlockAccumulator {
        blocks: vec![UnitIntervalSum::ZERO; g * k * k],
        rows: vec![UnitIntervalSum::ZERO; ROW_BLOCK * stride],
    };
    let acc = (0..m.div_ceil(ROW_BLOCK))
        .into_par_iter()
        .fold(new_acc, |mut acc, block| {
            let (i0, i1) = (block * ROW_BLOCK, ((block + 1) * ROW_BLOCK).min(m));
            acc.rows.iter_mut().for_each(|s| *s = UnitIntervalSum::ZERO);
            let mut j0 = i0 + 1;
            while j0 < m {
                let j1 = (j0 + COL_TILE).min(m);
                for i in i0..i1 {
                    let xi = reps.row(i);
                    let row = &mut acc.rows[(i - i0) * stride..(i - i0 + 1) * stride];
                    for j in j0.max(i + 1)..j1 {
                        let xj = reps.row(j);
                        let sq = if need_l2 { squared_l2(xi, xj) } else { 0.0 };
                        let manhattan = if need_l1 { l1(xi, xj) } else { 0.0 };
                        let cj = labels[j];
                        for (s, spec) in grid.iter().enumerate() {
                            let dist = match spec.family {
                                KernelFamily::Gaussian => sq,
                                KernelFamily::Laplacian => manhattan,
                            };
                            row[s * k + cj].add(spec.from_base_distance(dist));
                        }
                    }
                }
                j0 = j1;
            }
            for i in i0..i1 {
                let ci = labels[i];
                let row = &acc.rows[(i - i0) * stride..(i - i0 + 1) * stride];
                for s in 0..g {
                    for cj in 0..k {
                        let (lo, hi) = if ci <= cj { (ci, cj) } else { (cj, ci) };
                        acc.blocks[(s * k + lo) * k + hi].merge(row[s * k + cj]);
                    }
                }
            }
            acc
        })
        .map(|acc| acc.blocks)
        .reduce(
            || vec![UnitIntervalSum::ZERO; g * k * k],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| x.merge(y));
                a
            },
        );

    acc.chunks_exact(k * k)
        .map(|blk| ClassBlockSums {
            class_count: k,
            blocks: blk.to_vec(),
        })
        .collect()
}

fn check_inputs(reps: &EmbeddingMatrix, labels: &LabelVector, grid: &[KernelSpec]) -> Result<()> {
    if reps.rows() != labels.len() {
        return Err(TflowError::LengthMismatch(reps.rows(), labels.len()));
    }
    if grid.is_empty() {
        return Err(TflowError::InvalidConfig("empty kernel grid".into()));
    }
    if labels.class_count() > 1 {
        if let Some((class, &size)) = labels.counts().iter().enumerate().find(|(_, &n)| n < 2) {
            return Err(TflowError::ClassTooSmall { class, size });
        }
    }
    Ok(())
}

fn assemble(reps: &EmbeddingMatrix, labels: &LabelVector, grid: &[KernelSpec]) -> FlowReport {
    let m = reps.rows();
    let k = labels.class_count();
    let counts = labels.counts();

    if k < 2 {
        log::warn!("{SINGLE_CLASS_WARNING}");
        return FlowReport {
            per_bandwidth: grid
                .iter()
                .map(|s| BandwidthFlow {
                    family: s.family,
                    bandwidth: s.bandwidth,
                    value: 0.0,
                })
                .collect(),
            total: 0.0,
            bootstrap: None,
            class_pair_table: Vec::new(),
            m,
            class_count: k,
            warnings: vec![SINGLE_CLASS_WARNING.to_owned()],
        };
    }

    let sums = class_block_sums(reps, labels.as_slice(), k, grid);
    let denom = (m as f64) * (m as f64 - 1.0);
    let pairs: Vec<(usize, usize)> = (0..k)
        .flat_map(|c| (0..k).filter(move |&cp| cp != c).map(move |cp| (c, cp)))
        .collect();

    // contributions[g][p] for ordered pair p
    let contributions: Vec<Vec<f64>> = sums
        .iter()
        .map(|blk| {
            pairs
                .iter()
                .map(|&(c, cp)| {
                    let weight = (counts[c] as f64) * (counts[cp] as f64) / denom;
                    weight * mmd2_from_sums(&blk.pair(c, cp, &counts))
                })
                .collect()
        })
        .collect();

    let per_bandwidth: Vec<BandwidthFlow> = grid
        .iter()
        .zip(&contributions)
        .map(|(spec, contrib)| BandwidthFlow {
            family: spec.family,
            bandwidth: spec.bandwidth,
            value: order_independent_sum(contrib),
        })
        .collect();
    let class_pair_table = pairs
        .iter()
        .enumerate()
        .map(|(p, &(c, c_prime))| {
            let per_g: Vec<f64> = contributions.iter().map(|row| row[p]).collect();
            PairContribution {
                c,
                c_prime,
                value: order_independent_sum(&per_g),
            }
        })
        .collect();
    let values: Vec<f64> = per_bandwidth.iter().map(|b| b.value).collect();

    FlowReport {
        total: order_independent_sum(&values),
        per_bandwidth,
        bootstrap: None,
        class_pair_table,
        m,
        class_count: k,
        warnings: Vec::new(),
    }
}

/// Transfer flow of representations (typically labeled-model class
/// probabilities, used as-is) under ground-truth labels of the unlabeled set.
pub fn transfer_flow<M: AsRef<EmbeddingMatrix>>(
    reps: M,
    labels: &LabelVector,
    grid: &[KernelSpec],
) -> Result<FlowReport> {
    let reps = reps.as_ref();
    check_inputs(reps, labels, grid)?;
    Ok(assemble(reps, labels, grid))
}

/// Same statistic with cluster-derived labels over arbitrary representations.
pub fn pseudo_transfer_flow(
    reps: &EmbeddingMatrix,
    pseudo: &PseudoLabelVector,
    grid: &[KernelSpec],
) -> Result<FlowReport> {
    check_inputs(reps, &pseudo.labels, grid).map_err(|e| match e {
        TflowError::ClassTooSmall { class, size } => TflowError::ClusterTooSmall {
            cluster: class,
            size,
        },
        other => other,
    })?;
    Ok(assemble(reps, &pseudo.labels, grid))
}

/// Row indices of one stratified resample: each class keeps its size and
/// draws its members with replacement.
fn stratified_resample(index_sets: &[Vec<usize>], rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (c, members) in index_sets.iter().enumerate() {
        for _ in 0..members.len() {
            rows.push(members[rng.random_range(0..members.len())]);
            labels.push(c);
        }
    }
    (rows, labels)
}

/// Replicate `r` draws from its own ChaCha stream, so results do not depend on
/// scheduling.
pub fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    rng
}

/// Bootstrap mean and `n - 1` standard deviation of the total flow. The
/// kernel grid is held fixed across replicates.
pub fn bootstrap_flow(
    reps: &EmbeddingMatrix,
    labels: &LabelVector,
    grid: &[KernelSpec],
    replicates: usize,
    seed: u64,
) -> Result<BootstrapSummary> {
    if replicates < 2 {
        return Err(TflowError::InvalidConfig(format!(
            "bootstrap needs at least 2 replicates, got {replicates}"
        )));
    }
    check_inputs(reps, labels, grid)?;
    let index_sets = labels.index_sets();
    let samples = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(seed, r);
            let (rows, ids) = stratified_resample(&index_sets, &mut rng);
            let sample = reps.select_rows(&rows)?;
            let sample_labels = LabelVector::new(ids)?;
            Ok(assemble(&sample, &sample_labels, grid).total)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (mean, std) = mean_std(&samples);
    Ok(BootstrapSummary {
        mean,
        std,
        replicates,
        seed,
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Supervised,
    SelfSupervised,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    /// Source with the larger total; `None` on an exact tie.
    pub larger: Option<Source>,
    /// Supervised total minus self-supervised total.
    pub gap: f64,
    /// Root-sum-square of the two bootstrap standard deviations.
    pub combined_std: f64,
    /// Set when the gap is within the combined bootstrap spread.
    pub inconclusive: bool,
}

/// Which representation source carries more flow to the unlabeled set.
pub fn flow_compare(supervised: &FlowReport, self_supervised: &FlowReport) -> Result<Recommendation> {
    if supervised.m != self_supervised.m {
        return Err(TflowError::MismatchedSampleCount(
            supervised.m,
            self_supervised.m,
        ));
    }
    let gap = supervised.total - self_supervised.total;
    let s1 = supervised.bootstrap_std().unwrap_or(0.0);
    let s2 = self_supervised.bootstrap_std().unwrap_or(0.0);
    let combined_std = s1.hypot(s2);
    let larger = if gap > 0.0 {
        Some(Source::Supervised)
    } else if gap < 0.0 {
        Some(Source::SelfSupervised)
    } else {
        None
    };
    Ok(Recommendation {
        larger,
        gap,
        combined_std,
        inconclusive: larger.is_none() || gap.abs() < combined_std,
    })
}
