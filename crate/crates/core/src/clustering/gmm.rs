//! Full-covariance Gaussian mixture fitted by EM.
//!
//! The covariance update is `S_k + (r m / N_k) I`, the exact maximizer of the
//! log-likelihood penalized by `-(r m / 2) sum_k tr(inv(Sigma_k))`, where `r`
//! is `gmm_reg` times the mean per-dimension variance of the data. That
//! penalized objective is what `log_likelihood_history` tracks, and EM never
//! decreases it. With a single component the ridge is exactly `r`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::kmeans::kmeans_fit;
use super::{ClusteringConfig, Method, SoftTargetMatrix};
use crate::dataio::EmbeddingMatrix;
use crate::error::{Result, TflowError};
use crate::flow::{Provenance, PseudoLabelVector};

const LN_2PI: f64 = 1.837_877_066_409_345_3;
const MIN_COMPONENT_MASS: f64 = 10.0 * f64::EPSILON;

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub labels: PseudoLabelVector,
    pub responsibilities: SoftTargetMatrix,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Row-major `d x d` covariance per component.
    pub covariances: Vec<Vec<f64>>,
    pub log_likelihood_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Base ridge `r` (see module docs).
    pub ridge: f64,
}

struct Params {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
}

fn data_matrix(x: &EmbeddingMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(x.rows(), x.cols(), x.as_slice())
}

/// Mean over dimensions of the biased per-dimension variance.
fn mean_variance(data: &DMatrix<f64>) -> f64 {
    let m = data.nrows() as f64;
    let trace: f64 = data
        .column_iter()
        .map(|col| {
            let mu = col.sum() / m;
            col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / m
        })
        .sum();
    trace / data.ncols() as f64
}

fn m_step(data: &DMatrix<f64>, resp: &DMatrix<f64>, penalty: f64) -> Params {
    let (m, d) = data.shape();
    let k = resp.ncols();
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    for c in 0..k {
        let gamma = resp.column(c);
        let mass = gamma.sum().max(MIN_COMPONENT_MASS);
        let mean: DVector<f64> = data.tr_mul(&gamma) / mass;
        let mut centered = data.clone();
        for i in 0..m {
            let w = gamma[i].sqrt();
            for j in 0..d {
                centered[(i, j)] = (centered[(i, j)] - mean[j]) * w;
            }
        }
        let mut cov = centered.tr_mul(&centered) / mass;
        let ridge = penalty / mass;
        for j in 0..d {
            cov[(j, j)] += ridge;
        }
        weights.push(mass / m as f64);
        means.push(mean);
        covs.push(cov);
    }
    Params {
        weights,
        means,
        covs,
    }
}

/// Responsibilities and the penalized log-likelihood.
fn e_step(data: &DMatrix<f64>, p: &Params, penalty: f64) -> Result<(DMatrix<f64>, f64)> {
    let (m, d) = data.shape();
    let k = p.weights.len();
    let mut log_p = DMatrix::zeros(m, k);
    let mut trace_penalty = 0.0;
    for c in 0..k {
        let chol = Cholesky::<f64, Dyn>::new(p.covs[c].clone())
            .ok_or(TflowError::CovarianceSingular(c))?;
        let l = chol.l();
        let log_det = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(TflowError::CovarianceSingular(c));
        }
        let mut centered_t = data.transpose();
        for mut col in centered_t.column_iter_mut() {
            col -= &p.means[c];
        }
        let solved = l
            .solve_lower_triangular(&centered_t)
            .ok_or(TflowError::CovarianceSingular(c))?;
        let norm = p.weights[c].ln() - 0.5 * (d as f64 * LN_2PI + log_det);
        for (i, col) in solved.column_iter().enumerate() {
            log_p[(i, c)] = norm - 0.5 * col.norm_squared();
        }
        trace_penalty += chol.inverse().trace();
    }

    let mut total = 0.0;
    let mut resp = DMatrix::zeros(m, k);
    for i in 0..m {
        let row = log_p.row(i);
        let max = row.max();
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse;
        for c in 0..k {
            resp[(i, c)] = (log_p[(i, c)] - lse).exp();
        }
    }
    Ok((resp, total - 0.5 * penalty * trace_penalty))
}

/// EM from a k-means start with the same seed. Hard labels are the
/// responsibility argmax, lowest component on ties.
pub fn gmm_em(x: &EmbeddingMatrix, cfg: &ClusteringConfig) -> Result<GmmFit> {
    cfg.check_against(x)?;
    let data = data_matrix(x);
    let (m, k) = (x.rows(), cfg.k);

    let scale = mean_variance(&data);
    let ridge = cfg.gmm_reg * if scale > 0.0 { scale } else { 1.0 };
    let penalty = ridge * m as f64;

    let init_cfg = ClusteringConfig {
        method: Method::KMeans,
        ..cfg.clone()
    };
    let init = kmeans_fit(x, &init_cfg)?;
    let mut resp = DMatrix::zeros(m, k);
    for (i, &l) in init.labels.iter().enumerate() {
        resp[(i, l)] = 1.0;
    }

    let mut params = m_step(&data, &resp, penalty);
    let mut history: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let (next_resp, objective) = e_step(&data, &params, penalty)?;
        resp = next_resp;
        if let Some(&prev) = history.last() {
            debug_assert!(
                objective >= prev - 1e-9 * prev.abs().max(1.0),
                "EM objective decreased from {prev} to {objective}"
            );
            history.push(objective);
            if (objective - prev).abs() <= cfg.tol * objective.abs().max(1.0) {
                converged = true;
                break;
            }
        } else {
            history.push(objective);
        }
        params = m_step(&data, &resp, penalty);
    }

    let hard: Vec<usize> = resp
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for c in 1..k {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect();
    let soft = EmbeddingMatrix::new(m, k, resp.transpose().as_slice().to_vec())?;

    Ok(GmmFit {
        labels: PseudoLabelVector::new(&hard, Provenance::Gmm)?,
        responsibilities: SoftTargetMatrix::new(soft)?,
        weights: params.weights,
        means: params.means.iter().map(|v| v.iter().copied().collect()).collect(),
        covariances: params
            .covs
            .iter()
            .map(|c| c.transpose().as_slice().to_vec())
            .collect(),
        log_likelihood_history: history,
        iterations,
        converged,
        ridge,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::hungarian_accuracy;
    use crate::clustering::testutil::two_blobs;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn recovers_two_blobs() {
        let (x, truth) = two_blobs(100, 1);
        let fit = gmm_em(&x, &ClusteringConfig::new(Method::Gmm, 2)).unwrap();
        assert_eq!(hungarian_accuracy(fit.labels.as_slice(), &truth).unwrap(), 1.0);
    }

    #[test]
    fn single_component_closed_form() {
        let (x, _) = two_blobs(25, 4);
        let cfg = ClusteringConfig::new(Method::Gmm, 1);
        let fit = gmm_em(&x, &cfg).unwrap();
        assert!(fit.responsibilities.as_slice().iter().all(|&r| r == 1.0));

        let m = x.rows() as f64;
        let mean: Vec<f64> = (0..2)
            .map(|j| (0..x.rows()).map(|i| x.get(i, j)).sum::<f64>() / m)
            .collect();
        let mut cov = [0.0; 4];
        for i in 0..x.rows() {
            for a in 0..2 {
                for b in 0..2 {
                    cov[a * 2 + b] += (x.get(i, a) - mean[a]) * (x.get(i, b) - mean[b]) / m;
                }
            }
        }
        let ridge = 1e-6 * (cov[0] + cov[3]) / 2.0;
        assert!((fit.ridge - ridge).abs() < 1e-18);
        cov[0] += ridge;
        cov[3] += ridge;
        for j in 0..2 {
            assert!((fit.means[0][j] - mean[j]).abs() < 1e-12);
        }
        for (a, b) in fit.covariances[0].iter().zip(cov) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn objective_non_decreasing_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for instance in 0..50 {
            let m = rng.random_range(20..80);
            let d = rng.random_range(1..4);
            let k = rng.random_range(1..5);
            let data: Vec<f64> = (0..m * d)
                .map(|i| rng.random_range(-1.0..1.0) + 3.0 * ((i / d) % 3) as f64)
                .collect();
            let x = EmbeddingMatrix::new(m, d, data).unwrap();
            let mut cfg = ClusteringConfig::new(Method::Gmm, k).with_seed(instance);
            cfg.max_iter = 100;
            cfg.tol = 1e-12;
            let fit = gmm_em(&x, &cfg).unwrap();
            for w in fit.log_likelihood_history.windows(2) {
                assert!(
                    w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0),
                    "instance {instance}: {} -> {}",
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn identical_points_fit_with_absolute_ridge() {
        let x = EmbeddingMatrix::from_rows(&[[1.0, 1.0]; 6]).unwrap();
        let fit = gmm_em(&x, &ClusteringConfig::new(Method::Gmm, 2)).unwrap();
        assert_eq!(fit.ridge, 1e-6);
    }
}
