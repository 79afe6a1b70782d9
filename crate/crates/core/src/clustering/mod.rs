//! Pseudo-label generation and clustering evaluation.

mod agglomerative;
mod gmm;
mod hungarian;
mod kmeans;
mod sinkhorn;
mod targets;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use agglomerative::{agglomerative, ward_merges, Merge};
pub use gmm::{gmm_em, GmmFit};
pub use hungarian::{hungarian_accuracy, max_weight_assignment};
pub use kmeans::{kmeans, kmeans_fit, KMeansFit};
pub use sinkhorn::{sinkhorn_pseudo_labels, SinkhornConfig};
pub use targets::{mix_targets, one_hot, SoftTargetMatrix};

use crate::dataio::EmbeddingMatrix;
use crate::error::{Result, TflowError};
use crate::flow::PseudoLabelVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    KMeans,
    Gmm,
    Agglomerative,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::KMeans => "kmeans",
            Method::Gmm => "gmm",
            Method::Agglomerative => "agglo",
        })
    }
}

impl FromStr for Method {
    type Err = TflowError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kmeans" | "k-means" => Ok(Method::KMeans),
            "gmm" => Ok(Method::Gmm),
            "agglo" | "agglomerative" => Ok(Method::Agglomerative),
            other => Err(TflowError::InvalidConfig(format!(
                "unknown clustering method {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    #[default]
    Ward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringConfig {
    pub method: Method,
    pub k: usize,
    pub max_iter: usize,
    /// Relative change of the objective below which iteration stops.
    pub tol: f64,
    pub seed: u64,
    /// Covariance ridge, relative to the mean per-dimension data variance.
    pub gmm_reg: f64,
    pub linkage: Linkage,
}

impl ClusteringConfig {
    pub fn new(method: Method, k: usize) -> Self {
        Self {
            method,
            k,
            max_iter: 300,
            tol: 1e-6,
            seed: 0,
            gmm_reg: 1e-6,
            linkage: Linkage::Ward,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(TflowError::InvalidConfig("k must be at least 1".into()));
        }
        if self.max_iter == 0 {
            return Err(TflowError::InvalidConfig("max_iter must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(TflowError::InvalidConfig("tol must be positive".into()));
        }
        if !(self.gmm_reg > 0.0) {
            return Err(TflowError::InvalidConfig("gmm_reg must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn check_against(&self, reps: &EmbeddingMatrix) -> Result<()> {
        self.validate()?;
        if self.k > reps.rows() {
            return Err(TflowError::KTooLarge {
                k: self.k,
                m: reps.rows(),
            });
        }
        Ok(())
    }
}

/// Runs the configured method and returns hard labels.
pub fn cluster(reps: &EmbeddingMatrix, cfg: &ClusteringConfig) -> Result<PseudoLabelVector> {
    match cfg.method {
        Method::KMeans => kmeans(reps, cfg),
        Method::Gmm => gmm_em(reps, cfg).map(|fit| fit.labels),
        Method::Agglomerative => agglomerative(reps, cfg),
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use crate::dataio::EmbeddingMatrix;

    /// Unit-variance 2-D blobs at (0,0) and (10,10), `per` points each,
    /// interleaved so cluster ids cannot follow row order.
    pub fn two_blobs(per: usize, seed: u64) -> (EmbeddingMatrix, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        let mut truth = Vec::new();
        for i in 0..2 * per {
            let c = i % 2;
            let center = 10.0 * c as f64;
            for _ in 0..2 {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(center + z);
            }
            truth.push(c);
        }
        (EmbeddingMatrix::new(2 * per, 2, data).unwrap(), truth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let x = EmbeddingMatrix::from_rows(&[[0.0], [1.0]]).unwrap();
        assert!(ClusteringConfig::new(Method::KMeans, 0).validate().is_err());
        let mut c = ClusteringConfig::new(Method::Gmm, 1);
        c.tol = 0.0;
        assert!(c.validate().is_err());
        let mut c = ClusteringConfig::new(Method::Gmm, 1);
        c.gmm_reg = -1.0;
        assert!(c.validate().is_err());
        for method in [Method::KMeans, Method::Gmm, Method::Agglomerative] {
            let c = ClusteringConfig::new(method, 3);
            assert!(matches!(cluster(&x, &c), Err(TflowError::KTooLarge { k: 3, m: 2 })));
        }
        assert_eq!("agglo".parse::<Method>().unwrap(), Method::Agglomerative);
    }

    #[test]
    fn all_methods_deterministic() {
        let (x, _) = testutil::two_blobs(30, 5);
        for method in [Method::KMeans, Method::Gmm, Method::Agglomerative] {
            let cfg = ClusteringConfig::new(method, 3).with_seed(17);
            assert_eq!(cluster(&x, &cfg).unwrap(), cluster(&x, &cfg).unwrap());
        }
    }
}
