//! Transfer flow: a kernel-based measure of how much a labeled dataset's
//! supervision says about the classes of a disjoint unlabeled dataset.
//!
//! The crate covers the full pipeline around the metric:
//!
//! * [`dataio`] loads and writes embedding, label and probability matrices.
//! * [`kernels`] provides the Gaussian/Laplacian kernels and bandwidth grid.
//! * [`mmd`] is the unbiased squared MMD plus a naive reference.
//! * [`flow`] assembles class-pair MMDs into (pseudo) transfer flow, with
//!   bootstrap uncertainty and a supervised/self-supervised comparison.
//! * [`clustering`] produces pseudo labels (k-means, GMM, Ward), scores them,
//!   and builds Sinkhorn pseudo targets and mixed targets.
//! * [`benchgen`] builds hierarchy-based splits and synthetic mixtures.
//!
//! ```
//! use tflow_core::dataio::{EmbeddingMatrix, LabelVector};
//! use tflow_core::flow::transfer_flow;
//! use tflow_core::kernels::KernelSpec;
//!
//! let reps = EmbeddingMatrix::from_rows(&[[0.0], [0.0], [1.0], [1.0]]).unwrap();
//! let labels = LabelVector::new(vec![0, 0, 1, 1]).unwrap();
//! let report = transfer_flow(&reps, &labels, &[KernelSpec::gaussian(1.0).unwrap()]).unwrap();
//! assert!((report.total - 0.52463).abs() < 1e-5);
//! ```

pub mod benchgen;
pub mod clustering;
pub mod dataio;
pub mod error;
pub mod flow;
pub mod kernels;
pub mod mmd;
pub mod numeric;

pub use error::{Result, TflowError};
