//! Python bindings. Matrices cross the boundary as lists of rows; errors are
//! raised as `tflow.TflowError(code, message)`, a `ValueError` subclass.

use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use tflow_core::benchgen::{self, Centers, Hierarchy, SplitOptions, SynthSpec};
use tflow_core::clustering::{self, ClusteringConfig, Method, SoftTargetMatrix};
use tflow_core::dataio::{self, EmbeddingMatrix, LabelVector};
use tflow_core::flow::{self, Provenance, PseudoLabelVector, Source};
use tflow_core::kernels::{self, KernelFamily, Metric};
use tflow_core::mmd::{self, GroupPair};

create_exception!(tflow, TflowError, PyValueError);

fn err(e: tflow_core::TflowError) -> PyErr {
    TflowError::new_err((e.code(), e.to_string()))
}

trait OrRaise<T> {
    fn or_raise(self) -> PyResult<T>;
}

impl<T> OrRaise<T> for tflow_core::Result<T> {
    fn or_raise(self) -> PyResult<T> {
        self.map_err(err)
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<EmbeddingMatrix> {
    EmbeddingMatrix::from_rows(&rows).or_raise()
}

fn parse<T: std::str::FromStr<Err = tflow_core::TflowError>>(s: &str) -> PyResult<T> {
    s.parse().or_raise()
}

/// One kernel family at one bandwidth.
#[pyclass(module = "tflow", frozen, from_py_object)]
#[derive(Clone)]
struct KernelSpec {
    inner: kernels::KernelSpec,
}

#[pymethods]
impl KernelSpec {
    #[new]
    fn new(family: &str, bandwidth: f64) -> PyResult<Self> {
        Ok(Self {
            inner: kernels::KernelSpec::new(parse(family)?, bandwidth).or_raise()?,
        })
    }

    #[getter]
    fn family(&self) -> String {
        self.inner.family.to_string()
    }

    #[getter]
    fn bandwidth(&self) -> f64 {
        self.inner.bandwidth
    }

    fn __call__(&self, x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
        self.inner.eval(&x, &y).or_raise()
    }

    fn __repr__(&self) -> String {
        format!("KernelSpec({:?}, {})", self.family(), self.inner.bandwidth)
    }
}

fn specs(grid: &[KernelSpec]) -> Vec<kernels::KernelSpec> {
    grid.iter().map(|s| s.inner).collect()
}

/// Result of a flow computation.
#[pyclass(module = "tflow", frozen, from_py_object)]
#[derive(Clone)]
struct FlowReport {
    inner: flow::FlowReport,
}

#[pymethods]
impl FlowReport {
    #[getter]
    fn total(&self) -> f64 {
        self.inner.total
    }

    /// `(family, bandwidth, value)` per grid entry.
    #[getter]
    fn per_bandwidth(&self) -> Vec<(String, f64, f64)> {
        self.inner
            .per_bandwidth
            .iter()
            .map(|b| (b.family.to_string(), b.bandwidth, b.value))
            .collect()
    }

    /// `(c, c_prime, value)` per ordered class pair, summed over bandwidths.
    #[getter]
    fn class_pair_table(&self) -> Vec<(usize, usize, f64)> {
        self.inner
            .class_pair_table
            .iter()
            .map(|p| (p.c, p.c_prime, p.value))
            .collect()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m
    }

    #[getter]
    fn class_count(&self) -> usize {
        self.inner.class_count
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.inner.warnings.clone()
    }

    #[getter]
    fn bootstrap_mean(&self) -> Option<f64> {
        self.inner.bootstrap_mean()
    }

    #[getter]
    fn bootstrap_std(&self) -> Option<f64> {
        self.inner.bootstrap_std()
    }

    fn __repr__(&self) -> String {
        format!(
            "FlowReport(total={}, m={}, class_count={})",
            self.inner.total, self.inner.m, self.inner.class_count
        )
    }
}

#[pyfunction]
fn kernel_eval(family: &str, bandwidth: f64, x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    KernelSpec::new(family, bandwidth)?.__call__(x, y)
}

#[pyfunction]
#[pyo3(signature = (x, metric = "l2"))]
fn mean_pairwise_distance(x: Vec<Vec<f64>>, metric: &str) -> PyResult<f64> {
    let metric = match metric.to_ascii_lowercase().as_str() {
        "l2" => Metric::L2,
        "l1" => Metric::L1,
        other => {
            return Err(err(tflow_core::TflowError::InvalidConfig(format!(
                "unknown metric {other:?}"
            ))))
        }
    };
    kernels::mean_pairwise_distance(&matrix(x)?, metric).or_raise()
}

/// Returns `(base, specs)` for the bandwidth grid around `base`.
#[pyfunction]
#[pyo3(signature = (x, family = "gaussian", multipliers = None, base = None))]
fn make_grid(
    x: Vec<Vec<f64>>,
    family: &str,
    multipliers: Option<Vec<f64>>,
    base: Option<f64>,
) -> PyResult<(f64, Vec<KernelSpec>)> {
    let family: KernelFamily = parse(family)?;
    let multipliers = multipliers.unwrap_or_else(|| kernels::DEFAULT_MULTIPLIERS.to_vec());
    let (grid, specs) = kernels::make_grid_with(&matrix(x)?, family, &multipliers, base).or_raise()?;
    Ok((grid.base, specs.into_iter().map(|inner| KernelSpec { inner }).collect()))
}

#[pyfunction]
fn mmd2_unbiased(spec: &KernelSpec, x: Vec<Vec<f64>>, group_a: Vec<usize>, group_b: Vec<usize>) -> PyResult<f64> {
    let x = matrix(x)?;
    let pair = GroupPair::new(&x, group_a, group_b).or_raise()?;
    mmd::mmd2_unbiased(&spec.inner, &pair).or_raise()
}

#[pyfunction]
fn mmd2_naive_oracle(spec: &KernelSpec, x: Vec<Vec<f64>>, group_a: Vec<usize>, group_b: Vec<usize>) -> PyResult<f64> {
    let x = matrix(x)?;
    let pair = GroupPair::new(&x, group_a, group_b).or_raise()?;
    mmd::mmd2_naive_oracle(&spec.inner, &pair).or_raise()
}

/// Labels may be any non-negative integers; they are re-indexed in order.
fn labels(ids: &[usize]) -> PyResult<LabelVector> {
    LabelVector::compact(ids).or_raise()
}

#[pyfunction]
#[pyo3(signature = (x, labels_, grid, probabilities = false))]
fn transfer_flow(x: Vec<Vec<f64>>, labels_: Vec<usize>, grid: Vec<KernelSpec>, probabilities: bool) -> PyResult<FlowReport> {
    let x = matrix(x)?;
    let labels = labels(&labels_)?;
    let inner = if probabilities {
        let p = dataio::validate_probability_matrix(x).or_raise()?;
        flow::transfer_flow(&p, &labels, &specs(&grid))
    } else {
        flow::transfer_flow(&x, &labels, &specs(&grid))
    }
    .or_raise()?;
    Ok(FlowReport { inner })
}

#[pyfunction]
fn pseudo_transfer_flow(x: Vec<Vec<f64>>, pseudo_labels: Vec<usize>, grid: Vec<KernelSpec>) -> PyResult<FlowReport> {
    let pseudo = PseudoLabelVector::new(&pseudo_labels, Provenance::External).or_raise()?;
    let inner = flow::pseudo_transfer_flow(&matrix(x)?, &pseudo, &specs(&grid)).or_raise()?;
    Ok(FlowReport { inner })
}

/// Returns a dict with `mean`, `std` and `samples`.
#[pyfunction]
#[pyo3(signature = (x, labels_, grid, replicates = 10, seed = 0))]
fn bootstrap_flow<'py>(
    py: Python<'py>,
    x: Vec<Vec<f64>>,
    labels_: Vec<usize>,
    grid: Vec<KernelSpec>,
    replicates: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let s = flow::bootstrap_flow(&matrix(x)?, &labels(&labels_)?, &specs(&grid), replicates, seed).or_raise()?;
    let d = PyDict::new(py);
    d.set_item("mean", s.mean)?;
    d.set_item("std", s.std)?;
    d.set_item("replicates", s.replicates)?;
    d.set_item("seed", s.seed)?;
    d.set_item("samples", s.samples)?;
    Ok(d)
}

/// Bootstrap standard deviations are taken from the optional `*_std`
/// arguments when the reports carry none.
#[pyfunction]
#[pyo3(signature = (supervised, self_supervised, supervised_std = None, self_supervised_std = None))]
fn flow_compare<'py>(
    py: Python<'py>,
    supervised: &FlowReport,
    self_supervised: &FlowReport,
    supervised_std: Option<f64>,
    self_supervised_std: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let with_std = |r: &FlowReport, std: Option<f64>| {
        let mut inner = r.inner.clone();
        if let Some(std) = std {
            inner.bootstrap = Some(flow::BootstrapSummary {
                mean: inner.total,
                std,
                replicates: 0,
                seed: 0,
                samples: Vec::new(),
            });
        }
        inner
    };
    let rec = flow::flow_compare(
        &with_std(supervised, supervised_std),
        &with_std(self_supervised, self_supervised_std),
    )
    .or_raise()?;
    let d = PyDict::new(py);
    d.set_item(
        "larger",
        rec.larger.map(|s| match s {
            Source::Supervised => "supervised",
            Source::SelfSupervised => "self_supervised",
        }),
    )?;
    d.set_item("gap", rec.gap)?;
    d.set_item("combined_std", rec.combined_std)?;
    d.set_item("inconclusive", rec.inconclusive)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (x, method, k, seed = 0, max_iter = 300, tol = 1e-6, gmm_reg = 1e-6))]
fn cluster(x: Vec<Vec<f64>>, method: &str, k: usize, seed: u64, max_iter: usize, tol: f64, gmm_reg: f64) -> PyResult<Vec<usize>> {
    let method: Method = parse(method)?;
    let cfg = ClusteringConfig {
        max_iter,
        tol,
        seed,
        gmm_reg,
        ..ClusteringConfig::new(method, k)
    };
    let labels = clustering::cluster(&matrix(x)?, &cfg).or_raise()?;
    Ok(labels.as_slice().to_vec())
}

#[pyfunction]
fn hungarian_accuracy(pred: Vec<usize>, truth: Vec<usize>) -> PyResult<f64> {
    clustering::hungarian_accuracy(&pred, &truth).or_raise()
}

#[pyfunction]
#[pyo3(signature = (logits, epsilon = 0.05, iters = 3))]
fn sinkhorn(logits: Vec<Vec<f64>>, epsilon: f64, iters: usize) -> PyResult<Vec<Vec<f64>>> {
    Ok(clustering::sinkhorn_pseudo_labels(&matrix(logits)?, epsilon, iters)
        .or_raise()?
        .to_rows())
}

#[pyfunction]
fn one_hot(labels_: Vec<usize>) -> PyResult<Vec<Vec<f64>>> {
    Ok(clustering::one_hot(&labels(&labels_)?).to_rows())
}

#[pyfunction]
fn mix_targets(gt: Vec<Vec<f64>>, pl: Vec<Vec<f64>>, alpha: f64) -> PyResult<Vec<Vec<f64>>> {
    let gt = SoftTargetMatrix::new(matrix(gt)?).or_raise()?;
    let pl = SoftTargetMatrix::new(matrix(pl)?).or_raise()?;
    Ok(clustering::mix_targets(&gt, &pl, alpha).or_raise()?.to_rows())
}

/// `hierarchy` is a list of `(superclass, [subclasses])`. Returns a dict with
/// the five role lists and the six tagged pairings.
#[pyfunction]
#[pyo3(signature = (hierarchy, labeled_per_super, unlabeled_per_super, seed = 0, canonical = false))]
fn generate_split<'py>(
    py: Python<'py>,
    hierarchy: Vec<(String, Vec<String>)>,
    labeled_per_super: usize,
    unlabeled_per_super: usize,
    seed: u64,
    canonical: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let h = Hierarchy::new(hierarchy).or_raise()?;
    let plan = benchgen::generate_split(
        &h,
        labeled_per_super,
        unlabeled_per_super,
        SplitOptions { seed, canonical },
    )
    .or_raise()?;
    let d = PyDict::new(py);
    d.set_item("l1", &plan.l1)?;
    d.set_item("l2", &plan.l2)?;
    d.set_item("l15", &plan.l15)?;
    d.set_item("u1", &plan.u1)?;
    d.set_item("u2", &plan.u2)?;
    let pairs: Vec<(String, String, String)> = benchgen::pairings(&plan)
        .into_iter()
        .map(|p| {
            (
                format!("{:?}", p.labeled).to_lowercase(),
                format!("{:?}", p.unlabeled).to_lowercase(),
                format!("{:?}", p.similarity).to_lowercase(),
            )
        })
        .collect();
    d.set_item("pairings", pairs)?;
    Ok(d)
}

/// Returns `(rows, labels)`.
#[pyfunction]
#[pyo3(signature = (classes, dim, per_class, separation, variance = 1.0, seed = 0))]
fn generate_synthetic(
    classes: usize,
    dim: usize,
    per_class: usize,
    separation: f64,
    variance: f64,
    seed: u64,
) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
    let ds = benchgen::generate_synthetic(&SynthSpec {
        classes,
        dim,
        per_class,
        centers: Centers::Simplex { separation },
        variance,
        seed,
    })
    .or_raise()?;
    Ok((ds.embeddings.to_rows(), ds.labels.as_slice().to_vec()))
}

#[pyfunction]
fn save_binary(path: &str, x: Vec<Vec<f64>>) -> PyResult<()> {
    dataio::save_binary(&matrix(x)?, path).or_raise()
}

#[pyfunction]
fn load_binary(path: &str) -> PyResult<Vec<Vec<f64>>> {
    Ok(dataio::load_binary(path).or_raise()?.to_rows())
}

/// Loads CSV or TFMX; a CSV `label` column is dropped.
#[pyfunction]
fn load_matrix(path: &str) -> PyResult<Vec<Vec<f64>>> {
    Ok(dataio::load_matrix(path).or_raise()?.to_rows())
}

#[pymodule]
fn tflow(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("TflowError", m.py().get_type::<TflowError>())?;
    m.add_class::<KernelSpec>()?;
    m.add_class::<FlowReport>()?;
    m.add_function(wrap_pyfunction!(kernel_eval, m)?)?;
    m.add_function(wrap_pyfunction!(mean_pairwise_distance, m)?)?;
    m.add_function(wrap_pyfunction!(make_grid, m)?)?;
    m.add_function(wrap_pyfunction!(mmd2_unbiased, m)?)?;
    m.add_function(wrap_pyfunction!(mmd2_naive_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(transfer_flow, m)?)?;
    m.add_function(wrap_pyfunction!(pseudo_transfer_flow, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap_flow, m)?)?;
    m.add_function(wrap_pyfunction!(flow_compare, m)?)?;
    m.add_function(wrap_pyfunction!(cluster, m)?)?;
    m.add_function(wrap_pyfunction!(hungarian_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(sinkhorn, m)?)?;
    m.add_function(wrap_pyfunction!(one_hot, m)?)?;
    m.add_function(wrap_pyfunction!(mix_targets, m)?)?;
    m.add_function(wrap_pyfunction!(generate_split, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(save_binary, m)?)?;
    m.add_function(wrap_pyfunction!(load_binary, m)?)?;
    m.add_function(wrap_pyfunction!(load_matrix, m)?)?;
    Ok(())
}
