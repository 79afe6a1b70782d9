use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use tflow_core::flow::{BootstrapSummary, FlowReport};
use tflow_core::kernels::BandwidthGrid;

use crate::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapJson {
    pub mean: f64,
    pub std: f64,
    #[serde(default)]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KernelJson {
    pub family: String,
    pub base_h: f64,
    pub multipliers: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPairJson {
    pub c: String,
    pub c_prime: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoJson {
    pub provenance: String,
    pub clusters: usize,
    /// Hungarian accuracy against the ground-truth labels, when given.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    /// Seconds since the Unix epoch (`SOURCE_DATE_EPOCH` when set).
    pub timestamp: u64,
    pub tool_version: String,
}

impl Metadata {
    pub fn now() -> Self {
        let timestamp = std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|s| s.parse().ok())
            .unwrap_or_else(|| {
                SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map_or(0, |d| d.as_secs())
            });
        Self {
            timestamp,
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
        }
    }
}

/// On-disk flow report. Everything except `metadata` is a pure function of
/// the inputs and resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub total: f64,
    /// Bandwidth → flow, in grid order.
    #[serde(default)]
    pub per_bandwidth: Map<String, Value>,
    #[serde(default)]
    pub bootstrap: Option<BootstrapJson>,
    pub m: usize,
    #[serde(default)]
    pub classes: usize,
    #[serde(default)]
    pub class_names: Vec<String>,
    #[serde(default)]
    pub kernel: KernelJson,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default)]
    pub class_pairs: Vec<ClassPairJson>,
    #[serde(default)]
    pub pseudo: Option<PseudoJson>,
    #[serde(default)]
    pub config: Value,
    #[serde(default)]
    pub metadata: Metadata,
}

impl ReportFile {
    pub fn new(
        report: &FlowReport,
        grid: &BandwidthGrid,
        class_names: &[String],
        pseudo: Option<PseudoJson>,
        config: Value,
    ) -> Self {
        let per_bandwidth = report
            .per_bandwidth
            .iter()
            .map(|bw| (bw.bandwidth.to_string(), Value::from(bw.value)))
            .collect();
        let name = |c: usize| class_names.get(c).cloned().unwrap_or_else(|| c.to_string());
        Self {
            total: report.total,
            per_bandwidth,
            bootstrap: report.bootstrap.as_ref().map(|b| BootstrapJson {
                mean: b.mean,
                std: b.std,
                replicates: b.replicates,
                seed: b.seed,
                samples: b.samples.clone(),
            }),
            m: report.m,
            classes: report.class_count,
            class_names: class_names.to_vec(),
            kernel: KernelJson {
                family: grid.family.to_string(),
                base_h: grid.base,
                multipliers: grid.multipliers.clone(),
            },
            warnings: report.warnings.clone(),
            class_pairs: report
                .class_pair_table
                .iter()
                .map(|p| ClassPairJson {
                    c: name(p.c),
                    c_prime: name(p.c_prime),
                    value: p.value,
                })
                .collect(),
            pseudo,
            config,
            metadata: Metadata::now(),
        }
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let file = File::open(path)?;
        serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| CliError::Report {
            path: path.to_owned(),
            detail: e.to_string(),
        })
    }

    /// The parts of the report `flow_compare` looks at.
    pub fn to_flow_report(&self) -> FlowReport {
        FlowReport {
            per_bandwidth: Vec::new(),
            total: self.total,
            bootstrap: self.bootstrap.as_ref().map(|b| BootstrapSummary {
                mean: b.mean,
                std: b.std,
                replicates: b.replicates,
                seed: b.seed,
                samples: b.samples.clone(),
            }),
            class_pair_table: Vec::new(),
            m: self.m,
            class_count: self.classes,
            warnings: self.warnings.clone(),
        }
    }
}

/// Pretty JSON to `out`, or standard output when `out` is `None`.
pub fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable value");
    match out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            writeln!(w, "{text}")?;
            w.flush()?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Appends one `tag,flow,flow_std,accuracy` row, writing the header first when
/// the file is new or empty. Missing values are left as empty cells.
pub fn emit_plot_data(
    report: &ReportFile,
    tag: &str,
    accuracy: Option<f64>,
    out: &Path,
) -> CliResult<()> {
    let mut file = OpenOptions::new().create(true).append(true).open(out)?;
    if file.metadata()?.len() == 0 {
        writeln!(file, "tag,flow,flow_std,accuracy")?;
    }
    let std = report
        .bootstrap
        .as_ref()
        .map_or(String::new(), |b| b.std.to_string());
    let acc = accuracy.map_or(String::new(), |a| a.to_string());
    writeln!(file, "{},{},{std},{acc}", csv_field(tag), report.total)?;
    Ok(())
}
