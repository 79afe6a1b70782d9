use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};
use tflow_core::benchgen::{
    generate_split, generate_synthetic, load_hierarchy, pairings, Centers, Pairing, SplitOptions,
    SplitPlan, SynthSpec,
};
use tflow_core::clustering::{
    cluster as run_clustering, hungarian_accuracy, mix_targets, sinkhorn_pseudo_labels,
    ClusteringConfig, SoftTargetMatrix,
};
use tflow_core::dataio::{
    csv_header, is_tfmx, load_binary, load_labels, load_matrix, read_csv, save_binary, save_csv,
    validate_probability_matrix, write_labels_csv, CsvContent, EmbeddingMatrix, LabelColumn,
    LabelVector,
};
use tflow_core::flow::{
    bootstrap_flow, flow_compare, pseudo_transfer_flow, transfer_flow, Provenance,
    PseudoLabelVector, Source,
};
use tflow_core::kernels::make_grid_with;
use tflow_core::TflowError;

use crate::report::{emit_plot_data, write_json, Metadata, PseudoJson, ReportFile};
use crate::{
    BandwidthBase, CliResult, ClusterArgs, ClusterOpts, CompareArgs, FlowArgs, MethodArg, MixArgs,
    PlotDataArgs, SplitArgs, SynthArgs,
};

type Labels = (LabelVector, Vec<String>);

/// Loads representations and, if requested, ground-truth labels from a
/// separate file or from a column of the representation CSV.
fn load_reps_and_labels(reps: &Path, labels: Option<&str>) -> CliResult<(EmbeddingMatrix, Option<Labels>)> {
    let Some(spec) = labels else {
        return Ok((load_matrix(reps)?, None));
    };
    let as_path = Path::new(spec);
    if as_path.is_file() {
        let matrix = load_matrix(reps)?;
        let labels = load_labels(as_path)?;
        if labels.0.len() != matrix.rows() {
            return Err(TflowError::LengthMismatch(matrix.rows(), labels.0.len()).into());
        }
        return Ok((matrix, Some(labels)));
    }
    let not_found = || {
        TflowError::InvalidConfig(format!(
            "--labels {spec:?} is neither a file nor a column of {}",
            reps.display()
        ))
    };
    if is_tfmx(reps)? {
        return Err(not_found().into());
    }
    let header = csv_header(reps)?;
    let column = if header.iter().any(|h| h == spec) {
        spec
    } else if matches!(spec, "label" | "labels") && header.iter().any(|h| h == "label") {
        "label"
    } else {
        return Err(not_found().into());
    };
    match read_csv(File::open(reps)?, &LabelColumn::Named(column.to_owned()))? {
        CsvContent::Labeled(ds) => Ok((ds.embeddings, Some((ds.labels, ds.class_names)))),
        CsvContent::Unlabeled(_) => unreachable!("a label column was requested"),
    }
}

fn clustering_config(method: MethodArg, k: usize, seed: u64, opts: &ClusterOpts) -> ClusteringConfig {
    ClusteringConfig {
        max_iter: opts.max_iter,
        tol: opts.tol,
        seed,
        gmm_reg: opts.gmm_reg,
        ..ClusteringConfig::new(method.into(), k)
    }
}

fn features(matrix: &EmbeddingMatrix, l2_normalize: bool) -> EmbeddingMatrix {
    if l2_normalize {
        matrix.l2_normalized()
    } else {
        matrix.clone()
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

pub fn flow(args: FlowArgs, pseudo_mode: bool) -> CliResult<()> {
    let method = match (args.pseudo_from, &args.pseudo_labels) {
        (Some(m), _) => Some(m),
        (None, None) if pseudo_mode => Some(MethodArg::Kmeans),
        _ => None,
    };
    let pseudo = method.is_some() || args.pseudo_labels.is_some();
    let (matrix, truth) = load_reps_and_labels(&args.reps, args.labels.as_deref())?;
    if !pseudo && truth.is_none() {
        return Err(TflowError::InvalidConfig(
            "--labels is required unless pseudo labels are requested".into(),
        )
        .into());
    }
    if args.probabilities {
        validate_probability_matrix(matrix.clone())?;
    }
    let base = match args.bandwidth_base {
        BandwidthBase::Auto => None,
        BandwidthBase::Value(v) => Some(v),
    };
    let (grid, specs) = make_grid_with(&matrix, args.kernel.into(), &args.bandwidths, base)?;
    log::info!("bandwidth base {} over {} rows", grid.base, matrix.rows());

    let mut clustering = Value::Null;
    let (labels, class_names, pseudo_json) = if pseudo {
        let pl = match (method, &args.pseudo_labels) {
            (Some(method), _) => {
                let k = args
                    .clustering
                    .k
                    .or(truth.as_ref().map(|t| t.0.class_count()))
                    .ok_or_else(|| {
                        TflowError::InvalidConfig("--k is required when no labels are given".into())
                    })?;
                let cfg = clustering_config(method, k, args.seed, &args.clustering);
                clustering = json!({
                    "method": method,
                    "k": k,
                    "max_iter": cfg.max_iter,
                    "tol": cfg.tol,
                    "gmm_reg": cfg.gmm_reg,
                    "linkage": cfg.linkage,
                    "seed": cfg.seed,
                    "l2_normalize": args.clustering.l2_normalize,
                });
                run_clustering(&features(&matrix, args.clustering.l2_normalize), &cfg)?
            }
            (None, Some(path)) => {
                PseudoLabelVector::from_labels(load_labels(path)?.0, Provenance::External)
            }
            (None, None) => unreachable!("pseudo mode has a label source"),
        };
        let accuracy = truth
            .as_ref()
            .map(|t| hungarian_accuracy(pl.as_slice(), t.0.as_slice()))
            .transpose()?;
        let info = PseudoJson {
            provenance: format!("{:?}", pl.provenance).to_lowercase(),
            clusters: pl.cluster_count(),
            accuracy,
        };
        (pl.labels, Vec::new(), Some(info))
    } else {
        let (labels, names) = truth.expect("checked above");
        (labels, names, None)
    };

    let mut report = if pseudo {
        let pl = PseudoLabelVector::from_labels(labels.clone(), Provenance::External);
        pseudo_transfer_flow(&matrix, &pl, &specs)?
    } else {
        transfer_flow(&matrix, &labels, &specs)?
    };
    if args.replicates > 0 {
        report.bootstrap = Some(bootstrap_flow(&matrix, &labels, &specs, args.replicates, args.seed)?);
    }
    for w in &report.warnings {
        log::warn!("{w}");
    }

    let config = json!({
        "command": if pseudo_mode { "pseudo-flow" } else { "flow" },
        "reps": path_str(&args.reps),
        "labels": args.labels,
        "pseudo_from": method,
        "pseudo_labels": args.pseudo_labels.as_deref().map(path_str),
        "clustering": clustering,
        "kernel": grid.family,
        "bandwidths": args.bandwidths,
        "bandwidth_base": args.bandwidth_base.to_string(),
        "replicates": args.replicates,
        "seed": args.seed,
        "probabilities": args.probabilities,
    });
    let file = ReportFile::new(&report, &grid, &class_names, pseudo_json, config);
    write_json(&file, args.out.as_deref())?;
    if let Some(plot) = &args.plot_data {
        let tag = args.tag.clone().unwrap_or_else(|| {
            args.out
                .as_deref()
                .and_then(Path::file_stem)
                .map_or_else(|| "flow".to_owned(), |s| s.to_string_lossy().into_owned())
        });
        emit_plot_data(&file, &tag, args.accuracy, plot)?;
    }
    Ok(())
}

pub fn cluster(args: ClusterArgs) -> CliResult<()> {
    let matrix = load_matrix(&args.reps)?;
    let opts = ClusterOpts {
        k: Some(args.k),
        max_iter: args.max_iter,
        tol: args.tol,
        gmm_reg: args.gmm_reg,
        l2_normalize: args.l2_normalize,
    };
    let cfg = clustering_config(args.method, args.k, args.seed, &opts);
    let labels = run_clustering(&features(&matrix, args.l2_normalize), &cfg)?;
    log::info!("{} rows in {} clusters", labels.as_slice().len(), labels.cluster_count());
    write_labels_csv(BufWriter::new(File::create(&args.out)?), labels.as_slice())?;
    Ok(())
}

#[derive(Serialize)]
struct PlanFile<'a> {
    #[serde(flatten)]
    plan: &'a SplitPlan,
    pairings: Vec<Pairing>,
    config: Value,
    metadata: Metadata,
}

pub fn split(args: SplitArgs) -> CliResult<()> {
    let hierarchy = load_hierarchy(&args.hierarchy)?;
    let options = SplitOptions {
        seed: args.seed,
        canonical: args.canonical,
    };
    let plan = generate_split(
        &hierarchy,
        args.labeled_per_super,
        args.unlabeled_per_super,
        options,
    )?;
    let file = PlanFile {
        pairings: pairings(&plan),
        plan: &plan,
        config: json!({
            "hierarchy": path_str(&args.hierarchy),
            "labeled_per_super": args.labeled_per_super,
            "unlabeled_per_super": args.unlabeled_per_super,
            "seed": args.seed,
            "canonical": args.canonical,
        }),
        metadata: Metadata::now(),
    };
    write_json(&file, Some(&args.out))
}

pub fn synth(args: SynthArgs) -> CliResult<()> {
    let ds = generate_synthetic(&SynthSpec {
        classes: args.classes,
        dim: args.dim,
        per_class: args.per_class,
        centers: Centers::Simplex {
            separation: args.sep,
        },
        variance: args.variance,
        seed: args.seed,
    })?;
    save_csv(&args.out, &ds.embeddings, Some((&ds.labels, &ds.class_names)))?;
    Ok(())
}

pub fn compare(args: CompareArgs) -> CliResult<()> {
    let a = ReportFile::load(&args.a)?;
    let b = ReportFile::load(&args.b)?;
    let rec = flow_compare(&a.to_flow_report(), &b.to_flow_report())?;
    let recommendation = match (rec.inconclusive, rec.larger) {
        (false, Some(Source::Supervised)) => "supervised",
        (false, Some(Source::SelfSupervised)) => "self_supervised",
        _ => "inconclusive",
    };
    let out = json!({
        "recommendation": recommendation,
        "larger": rec.larger,
        "gap": rec.gap,
        "combined_std": rec.combined_std,
        "inconclusive": rec.inconclusive,
        "supervised_total": a.total,
        "self_supervised_total": b.total,
    });
    write_json(&out, None)
}

/// One-hot rows of width `k` from a label file. Integer label names are used
/// as column indices directly; other names by their sorted position.
fn one_hot_from_file(path: &Path, k: usize) -> CliResult<SoftTargetMatrix> {
    let (labels, names) = load_labels(path)?;
    let numeric: Option<Vec<usize>> = names.iter().map(|n| n.parse().ok()).collect();
    let mut data = vec![0.0; labels.len() * k];
    for (i, &id) in labels.as_slice().iter().enumerate() {
        let col = numeric.as_ref().map_or(id, |n| n[id]);
        if col >= k {
            return Err(TflowError::IndexOutOfRange { index: col, len: k }.into());
        }
        data[i * k + col] = 1.0;
    }
    Ok(SoftTargetMatrix::new(EmbeddingMatrix::new(labels.len(), k, data)?)?)
}

pub fn mix(args: MixArgs) -> CliResult<()> {
    let pl = match (&args.pl, &args.pl_from_logits) {
        (Some(path), _) => SoftTargetMatrix::new(load_matrix(path)?)?,
        (None, Some(path)) => sinkhorn_pseudo_labels(&load_matrix(path)?, args.epsilon, args.iters)?,
        (None, None) => unreachable!("clap requires one pseudo-label source"),
    };
    let gt = if is_tfmx(&args.gt)? {
        SoftTargetMatrix::new(load_binary(&args.gt)?)?
    } else {
        one_hot_from_file(&args.gt, pl.cols())?
    };
    let mixed = mix_targets(&gt, &pl, args.alpha)?;
    if args.out.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        save_csv(&args.out, &mixed, None)?;
    } else {
        save_binary(&mixed, &args.out)?;
    }
    Ok(())
}

pub fn plot_data(args: PlotDataArgs) -> CliResult<()> {
    let report = ReportFile::load(&args.report)?;
    let tag = args.tag.unwrap_or_else(|| {
        args.report
            .file_stem()
            .map_or_else(String::new, |s| s.to_string_lossy().into_owned())
    });
    emit_plot_data(&report, &tag, args.accuracy, &args.out)
}
