//! Drives an experiment config end to end: draw data, train one scorer per
//! seed, write per-seed artefacts (report, CSVs, SVG charts) and an
//! aggregate metrics table.
//!
//! All output is deterministic in the config: reruns produce byte-identical
//! files.

use std::fs;
use std::path::{Path, PathBuf};

use marginlab_core::exec::{self, Parallelism};
use marginlab_core::metrics::Report;
use marginlab_core::scorer;
use marginlab_core::trainer::{train_with_eval, TrainOutcome};
use ndarray::Array2;

use crate::config::ExperimentConfig;
use crate::plots;
use crate::CliError;

/// One trained seed with the eval-split tensors the charts need.
pub struct SeedRun {
    pub seed: u64,
    pub outcome: TrainOutcome,
    pub eval_embeddings: Array2<f64>,
    pub eval_labels: Vec<usize>,
}

/// Aggregate over seeds: metric name, mean, and unbiased standard deviation.
pub type MetricRow = (String, f64, f64);

pub struct ExperimentSummary {
    pub output_dir: PathBuf,
    pub metrics: Vec<MetricRow>,
}

/// Trains a single seed of the experiment.
pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedRun, CliError> {
    let (train, eval) = config.build_datasets(seed)?;
    let train_config = config.build_train_config(&train, seed)?;
    let arch = config.arch();
    let outcome =
        train_with_eval(&train, &eval, &arch, &train_config).map_err(|e| {
            match CliError::from(e) {
                CliError::Divergence(msg) => CliError::Divergence(format!("seed {seed}: {msg}")),
                other => other,
            }
        })?;
    let eval_embeddings = scorer::forward(&outcome.params, &eval.features)?.embeddings;
    Ok(SeedRun { seed, outcome, eval_embeddings, eval_labels: eval.labels })
}

/// Runs every seed, writes all artefacts under `config.output_dir`, and
/// returns the aggregate table written to `metrics.csv`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary, CliError> {
    let out = &config.output_dir;
    fs::create_dir_all(out)?;
    let config_json = serde_json::to_string_pretty(config)
        .map_err(|e| CliError::Runtime(format!("serialising config: {e}")))?;
    fs::write(out.join("config.json"), config_json + "\n")?;

    // Seeds train concurrently; artefact writes happen afterwards in seed
    // order so the output (files and stdout) is independent of scheduling.
    let runs = exec::try_map_indexed(Parallelism::default(), config.seeds.len(), |i| {
        run_seed(config, config.seeds[i])
    })?;
    let mut reports = Vec::with_capacity(runs.len());
    for run in runs {
        let seed_dir = out.join(format!("seed{}", run.seed));
        write_seed_outputs(&seed_dir, &run)?;
        println!(
            "seed {}: accuracy {:.4}, balanced accuracy {:.4}, mean trace variance {:.4}",
            run.seed,
            run.outcome.report.accuracy,
            run.outcome.report.balanced_accuracy,
            run.outcome.report.mean_trace_variance
        );
        reports.push(run.outcome.report);
    }

    let metrics = aggregate_metrics(&reports);
    write_metrics_csv(&out.join("metrics.csv"), &metrics)?;
    Ok(ExperimentSummary { output_dir: out.clone(), metrics })
}

/// Writes the report, CSV tables, and charts for one seed.
pub fn write_seed_outputs(dir: &Path, run: &SeedRun) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    let report = &run.outcome.report;

    let report_json = serde_json::to_string_pretty(report)
        .map_err(|e| CliError::Runtime(format!("serialising report: {e}")))?;
    fs::write(dir.join("report.json"), report_json + "\n")?;

    let mut history = String::from(
        "epoch,lr,train_objective,margin_ce,pull,push,center,\
         eval_accuracy,eval_balanced_accuracy,eval_mean_trace_variance\n",
    );
    for rec in &run.outcome.history {
        history.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            rec.epoch,
            rec.lr,
            rec.train_objective,
            rec.train_parts.margin_ce,
            rec.train_parts.pull,
            rec.train_parts.push,
            rec.train_parts.center,
            rec.eval_accuracy,
            rec.eval_balanced_accuracy,
            rec.eval_mean_trace_variance
        ));
    }
    fs::write(dir.join("history.csv"), history)?;

    let mut margins = String::from("class,margin\n");
    for (y, class_margins) in report.margins.iter().enumerate() {
        for v in class_margins {
            margins.push_str(&format!("{y},{v}\n"));
        }
    }
    fs::write(dir.join("margins.csv"), margins)?;

    let mut cdf = String::from("class,margin,fraction\n");
    for y in 0..report.num_classes {
        for (v, f) in report.margin_cdf(y) {
            cdf.push_str(&format!("{y},{v},{f}\n"));
        }
    }
    fs::write(dir.join("margin_cdf.csv"), cdf)?;

    let mut intra = String::from("class,eval_count,accuracy,trace_variance,margin_variance\n");
    for y in 0..report.num_classes {
        intra.push_str(&format!(
            "{y},{},{},{},{}\n",
            report.eval_counts[y],
            report.per_class_accuracy[y],
            report.class_trace_variance[y],
            report.margin_variance[y]
        ));
    }
    fs::write(dir.join("intra_class.csv"), intra)?;

    if run.eval_embeddings.ncols() == 2 {
        let mut emb = String::from("e0,e1,label\n");
        for (i, row) in run.eval_embeddings.rows().into_iter().enumerate() {
            emb.push_str(&format!("{},{},{}\n", row[0], row[1], run.eval_labels[i]));
        }
        fs::write(dir.join("embeddings.csv"), emb)?;
    }

    emit_plots(dir, report, Some((&run.eval_embeddings, &run.eval_labels)))?;
    Ok(())
}

/// Renders the SVG charts for a report into `dir`. The embedding scatter is
/// only drawn when the embedding space is two dimensional.
pub fn emit_plots(
    dir: &Path,
    report: &Report,
    embeddings: Option<(&Array2<f64>, &[usize])>,
) -> Result<(), CliError> {
    fs::write(dir.join("margins.svg"), plots::margin_histograms_svg(report))?;
    fs::write(dir.join("margin_cdf.svg"), plots::margin_cdf_svg(report))?;
    fs::write(dir.join("intra.svg"), plots::intra_class_svg(report))?;
    fs::write(dir.join("buckets.svg"), plots::buckets_svg(report))?;
    if let Some((emb, labels)) = embeddings {
        if emb.ncols() == 2 {
            fs::write(dir.join("embeddings.svg"), plots::embeddings_svg(emb, labels))?;
        }
    }
    Ok(())
}

/// Re-renders the charts for an existing seed directory from its
/// `report.json` (and `embeddings.csv` when present).
pub fn plot_dir(dir: &Path) -> Result<(), CliError> {
    let report_path = dir.join("report.json");
    let text = fs::read_to_string(&report_path).map_err(|e| {
        CliError::Config(format!("cannot read {}: {e}", report_path.display()))
    })?;
    let report: Report = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("parsing {}: {e}", report_path.display())))?;

    let emb_path = dir.join("embeddings.csv");
    let parsed = if emb_path.exists() {
        Some(read_embeddings_csv(&emb_path)?)
    } else {
        None
    };
    let borrow = parsed.as_ref().map(|(e, l)| (e, l.as_slice()));
    emit_plots(dir, &report, borrow)?;
    Ok(())
}

fn read_embeddings_csv(path: &Path) -> Result<(Array2<f64>, Vec<usize>), CliError> {
    let text = fs::read_to_string(path)?;
    let mut coords = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let mut parts = line.split(',');
        let bad = || CliError::Config(format!("{}: malformed line {}", path.display(), i + 1));
        let e0: f64 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let e1: f64 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let label: usize = parts.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
        coords.push([e0, e1]);
        labels.push(label);
    }
    let emb = Array2::from_shape_fn((coords.len(), 2), |(i, j)| coords[i][j]);
    Ok((emb, labels))
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Cross-seed mean and unbiased standard deviation of the headline metrics.
/// Bucket rows are included only when every seed produced that bucket.
pub fn aggregate_metrics(reports: &[Report]) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    let mut push = |name: &str, values: Vec<f64>| {
        let (mean, std) = mean_and_std(&values);
        rows.push((name.to_string(), mean, std));
    };
    push("accuracy", reports.iter().map(|r| r.accuracy).collect());
    push("balanced_accuracy", reports.iter().map(|r| r.balanced_accuracy).collect());
    push("balanced_error", reports.iter().map(|r| r.balanced_error).collect());
    push("ovr_auc", reports.iter().map(|r| r.ovr_auc).collect());
    push("mean_trace_variance", reports.iter().map(|r| r.mean_trace_variance).collect());
    push(
        "mean_margin_variance",
        reports
            .iter()
            .map(|r| r.margin_variance.iter().sum::<f64>() / r.margin_variance.len() as f64)
            .collect(),
    );
    for bucket in ["Head", "Torso", "Tail"] {
        let per_seed: Vec<Option<f64>> = reports
            .iter()
            .map(|r| {
                r.bucket_rows
                    .iter()
                    .find(|row| row.bucket.to_string() == bucket)
                    .map(|row| row.accuracy)
            })
            .collect();
        if per_seed.iter().all(|v| v.is_some()) {
            push(
                &format!("{}_accuracy", bucket.to_lowercase()),
                per_seed.into_iter().map(|v| v.expect("checked")).collect(),
            );
        }
    }
    rows
}

fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<(), CliError> {
    let mut text = String::from("metric,mean,std\n");
    for (name, mean, std) in rows {
        text.push_str(&format!("{name},{mean},{std}\n"));
    }
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use marginlab_core::data::BucketThresholds;
    use marginlab_core::metrics::build_report;
    use ndarray::array;

    fn report_with_counts(train_counts: &[usize]) -> Report {
        let logits = array![[2.0, -1.0], [1.5, 0.5], [-0.5, 1.0], [0.2, 0.9]];
        let emb = array![[0.0, 0.0], [0.2, 0.1], [1.0, 1.0], [0.9, 1.2]];
        build_report(&logits, &emb, &[0, 0, 1, 1], 2, train_counts, BucketThresholds::default())
            .unwrap()
    }

    #[test]
    fn aggregate_uses_unbiased_std_and_zero_for_single_seed() {
        let r = report_with_counts(&[150, 8]);
        let single = aggregate_metrics(std::slice::from_ref(&r));
        let acc_row = single.iter().find(|(n, _, _)| n == "accuracy").unwrap();
        assert_eq!(acc_row.2, 0.0);

        let pair = aggregate_metrics(&[r.clone(), r.clone()]);
        let acc_pair = pair.iter().find(|(n, _, _)| n == "accuracy").unwrap();
        assert_eq!(acc_pair.1, r.accuracy);
        assert_eq!(acc_pair.2, 0.0);
    }

    #[test]
    fn mean_and_std_matches_hand_computation() {
        let (mean, std) = mean_and_std(&[1.0, 2.0, 3.0]);
        assert_eq!(mean, 2.0);
        approx::assert_abs_diff_eq!(std, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn bucket_rows_require_presence_in_every_seed() {
        // First report has a Head and a Tail class; second is all Tail.
        let a = report_with_counts(&[150, 8]);
        let b = report_with_counts(&[10, 8]);
        let rows = aggregate_metrics(&[a, b]);
        assert!(rows.iter().any(|(n, _, _)| n == "tail_accuracy"));
        assert!(!rows.iter().any(|(n, _, _)| n == "head_accuracy"));
    }
}
