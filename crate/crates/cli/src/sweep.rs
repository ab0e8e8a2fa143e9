//! Regulariser-weight sweep: reruns an experiment over a grid of pull/push
//! weights and charts how balanced accuracy and embedding spread respond.

use std::fs;
use std::path::PathBuf;

use crate::config::ExperimentConfig;
use crate::plots;
use crate::runner::run_experiment;
use crate::CliError;

/// Aggregates for one grid point.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub balanced_accuracy: f64,
    pub balanced_accuracy_std: f64,
    pub mean_trace_variance: f64,
    pub mean_trace_variance_std: f64,
}

#[derive(Debug)]
pub struct SweepSummary {
    pub output_dir: PathBuf,
    pub rows: Vec<SweepRow>,
}

/// Runs the experiment once per grid value with `lambda_pull` and
/// `lambda_push` both set to it. Each run writes its artefacts under
/// `output_dir/lambda_{value}/`; the sweep table and sensitivity chart land
/// in `output_dir` itself.
pub fn run_sweep(config: &ExperimentConfig, lambdas: &[f64]) -> Result<SweepSummary, CliError> {
    if lambdas.is_empty() {
        return Err(CliError::Config("--lambda needs at least one value".to_string()));
    }
    if lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(CliError::Config(
            "--lambda values must be finite and non-negative".to_string(),
        ));
    }
    let mut grid = lambdas.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite grid"));
    grid.dedup();

    let out = &config.output_dir;
    fs::create_dir_all(out)?;
    let mut rows = Vec::with_capacity(grid.len());
    for &lambda in &grid {
        let mut point = config.clone();
        point.loss.lambda_pull = lambda;
        point.loss.lambda_push = lambda;
        point.output_dir = out.join(format!("lambda_{lambda}"));
        println!("lambda = {lambda}");
        let summary = run_experiment(&point)?;
        let get = |name: &str| {
            summary
                .metrics
                .iter()
                .find(|(n, _, _)| n == name)
                .map(|&(_, mean, std)| (mean, std))
                .ok_or_else(|| CliError::Runtime(format!("missing metric {name}")))
        };
        let (bal, bal_std) = get("balanced_accuracy")?;
        let (tv, tv_std) = get("mean_trace_variance")?;
        rows.push(SweepRow {
            lambda,
            balanced_accuracy: bal,
            balanced_accuracy_std: bal_std,
            mean_trace_variance: tv,
            mean_trace_variance_std: tv_std,
        });
    }

    let mut csv = String::from(
        "lambda,balanced_accuracy,balanced_accuracy_std,mean_trace_variance,mean_trace_variance_std\n",
    );
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.lambda,
            r.balanced_accuracy,
            r.balanced_accuracy_std,
            r.mean_trace_variance,
            r.mean_trace_variance_std
        ));
    }
    fs::write(out.join("sweep.csv"), csv)?;

    let grid_vals: Vec<f64> = rows.iter().map(|r| r.lambda).collect();
    let bal: Vec<f64> = rows.iter().map(|r| r.balanced_accuracy).collect();
    let tv: Vec<f64> = rows.iter().map(|r| r.mean_trace_variance).collect();
    fs::write(out.join("sensitivity.svg"), plots::sensitivity_svg(&grid_vals, &bal, &tv))?;
    Ok(SweepSummary { output_dir: out.clone(), rows })
}
