//! Driver for the `verify` subcommand: runs the numerical check suite,
//! persists the per-trial rows and summaries, and prints one verdict line
//! per check.

use std::fs;
use std::path::PathBuf;

use marginlab_core::verify::{run_suite, FaultInjection, SuiteConfig, SuiteReport};

use crate::CliError;

/// How many violating rows to echo per failing check.
const FAILURES_SHOWN: usize = 5;

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub trials: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Mixture specs drawn for the closed-form-vs-Monte-Carlo ranking check.
    pub auc_specs: usize,
    /// Monte-Carlo budget per mixture spec. The check's tolerance assumes
    /// the default; smaller budgets are for smoke runs only.
    pub auc_samples: usize,
    /// Fresh draws approximating the population loss per bound trial.
    pub gen_eval_size: usize,
    /// Deliberately break one check to demonstrate the suite can go red.
    pub inject_fault: bool,
}

impl VerifyOptions {
    pub fn new(trials: usize, seed: u64, out_dir: PathBuf) -> Self {
        let defaults = SuiteConfig::default();
        VerifyOptions {
            trials,
            seed,
            out_dir,
            auc_specs: defaults.auc_specs,
            auc_samples: defaults.auc_total_samples,
            gen_eval_size: defaults.gen_eval_size,
            inject_fault: false,
        }
    }
}

/// Runs the full suite and writes `checks.csv` and `summary.json` into the
/// output directory. Returns the report so callers can inspect it; the
/// error carries exit code 1 when any check fails.
pub fn run_verify(opts: &VerifyOptions) -> Result<SuiteReport, CliError> {
    if opts.trials == 0 {
        return Err(CliError::Config("--trials must be positive".to_string()));
    }
    let config = SuiteConfig {
        seed: opts.seed,
        trials: opts.trials,
        fault: if opts.inject_fault {
            FaultInjection::FlipPullBound
        } else {
            FaultInjection::None
        },
        auc_specs: opts.auc_specs,
        auc_total_samples: opts.auc_samples,
        gen_eval_size: opts.gen_eval_size,
        ..SuiteConfig::default()
    };
    let report = run_suite(&config)?;

    fs::create_dir_all(&opts.out_dir)?;
    let mut csv = String::from("check,trial,lhs,rhs,slack,pass\n");
    for row in &report.rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.check, row.trial, row.lhs, row.rhs, row.slack, row.pass
        ));
    }
    fs::write(opts.out_dir.join("checks.csv"), csv)?;
    let summary = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Runtime(format!("serialising summary: {e}")))?;
    fs::write(opts.out_dir.join("summary.json"), summary + "\n")?;

    for s in &report.summaries {
        println!(
            "{}: {}/{} trials pass [{}] {}",
            s.name,
            s.passes,
            s.trials,
            s.requirement,
            if s.pass { "ok" } else { "FAIL" }
        );
    }
    if report.all_pass {
        println!("all {} checks passed (seed {})", report.summaries.len(), report.seed);
        Ok(report)
    } else {
        let failed: Vec<&str> = report
            .summaries
            .iter()
            .filter(|s| !s.pass)
            .map(|s| s.name.as_str())
            .collect();
        for name in &failed {
            for row in report
                .rows
                .iter()
                .filter(|r| r.check == *name && !r.pass)
                .take(FAILURES_SHOWN)
            {
                println!(
                    "  {} trial {}: lhs {:.6e}, rhs {:.6e}, slack {:.3e}",
                    row.check, row.trial, row.lhs, row.rhs, row.slack
                );
            }
        }
        Err(CliError::CheckFailure(format!("checks failed: {}", failed.join(", "))))
    }
}
