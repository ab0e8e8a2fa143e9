use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use marginlab_cli::config::ExperimentConfig;
use marginlab_cli::{runner, suite, sweep, CliError};
use marginlab_core::verify::SuiteConfig;

#[derive(Parser)]
#[command(
    name = "marginlab",
    version,
    about = "Long-tail margin-loss laboratory: train small scorers on synthetic \
             imbalanced data and verify the bound suite numerically."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one scorer per seed from a JSON config; writes reports,
    /// CSV tables and SVG charts under the config's output_dir.
    Run {
        /// Path to the experiment config (JSON).
        config: PathBuf,
    },
    /// Run the numerical verification suite and write its artefacts.
    Verify {
        /// Base trial count for the per-instance checks.
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Directory for checks.csv and summary.json.
        #[arg(long, default_value = "verify_out")]
        out: PathBuf,
        /// Mixture specs for the ranking check.
        #[arg(long, default_value_t = SuiteConfig::default().auc_specs)]
        auc_specs: usize,
        /// Monte-Carlo budget per mixture spec; the check's tolerance is
        /// calibrated for the default.
        #[arg(long, default_value_t = SuiteConfig::default().auc_total_samples)]
        auc_samples: usize,
        /// Fresh draws approximating the population loss per bound trial.
        #[arg(long, default_value_t = SuiteConfig::default().gen_eval_size)]
        gen_eval_size: usize,
        /// Flip one comparison so the suite demonstrably goes red.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Re-render the SVG charts for an existing seed directory from its
    /// report.json (and embeddings.csv when present).
    Plot {
        /// A directory previously written by `run`, e.g. out/seed0.
        report_dir: PathBuf,
    },
    /// Rerun an experiment over a grid of pull/push weights and chart the
    /// sensitivity of balanced accuracy and embedding spread.
    Sweep {
        /// Path to the experiment config (JSON).
        config: PathBuf,
        /// Comma-separated grid, e.g. --lambda 0,0.01,0.1.
        #[arg(long, value_delimiter = ',', required = true)]
        lambda: Vec<f64>,
    },
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { config } => {
            let config = ExperimentConfig::from_file(&config)?;
            let summary = runner::run_experiment(&config)?;
            println!("aggregate over {} seed(s):", config.seeds.len());
            for (name, mean, std) in &summary.metrics {
                println!("  {name}: {mean:.4} +- {std:.4}");
            }
            println!("artefacts in {}", summary.output_dir.display());
            Ok(())
        }
        Command::Verify {
            trials,
            seed,
            out,
            auc_specs,
            auc_samples,
            gen_eval_size,
            inject_fault,
        } => {
            let mut opts = suite::VerifyOptions::new(trials, seed, out);
            opts.auc_specs = auc_specs;
            opts.auc_samples = auc_samples;
            opts.gen_eval_size = gen_eval_size;
            opts.inject_fault = inject_fault;
            suite::run_verify(&opts).map(|_| ())
        }
        Command::Plot { report_dir } => {
            runner::plot_dir(&report_dir)?;
            println!("charts written to {}", report_dir.display());
            Ok(())
        }
        Command::Sweep { config, lambda } => {
            let config = ExperimentConfig::from_file(&config)?;
            let summary = sweep::run_sweep(&config, &lambda)?;
            println!("sweep over {} grid point(s):", summary.rows.len());
            for row in &summary.rows {
                println!(
                    "  lambda {}: balanced accuracy {:.4}, mean trace variance {:.4}",
                    row.lambda, row.balanced_accuracy, row.mean_trace_variance
                );
            }
            println!("artefacts in {}", summary.output_dir.display());
            Ok(())
        }
    }
}

fn apply_thread_limit() -> Result<(), CliError> {
    match std::env::var("MARGINLAB_THREADS") {
        Ok(raw) => {
            let threads: usize = raw.parse().map_err(|_| {
                CliError::Config(format!("MARGINLAB_THREADS must be a positive integer, got {raw:?}"))
            })?;
            if threads == 0 {
                return Err(CliError::Config(
                    "MARGINLAB_THREADS must be a positive integer".to_string(),
                ));
            }
            marginlab_core::exec::limit_threads(threads)
                .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))
        }
        Err(_) => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = apply_thread_limit().and_then(|()| dispatch(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
