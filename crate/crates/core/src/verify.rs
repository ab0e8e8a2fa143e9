//! Randomised verification suite over every proved statement in the library.
//!
//! Each [`CheckKind`] draws many random instances, evaluates both sides of
//! one statement from [`crate::bounds`] or [`crate::losses`] on each, and
//! aggregates the outcomes. Trials are seeded individually through
//! [`crate::rng::derive_seed`], so results are byte-identical across runs
//! and across sequential and parallel execution.
//!
//! [`FaultInjection`] deliberately corrupts one check so that the harness's
//! ability to fail can itself be demonstrated; it exists for negative
//! controls only.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::bounds::{
    self, bayes_logistic_realizability_check, bennett_bound, empirical_auc_mc,
    gaussian_auc_closed_form, gen_bound_check, loss_variance_lemma_check, pull_bound_check,
    push_bound_check, variance_identity_check, BinaryPerClass, GenBoundRecord,
};
use crate::data::{GaussianClass, GaussianMixtureSpec};
use crate::error::{Error, Result};
use crate::exec::{try_map_indexed, Parallelism};
use crate::losses::{
    class_centroids, center_loss, dro_lt_reg, dro_lt_reg_split_form, gaussian_xent_penalty,
    hard_pull, pull_reg,
};
use crate::rng::{derive_seed, rng_from_seed};

/// Fraction of concentration-bound trials that must cover the true mean.
pub const BENNETT_COVERAGE_MIN: f64 = 0.945;
/// Fraction of generalisation-bound trials in which the bound must hold.
pub const GEN_BOUND_HOLD_MIN: f64 = 0.99;
/// Allowed gap between the closed-form and Monte-Carlo AUC.
pub const AUC_MC_TOL: f64 = 3e-3;

/// One statement the suite knows how to test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    VarianceIdentity = 0,
    PullBound = 1,
    PushBound = 2,
    VarianceChain = 3,
    DroSplitEquivalence = 4,
    CenterGaussianEquivalence = 5,
    HardPullStrict = 6,
    AucClosedVsMc = 7,
    BennettCoverage = 8,
    GenBound = 9,
    BayesRealizability = 10,
}

/// Every check, in reporting order.
pub const ALL_CHECKS: [CheckKind; 11] = [
    CheckKind::VarianceIdentity,
    CheckKind::PullBound,
    CheckKind::PushBound,
    CheckKind::VarianceChain,
    CheckKind::DroSplitEquivalence,
    CheckKind::CenterGaussianEquivalence,
    CheckKind::HardPullStrict,
    CheckKind::AucClosedVsMc,
    CheckKind::BennettCoverage,
    CheckKind::GenBound,
    CheckKind::BayesRealizability,
];

impl CheckKind {
    pub fn name(self) -> &'static str {
        match self {
            CheckKind::VarianceIdentity => "variance_identity",
            CheckKind::PullBound => "pull_bound",
            CheckKind::PushBound => "push_bound",
            CheckKind::VarianceChain => "variance_chain",
            CheckKind::DroSplitEquivalence => "dro_split_equivalence",
            CheckKind::CenterGaussianEquivalence => "center_gaussian_equivalence",
            CheckKind::HardPullStrict => "hard_pull_strict",
            CheckKind::AucClosedVsMc => "auc_closed_vs_mc",
            CheckKind::BennettCoverage => "bennett_coverage",
            CheckKind::GenBound => "gen_bound",
            CheckKind::BayesRealizability => "bayes_realizability",
        }
    }

    /// How per-trial outcomes combine into a verdict for the whole check.
    pub fn requirement(self) -> &'static str {
        match self {
            CheckKind::BennettCoverage => "coverage of the true mean in at least 94.5% of trials",
            CheckKind::GenBound => "bound holds in at least 99% of trials",
            _ => "every trial passes",
        }
    }
}

/// Deliberate corruption for negative-control runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FaultInjection {
    #[default]
    None,
    /// Reverses the direction of the pull-bound comparison, so a healthy
    /// implementation is reported as violating it.
    FlipPullBound,
}

/// Controls for one suite run.
#[derive(Debug, Clone, Copy)]
pub struct SuiteConfig {
    pub seed: u64,
    /// Base trial count for the per-instance algebraic checks. Coverage
    /// checks scale it: the concentration check runs `10 x trials`, the
    /// generalisation check `trials / 10` (at least 20).
    pub trials: usize,
    pub parallelism: Parallelism,
    pub fault: FaultInjection,
    /// Mixture specs tested by the AUC check.
    pub auc_specs: usize,
    /// Monte-Carlo sample budget per AUC spec, split across classes.
    pub auc_total_samples: usize,
    /// Fresh samples approximating the population loss per bound trial.
    pub gen_eval_size: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seed: 7,
            trials: 1000,
            parallelism: Parallelism::default(),
            fault: FaultInjection::None,
            auc_specs: 10,
            auc_total_samples: 1_000_000,
            gen_eval_size: 100_000,
        }
    }
}

/// Outcome of one random instance of one check.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CheckRow {
    pub check: String,
    pub trial: usize,
    pub lhs: f64,
    pub rhs: f64,
    /// Margin for inequalities (negative means violated), absolute or
    /// relative error for identities (large means violated).
    pub slack: f64,
    pub pass: bool,
}

/// Aggregate verdict for one check.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CheckSummary {
    pub name: String,
    pub trials: usize,
    pub passes: usize,
    pub min_slack: f64,
    pub max_slack: f64,
    pub requirement: String,
    pub pass: bool,
}

/// Everything one suite run produced.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub summaries: Vec<CheckSummary>,
    pub rows: Vec<CheckRow>,
    pub all_pass: bool,
}

/// Rows plus the digest for a single check.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub summary: CheckSummary,
    pub rows: Vec<CheckRow>,
}

fn gen_embeddings(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, k), |_| rng.gen_range(-3.0..3.0))
}

/// Random labels over `0..l` with every class present at least once.
fn gen_covering_labels(rng: &mut ChaCha8Rng, n: usize, l: usize) -> Vec<usize> {
    debug_assert!(n >= l);
    let mut labels: Vec<usize> = (0..l).collect();
    for _ in l..n {
        labels.push(rng.gen_range(0..l));
    }
    labels.shuffle(rng);
    labels
}

fn gen_mixture_spec(rng: &mut ChaCha8Rng, l: usize, d: usize, shared_sigma: bool) -> GaussianMixtureSpec {
    let raw: Vec<f64> = (0..l).map(|_| rng.gen_range(0.2..1.0)).collect();
    let z: f64 = raw.iter().sum();
    let sigma = rng.gen_range(0.5..2.0);
    let classes = (0..l)
        .map(|y| GaussianClass {
            mean: (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            sigma_sq: if shared_sigma { sigma } else { rng.gen_range(0.5..2.0) },
            prior: raw[y] / z,
        })
        .collect();
    GaussianMixtureSpec { classes }
}

fn row(check: CheckKind, trial: usize, lhs: f64, rhs: f64, slack: f64, pass: bool) -> CheckRow {
    CheckRow { check: check.name().to_string(), trial, lhs, rhs, slack, pass }
}

fn variance_identity_trial(trial: usize, seed: u64) -> Result<CheckRow> {
    let mut rng = rng_from_seed(seed);
    let n = rng.gen_range(2..=40);
    let k = rng.gen_range(1..=8);
    let emb = gen_embeddings(&mut rng, n, k);
    let rec = variance_identity_check(&emb)?;
    Ok(row(CheckKind::VarianceIdentity, trial, rec.lhs, rec.rhs, rec.slack, rec.pass))
}

fn pull_bound_trial(trial: usize, seed: u64, fault: FaultInjection) -> Result<CheckRow> {
    let mut rng = rng_from_seed(seed);
    let n = rng.gen_range(2..=30);
    let k = rng.gen_range(1..=6);
    let alpha = rng.gen_range(-1.0..3.0);
    let emb = gen_embeddings(&mut rng, n, k);
    let rec = pull_bound_check(&emb, alpha)?;
    if fault == FaultInjection::FlipPullBound {
        // Negative control: pretend the statement ran the other way.
        let slack = -rec.slack;
        return Ok(row(
            CheckKind::PullBound,
            trial,
            rec.rhs,
            rec.lhs,
            slack,
            slack >= -bounds::SLACK_TOL,
        ));
    }
    Ok(row(CheckKind::PullBound, trial, rec.lhs, rec.rhs, rec.slack, rec.pass))
}

fn push_bound_trial(trial: usize, seed: u64) -> Result<CheckRow> {
    let mut rng = rng_from_seed(seed);
    let l = rng.gen_range(2..=5);
    let n = rng.gen_range(l..=24);
    let k = rng.gen_range(1..=4);
    let labels = gen_covering_labels(&mut rng, n, l);
    let beta: Array1<f64> = (0..l).map(|_| rng.gen_range(-1.0..2.0)).collect();
    let emb = gen_embeddings(&mut rng, n, k);
    let rec = push_bound_check(&emb, &labels, &beta)?;
    Ok(row(CheckKind::PushBound, trial, rec.lhs, rec.rhs, rec.slack, rec.pass))
}

fn variance_chain_trial(trial: usize, seed: u64) -> Result<CheckRow> {
    let mut rng = rng_from_seed(seed);
    let n = rng.gen_range(4..=30);
    let k = rng.gen_range(1..=5);
    let mut labels: Vec<i32> = vec![-1, -1, 1, 1];
    for _ in 4..n {
        labels.push(if rng.gen::<bool>() { 1 } else { -1 });
    }
    labels.shuffle(&mut rng);
    let w: Array1<f64> = (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let b = rng.gen_range(-1.0..1.0);
    let delta =
        BinaryPerClass { neg: rng.gen_range(-1.0..1.0), pos: rng.gen_range(-1.0..1.0) };
    let emb = gen_embeddings(&mut rng, n, k);
    let rec = loss_variance_lemma_check(&emb, &labels, &w, b, delta)?;
    let slack = (rec.var_lin - rec.var_log).min(rec.trace_bound - rec.quad_form);
    Ok(row(CheckKind::VarianceChain, trial, rec.var_log, rec.trace_bound, slack, rec.pass))
}

fn dro_split_trial(trial: usize, seed: u64) -> Result<CheckRow> {
    let mut rng = rng_from_seed(seed);
    let l = rng.gen_range(2..=4);
    let n = rng.gen_range(l..=20);
    let k = rng.gen_range(1..=4);
    let labels = gen_covering_labels(&mut rng, n, l);
    let epsilon: Array1<f64> = (0..l).map(|_| rng.gen_range(0.0..2.0)).collect();
    let emb = gen_embeddings(&mut rng, n, k);
    let direct = dro_lt_reg(&emb, &labels, &epsilon)?;
    let split = dro_lt_reg_split_form(&emb, &labels, &epsilon.mapv(|e| e / 2.0))?;
    let err = (direct - split).abs() / direct.abs().max(split.abs()).max(1.0);
    Ok(row(
        CheckKind::DroSplitEquivalence,
        trial,
        direct,
        split,
        err,
        err <= bounds::EQUALITY_TOL,
    ))
}

fn center_gaussian_trial(trial: usize, seed: u64) -> Result<CheckRow> {
    let mut rng = rng_from_seed(seed);
    let l = rng.gen_range(1..=4);
    let n = rng.gen_range(l..=20);
    let k = rng.gen_range(1..=5);
    let scale_sq = rng.gen_range(0.25..4.0);
    let labels = gen_covering_labels(&mut rng, n, l);
    let emb = gen_embeddings(&mut rng, n, k);
    let (centroids, _) = class_centroids(&emb, &labels, l)?;
    let penalty = gaussian_xent_penalty(&emb, &labels, &centroids, scale_sq)?;
    let (center, _) = center_loss(&emb, &labels, &centroids)?;
    let constant = 0.5 * k as f64 * (2.0 * std::f64::consts::PI * scale_sq).ln();
    let reconstructed = constant + center / (2.0 * scale_sq);
    let err =
        (penalty - reconstructed).abs() / penalty.abs().max(reconstructed.abs()).max(1.0);
    Ok(row(
        CheckKind::CenterGaussianEquivalence,
        trial,
        penalty,
        reconstructed,
        err,
        err <= bounds::IDENTITY_TOL,
    ))
}

fn hard_pull_trial(trial: usize, seed: u64) -> Result<CheckRow> {
    let mut rng = rng_from_seed(seed);
    let n = rng.gen_range(2..=15);
    let k = rng.gen_range(1..=5);
    let alpha = Array1::from_vec(vec![rng.gen_range(-1.0..3.0)]);
    let labels = vec![0usize; n];
    let i = rng.gen_range(0..n);
    let emb = gen_embeddings(&mut rng, n, k);
    let (soft, _) = pull_reg(&emb, &labels, &alpha, i)?;
    let hard = hard_pull(&emb, &labels, &alpha, i)?;
    let slack = soft - hard;
    // In exact arithmetic the gap is at least `log(1 + e^-hard)` (the soft
    // form keeps an additive 1 inside its logarithm), which is positive but
    // falls below one ulp of the operands once the hinge value is large.
    // Strictness is only enforceable where that minimal gap is representable.
    let min_gap = (-hard).exp().ln_1p();
    let strict_visible = min_gap > 8.0 * f64::EPSILON * hard.abs().max(1.0);
    let pass = if strict_visible { slack > 0.0 } else { slack >= 0.0 };
    Ok(row(CheckKind::HardPullStrict, trial, hard, soft, slack, pass))
}

fn auc_trial(trial: usize, seed: u64, total_samples: usize) -> Result<CheckRow> {
    let mut rng = rng_from_seed(seed);
    let l = rng.gen_range(2..=4);
    let d = rng.gen_range(2..=3);
    let spec = gen_mixture_spec(&mut rng, l, d, false);
    let mut head: Array2<f64> = Array2::from_shape_fn((d, l), |_| rng.gen_range(-2.0..2.0));
    for y in 0..l {
        let norm = head.column(y).dot(&head.column(y)).sqrt();
        if norm < 1e-3 {
            head[[0, y]] += 1.0;
        }
    }
    let closed = gaussian_auc_closed_form(&head, &spec)?;
    let per_class = (total_samples / (2 * l)).max(1);
    let mc = empirical_auc_mc(&head, &spec, per_class, derive_seed(seed, 1))?;
    let err = (closed - mc).abs();
    Ok(row(CheckKind::AucClosedVsMc, trial, closed, mc, err, err <= AUC_MC_TOL))
}

fn bennett_trial(trial: usize, seed: u64) -> Result<CheckRow> {
    let mut rng = rng_from_seed(seed);
    let samples: Vec<f64> = (0..50).map(|_| rng.gen_range(0.0..1.0)).collect();
    let bound = bennett_bound(&samples, 1.0, 0.05)?;
    let true_mean = 0.5;
    let slack = bound - true_mean;
    Ok(row(CheckKind::BennettCoverage, trial, true_mean, bound, slack, slack >= 0.0))
}

/// One full generalisation-bound trial: a random two-class Gaussian
/// embedding distribution, a fixed random linear scorer, a 200-point
/// training sample, and `eval_size` fresh points standing in for the
/// population.
pub fn gen_bound_trial(seed: u64, eval_size: usize) -> Result<GenBoundRecord> {
    let mut rng = rng_from_seed(seed);
    let k = rng.gen_range(2..=4);
    let mu_neg: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let mu_pos: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let sd_neg = rng.gen_range(0.4..1.2);
    let sd_pos = rng.gen_range(0.4..1.2);
    let p_pos = rng.gen_range(0.2..0.8);
    let priors = BinaryPerClass { neg: 1.0 - p_pos, pos: p_pos };
    let n_total = 200;
    let n_pos = ((n_total as f64 * p_pos).round() as usize).clamp(2, n_total - 2);
    let n_neg = n_total - n_pos;

    let gauss = rand_distr::Normal::new(0.0, 1.0).expect("unit normal");
    let draw = |mu: &[f64], sd: f64, rng: &mut ChaCha8Rng| -> Vec<f64> {
        mu.iter().map(|m| m + sd * rand_distr::Distribution::sample(&gauss, rng)).collect()
    };

    let mut train = Array2::zeros((n_total, k));
    let mut train_labels = Vec::with_capacity(n_total);
    for i in 0..n_total {
        let (mu, sd, y) =
            if i < n_neg { (&mu_neg, sd_neg, -1) } else { (&mu_pos, sd_pos, 1) };
        let point = draw(mu, sd, &mut rng);
        for (j, v) in point.into_iter().enumerate() {
            train[[i, j]] = v;
        }
        train_labels.push(y);
    }

    let mut eval = Array2::zeros((eval_size, k));
    let mut eval_labels = Vec::with_capacity(eval_size);
    for i in 0..eval_size {
        let y = if rng.gen_range(0.0..1.0) < p_pos { 1 } else { -1 };
        let (mu, sd) = if y > 0 { (&mu_pos, sd_pos) } else { (&mu_neg, sd_neg) };
        let point = draw(mu, sd, &mut rng);
        for (j, v) in point.into_iter().enumerate() {
            eval[[i, j]] = v;
        }
        eval_labels.push(y);
    }

    let w: Array1<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b = rng.gen_range(-1.0..1.0);
    let delta =
        BinaryPerClass { neg: rng.gen_range(-0.5..0.5), pos: rng.gen_range(-0.5..0.5) };
    let alpha = BinaryPerClass { neg: rng.gen_range(0.0..2.0), pos: rng.gen_range(0.0..2.0) };
    gen_bound_check(
        &train,
        &train_labels,
        &eval,
        &eval_labels,
        priors,
        &w,
        b,
        delta,
        alpha,
        0.05,
    )
}

fn gen_bound_row(trial: usize, seed: u64, eval_size: usize) -> Result<CheckRow> {
    let rec = gen_bound_trial(seed, eval_size)?;
    Ok(row(CheckKind::GenBound, trial, rec.population_loss, rec.bound, rec.slack, rec.holds))
}

fn bayes_trial(trial: usize, seed: u64) -> Result<CheckRow> {
    let mut rng = rng_from_seed(seed);
    let l = rng.gen_range(2..=4);
    let d = rng.gen_range(1..=3);
    let spec = gen_mixture_spec(&mut rng, l, d, true);
    let rec = bayes_logistic_realizability_check(&spec, 200, derive_seed(seed, 1))?;
    Ok(row(CheckKind::BayesRealizability, trial, rec.lhs, rec.rhs, rec.slack, rec.pass))
}

/// Number of trials a check runs under the given configuration.
pub fn effective_trials(kind: CheckKind, config: &SuiteConfig) -> usize {
    match kind {
        CheckKind::AucClosedVsMc => config.auc_specs,
        CheckKind::BennettCoverage => config.trials.saturating_mul(10),
        CheckKind::GenBound => (config.trials / 10).max(20),
        CheckKind::BayesRealizability => (config.trials / 100).max(5),
        _ => config.trials,
    }
}

/// Runs one check across its trials and aggregates a verdict.
pub fn run_check(kind: CheckKind, config: &SuiteConfig) -> Result<CheckOutcome> {
    let trials = effective_trials(kind, config);
    if trials == 0 {
        return Err(Error::invalid("checks need at least one trial"));
    }
    let check_seed = derive_seed(config.seed, kind as u64);
    let fault = config.fault;
    let auc_samples = config.auc_total_samples;
    let eval_size = config.gen_eval_size;
    let rows = try_map_indexed(config.parallelism, trials, |trial| {
        let seed = derive_seed(check_seed, trial as u64);
        match kind {
            CheckKind::VarianceIdentity => variance_identity_trial(trial, seed),
            CheckKind::PullBound => pull_bound_trial(trial, seed, fault),
            CheckKind::PushBound => push_bound_trial(trial, seed),
            CheckKind::VarianceChain => variance_chain_trial(trial, seed),
            CheckKind::DroSplitEquivalence => dro_split_trial(trial, seed),
            CheckKind::CenterGaussianEquivalence => center_gaussian_trial(trial, seed),
            CheckKind::HardPullStrict => hard_pull_trial(trial, seed),
            CheckKind::AucClosedVsMc => auc_trial(trial, seed, auc_samples),
            CheckKind::BennettCoverage => bennett_trial(trial, seed),
            CheckKind::GenBound => gen_bound_row(trial, seed, eval_size),
            CheckKind::BayesRealizability => bayes_trial(trial, seed),
        }
    })?;
    let passes = rows.iter().filter(|r| r.pass).count();
    let min_slack = rows.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min);
    let max_slack = rows.iter().map(|r| r.slack).fold(f64::NEG_INFINITY, f64::max);
    let pass_rate = passes as f64 / trials as f64;
    let pass = match kind {
        CheckKind::BennettCoverage => pass_rate >= BENNETT_COVERAGE_MIN,
        CheckKind::GenBound => pass_rate >= GEN_BOUND_HOLD_MIN,
        _ => passes == trials,
    };
    Ok(CheckOutcome {
        summary: CheckSummary {
            name: kind.name().to_string(),
            trials,
            passes,
            min_slack,
            max_slack,
            requirement: kind.requirement().to_string(),
            pass,
        },
        rows,
    })
}

/// Runs every check and stitches the outcomes into one report.
pub fn run_suite(config: &SuiteConfig) -> Result<SuiteReport> {
    let mut summaries = Vec::with_capacity(ALL_CHECKS.len());
    let mut rows = Vec::new();
    for kind in ALL_CHECKS {
        let outcome = run_check(kind, config)?;
        summaries.push(outcome.summary);
        rows.extend(outcome.rows);
    }
    let all_pass = summaries.iter().all(|s| s.pass);
    Ok(SuiteReport { seed: config.seed, summaries, rows, all_pass })
}
