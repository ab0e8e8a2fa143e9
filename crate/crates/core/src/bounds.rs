//! Numerical verification of the bounds and identities behind the losses.
//!
//! Each check evaluates the two sides of one proved statement on a concrete
//! instance and records them side by side:
//!
//! * [`variance_identity_check`]: the pairwise-distance identity
//!   `(1/n^2) sum_{x,x+} ||Phi(x) - Phi(x+)||^2 = (2/n) sum_x ||Phi(x) - mu||^2`.
//! * [`pull_bound_check`]: the class-average pull term dominates a variance
//!   expression,
//!   `(2n/(n-1)) sum_j Var[Phi_j] - alpha + log(n-1) <= mean pull`.
//! * [`push_bound_check`]: the class-average push term dominates the
//!   between-class separation expression built from per-class variances and
//!   centroid distances.
//! * [`gaussian_auc_closed_form`] vs [`empirical_auc_mc`]: for isotropic
//!   Gaussian classes and linear scorers, one-vs-rest AUC equals an average
//!   of normal CDF terms
//!   `Psi(w_y . (mu_y - mu_{y'}) / (||w_y|| sqrt(sigma_y^2 + sigma_{y'}^2)))`.
//! * [`bennett_bound`]: the empirical-variance concentration bound
//!   `mean + sqrt(2 V ln(2/delta) / n) + 7 B ln(2/delta) / (3 (n-1))`.
//! * [`loss_variance_lemma_check`]: the chain
//!   `Var[l_log | y] <= Var[l_lin | y] = w' C_y w <= ||w||^2 tr(C_y)`.
//! * [`gen_bound_check`]: the full generalisation bound for binary scorers
//!   with pull-controlled variance.
//! * [`bayes_logistic_realizability_check`]: softmax over the closed-form
//!   Gaussian head equals the Bayes posterior when classes share a variance.
//!
//! Closed-form sides are computed here from scratch; the loss sides reuse
//! [`crate::losses`], so a regression in either implementation breaks the
//! agreement instead of cancelling out.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal as GaussDist};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::GaussianMixtureSpec;
use crate::error::{Error, Result};
use crate::losses::{pull_reg, push_reg};
use crate::metrics::{auc_binary, biased_variance, class_variance};
use crate::rng::rng_from_seed;

/// Relative tolerance for exact algebraic identities.
pub const IDENTITY_TOL: f64 = 1e-12;
/// Relative tolerance for equality links proved by expanding definitions.
pub const EQUALITY_TOL: f64 = 1e-10;
/// Absolute slack tolerance for proved inequalities (round-off allowance).
pub const SLACK_TOL: f64 = 1e-9;

/// Two sides of one checked statement.
///
/// For inequalities `lhs <= rhs`, `slack = rhs - lhs` and `pass` means
/// `slack >= -tol`. For identities, `slack` is the relative error and `pass`
/// means it is below the check's tolerance.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct BoundCheckRecord {
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// `log(1 + exp(t))` without overflow.
fn log1p_exp(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// Standard normal CDF.
pub fn std_normal_cdf(z: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").cdf(z)
}

/// Checks the pairwise-distance form of the variance:
/// `(1/n^2) sum_{i,j} ||Phi_i - Phi_j||^2` (brute-force double loop) against
/// `(2/n) sum_i ||Phi_i - mean||^2`.
pub fn variance_identity_check(embeddings: &Array2<f64>) -> Result<BoundCheckRecord> {
    let n = embeddings.nrows();
    if n == 0 {
        return Err(Error::invalid("variance identity needs samples"));
    }
    let nf = n as f64;
    let mut pair_sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            let diff = &embeddings.row(i) - &embeddings.row(j);
            pair_sum += diff.dot(&diff);
        }
    }
    let lhs = pair_sum / (nf * nf);
    let mean = embeddings.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let rhs = 2.0 / nf
        * embeddings
            .rows()
            .into_iter()
            .map(|r| {
                let d = &r - &mean;
                d.dot(&d)
            })
            .sum::<f64>();
    let err = rel_err(lhs, rhs);
    Ok(BoundCheckRecord { lhs, rhs, slack: err, pass: err <= IDENTITY_TOL })
}

/// Checks the pull lower bound on one class of embeddings:
///
/// ```text
/// (2 n / (n-1)) sum_j Var[Phi_j] - alpha + log(n-1)
///     <= (1/n) sum_x pull(x)
/// ```
///
/// The right side reuses the production pull term; the left side is computed
/// here from the biased per-coordinate variances.
pub fn pull_bound_check(embeddings: &Array2<f64>, alpha: f64) -> Result<BoundCheckRecord> {
    let n = embeddings.nrows();
    if n < 2 {
        return Err(Error::invalid("pull bound needs at least 2 samples"));
    }
    let labels = vec![0usize; n];
    let alpha_arr = Array1::from_vec(vec![alpha]);
    let mut pull_mean = 0.0;
    for i in 0..n {
        let (v, _) = pull_reg(embeddings, &labels, &alpha_arr, i)?;
        pull_mean += v;
    }
    pull_mean /= n as f64;

    let nf = n as f64;
    let (trace, _) = class_variance(embeddings, &labels, 1)?;
    let lhs = 2.0 * nf / (nf - 1.0) * trace[0] - alpha + (nf - 1.0).ln();
    let slack = pull_mean - lhs;
    Ok(BoundCheckRecord { lhs, rhs: pull_mean, slack, pass: slack >= -SLACK_TOL })
}

/// Checks the push lower bound for every class and reports the tightest one:
///
/// ```text
/// - sum_{y' != y} (n_{y'} / n_c) [ sum_j (Var[z_j|y] + Var[z_j|y'])
///                                  + ||mu_y - mu_{y'}||^2 ]
///   + beta_y + log(n_c)
///     <= (1/n_y) sum_{x in S_y} push(x)
/// ```
///
/// where `n_c` counts the complement of class `y`. Every class must appear.
pub fn push_bound_check(
    embeddings: &Array2<f64>,
    labels: &[usize],
    beta: &Array1<f64>,
) -> Result<BoundCheckRecord> {
    let num_classes = beta.len();
    let (trace, centroids) = class_variance(embeddings, labels, num_classes)?;
    let mut counts = vec![0usize; num_classes];
    for &y in labels {
        counts[y] += 1;
    }
    let mut worst: Option<BoundCheckRecord> = None;
    for y in 0..num_classes {
        let n_c: usize = counts.iter().sum::<usize>() - counts[y];
        if n_c == 0 {
            return Err(Error::invalid("push bound needs at least 2 classes present".to_string()));
        }
        let mut separation = 0.0;
        for yp in 0..num_classes {
            if yp == y {
                continue;
            }
            let mu_diff = &centroids.row(y) - &centroids.row(yp);
            separation += counts[yp] as f64 / n_c as f64
                * (trace[y] + trace[yp] + mu_diff.dot(&mu_diff));
        }
        let lhs = -separation + beta[y] + (n_c as f64).ln();

        let mut push_mean = 0.0;
        for (i, &yi) in labels.iter().enumerate() {
            if yi == y {
                let (v, _) = push_reg(embeddings, labels, beta, i)?;
                push_mean += v;
            }
        }
        push_mean /= counts[y] as f64;

        let slack = push_mean - lhs;
        let record =
            BoundCheckRecord { lhs, rhs: push_mean, slack, pass: slack >= -SLACK_TOL };
        if worst.map_or(true, |w| record.slack < w.slack) {
            worst = Some(record);
        }
    }
    worst.ok_or_else(|| Error::invalid("push bound needs at least one class"))
}

/// Closed-form one-vs-rest AUC for a linear head on isotropic Gaussian
/// classes:
///
/// ```text
/// AUC = (1 / (L (L-1))) sum_y sum_{y' != y}
///       Psi( w_y . (mu_y - mu_{y'}) / (||w_y|| sqrt(sigma_y^2 + sigma_{y'}^2)) )
/// ```
///
/// `head_weight` is `d x L` with one column per class; negatives are drawn
/// uniformly over the other classes, matching [`empirical_auc_mc`].
pub fn gaussian_auc_closed_form(
    head_weight: &Array2<f64>,
    spec: &GaussianMixtureSpec,
) -> Result<f64> {
    spec.validate()?;
    let l = spec.num_classes();
    if head_weight.ncols() != l || head_weight.nrows() != spec.dim() {
        return Err(Error::dim(format!(
            "head is {}x{}, spec wants {}x{l}",
            head_weight.nrows(),
            head_weight.ncols(),
            spec.dim()
        )));
    }
    let mut total = 0.0;
    for y in 0..l {
        let w = head_weight.column(y);
        let norm = w.dot(&w).sqrt();
        if norm <= 0.0 {
            return Err(Error::invalid(format!("class {y} weight vector is zero")));
        }
        let mu_y = spec.mean(y);
        for yp in 0..l {
            if yp == y {
                continue;
            }
            let gap = w.dot(&(&mu_y - &spec.mean(yp)));
            let spread =
                (spec.classes[y].sigma_sq + spec.classes[yp].sigma_sq).sqrt();
            total += std_normal_cdf(gap / (norm * spread));
        }
    }
    Ok(total / (l * (l - 1)) as f64)
}

/// Monte-Carlo estimate of the same one-vs-rest AUC.
///
/// For each class `y`, draws `samples_per_class` positives from class `y`
/// and as many negatives from the uniform mixture over the other classes,
/// scores both with `w_y`, and takes the mid-rank AUC.
pub fn empirical_auc_mc(
    head_weight: &Array2<f64>,
    spec: &GaussianMixtureSpec,
    samples_per_class: usize,
    seed: u64,
) -> Result<f64> {
    spec.validate()?;
    let l = spec.num_classes();
    if head_weight.ncols() != l || head_weight.nrows() != spec.dim() {
        return Err(Error::dim("head shape does not match spec".to_string()));
    }
    if samples_per_class == 0 {
        return Err(Error::invalid("samples_per_class must be positive"));
    }
    let mut rng = rng_from_seed(seed);
    let gauss = GaussDist::new(0.0, 1.0).expect("unit normal");
    let d = spec.dim();
    let draw_score = |class: usize, w: ndarray::ArrayView1<f64>, rng: &mut rand_chacha::ChaCha8Rng| {
        let c = &spec.classes[class];
        let sd = c.sigma_sq.sqrt();
        let mut s = 0.0;
        for j in 0..d {
            s += w[j] * (c.mean[j] + sd * gauss.sample(rng));
        }
        s
    };
    let mut total = 0.0;
    for y in 0..l {
        let w = head_weight.column(y);
        let mut scores = Vec::with_capacity(2 * samples_per_class);
        let mut positive = Vec::with_capacity(2 * samples_per_class);
        for _ in 0..samples_per_class {
            scores.push(draw_score(y, w, &mut rng));
            positive.push(true);
        }
        for _ in 0..samples_per_class {
            // Uniform over the other classes, matching the closed form.
            let mut yp = rng.gen_range(0..l - 1);
            if yp >= y {
                yp += 1;
            }
            scores.push(draw_score(yp, w, &mut rng));
            positive.push(false);
        }
        total += auc_binary(&scores, &positive)?;
    }
    Ok(total / l as f64)
}

/// Empirical-variance concentration bound on the mean of a bounded variable:
///
/// ```text
/// mean + sqrt(2 V ln(2/delta) / n) + 7 B ln(2/delta) / (3 (n-1))
/// ```
///
/// `V` is the unbiased sample variance (the pair form the underlying
/// concentration result is stated with) and `B` bounds the variable's range.
pub fn bennett_bound(samples: &[f64], range_bound: f64, delta: f64) -> Result<f64> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::invalid("concentration bound needs n >= 2"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta {delta} outside (0, 1)")));
    }
    if !(range_bound >= 0.0) || !range_bound.is_finite() {
        return Err(Error::invalid("range bound must be finite and non-negative".to_string()));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("concentration bound samples".into()));
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let var_unbiased =
        samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (nf - 1.0);
    let log_term = (2.0 / delta).ln();
    Ok(mean
        + (2.0 * var_unbiased * log_term / nf).sqrt()
        + 7.0 * range_bound * log_term / (3.0 * (nf - 1.0)))
}

/// The three links of the loss-variance chain on one binary instance.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct VarianceChainRecord {
    /// `Var[log(1 + exp(-y (f + Delta_y))) | y]`.
    pub var_log: f64,
    /// `Var[-y (f + Delta_y) | y] = Var[f | y]`.
    pub var_lin: f64,
    /// `w' C_y w` with the biased class covariance.
    pub quad_form: f64,
    /// `||w||^2 tr(C_y)`.
    pub trace_bound: f64,
    /// Relative error of the middle equality `var_lin = quad_form`.
    pub equality_rel_err: f64,
    pub pass: bool,
}

/// Checks, per class, the chain
/// `Var[l_log | y] <= Var[l_lin | y] = w' C_y w <= ||w||^2 tr(C_y)`
/// for the binary scorer `f(x) = w . Phi(x) + b` with labels in `{-1, +1}`.
///
/// Returns the record with the least slack across the two classes.
pub fn loss_variance_lemma_check(
    embeddings: &Array2<f64>,
    labels: &[i32],
    w: &Array1<f64>,
    b: f64,
    delta: BinaryPerClass,
) -> Result<VarianceChainRecord> {
    if embeddings.nrows() != labels.len() {
        return Err(Error::dim(format!(
            "{} embedding rows vs {} labels",
            embeddings.nrows(),
            labels.len()
        )));
    }
    if embeddings.ncols() != w.len() {
        return Err(Error::dim("w length does not match embedding width".to_string()));
    }
    if labels.iter().any(|&y| y != 1 && y != -1) {
        return Err(Error::invalid("binary labels must be -1 or +1".to_string()));
    }
    let mut worst: Option<VarianceChainRecord> = None;
    for &y in &[-1, 1] {
        let rows: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == y)
            .map(|(i, _)| i)
            .collect();
        if rows.len() < 2 {
            return Err(Error::invalid(format!("class {y} needs at least 2 samples")));
        }
        let yf = y as f64;
        let dy = delta.get(y);
        let scores: Vec<f64> = rows
            .iter()
            .map(|&i| w.dot(&embeddings.row(i)) + b)
            .collect();
        let log_losses: Vec<f64> = scores.iter().map(|&f| log1p_exp(-yf * (f + dy))).collect();
        let lin_losses: Vec<f64> = scores.iter().map(|&f| -yf * (f + dy)).collect();
        let var_log = biased_variance(&log_losses);
        let var_lin = biased_variance(&lin_losses);

        // Biased class covariance quadratic form, computed coordinate-wise.
        let k = embeddings.ncols();
        let nf = rows.len() as f64;
        let mut mean = Array1::zeros(k);
        for &i in &rows {
            mean += &embeddings.row(i);
        }
        mean /= nf;
        let mut quad_form = 0.0;
        let mut trace_c = 0.0;
        let mut cov = Array2::zeros((k, k));
        for &i in &rows {
            let centred = &embeddings.row(i) - &mean;
            for a in 0..k {
                for c in 0..k {
                    cov[[a, c]] += centred[a] * centred[c];
                }
            }
        }
        cov /= nf;
        for a in 0..k {
            trace_c += cov[[a, a]];
            for c in 0..k {
                quad_form += w[a] * cov[[a, c]] * w[c];
            }
        }
        let trace_bound = w.dot(w) * trace_c;

        let equality_rel_err = rel_err(var_lin, quad_form);
        let pass = var_log <= var_lin + SLACK_TOL
            && equality_rel_err <= EQUALITY_TOL
            && quad_form <= trace_bound + SLACK_TOL;
        let record = VarianceChainRecord {
            var_log,
            var_lin,
            quad_form,
            trace_bound,
            equality_rel_err,
            pass,
        };
        let slack_of = |r: &VarianceChainRecord| {
            (r.var_lin - r.var_log).min(r.trace_bound - r.quad_form)
        };
        if worst.map_or(true, |w_rec| slack_of(&record) < slack_of(&w_rec)) {
            worst = Some(record);
        }
    }
    worst.ok_or_else(|| Error::invalid("variance chain needs both classes"))
}

/// Per-class values for a binary problem with labels in `{-1, +1}`.
#[derive(Debug, Clone, Copy)]
pub struct BinaryPerClass {
    pub neg: f64,
    pub pos: f64,
}

impl BinaryPerClass {
    pub fn get(&self, y: i32) -> f64 {
        if y > 0 {
            self.pos
        } else {
            self.neg
        }
    }
}

/// Outcome of one generalisation-bound trial.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct GenBoundRecord {
    /// Mean log loss on the large fresh split (the population stand-in).
    pub population_loss: f64,
    /// The bound evaluated on the training split.
    pub bound: f64,
    /// Loss cap `B` used inside the bound (1.01 x the largest observed loss).
    pub loss_cap: f64,
    pub slack: f64,
    pub holds: bool,
}

/// Evaluates the pull-controlled generalisation bound for a fixed binary
/// scorer `f(x) = w . Phi(x) + b`:
///
/// ```text
/// pop <= (7 B ln(2/delta) / 3) sum_y P(y) / (n_y - 1)
///        + sum_y (P(y) / n_y) sum_{x in S_y} l_log(y, f(x) + Delta_y)
///        + ||w|| sqrt( ln(2/delta) sum_y (P(y) / n_y) [ mean pull_y + alpha_y ] )
/// ```
///
/// The population side is approximated by the mean log loss on a large
/// fresh split. `B` is not assumed: it is measured as 1.01 times the
/// largest loss observed on either split.
#[allow(clippy::too_many_arguments)]
pub fn gen_bound_check(
    train_embeddings: &Array2<f64>,
    train_labels: &[i32],
    eval_embeddings: &Array2<f64>,
    eval_labels: &[i32],
    priors: BinaryPerClass,
    w: &Array1<f64>,
    b: f64,
    delta_margin: BinaryPerClass,
    alpha: BinaryPerClass,
    confidence_delta: f64,
) -> Result<GenBoundRecord> {
    if !(confidence_delta > 0.0 && confidence_delta < 1.0) {
        return Err(Error::invalid("confidence delta outside (0, 1)".to_string()));
    }
    if (priors.neg + priors.pos - 1.0).abs() > 1e-9 || priors.neg <= 0.0 || priors.pos <= 0.0 {
        return Err(Error::invalid("binary priors must be positive and sum to 1".to_string()));
    }
    let loss = |emb: &Array2<f64>, labels: &[i32]| -> Result<Vec<f64>> {
        if emb.nrows() != labels.len() {
            return Err(Error::dim("embedding rows vs labels".to_string()));
        }
        Ok(labels
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                let f = w.dot(&emb.row(i)) + b;
                log1p_exp(-(y as f64) * (f + delta_margin.get(y)))
            })
            .collect())
    };
    let train_losses = loss(train_embeddings, train_labels)?;
    let eval_losses = loss(eval_embeddings, eval_labels)?;
    let max_loss = train_losses
        .iter()
        .chain(&eval_losses)
        .cloned()
        .fold(0.0_f64, f64::max);
    let loss_cap = max_loss * 1.01;
    let log_term = (2.0 / confidence_delta).ln();

    let mut cap_term = 0.0;
    let mut empirical_term = 0.0;
    let mut pull_sum = 0.0;
    for &y in &[-1, 1] {
        let rows: Vec<usize> = train_labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == y)
            .map(|(i, _)| i)
            .collect();
        let n_y = rows.len();
        if n_y < 2 {
            return Err(Error::invalid(format!("class {y} needs at least 2 training samples")));
        }
        let prior = priors.get(y);
        cap_term += prior / (n_y - 1) as f64;
        empirical_term += prior / n_y as f64
            * rows.iter().map(|&i| train_losses[i]).sum::<f64>();

        // Class-restricted pull mean with this class's alpha.
        let class_emb = {
            let mut m = Array2::zeros((n_y, train_embeddings.ncols()));
            for (r, &i) in rows.iter().enumerate() {
                m.row_mut(r).assign(&train_embeddings.row(i));
            }
            m
        };
        let labels0 = vec![0usize; n_y];
        let alpha_arr = Array1::from_vec(vec![alpha.get(y)]);
        let mut pull_mean = 0.0;
        for i in 0..n_y {
            let (v, _) = pull_reg(&class_emb, &labels0, &alpha_arr, i)?;
            pull_mean += v;
        }
        pull_mean /= n_y as f64;
        pull_sum += prior / n_y as f64 * (pull_mean + alpha.get(y));
    }
    let w_norm = w.dot(w).sqrt();
    let pull_term = w_norm * (log_term * pull_sum.max(0.0)).sqrt();
    let bound = 7.0 * loss_cap * log_term / 3.0 * cap_term + empirical_term + pull_term;

    let population_loss = eval_losses.iter().sum::<f64>() / eval_losses.len() as f64;
    let slack = bound - population_loss;
    Ok(GenBoundRecord {
        population_loss,
        bound,
        loss_cap,
        slack,
        holds: slack >= 0.0,
    })
}

/// Verifies that softmax over the closed-form Gaussian head reproduces the
/// Bayes posterior on points sampled from the mixture.
///
/// Requires a shared class variance; with class-specific variances the head
/// is not posterior-exact and the precondition is rejected.
pub fn bayes_logistic_realizability_check(
    spec: &GaussianMixtureSpec,
    num_points: usize,
    seed: u64,
) -> Result<BoundCheckRecord> {
    spec.validate()?;
    let sigma = spec.classes[0].sigma_sq;
    if spec.classes.iter().any(|c| (c.sigma_sq - sigma).abs() > 1e-12) {
        return Err(Error::invalid(
            "realizability requires a shared class variance".to_string(),
        ));
    }
    let (w, b) = crate::scorer::bayes_gaussian_head(spec)?;
    let ds = crate::data::gaussian_mixture_lt(spec, num_points, seed)?;
    let l = spec.num_classes();
    let mut max_err = 0.0_f64;
    for row in ds.features.rows() {
        let logits = row.dot(&w) + &b;
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
        let z: f64 = exps.iter().sum();

        // Direct Bayes rule in the log domain.
        let log_joint: Vec<f64> = (0..l)
            .map(|y| {
                let c = &spec.classes[y];
                let d2: f64 = row
                    .iter()
                    .zip(&c.mean)
                    .map(|(x, m)| (x - m) * (x - m))
                    .sum();
                c.prior.ln() - d2 / (2.0 * c.sigma_sq)
            })
            .collect();
        let mj = log_joint.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let joint_exps: Vec<f64> = log_joint.iter().map(|&v| (v - mj).exp()).collect();
        let zj: f64 = joint_exps.iter().sum();

        for y in 0..l {
            max_err = max_err.max((exps[y] / z - joint_exps[y] / zj).abs());
        }
    }
    Ok(BoundCheckRecord {
        lhs: max_err,
        rhs: EQUALITY_TOL,
        slack: max_err,
        pass: max_err <= EQUALITY_TOL,
    })
}
