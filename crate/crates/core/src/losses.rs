//! Margin-based losses and embedding regularisers.
//!
//! The trainable objective is
//!
//! ```text
//! L = (1/N) sum_i [ l_mar(y_i, f(x_i))
//!                   + lambda_pull   * pull(x_i, y_i)
//!                   + lambda_push   * push(x_i, y_i)
//!                   + lambda_center * ||Phi(x_i) - mu_{y_i}||^2 ]
//! ```
//!
//! with the margin cross-entropy
//!
//! ```text
//! l_mar(y, f) = log[1 + sum_{y' != y} exp(Delta_{y y'} + f_{y'} - f_y)]
//! ```
//!
//! and the soft pull/push terms over a batch `S`
//!
//! ```text
//! pull(x, y) = log[1 + sum_{x+ in S_y \ {x}} exp(||Phi(x) - Phi(x+)||^2 - alpha_y)]
//! push(x, y) = log[1 + sum_{x- notin S_y}    exp(beta_y - ||Phi(x) - Phi(x-)||^2)]
//! ```
//!
//! Empty sums make the corresponding term zero. All soft terms share the
//! stabilised `log(1 + sum exp)` in [`log1p_sum_exp`], so values and
//! gradients stay finite for any margin sizes.
//!
//! Margin matrices come from [`delta_schedule`]: all-zero (plain CE),
//! `Delta_{y y'} = Pr(y)^(-1/4)` (label-distribution-aware margins),
//! `Delta_{y y'} = Pr(y')`, or `Delta_{y y'} = log(Pr(y') / Pr(y))` (logit
//! adjustment). Pull/push margins come from [`margin_schedule`]
//! (`alpha_y = c * base_y^a`).
//!
//! The diagnostic regularisers [`dro_lt_reg`], [`gaussian_xent_penalty`],
//! [`spreadout_reg`], and [`range_loss`] are value-only; they exist so the
//! check suite can verify their algebraic relationships to the terms above.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

/// Full configuration of the batch objective.
///
/// A regulariser participates iff its weight is strictly positive, so a
/// `LossSpec` with all lambdas zero is plain margin cross-entropy.
#[derive(Debug, Clone)]
pub struct LossSpec {
    /// `L x L` margin matrix with zero diagonal.
    pub delta: Array2<f64>,
    /// Per-class pull margins `alpha_y`.
    pub alpha: Array1<f64>,
    /// Per-class push margins `beta_y`.
    pub beta: Array1<f64>,
    /// Per-class margins `epsilon_y` for [`dro_lt_reg`].
    pub epsilon: Array1<f64>,
    /// Weight of the pull term.
    pub lambda_pull: f64,
    /// Weight of the push term (off by default to match the base objective).
    pub lambda_push: f64,
    /// Weight of the centre term `||Phi(x) - mu_y||^2`.
    pub lambda_center: f64,
    /// Target-Gaussian scale `s^2` used by [`gaussian_xent_penalty`].
    pub gaussian_scale_sq: f64,
}

impl LossSpec {
    /// Margin cross-entropy only: every regulariser off.
    pub fn margin_only(delta: Array2<f64>) -> Self {
        let l = delta.nrows();
        LossSpec {
            delta,
            alpha: Array1::zeros(l),
            beta: Array1::zeros(l),
            epsilon: Array1::zeros(l),
            lambda_pull: 0.0,
            lambda_push: 0.0,
            lambda_center: 0.0,
            gaussian_scale_sq: 1.0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.delta.nrows()
    }

    /// Checks matrix shapes, finiteness, zero diagonal, and weight signs.
    pub fn validate(&self) -> Result<()> {
        let l = self.delta.nrows();
        if self.delta.ncols() != l || l == 0 {
            return Err(Error::dim(format!(
                "delta must be square and non-empty, got {}x{}",
                l,
                self.delta.ncols()
            )));
        }
        for y in 0..l {
            if self.delta[[y, y]] != 0.0 {
                return Err(Error::invalid(format!("delta diagonal entry {y} must be 0")));
            }
        }
        if self.delta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("delta".into()));
        }
        for (name, arr) in [("alpha", &self.alpha), ("beta", &self.beta), ("epsilon", &self.epsilon)] {
            if arr.len() != l {
                return Err(Error::dim(format!("{name} has {} entries, expected {l}", arr.len())));
            }
            if arr.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(name.into()));
            }
        }
        for (name, w) in [
            ("lambda_pull", self.lambda_pull),
            ("lambda_push", self.lambda_push),
            ("lambda_center", self.lambda_center),
        ] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {w}")));
            }
        }
        if !(self.gaussian_scale_sq > 0.0) || !self.gaussian_scale_sq.is_finite() {
            return Err(Error::invalid("gaussian_scale_sq must be positive".to_string()));
        }
        Ok(())
    }
}

/// Named margin-matrix constructions over the class priors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaSchedule {
    /// `Delta = 0`: plain cross-entropy.
    Zero,
    /// `Delta_{y y'} = Pr(y)^(-1/4)`: larger margins for rarer true classes.
    Ldam,
    /// `Delta_{y y'} = Pr(y')`: penalise confusions towards common classes.
    Tan,
    /// `Delta_{y y'} = log(Pr(y') / Pr(y))`: logit adjustment.
    LogAdjust,
}

/// Builds the `L x L` margin matrix for `schedule` from class priors.
///
/// Priors must be strictly positive and sum to one; the diagonal is zero by
/// convention for every schedule.
pub fn delta_schedule(priors: &[f64], schedule: DeltaSchedule) -> Result<Array2<f64>> {
    validate_priors(priors)?;
    let l = priors.len();
    let mut delta = Array2::zeros((l, l));
    for y in 0..l {
        for yp in 0..l {
            if y == yp {
                continue;
            }
            delta[[y, yp]] = match schedule {
                DeltaSchedule::Zero => 0.0,
                DeltaSchedule::Ldam => priors[y].powf(-0.25),
                DeltaSchedule::Tan => priors[yp],
                DeltaSchedule::LogAdjust => (priors[yp] / priors[y]).ln(),
            };
        }
    }
    Ok(delta)
}

fn validate_priors(priors: &[f64]) -> Result<()> {
    if priors.is_empty() {
        return Err(Error::invalid("priors must be non-empty"));
    }
    if priors.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
        return Err(Error::invalid("priors must be strictly positive"));
    }
    let total: f64 = priors.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("priors sum to {total}, expected 1")));
    }
    Ok(())
}

/// Per-class margin values `c * base_y^a`.
///
/// Typical bases are the empirical priors or per-class counts. Bases must be
/// strictly positive so negative exponents stay finite.
pub fn margin_schedule(bases: &[f64], exponent: f64, scale: f64) -> Result<Array1<f64>> {
    if bases.iter().any(|&b| !(b > 0.0) || !b.is_finite()) {
        return Err(Error::invalid("margin bases must be strictly positive"));
    }
    if !scale.is_finite() || !exponent.is_finite() {
        return Err(Error::invalid("margin scale and exponent must be finite"));
    }
    Ok(bases.iter().map(|&b| scale * b.powf(exponent)).collect())
}

/// Stable `log(1 + sum_i exp(t_i))` with the softmax-style weights
/// `p_i = exp(t_i) / (1 + sum_j exp(t_j))` needed for gradients.
///
/// The implicit `1 = exp(0)` joins the max subtraction, so the result is
/// exact for an empty slice (`0`) and never overflows.
pub fn log1p_sum_exp(terms: &[f64]) -> (f64, Vec<f64>) {
    let m = terms.iter().fold(0.0_f64, |acc, &t| acc.max(t));
    let mut total = (-m).exp();
    let mut weights = Vec::with_capacity(terms.len());
    for &t in terms {
        let w = (t - m).exp();
        weights.push(w);
        total += w;
    }
    for w in &mut weights {
        *w /= total;
    }
    (m + total.ln(), weights)
}

/// Margin cross-entropy for one sample:
/// `log[1 + sum_{y' != y} exp(Delta_{y y'} + f_{y'} - f_y)]`.
///
/// Returns the loss and its gradient with respect to the logit row. The
/// gradient entries sum to zero: pushing all logits by a constant does not
/// change the loss.
pub fn margin_ce(logits: ArrayView1<f64>, y: usize, delta: &Array2<f64>) -> Result<(f64, Array1<f64>)> {
    let l = delta.nrows();
    if logits.len() != l {
        return Err(Error::dim(format!("{} logits vs {l} classes", logits.len())));
    }
    if y >= l {
        return Err(Error::invalid(format!("label {y} out of range for {l} classes")));
    }
    let mut terms = Vec::with_capacity(l - 1);
    let mut others = Vec::with_capacity(l - 1);
    for yp in 0..l {
        if yp != y {
            terms.push(delta[[y, yp]] + logits[yp] - logits[y]);
            others.push(yp);
        }
    }
    let (value, weights) = log1p_sum_exp(&terms);
    let mut grad = Array1::zeros(l);
    for (&yp, &p) in others.iter().zip(&weights) {
        grad[yp] = p;
        grad[y] -= p;
    }
    Ok((value, grad))
}

fn check_embedding_args(
    embeddings: &Array2<f64>,
    labels: &[usize],
    margins: &Array1<f64>,
    index: usize,
) -> Result<()> {
    if embeddings.nrows() != labels.len() {
        return Err(Error::dim(format!(
            "{} embedding rows vs {} labels",
            embeddings.nrows(),
            labels.len()
        )));
    }
    if index >= labels.len() {
        return Err(Error::invalid(format!("sample index {index} out of range")));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= margins.len()) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {} margin entries",
            margins.len()
        )));
    }
    Ok(())
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Shared body of the pull term: adds `scale` times the gradient of
/// `pull(x_i, y_i)` into `grad` (when provided) and returns the value.
fn pull_term(
    embeddings: &Array2<f64>,
    labels: &[usize],
    alpha: &Array1<f64>,
    i: usize,
    scale: f64,
    mut grad: Option<&mut Array2<f64>>,
) -> f64 {
    let y = labels[i];
    let xi = embeddings.row(i);
    let mut terms = Vec::new();
    let mut partners = Vec::new();
    for (j, &yj) in labels.iter().enumerate() {
        if j != i && yj == y {
            terms.push(sq_dist(xi, embeddings.row(j)) - alpha[y]);
            partners.push(j);
        }
    }
    let (value, weights) = log1p_sum_exp(&terms);
    if let Some(grad) = grad.as_deref_mut() {
        for (&j, &p) in partners.iter().zip(&weights) {
            for k in 0..embeddings.ncols() {
                let diff = embeddings[[i, k]] - embeddings[[j, k]];
                grad[[i, k]] += scale * 2.0 * p * diff;
                grad[[j, k]] -= scale * 2.0 * p * diff;
            }
        }
    }
    value
}

/// Soft pull term for sample `i`:
/// `log[1 + sum_{x+ in S_y \ {x_i}} exp(||Phi_i - Phi_{x+}||^2 - alpha_y)]`.
///
/// Returns the value and its gradient with respect to every embedding row
/// (only sample `i` and its same-class partners receive non-zero rows). A
/// sample with no same-class partner contributes zero value and gradient.
pub fn pull_reg(
    embeddings: &Array2<f64>,
    labels: &[usize],
    alpha: &Array1<f64>,
    i: usize,
) -> Result<(f64, Array2<f64>)> {
    check_embedding_args(embeddings, labels, alpha, i)?;
    let mut grad = Array2::zeros(embeddings.raw_dim());
    let value = pull_term(embeddings, labels, alpha, i, 1.0, Some(&mut grad));
    Ok((value, grad))
}

/// Hard relaxation of the pull term:
/// `max_{x+ in S_y \ {x_i}} max(0, ||Phi_i - Phi_{x+}||^2 - alpha_y)`.
///
/// Always strictly below [`pull_reg`] when sample `i` has at least one
/// same-class partner, because `log(1 + sum exp)` strictly dominates both
/// the largest exponent and zero.
pub fn hard_pull(
    embeddings: &Array2<f64>,
    labels: &[usize],
    alpha: &Array1<f64>,
    i: usize,
) -> Result<f64> {
    check_embedding_args(embeddings, labels, alpha, i)?;
    let y = labels[i];
    let xi = embeddings.row(i);
    let mut worst = 0.0_f64;
    for (j, &yj) in labels.iter().enumerate() {
        if j != i && yj == y {
            worst = worst.max(sq_dist(xi, embeddings.row(j)) - alpha[y]);
        }
    }
    Ok(worst.max(0.0))
}

/// Shared body of the push term; see [`pull_term`].
fn push_term(
    embeddings: &Array2<f64>,
    labels: &[usize],
    beta: &Array1<f64>,
    i: usize,
    scale: f64,
    mut grad: Option<&mut Array2<f64>>,
) -> f64 {
    let y = labels[i];
    let xi = embeddings.row(i);
    let mut terms = Vec::new();
    let mut partners = Vec::new();
    for (j, &yj) in labels.iter().enumerate() {
        if yj != y {
            terms.push(beta[y] - sq_dist(xi, embeddings.row(j)));
            partners.push(j);
        }
    }
    let (value, weights) = log1p_sum_exp(&terms);
    if let Some(grad) = grad.as_deref_mut() {
        for (&j, &p) in partners.iter().zip(&weights) {
            for k in 0..embeddings.ncols() {
                let diff = embeddings[[i, k]] - embeddings[[j, k]];
                grad[[i, k]] -= scale * 2.0 * p * diff;
                grad[[j, k]] += scale * 2.0 * p * diff;
            }
        }
    }
    value
}

/// Soft push term for sample `i`:
/// `log[1 + sum_{x- notin S_y} exp(beta_y - ||Phi_i - Phi_{x-}||^2)]`.
///
/// Returns the value and its gradient with respect to every embedding row.
/// With no other-class samples in the batch the term is zero.
pub fn push_reg(
    embeddings: &Array2<f64>,
    labels: &[usize],
    beta: &Array1<f64>,
    i: usize,
) -> Result<(f64, Array2<f64>)> {
    check_embedding_args(embeddings, labels, beta, i)?;
    let mut grad = Array2::zeros(embeddings.raw_dim());
    let value = push_term(embeddings, labels, beta, i, 1.0, Some(&mut grad));
    Ok((value, grad))
}

/// Per-class embedding centroids over a batch.
///
/// Returns the `L x K` centroid matrix and the per-class counts; classes
/// absent from the batch keep a zero row and a zero count, and it is the
/// caller's responsibility not to use them.
pub fn class_centroids(
    embeddings: &Array2<f64>,
    labels: &[usize],
    num_classes: usize,
) -> Result<(Array2<f64>, Vec<usize>)> {
    if embeddings.nrows() != labels.len() {
        return Err(Error::dim(format!(
            "{} embedding rows vs {} labels",
            embeddings.nrows(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(Error::invalid(format!("label {bad} out of range for {num_classes} classes")));
    }
    let mut centroids = Array2::zeros((num_classes, embeddings.ncols()));
    let mut counts = vec![0usize; num_classes];
    for (row, &y) in embeddings.rows().into_iter().zip(labels) {
        counts[y] += 1;
        let mut c = centroids.row_mut(y);
        c += &row;
    }
    for (y, &c) in counts.iter().enumerate() {
        if c > 0 {
            let mut row = centroids.row_mut(y);
            row /= c as f64;
        }
    }
    Ok((centroids, counts))
}

/// Centre loss `(1/N) sum_i ||Phi_i - mu_{y_i}||^2` against given centroids.
///
/// The gradient treats the centroids as constants: `2 (Phi_i - mu_{y_i}) / N`
/// per row. When the centroids are the batch means this is also the exact
/// total derivative, because the centroid terms cancel
/// (`sum_{x in S_y} (Phi(x) - mu_y) = 0`).
pub fn center_loss(
    embeddings: &Array2<f64>,
    labels: &[usize],
    centroids: &Array2<f64>,
) -> Result<(f64, Array2<f64>)> {
    if embeddings.nrows() != labels.len() {
        return Err(Error::dim(format!(
            "{} embedding rows vs {} labels",
            embeddings.nrows(),
            labels.len()
        )));
    }
    if embeddings.ncols() != centroids.ncols() {
        return Err(Error::dim(format!(
            "embedding width {} vs centroid width {}",
            embeddings.ncols(),
            centroids.ncols()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= centroids.nrows()) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {} centroid rows",
            centroids.nrows()
        )));
    }
    let n = labels.len().max(1) as f64;
    let mut value = 0.0;
    let mut grad = Array2::zeros(embeddings.raw_dim());
    for (i, &y) in labels.iter().enumerate() {
        value += sq_dist(embeddings.row(i), centroids.row(y));
        for k in 0..embeddings.ncols() {
            grad[[i, k]] = 2.0 * (embeddings[[i, k]] - centroids[[y, k]]) / n;
        }
    }
    Ok((value / n, grad))
}

/// Gaussian negative log-likelihood penalty towards class centroids:
/// `(1/N) sum_i [ (K/2) log(2 pi s^2) + ||Phi_i - mu_{y_i}||^2 / (2 s^2) ]`.
///
/// Algebraically this is the centre loss scaled by `1 / (2 s^2)` plus a
/// constant per sample; it is kept as an independent computation so that
/// identity can be checked rather than assumed.
pub fn gaussian_xent_penalty(
    embeddings: &Array2<f64>,
    labels: &[usize],
    centroids: &Array2<f64>,
    scale_sq: f64,
) -> Result<f64> {
    if !(scale_sq > 0.0) || !scale_sq.is_finite() {
        return Err(Error::invalid(format!("scale_sq {scale_sq} must be positive")));
    }
    if embeddings.ncols() != centroids.ncols() {
        return Err(Error::dim("embedding and centroid widths differ".to_string()));
    }
    if embeddings.nrows() != labels.len() {
        return Err(Error::dim("embedding rows and labels differ".to_string()));
    }
    let k = embeddings.ncols() as f64;
    let constant = 0.5 * k * (2.0 * std::f64::consts::PI * scale_sq).ln();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= centroids.nrows() {
            return Err(Error::invalid(format!("label {y} out of centroid range")));
        }
        total += constant + sq_dist(embeddings.row(i), centroids.row(y)) / (2.0 * scale_sq);
    }
    Ok(total / labels.len().max(1) as f64)
}

/// Robustness-style contrastive term over batch centroids:
///
/// ```text
/// (1/N) sum_{(x,y)} log sum_{(x',y') in S}
///     exp(-||Phi(x') - mu_y||^2 + ||Phi(x) - mu_y||^2 + eps_y * 1[y' != y])
/// ```
///
/// where `mu_y` is the batch centroid of class `y` and the sum includes
/// `x' = x` itself. Value-only; used for identity checks.
pub fn dro_lt_reg(embeddings: &Array2<f64>, labels: &[usize], epsilon: &Array1<f64>) -> Result<f64> {
    check_embedding_args(embeddings, labels, epsilon, 0)?;
    let num_classes = epsilon.len();
    let (centroids, _) = class_centroids(embeddings, labels, num_classes)?;
    let n = labels.len();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let mu = centroids.row(y);
        let d_self = sq_dist(embeddings.row(i), mu);
        // log-sum-exp over the whole batch, stabilised by the running max.
        let mut terms = Vec::with_capacity(n);
        for (j, &yj) in labels.iter().enumerate() {
            let margin = if yj != y { epsilon[y] } else { 0.0 };
            terms.push(d_self - sq_dist(embeddings.row(j), mu) + margin);
        }
        let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = terms.iter().map(|t| (t - m).exp()).sum();
        total += m + sum.ln();
    }
    Ok(total / n as f64)
}

/// The same quantity as [`dro_lt_reg`], written in its pulled-out form
///
/// ```text
/// 2 e~ + log[ sum_{x' in S_y} exp(d - d' - 2 e~) + sum_{x'' notin S_y} exp(d - d'') ]
/// ```
///
/// with `e~ = eps / 2`. Kept as a deliberately separate evaluation path so
/// the equivalence of the two forms is a checkable fact, not a tautology.
pub fn dro_lt_reg_split_form(
    embeddings: &Array2<f64>,
    labels: &[usize],
    epsilon_tilde: &Array1<f64>,
) -> Result<f64> {
    check_embedding_args(embeddings, labels, epsilon_tilde, 0)?;
    let num_classes = epsilon_tilde.len();
    let (centroids, _) = class_centroids(embeddings, labels, num_classes)?;
    let n = labels.len();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let mu = centroids.row(y);
        let et = epsilon_tilde[y];
        let d_self = sq_dist(embeddings.row(i), mu);
        let mut terms = Vec::with_capacity(n);
        for (j, &yj) in labels.iter().enumerate() {
            let d_other = sq_dist(embeddings.row(j), mu);
            if yj == y {
                terms.push(d_self - d_other - 2.0 * et);
            } else {
                terms.push(d_self - d_other);
            }
        }
        let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = terms.iter().map(|t| (t - m).exp()).sum();
        total += 2.0 * et + m + sum.ln();
    }
    Ok(total / n as f64)
}

/// Spread-out regulariser on length-normalised embeddings:
/// `M1^2 + max(0, M2 - 1/K)` where `M1` and `M2` are the first and second
/// moments of `z_i . z_j` over ordered pairs `i != j`.
///
/// Computed through the Gram identities
/// `sum_{i != j} z_i.z_j = ||sum_i z_i||^2 - N` and
/// `sum_{i != j} (z_i.z_j)^2 = ||Z^T Z||_F^2 - N`,
/// which the tests compare against direct pair enumeration.
pub fn spreadout_reg(embeddings: &Array2<f64>) -> Result<f64> {
    let n = embeddings.nrows();
    let k = embeddings.ncols();
    if n < 2 {
        return Err(Error::invalid("spreadout needs at least 2 embeddings"));
    }
    let mut normalised = embeddings.clone();
    for mut row in normalised.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm <= 0.0 || !norm.is_finite() {
            return Err(Error::invalid("spreadout requires non-zero embeddings".to_string()));
        }
        row /= norm;
    }
    let pair_count = (n * (n - 1)) as f64;
    let col_sums = normalised.sum_axis(ndarray::Axis(0));
    let m1 = (col_sums.dot(&col_sums) - n as f64) / pair_count;
    let gram = normalised.t().dot(&normalised);
    let frob_sq: f64 = gram.iter().map(|g| g * g).sum();
    let m2 = (frob_sq - n as f64) / pair_count;
    Ok(m1 * m1 + (m2 - 1.0 / k as f64).max(0.0))
}

/// Range-style separation penalty on class centroids:
/// `max_{y != y'} max(0, gamma - ||mu_y - mu_{y'}||^2)`.
///
/// Equals the hinge at the closest centroid pair.
pub fn range_loss(centroids: &Array2<f64>, gamma: f64) -> Result<f64> {
    if centroids.nrows() < 2 {
        return Err(Error::invalid("range loss needs at least 2 centroids"));
    }
    if !gamma.is_finite() {
        return Err(Error::invalid("gamma must be finite"));
    }
    let mut worst = 0.0_f64;
    for y in 0..centroids.nrows() {
        for yp in (y + 1)..centroids.nrows() {
            worst = worst.max(gamma - sq_dist(centroids.row(y), centroids.row(yp)));
        }
    }
    Ok(worst.max(0.0))
}

/// Unweighted per-term means of the batch objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ObjectiveParts {
    pub margin_ce: f64,
    pub pull: f64,
    pub push: f64,
    pub center: f64,
}

/// Value and gradients of the batch objective.
#[derive(Debug, Clone)]
pub struct BatchObjective {
    /// `mean ce + lambda_pull * mean pull + lambda_push * mean push
    ///  + lambda_center * mean center`.
    pub value: f64,
    /// The unweighted term means behind `value`.
    pub parts: ObjectiveParts,
    /// `d value / d logits`, shape `N x L`.
    pub grad_logits: Array2<f64>,
    /// `d value / d embeddings` from the regularisers only (the margin-CE
    /// path reaches embeddings through the head, which is the scorer's job).
    pub grad_embeddings: Array2<f64>,
}

/// Evaluates the full batch objective and its gradients.
///
/// Centroids for the centre term are the batch class means; their gradient
/// contribution cancels exactly (see [`center_loss`]), so the returned
/// gradients are total derivatives of `value` in both arguments.
pub fn elm_objective(
    logits: &Array2<f64>,
    embeddings: &Array2<f64>,
    labels: &[usize],
    spec: &LossSpec,
) -> Result<BatchObjective> {
    spec.validate()?;
    let n = labels.len();
    let l = spec.num_classes();
    if logits.nrows() != n || embeddings.nrows() != n {
        return Err(Error::dim(format!(
            "batch size mismatch: {} logits rows, {} embedding rows, {} labels",
            logits.nrows(),
            embeddings.nrows(),
            n
        )));
    }
    if logits.ncols() != l {
        return Err(Error::dim(format!("{} logit columns vs {l} classes", logits.ncols())));
    }
    if n == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let n_f = n as f64;

    let mut ce_sum = 0.0;
    let mut grad_logits = Array2::zeros(logits.raw_dim());
    for (i, &y) in labels.iter().enumerate() {
        let (v, g) = margin_ce(logits.row(i), y, &spec.delta)?;
        ce_sum += v;
        let mut row = grad_logits.row_mut(i);
        row.assign(&(&g / n_f));
    }

    let mut grad_embeddings = Array2::zeros(embeddings.raw_dim());
    let mut pull_sum = 0.0;
    if spec.lambda_pull > 0.0 {
        for i in 0..n {
            pull_sum += pull_term(
                embeddings,
                labels,
                &spec.alpha,
                i,
                spec.lambda_pull / n_f,
                Some(&mut grad_embeddings),
            );
        }
    }
    let mut push_sum = 0.0;
    if spec.lambda_push > 0.0 {
        for i in 0..n {
            push_sum += push_term(
                embeddings,
                labels,
                &spec.beta,
                i,
                spec.lambda_push / n_f,
                Some(&mut grad_embeddings),
            );
        }
    }
    let mut center_mean = 0.0;
    if spec.lambda_center > 0.0 {
        let (centroids, _) = class_centroids(embeddings, labels, l)?;
        let (value, grad) = center_loss(embeddings, labels, &centroids)?;
        center_mean = value;
        grad_embeddings.scaled_add(spec.lambda_center, &grad);
    }

    let parts = ObjectiveParts {
        margin_ce: ce_sum / n_f,
        pull: pull_sum / n_f,
        push: push_sum / n_f,
        center: center_mean,
    };
    let value = parts.margin_ce
        + spec.lambda_pull * parts.pull
        + spec.lambda_push * parts.push
        + spec.lambda_center * parts.center;
    if !value.is_finite() {
        return Err(Error::NonFinite("batch objective".into()));
    }
    Ok(BatchObjective { value, parts, grad_logits, grad_embeddings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::Rng;

    use crate::rng::rng_for_stream;

    fn random_embeddings(n: usize, k: usize, stream: u64) -> Array2<f64> {
        let mut rng = rng_for_stream(0xE0B, stream);
        Array2::from_shape_fn((n, k), |_| rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn margin_ce_zero_logits_zero_delta_is_log_l() {
        for l in 2..6 {
            let delta = Array2::zeros((l, l));
            let logits = Array1::zeros(l);
            let (v, g) = margin_ce(logits.view(), 0, &delta).unwrap();
            assert_abs_diff_eq!(v, (l as f64).ln(), epsilon = 1e-14);
            assert_abs_diff_eq!(g.sum(), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn margin_ce_binary_log_margin_example() {
        // Delta_{01} = ln 9 with equal logits gives log(1 + 9) = log 10.
        let mut delta = Array2::zeros((2, 2));
        delta[[0, 1]] = 9.0_f64.ln();
        delta[[1, 0]] = (1.0 / 9.0_f64).ln();
        let logits = array![0.0, 0.0];
        let (v, _) = margin_ce(logits.view(), 0, &delta).unwrap();
        assert_abs_diff_eq!(v, 10.0_f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn margin_ce_is_shift_invariant() {
        let mut rng = rng_for_stream(1, 0);
        for _ in 0..200 {
            let l = rng.gen_range(2..6);
            let priors: Vec<f64> = {
                let raw: Vec<f64> = (0..l).map(|_| rng.gen_range(0.05..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| v / s).collect()
            };
            let delta = delta_schedule(&priors, DeltaSchedule::LogAdjust).unwrap();
            let logits: Array1<f64> = (0..l).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let shift = rng.gen_range(-5.0..5.0);
            let shifted = &logits + shift;
            let y = rng.gen_range(0..l);
            let (a, _) = margin_ce(logits.view(), y, &delta).unwrap();
            let (b, _) = margin_ce(shifted.view(), y, &delta).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn margin_ce_with_zero_delta_matches_softmax_reference() {
        // Independent oracle: -log softmax_y computed directly.
        let mut rng = rng_for_stream(2, 0);
        for _ in 0..1000 {
            let l = rng.gen_range(2..7);
            let delta = Array2::zeros((l, l));
            let logits: Array1<f64> = (0..l).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let y = rng.gen_range(0..l);
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|f| (f - m).exp()).sum();
            let reference = -(((logits[y] - m).exp() / z).ln());
            let (v, _) = margin_ce(logits.view(), y, &delta).unwrap();
            assert_abs_diff_eq!(v, reference, epsilon = 1e-12);
        }
    }

    #[test]
    fn margin_ce_is_stable_for_huge_logits() {
        let delta = Array2::zeros((3, 3));
        let logits = array![1e4, -1e4, 0.0];
        let (v, g) = margin_ce(logits.view(), 0, &delta).unwrap();
        assert!(v >= 0.0 && v.is_finite());
        assert!(g.iter().all(|x| x.is_finite()));
        let (v1, _) = margin_ce(logits.view(), 1, &delta).unwrap();
        assert_abs_diff_eq!(v1, 2e4, epsilon = 1e-8);
    }

    #[test]
    fn margin_ce_gradient_matches_finite_differences() {
        let mut rng = rng_for_stream(3, 0);
        for _ in 0..50 {
            let l = rng.gen_range(2..5);
            let priors: Vec<f64> = vec![1.0 / l as f64; l];
            let delta = delta_schedule(&priors, DeltaSchedule::Ldam).unwrap();
            let logits: Array1<f64> = (0..l).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let y = rng.gen_range(0..l);
            let (_, g) = margin_ce(logits.view(), y, &delta).unwrap();
            let h = 1e-6;
            for j in 0..l {
                let mut lo = logits.clone();
                let mut hi = logits.clone();
                lo[j] -= h;
                hi[j] += h;
                let (vl, _) = margin_ce(lo.view(), y, &delta).unwrap();
                let (vh, _) = margin_ce(hi.view(), y, &delta).unwrap();
                let fd = (vh - vl) / (2.0 * h);
                assert_abs_diff_eq!(g[j], fd, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn delta_schedules_match_hand_computed_entries() {
        let priors = [0.9, 0.1];
        let logadj = delta_schedule(&priors, DeltaSchedule::LogAdjust).unwrap();
        assert_abs_diff_eq!(logadj[[0, 1]], (1.0_f64 / 9.0).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(logadj[[1, 0]], 9.0_f64.ln(), epsilon = 1e-12);
        assert_eq!(logadj[[0, 0]], 0.0);
        assert_eq!(logadj[[1, 1]], 0.0);

        let priors4 = [0.9899, 0.0001, 0.005, 0.005];
        let ldam = delta_schedule(&priors4, DeltaSchedule::Ldam).unwrap();
        assert_abs_diff_eq!(ldam[[1, 0]], 10.0, epsilon = 1e-9);
        assert_eq!(ldam[[1, 1]], 0.0);

        let tan = delta_schedule(&priors, DeltaSchedule::Tan).unwrap();
        assert_abs_diff_eq!(tan[[0, 1]], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(tan[[1, 0]], 0.9, epsilon = 1e-15);

        let zero = delta_schedule(&priors, DeltaSchedule::Zero).unwrap();
        assert_eq!(zero.sum(), 0.0);
    }

    #[test]
    fn margin_schedule_is_a_power_law() {
        let alpha = margin_schedule(&[0.25, 0.04], 0.5, 10.0).unwrap();
        assert_abs_diff_eq!(alpha[0], 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(alpha[1], 2.0, epsilon = 1e-12);
        assert!(margin_schedule(&[0.0, 1.0], -0.5, 1.0).is_err());
    }

    #[test]
    fn pull_equilateral_triangle_gives_log_3() {
        // Three same-class points with all pairwise squared distances 1 and
        // alpha = 1: each term is exp(0), so pull = log(1 + 2) per sample.
        let emb = array![
            [0.0, 0.0],
            [1.0, 0.0],
            [0.5, 3.0_f64.sqrt() / 2.0]
        ];
        let labels = vec![0, 0, 0];
        let alpha = array![1.0];
        for i in 0..3 {
            let (v, _) = pull_reg(&emb, &labels, &alpha, i).unwrap();
            assert_abs_diff_eq!(v, 3.0_f64.ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn pull_without_partners_is_zero_with_zero_gradient() {
        let emb = random_embeddings(4, 3, 1);
        let labels = vec![0, 1, 2, 3];
        let alpha = Array1::zeros(4);
        let (v, g) = pull_reg(&emb, &labels, &alpha, 2).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g.sum(), 0.0);
    }

    #[test]
    fn pull_is_nonincreasing_in_alpha() {
        let emb = random_embeddings(6, 2, 2);
        let labels = vec![0, 0, 0, 1, 1, 1];
        for i in 0..6 {
            let (lo, _) = pull_reg(&emb, &labels, &array![0.5, 0.5], i).unwrap();
            let (hi, _) = pull_reg(&emb, &labels, &array![1.5, 1.5], i).unwrap();
            assert!(hi < lo, "pull must strictly decrease when alpha grows");
        }
    }

    #[test]
    fn hard_pull_is_strictly_below_soft_pull() {
        for stream in 0..50 {
            let emb = random_embeddings(8, 2, 100 + stream);
            let labels = vec![0, 0, 0, 0, 1, 1, 1, 1];
            let alpha = array![0.8, 1.2];
            for i in 0..8 {
                let (soft, _) = pull_reg(&emb, &labels, &alpha, i).unwrap();
                let hard = hard_pull(&emb, &labels, &alpha, i).unwrap();
                assert!(
                    hard < soft,
                    "hard {hard} must be strictly below soft {soft} with partners present"
                );
            }
        }
    }

    #[test]
    fn push_matches_hand_computed_two_negative_example() {
        let emb = array![[0.0, 0.0], [1.0, 0.0], [2.0_f64.sqrt(), 0.0]];
        let labels = vec![0, 1, 1];
        let beta = array![1.0, 0.0];
        let (v, _) = push_reg(&emb, &labels, &beta, 0).unwrap();
        // Squared distances 1 and 2 with beta = 1: log(1 + e^0 + e^-1).
        let expected = (2.0 + (-1.0_f64).exp()).ln();
        assert_abs_diff_eq!(v, expected, epsilon = 1e-14);
    }

    #[test]
    fn push_vanishes_for_distant_negatives() {
        let emb = array![[0.0, 0.0], [1e3, 0.0]];
        let labels = vec![0, 1];
        let beta = array![1.0, 1.0];
        let (v, g) = push_reg(&emb, &labels, &beta, 0).unwrap();
        assert!(v.abs() < 1e-12, "push at squared distance 1e6 must vanish, got {v}");
        assert!(g.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn push_is_nondecreasing_in_beta() {
        let emb = random_embeddings(6, 2, 3);
        let labels = vec![0, 1, 0, 1, 0, 1];
        for i in 0..6 {
            let (lo, _) = push_reg(&emb, &labels, &array![0.2, 0.2], i).unwrap();
            let (hi, _) = push_reg(&emb, &labels, &array![1.0, 1.0], i).unwrap();
            assert!(hi > lo);
        }
    }

    #[test]
    fn pairwise_regulariser_gradients_match_finite_differences() {
        let labels = vec![0, 0, 1, 0, 1];
        let alpha = array![0.7, 0.4];
        let h = 1e-6;
        for stream in 0..10 {
            let emb = random_embeddings(5, 2, 200 + stream);
            for i in 0..5 {
                let (_, g_pull) = pull_reg(&emb, &labels, &alpha, i).unwrap();
                let (_, g_push) = push_reg(&emb, &labels, &alpha, i).unwrap();
                for r in 0..5 {
                    for c in 0..2 {
                        let mut lo = emb.clone();
                        let mut hi = emb.clone();
                        lo[[r, c]] -= h;
                        hi[[r, c]] += h;
                        let (vl, _) = pull_reg(&lo, &labels, &alpha, i).unwrap();
                        let (vh, _) = pull_reg(&hi, &labels, &alpha, i).unwrap();
                        assert_abs_diff_eq!(g_pull[[r, c]], (vh - vl) / (2.0 * h), epsilon = 1e-6);
                        let (wl, _) = push_reg(&lo, &labels, &alpha, i).unwrap();
                        let (wh, _) = push_reg(&hi, &labels, &alpha, i).unwrap();
                        assert_abs_diff_eq!(g_push[[r, c]], (wh - wl) / (2.0 * h), epsilon = 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn center_loss_matches_point_examples() {
        let emb = array![[1.0, 0.0]];
        let centroids = array![[0.0, 0.0]];
        let (v, g) = center_loss(&emb, &[0], &centroids).unwrap();
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g[[0, 0]], 2.0, epsilon = 1e-15);
        let (v0, _) = center_loss(&centroids, &[0], &centroids).unwrap();
        assert_eq!(v0, 0.0);
    }

    #[test]
    fn center_loss_at_batch_centroids_equals_mean_trace_variance() {
        // With mu_y the batch means, (1/N) sum ||Phi - mu_y||^2 is the
        // count-weighted mean of per-class trace variances.
        let emb = random_embeddings(12, 3, 4);
        let labels = vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        let (centroids, counts) = class_centroids(&emb, &labels, 2).unwrap();
        let (v, _) = center_loss(&emb, &labels, &centroids).unwrap();
        let mut expected = 0.0;
        for y in 0..2 {
            let rows: Vec<usize> = labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| l == y)
                .map(|(i, _)| i)
                .collect();
            let trace: f64 = rows
                .iter()
                .map(|&i| sq_dist(emb.row(i), centroids.row(y)))
                .sum::<f64>()
                / counts[y] as f64;
            expected += counts[y] as f64 / 12.0 * trace;
        }
        assert_abs_diff_eq!(v, expected, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_penalty_is_shifted_scaled_center_loss() {
        for stream in 0..20 {
            let emb = random_embeddings(10, 4, 300 + stream);
            let labels = vec![0, 1, 2, 0, 1, 2, 0, 1, 2, 0];
            let (centroids, _) = class_centroids(&emb, &labels, 3).unwrap();
            let s2 = 0.5 + stream as f64 * 0.1;
            let penalty = gaussian_xent_penalty(&emb, &labels, &centroids, s2).unwrap();
            let (center, _) = center_loss(&emb, &labels, &centroids).unwrap();
            let reconstructed =
                2.0 * (2.0 * std::f64::consts::PI * s2).ln() + center / (2.0 * s2);
            assert_abs_diff_eq!(penalty, reconstructed, epsilon = 1e-12);
        }
    }

    #[test]
    fn dro_forms_agree_with_half_margin_mapping() {
        for stream in 0..50 {
            let emb = random_embeddings(9, 3, 400 + stream);
            let labels = vec![0, 0, 0, 1, 1, 1, 2, 2, 2];
            let eps = array![0.3, 0.9, 1.5];
            let direct = dro_lt_reg(&emb, &labels, &eps).unwrap();
            let split = dro_lt_reg_split_form(&emb, &labels, &(&eps / 2.0)).unwrap();
            let rel = (direct - split).abs() / direct.abs().max(1.0);
            assert!(rel < 1e-12, "dro forms disagree: {direct} vs {split}");
        }
    }

    #[test]
    fn dro_with_zero_margin_and_symmetric_batch_is_log_n() {
        // Two identical points per class: every exponent is zero, so each
        // sample sees log(N).
        let emb = array![[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0]];
        let labels = vec![0, 0, 1, 1];
        let eps = array![0.0, 0.0];
        let v = dro_lt_reg(&emb, &labels, &eps).unwrap();
        // d(x) = 0 for all points and d' = 0 for same-class, 4 for the
        // opposite pair: log(2 + 2 e^{-4}).
        let expected = (2.0 + 2.0 * (-4.0_f64).exp()).ln();
        assert_abs_diff_eq!(v, expected, epsilon = 1e-12);
    }

    #[test]
    fn spreadout_matches_pair_enumeration_oracle() {
        for stream in 0..30 {
            let emb = random_embeddings(7, 3, 500 + stream);
            let fast = spreadout_reg(&emb).unwrap();
            // Oracle: normalise then enumerate ordered pairs directly.
            let mut z = emb.clone();
            for mut row in z.rows_mut() {
                let n = row.dot(&row).sqrt();
                row /= n;
            }
            let n = z.nrows();
            let mut m1 = 0.0;
            let mut m2 = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        let dot = z.row(i).dot(&z.row(j));
                        m1 += dot;
                        m2 += dot * dot;
                    }
                }
            }
            let pairs = (n * (n - 1)) as f64;
            m1 /= pairs;
            m2 /= pairs;
            let oracle = m1 * m1 + (m2 - 1.0 / 3.0).max(0.0);
            assert_abs_diff_eq!(fast, oracle, epsilon = 1e-12);
        }
    }

    #[test]
    fn spreadout_limits_orthonormal_and_identical() {
        let ortho = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert_abs_diff_eq!(spreadout_reg(&ortho).unwrap(), 0.0, epsilon = 1e-15);
        let same = array![[2.0, 0.0, 0.0], [3.0, 0.0, 0.0]];
        // M1 = 1, M2 = 1: value = 1 + (1 - 1/3).
        assert_abs_diff_eq!(spreadout_reg(&same).unwrap(), 1.0 + 2.0 / 3.0, epsilon = 1e-12);
        let with_zero = array![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        assert!(spreadout_reg(&with_zero).is_err());
    }

    #[test]
    fn range_loss_hinges_at_closest_pair() {
        let centroids = array![[0.0, 0.0], [1.0, 0.0], [5.0, 0.0]];
        // Closest squared distance is 1; gamma = 3 leaves a hinge of 2.
        assert_abs_diff_eq!(range_loss(&centroids, 3.0).unwrap(), 2.0, epsilon = 1e-12);
        assert_eq!(range_loss(&centroids, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn objective_reduces_to_margin_ce_when_lambdas_are_zero() {
        let emb = random_embeddings(6, 2, 6);
        let logits = random_embeddings(6, 3, 7);
        let labels = vec![0, 1, 2, 0, 1, 2];
        let spec = LossSpec::margin_only(Array2::zeros((3, 3)));
        let obj = elm_objective(&logits, &emb, &labels, &spec).unwrap();
        assert_abs_diff_eq!(obj.value, obj.parts.margin_ce, epsilon = 1e-15);
        assert_eq!(obj.parts.pull, 0.0);
        assert_eq!(obj.grad_embeddings.sum(), 0.0);
    }

    #[test]
    fn objective_combines_parts_with_weights() {
        let emb = random_embeddings(8, 2, 8);
        let logits = random_embeddings(8, 2, 9);
        let labels = vec![0, 0, 0, 0, 1, 1, 1, 1];
        let mut spec = LossSpec::margin_only(Array2::zeros((2, 2)));
        spec.alpha = array![0.5, 0.5];
        spec.beta = array![0.3, 0.3];
        spec.lambda_pull = 0.4;
        spec.lambda_push = 0.2;
        spec.lambda_center = 0.1;
        let obj = elm_objective(&logits, &emb, &labels, &spec).unwrap();
        let expected = obj.parts.margin_ce
            + 0.4 * obj.parts.pull
            + 0.2 * obj.parts.push
            + 0.1 * obj.parts.center;
        assert_abs_diff_eq!(obj.value, expected, epsilon = 1e-15);
        assert!(obj.parts.pull > 0.0);
        assert!(obj.parts.center > 0.0);
    }

    #[test]
    fn objective_gradients_match_finite_differences() {
        let labels = vec![0, 0, 1, 1, 1];
        let mut spec = LossSpec::margin_only(
            delta_schedule(&[0.4, 0.6], DeltaSchedule::LogAdjust).unwrap(),
        );
        spec.alpha = array![0.5, 0.8];
        spec.beta = array![0.2, 0.4];
        spec.lambda_pull = 0.3;
        spec.lambda_push = 0.2;
        spec.lambda_center = 0.25;
        let h = 1e-6;
        for stream in 0..5 {
            let emb = random_embeddings(5, 2, 600 + stream);
            let logits = random_embeddings(5, 2, 700 + stream);
            let obj = elm_objective(&logits, &emb, &labels, &spec).unwrap();
            for r in 0..5 {
                for c in 0..2 {
                    let mut lo = logits.clone();
                    let mut hi = logits.clone();
                    lo[[r, c]] -= h;
                    hi[[r, c]] += h;
                    let vl = elm_objective(&lo, &emb, &labels, &spec).unwrap().value;
                    let vh = elm_objective(&hi, &emb, &labels, &spec).unwrap().value;
                    assert_abs_diff_eq!(obj.grad_logits[[r, c]], (vh - vl) / (2.0 * h), epsilon = 1e-6);

                    let mut elo = emb.clone();
                    let mut ehi = emb.clone();
                    elo[[r, c]] -= h;
                    ehi[[r, c]] += h;
                    let wl = elm_objective(&logits, &elo, &labels, &spec).unwrap().value;
                    let wh = elm_objective(&logits, &ehi, &labels, &spec).unwrap().value;
                    assert_abs_diff_eq!(
                        obj.grad_embeddings[[r, c]],
                        (wh - wl) / (2.0 * h),
                        epsilon = 1e-6
                    );
                }
            }
        }
    }

    #[test]
    fn loss_spec_validation_rejects_bad_shapes() {
        let mut spec = LossSpec::margin_only(Array2::zeros((3, 3)));
        spec.alpha = Array1::zeros(2);
        assert!(spec.validate().is_err());
        let mut spec = LossSpec::margin_only(Array2::zeros((3, 3)));
        spec.delta[[1, 1]] = 0.5;
        assert!(spec.validate().is_err());
        let mut spec = LossSpec::margin_only(Array2::zeros((3, 3)));
        spec.lambda_pull = -0.1;
        assert!(spec.validate().is_err());
    }
}
