//! Feedforward ReLU scorers with analytic gradients.
//!
//! A scorer maps inputs through a stack of dense ReLU layers to an
//! embedding `Phi(x)` (the last hidden activation) and then through an
//! affine head to logits:
//!
//! ```text
//! logits = Phi(x) W + b,    W in R^{K x L}, b in R^L
//! ```
//!
//! [`backward`] differentiates the full batch objective of
//! [`crate::losses::elm_objective`] with respect to every parameter; the
//! margin-CE gradient flows through the head while the embedding
//! regularisers inject their gradients directly at `Phi`.
//! [`finite_diff_check`] measures the worst relative disagreement between
//! that analytic gradient and central finite differences.
//!
//! Two closed-form heads are provided: [`bayes_gaussian_head`], the exact
//! posterior head for isotropic Gaussian class conditionals, and
//! [`prototype_head`], the centroid head without prior correction.
//! [`tau_normalize`] rescales class weight vectors to `w_y / ||w_y||^tau`.
//!
//! ReLU uses subgradient `0` at its kink; gradient checks should stay away
//! from configurations with near-zero pre-activations (see
//! [`min_preactivation_gap`]).

use ndarray::{Array1, Array2, Axis};
use rand_distr::{Distribution, Normal};

use crate::data::GaussianMixtureSpec;
use crate::error::{Error, Result};
use crate::losses::{elm_objective, LossSpec, ObjectiveParts};
use crate::rng::rng_from_seed;

/// One dense layer with weight `d_out x d_in` and bias `d_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    fn zeros_like(other: &DenseLayer) -> DenseLayer {
        DenseLayer {
            weight: Array2::zeros(other.weight.raw_dim()),
            bias: Array1::zeros(other.bias.raw_dim()),
        }
    }
}

/// All parameters of a scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerParams {
    /// Hidden ReLU layers, applied in order.
    pub hidden: Vec<DenseLayer>,
    /// Head weight, `K x L` (one column per class).
    pub head_weight: Array2<f64>,
    /// Head bias, length `L`.
    pub head_bias: Array1<f64>,
}

/// Gradient (or velocity) bundle with the same shape as [`ScorerParams`].
#[derive(Debug, Clone)]
pub struct ScorerGradients {
    pub hidden: Vec<DenseLayer>,
    pub head_weight: Array2<f64>,
    pub head_bias: Array1<f64>,
}

impl ScorerParams {
    pub fn input_dim(&self) -> usize {
        self.hidden
            .first()
            .map_or(self.head_weight.nrows(), |l| l.weight.ncols())
    }

    pub fn embedding_dim(&self) -> usize {
        self.head_weight.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.head_bias.len()
    }

    pub fn num_params(&self) -> usize {
        self.hidden
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum::<usize>()
            + self.head_weight.len()
            + self.head_bias.len()
    }

    /// Gradient/velocity bundle of zeros matching this parameter shape.
    pub fn zero_gradients(&self) -> ScorerGradients {
        ScorerGradients {
            hidden: self.hidden.iter().map(DenseLayer::zeros_like).collect(),
            head_weight: Array2::zeros(self.head_weight.raw_dim()),
            head_bias: Array1::zeros(self.head_bias.raw_dim()),
        }
    }

    /// Canonical flattening: hidden layers in order (weight row-major, then
    /// bias), then head weight, then head bias. Used by the optimiser, the
    /// finite-difference loop, and checkpoints.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.hidden {
            out.extend(layer.weight.iter());
            out.extend(layer.bias.iter());
        }
        out.extend(self.head_weight.iter());
        out.extend(self.head_bias.iter());
        out
    }

    /// Writes a flat vector produced by [`ScorerParams::flatten`] back.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::dim(format!(
                "{} flat values vs {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut it = flat.iter();
        for layer in &mut self.hidden {
            for w in layer.weight.iter_mut() {
                *w = *it.next().expect("length checked");
            }
            for b in layer.bias.iter_mut() {
                *b = *it.next().expect("length checked");
            }
        }
        for w in self.head_weight.iter_mut() {
            *w = *it.next().expect("length checked");
        }
        for b in self.head_bias.iter_mut() {
            *b = *it.next().expect("length checked");
        }
        Ok(())
    }

    /// Named tensors in canonical order, for checkpoints.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out = Vec::new();
        for (i, layer) in self.hidden.iter().enumerate() {
            out.push((
                format!("hidden{i}.weight"),
                vec![layer.weight.nrows(), layer.weight.ncols()],
                layer.weight.iter().cloned().collect(),
            ));
            out.push((format!("hidden{i}.bias"), vec![layer.bias.len()], layer.bias.to_vec()));
        }
        out.push((
            "head.weight".to_string(),
            vec![self.head_weight.nrows(), self.head_weight.ncols()],
            self.head_weight.iter().cloned().collect(),
        ));
        out.push(("head.bias".to_string(), vec![self.head_bias.len()], self.head_bias.to_vec()));
        out
    }
}

impl ScorerGradients {
    /// Canonical flattening matching [`ScorerParams::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.hidden {
            out.extend(layer.weight.iter());
            out.extend(layer.bias.iter());
        }
        out.extend(self.head_weight.iter());
        out.extend(self.head_bias.iter());
        out
    }
}

/// Initialises a scorer for `layer_sizes = [d_in, h_1, .., h_m, K, L]`.
///
/// The second-to-last entry is the embedding width `K`, the last is the
/// class count `L`. Hidden weights draw from `N(0, 2 / fan_in)` and the head
/// from `N(0, 1 / K)`; biases start at zero. The draw order is fixed, so a
/// seed pins the parameters exactly.
pub fn init_params(layer_sizes: &[usize], seed: u64) -> Result<ScorerParams> {
    if layer_sizes.len() < 2 {
        return Err(Error::invalid(format!(
            "layer_sizes needs at least [input, classes], got {layer_sizes:?}"
        )));
    }
    if layer_sizes.iter().any(|&s| s == 0) {
        return Err(Error::invalid("layer sizes must be positive".to_string()));
    }
    let mut rng = rng_from_seed(seed);
    let mut hidden = Vec::new();
    for w in layer_sizes.windows(2).take(layer_sizes.len() - 2) {
        let (d_in, d_out) = (w[0], w[1]);
        let dist = Normal::new(0.0, (2.0 / d_in as f64).sqrt()).expect("finite std");
        hidden.push(DenseLayer {
            weight: Array2::from_shape_fn((d_out, d_in), |_| dist.sample(&mut rng)),
            bias: Array1::zeros(d_out),
        });
    }
    let k = layer_sizes[layer_sizes.len() - 2];
    let l = layer_sizes[layer_sizes.len() - 1];
    let dist = Normal::new(0.0, (1.0 / k as f64).sqrt()).expect("finite std");
    Ok(ScorerParams {
        hidden,
        head_weight: Array2::from_shape_fn((k, l), |_| dist.sample(&mut rng)),
        head_bias: Array1::zeros(l),
    })
}

/// Activations produced by [`forward`].
#[derive(Debug, Clone)]
pub struct ForwardResult {
    /// Last hidden activations, `N x K`.
    pub embeddings: Array2<f64>,
    /// `embeddings * head_weight + head_bias`, `N x L`.
    pub logits: Array2<f64>,
    /// Pre-activation of each hidden layer, `N x d_out`, for backprop.
    pre_activations: Vec<Array2<f64>>,
    /// Post-activation of each hidden layer.
    activations: Vec<Array2<f64>>,
}

/// Runs the scorer on a batch of rows.
pub fn forward(params: &ScorerParams, inputs: &Array2<f64>) -> Result<ForwardResult> {
    if inputs.ncols() != params.input_dim() {
        return Err(Error::dim(format!(
            "{} input columns vs scorer input dim {}",
            inputs.ncols(),
            params.input_dim()
        )));
    }
    let mut pre_activations = Vec::with_capacity(params.hidden.len());
    let mut activations = Vec::with_capacity(params.hidden.len());
    let mut current = inputs.clone();
    for layer in &params.hidden {
        let mut pre = current.dot(&layer.weight.t());
        pre += &layer.bias;
        let act = pre.mapv(|v| v.max(0.0));
        pre_activations.push(pre);
        activations.push(act.clone());
        current = act;
    }
    let embeddings = current;
    let mut logits = embeddings.dot(&params.head_weight);
    logits += &params.head_bias;
    Ok(ForwardResult { embeddings, logits, pre_activations, activations })
}

/// Smallest absolute hidden pre-activation over a batch.
///
/// Gradient checks resample configurations whose gap is below their kink
/// margin, since central differences straddle the ReLU kink there.
pub fn min_preactivation_gap(params: &ScorerParams, inputs: &Array2<f64>) -> Result<f64> {
    let fwd = forward(params, inputs)?;
    let mut gap = f64::INFINITY;
    for pre in &fwd.pre_activations {
        for &v in pre.iter() {
            gap = gap.min(v.abs());
        }
    }
    Ok(gap)
}

/// Everything produced by one backward pass.
#[derive(Debug, Clone)]
pub struct Backprop {
    /// Batch objective value.
    pub value: f64,
    /// Unweighted term means.
    pub parts: ObjectiveParts,
    /// The forward pass the gradients were computed from.
    pub forward: ForwardResult,
    /// Objective gradient for every parameter.
    pub grads: ScorerGradients,
}

/// Differentiates the batch objective with respect to all parameters.
pub fn backward(
    params: &ScorerParams,
    inputs: &Array2<f64>,
    labels: &[usize],
    spec: &LossSpec,
) -> Result<Backprop> {
    let fwd = forward(params, inputs)?;
    let obj = elm_objective(&fwd.logits, &fwd.embeddings, labels, spec)?;
    let mut grads = params.zero_gradients();

    grads.head_weight = fwd.embeddings.t().dot(&obj.grad_logits);
    grads.head_bias = obj.grad_logits.sum_axis(Axis(0));

    // Embeddings receive the head chain plus the regulariser gradients.
    let mut delta = obj.grad_logits.dot(&params.head_weight.t()) + &obj.grad_embeddings;
    for (l, layer) in params.hidden.iter().enumerate().rev() {
        let pre = &fwd.pre_activations[l];
        // ReLU subgradient: 1 for positive pre-activation, 0 at and below 0.
        let masked = ndarray::Zip::from(&delta)
            .and(pre)
            .map_collect(|&d, &p| if p > 0.0 { d } else { 0.0 });
        let layer_input = if l == 0 { inputs } else { &fwd.activations[l - 1] };
        grads.hidden[l].weight = masked.t().dot(layer_input);
        grads.hidden[l].bias = masked.sum_axis(Axis(0));
        delta = masked.dot(&layer.weight);
    }

    Ok(Backprop { value: obj.value, parts: obj.parts, forward: fwd, grads })
}

/// Batch objective value only (used by finite differences).
pub fn objective_value(
    params: &ScorerParams,
    inputs: &Array2<f64>,
    labels: &[usize],
    spec: &LossSpec,
) -> Result<f64> {
    let fwd = forward(params, inputs)?;
    Ok(elm_objective(&fwd.logits, &fwd.embeddings, labels, spec)?.value)
}

/// Worst relative error between analytic and central finite-difference
/// gradients over every parameter coordinate.
///
/// The error for one coordinate is `|g - g_fd| / max(|g|, |g_fd|)` when
/// either magnitude exceeds `1e-6`, else the absolute difference; a loss
/// that is constant in a coordinate therefore scores `0`.
pub fn finite_diff_check(
    params: &ScorerParams,
    inputs: &Array2<f64>,
    labels: &[usize],
    spec: &LossSpec,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::invalid(format!("step size {h} must be positive")));
    }
    let analytic = backward(params, inputs, labels, spec)?.grads.flatten();
    let flat = params.flatten();
    let mut probe = params.clone();
    let mut worst = 0.0_f64;
    for i in 0..flat.len() {
        let mut bumped = flat.clone();
        bumped[i] = flat[i] + h;
        probe.assign_flat(&bumped)?;
        let up = objective_value(&probe, inputs, labels, spec)?;
        bumped[i] = flat[i] - h;
        probe.assign_flat(&bumped)?;
        let down = objective_value(&probe, inputs, labels, spec)?;
        let fd = (up - down) / (2.0 * h);
        let g = analytic[i];
        let denom = g.abs().max(fd.abs());
        let err = if denom > 1e-6 { (g - fd).abs() / denom } else { (g - fd).abs() };
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Exact posterior head for isotropic Gaussian class conditionals:
/// `w_y = mu_y / sigma_y^2`, `b_y = -||mu_y||^2 / (2 sigma_y^2) + log P(y)`.
///
/// Softmax over these logits reproduces the Bayes posterior exactly when all
/// classes share one variance; with class-specific variances the quadratic
/// and normaliser terms no longer cancel and the head is only a heuristic.
pub fn bayes_gaussian_head(spec: &GaussianMixtureSpec) -> Result<(Array2<f64>, Array1<f64>)> {
    spec.validate()?;
    if spec.classes.iter().any(|c| !(c.prior > 0.0)) {
        return Err(Error::invalid("bayes head needs strictly positive priors".to_string()));
    }
    let d = spec.dim();
    let l = spec.num_classes();
    let mut w = Array2::zeros((d, l));
    let mut b = Array1::zeros(l);
    for (y, class) in spec.classes.iter().enumerate() {
        let norm_sq: f64 = class.mean.iter().map(|m| m * m).sum();
        for j in 0..d {
            w[[j, y]] = class.mean[j] / class.sigma_sq;
        }
        b[y] = -norm_sq / (2.0 * class.sigma_sq) + class.prior.ln();
    }
    Ok((w, b))
}

/// Centroid head without prior correction:
/// `w_y = mu_hat_y / v^2`, `b_y = -||mu_hat_y||^2 / (2 v^2)`.
///
/// Every class must appear in `labels`; the trainer keeps EMA centroids to
/// cover classes missing from a batch (see [`prototype_head_from_centroids`]).
pub fn prototype_head(
    embeddings: &Array2<f64>,
    labels: &[usize],
    num_classes: usize,
    v_sq: f64,
) -> Result<(Array2<f64>, Array1<f64>)> {
    let (centroids, counts) = crate::losses::class_centroids(embeddings, labels, num_classes)?;
    if let Some(y) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyClass { class: y, context: "prototype head" });
    }
    prototype_head_from_centroids(&centroids, v_sq)
}

/// [`prototype_head`] from precomputed (possibly EMA) centroids.
pub fn prototype_head_from_centroids(
    centroids: &Array2<f64>,
    v_sq: f64,
) -> Result<(Array2<f64>, Array1<f64>)> {
    if !(v_sq > 0.0) || !v_sq.is_finite() {
        return Err(Error::invalid(format!("v_sq {v_sq} must be positive")));
    }
    let l = centroids.nrows();
    let k = centroids.ncols();
    let mut w = Array2::zeros((k, l));
    let mut b = Array1::zeros(l);
    for y in 0..l {
        let mu = centroids.row(y);
        for j in 0..k {
            w[[j, y]] = mu[j] / v_sq;
        }
        b[y] = -mu.dot(&mu) / (2.0 * v_sq);
    }
    Ok((w, b))
}

/// Rescales every class weight column to `w_y / ||w_y||^tau`.
///
/// `tau = 0` is the identity; `tau = 1` normalises all columns to unit
/// norm. Zero columns are rejected for `tau != 0`.
pub fn tau_normalize(head_weight: &Array2<f64>, tau: f64) -> Result<Array2<f64>> {
    if !tau.is_finite() {
        return Err(Error::invalid("tau must be finite"));
    }
    let mut out = head_weight.clone();
    if tau == 0.0 {
        return Ok(out);
    }
    for y in 0..out.ncols() {
        let norm = out.column(y).dot(&out.column(y)).sqrt();
        if norm <= 0.0 {
            return Err(Error::invalid(format!("class {y} weight vector is zero")));
        }
        let scale = norm.powf(tau).recip();
        out.column_mut(y).mapv_inplace(|v| v * scale);
    }
    Ok(out)
}
