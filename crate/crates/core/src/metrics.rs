//! Evaluation metrics and report assembly.
//!
//! Long-tail evaluation revolves around class-conditional quantities:
//!
//! * balanced error `(1/L) sum_y P(error | y)` and per-class accuracy;
//! * one-vs-rest AUC, macro-averaged over classes, with ties counted 1/2
//!   (computed via mid-ranks, checked against pair enumeration);
//! * the classification margin `gamma(x, y) = f_y(x) - max_{y' != y} f_{y'}(x)`;
//! * embedding geometry: per-class trace variance (divide-by-`n`
//!   convention) and the normalised maximum intra-class distance
//!   `max_{x+ in S_y} ||Phi(x) - Phi(x+)|| / max_{x in S} ||Phi(x)||`.
//!
//! Per-class metrics never silently drop a class: a class with no samples is
//! an error, because averaging over a missing class would quietly change the
//! balanced quantities this crate exists to study.

use ndarray::Array2;

use crate::data::{Bucket, BucketThresholds};
use crate::error::{Error, Result};

/// Number of uniform bins used by [`histogram`].
pub const HISTOGRAM_BINS: usize = 50;

/// Argmax predictions, lowest index winning ties.
pub fn predictions(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Fraction of predictions equal to labels.
pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(Error::dim(format!(
            "{} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Per-class accuracy `P(correct | y)`; every class must appear.
pub fn per_class_accuracy(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<Vec<f64>> {
    if preds.len() != labels.len() {
        return Err(Error::dim(format!(
            "{} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut hits = vec![0usize; num_classes];
    let mut totals = vec![0usize; num_classes];
    for (&p, &y) in preds.iter().zip(labels) {
        if y >= num_classes {
            return Err(Error::invalid(format!("label {y} out of range")));
        }
        totals[y] += 1;
        if p == y {
            hits[y] += 1;
        }
    }
    if let Some(y) = totals.iter().position(|&t| t == 0) {
        return Err(Error::EmptyClass { class: y, context: "per-class accuracy" });
    }
    Ok(hits.iter().zip(&totals).map(|(&h, &t)| h as f64 / t as f64).collect())
}

/// Balanced error `(1/L) sum_y (1 - P(correct | y))`.
pub fn balanced_error(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    let acc = per_class_accuracy(preds, labels, num_classes)?;
    Ok(acc.iter().map(|a| 1.0 - a).sum::<f64>() / num_classes as f64)
}

/// Mid-rank AUC of `scores` for the rows flagged positive; ties count 1/2.
///
/// Equivalent to pair counting with half credit for tied pairs, which the
/// tests verify by enumeration.
pub fn auc_binary(scores: &[f64], positive: &[bool]) -> Result<f64> {
    let n = scores.len();
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("auc scores".into()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("auc needs both positives and negatives".to_string()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    let mut ranks = vec![0.0_f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based mid-rank shared by the tie group [i, j].
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = mid;
        }
        i = j + 1;
    }
    let rank_sum: f64 = ranks
        .iter()
        .zip(positive)
        .filter(|(_, &p)| p)
        .map(|(&r, _)| r)
        .sum();
    let np = n_pos as f64;
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Macro-averaged one-vs-rest AUC:
/// `(1/L) sum_y AUC(f_y; class y vs rest)` with ties counted 1/2.
pub fn ovr_auc(logits: &Array2<f64>, labels: &[usize], num_classes: usize) -> Result<f64> {
    if logits.nrows() != labels.len() {
        return Err(Error::dim(format!(
            "{} logit rows vs {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    if logits.ncols() != num_classes {
        return Err(Error::dim(format!(
            "{} logit columns vs {num_classes} classes",
            logits.ncols()
        )));
    }
    let mut total = 0.0;
    for y in 0..num_classes {
        let scores: Vec<f64> = logits.column(y).to_vec();
        let positive: Vec<bool> = labels.iter().map(|&l| l == y).collect();
        if !positive.iter().any(|&p| p) {
            return Err(Error::EmptyClass { class: y, context: "one-vs-rest auc" });
        }
        total += auc_binary(&scores, &positive)?;
    }
    Ok(total / num_classes as f64)
}

/// Classification margins `gamma(x, y) = f_y(x) - max_{y' != y} f_{y'}(x)`
/// for the samples with label `class`.
pub fn margin_distribution(logits: &Array2<f64>, labels: &[usize], class: usize) -> Result<Vec<f64>> {
    if logits.nrows() != labels.len() {
        return Err(Error::dim(format!(
            "{} logit rows vs {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    if class >= logits.ncols() {
        return Err(Error::invalid(format!("class {class} out of range")));
    }
    let mut margins = Vec::new();
    for (row, &y) in logits.rows().into_iter().zip(labels) {
        if y != class {
            continue;
        }
        let mut best_other = f64::NEG_INFINITY;
        for (j, &v) in row.iter().enumerate() {
            if j != y {
                best_other = best_other.max(v);
            }
        }
        margins.push(row[y] - best_other);
    }
    if margins.is_empty() {
        return Err(Error::EmptyClass { class, context: "margin distribution" });
    }
    Ok(margins)
}

/// Biased (divide-by-`n`) variance of a slice; zero for a single value.
pub fn biased_variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Per-class trace variance `sum_j Var[Phi_j | y]` (biased convention) and
/// the class centroids. Every class must appear.
pub fn class_variance(
    embeddings: &Array2<f64>,
    labels: &[usize],
    num_classes: usize,
) -> Result<(Vec<f64>, Array2<f64>)> {
    let (centroids, counts) = crate::losses::class_centroids(embeddings, labels, num_classes)?;
    if let Some(y) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyClass { class: y, context: "class variance" });
    }
    let mut trace = vec![0.0_f64; num_classes];
    for (row, &y) in embeddings.rows().into_iter().zip(labels) {
        let diff = &row - &centroids.row(y);
        trace[y] += diff.dot(&diff);
    }
    for (t, &c) in trace.iter_mut().zip(&counts) {
        *t /= c as f64;
    }
    Ok((trace, centroids))
}

/// Per-class normalised maximum intra-class distances:
/// `d_max(x) = max_{x+ in S_y} ||Phi(x) - Phi(x+)||_2 / max_{x in S} ||Phi(x)||_2`.
///
/// Values lie in `[0, 2]` by the triangle inequality. Errors if every
/// embedding is zero (the normaliser would vanish) or a class is absent.
pub fn max_intra_class_distance(
    embeddings: &Array2<f64>,
    labels: &[usize],
    num_classes: usize,
) -> Result<Vec<Vec<f64>>> {
    if embeddings.nrows() != labels.len() {
        return Err(Error::dim(format!(
            "{} embedding rows vs {} labels",
            embeddings.nrows(),
            labels.len()
        )));
    }
    let max_norm = embeddings
        .rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt())
        .fold(0.0_f64, f64::max);
    if max_norm <= 0.0 {
        return Err(Error::invalid("all embeddings are zero; d_max normaliser vanishes".to_string()));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= num_classes {
            return Err(Error::invalid(format!("label {y} out of range")));
        }
        members[y].push(i);
    }
    if let Some(y) = members.iter().position(|m| m.is_empty()) {
        return Err(Error::EmptyClass { class: y, context: "max intra-class distance" });
    }
    let mut out = Vec::with_capacity(num_classes);
    for rows in &members {
        let mut class_vals = Vec::with_capacity(rows.len());
        for &i in rows {
            let xi = embeddings.row(i);
            let mut worst = 0.0_f64;
            for &j in rows {
                let diff = &xi - &embeddings.row(j);
                worst = worst.max(diff.dot(&diff).sqrt());
            }
            class_vals.push(worst / max_norm);
        }
        out.push(class_vals);
    }
    Ok(out)
}

/// Fixed-width histogram over the observed range.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Histogram {
    pub min: f64,
    pub max: f64,
    pub counts: Vec<usize>,
}

/// Bins `values` into [`HISTOGRAM_BINS`] uniform bins spanning their range.
///
/// A constant sample lands entirely in the first bin with `min == max`.
pub fn histogram(values: &[f64]) -> Histogram {
    if values.is_empty() {
        return Histogram { min: 0.0, max: 0.0, counts: vec![0; HISTOGRAM_BINS] };
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut counts = vec![0usize; HISTOGRAM_BINS];
    if max == min {
        counts[0] = values.len();
        return Histogram { min, max, counts };
    }
    let width = (max - min) / HISTOGRAM_BINS as f64;
    for &v in values {
        let bin = (((v - min) / width) as usize).min(HISTOGRAM_BINS - 1);
        counts[bin] += 1;
    }
    Histogram { min, max, counts }
}

/// Accuracy aggregated over one Head/Torso/Tail bucket.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BucketRow {
    pub bucket: Bucket,
    /// 1-based class labels belonging to the bucket.
    pub classes: Vec<usize>,
    /// Mean per-class accuracy over the bucket's classes.
    pub accuracy: f64,
}

/// Groups per-class accuracy by bucket; buckets with no classes are omitted.
pub fn bucket_breakdown(per_class_acc: &[f64], buckets: &[Bucket]) -> Result<Vec<BucketRow>> {
    if per_class_acc.len() != buckets.len() {
        return Err(Error::dim(format!(
            "{} accuracies vs {} buckets",
            per_class_acc.len(),
            buckets.len()
        )));
    }
    let mut rows = Vec::new();
    for bucket in [Bucket::Head, Bucket::Torso, Bucket::Tail] {
        let classes: Vec<usize> = buckets
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == bucket)
            .map(|(y, _)| y + 1)
            .collect();
        if classes.is_empty() {
            continue;
        }
        let mean = classes.iter().map(|&y| per_class_acc[y - 1]).sum::<f64>() / classes.len() as f64;
        rows.push(BucketRow { bucket, classes, accuracy: mean });
    }
    Ok(rows)
}

/// Full evaluation summary of one trained scorer on one split.
///
/// Class-indexed vectors are 0-based in memory; the JSON form keeps that
/// layout while [`BucketRow::classes`] lists 1-based labels for human
/// consumption.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Report {
    pub num_classes: usize,
    pub eval_counts: Vec<usize>,
    pub accuracy: f64,
    pub error: f64,
    pub balanced_accuracy: f64,
    pub balanced_error: f64,
    pub per_class_accuracy: Vec<f64>,
    pub bucket_rows: Vec<BucketRow>,
    pub ovr_auc: f64,
    pub class_trace_variance: Vec<f64>,
    pub mean_trace_variance: f64,
    pub margins: Vec<Vec<f64>>,
    pub margin_variance: Vec<f64>,
    pub dmax_normalised: Vec<Vec<f64>>,
    pub margin_histograms: Vec<Histogram>,
    pub dmax_histograms: Vec<Histogram>,
}

impl Report {
    /// Empirical CDF of the margins of `class`: sorted `(value, fraction)`.
    pub fn margin_cdf(&self, class: usize) -> Vec<(f64, f64)> {
        let mut sorted = self.margins[class].clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite margins"));
        let n = sorted.len() as f64;
        sorted
            .into_iter()
            .enumerate()
            .map(|(i, v)| (v, (i + 1) as f64 / n))
            .collect()
    }
}

/// Builds a [`Report`] from logits and embeddings on an evaluation split.
///
/// `train_counts` drive the Head/Torso/Tail bucketing: a class's bucket is a
/// property of how much training data it had, not of the eval split.
pub fn build_report(
    logits: &Array2<f64>,
    embeddings: &Array2<f64>,
    labels: &[usize],
    num_classes: usize,
    train_counts: &[usize],
    thresholds: BucketThresholds,
) -> Result<Report> {
    if train_counts.len() != num_classes {
        return Err(Error::dim(format!(
            "{} train counts vs {num_classes} classes",
            train_counts.len()
        )));
    }
    let preds = predictions(logits);
    let acc = accuracy(&preds, labels)?;
    let per_class = per_class_accuracy(&preds, labels, num_classes)?;
    let bal_err = balanced_error(&preds, labels, num_classes)?;
    let buckets = crate::data::head_torso_tail_buckets(train_counts, thresholds);
    let bucket_rows = bucket_breakdown(&per_class, &buckets)?;
    let auc = ovr_auc(logits, labels, num_classes)?;
    let (trace, _) = class_variance(embeddings, labels, num_classes)?;
    let mean_trace = trace.iter().sum::<f64>() / num_classes as f64;
    let mut margins = Vec::with_capacity(num_classes);
    for y in 0..num_classes {
        margins.push(margin_distribution(logits, labels, y)?);
    }
    let margin_variance: Vec<f64> = margins.iter().map(|m| biased_variance(m)).collect();
    let dmax = max_intra_class_distance(embeddings, labels, num_classes)?;
    let margin_histograms = margins.iter().map(|m| histogram(m)).collect();
    let dmax_histograms = dmax.iter().map(|d| histogram(d)).collect();
    let mut eval_counts = vec![0usize; num_classes];
    for &y in labels {
        eval_counts[y] += 1;
    }
    Ok(Report {
        num_classes,
        eval_counts,
        accuracy: acc,
        error: 1.0 - acc,
        balanced_accuracy: 1.0 - bal_err,
        balanced_error: bal_err,
        per_class_accuracy: per_class,
        bucket_rows,
        ovr_auc: auc,
        class_trace_variance: trace,
        mean_trace_variance: mean_trace,
        margins,
        margin_variance,
        dmax_normalised: dmax,
        margin_histograms,
        dmax_histograms,
    })
}
