//! Seeded synthetic long-tailed datasets.
//!
//! Two generators cover the experiments in this crate:
//!
//! * [`two_moons_lt`]: two interleaving unit-radius half-circles with
//!   Gaussian coordinate noise, where the lower moon (the tail class) is
//!   sampled with a small configurable probability.
//! * [`gaussian_mixture_lt`] / [`gaussian_mixture_with_counts`]: isotropic
//!   Gaussian class conditionals with explicit priors or exact per-class
//!   counts.
//!
//! Class counts for imbalance studies follow the exponential profile
//! `n_y = round(n_max * rho^(-y/(L-1)))` ([`exp_profile`]), and classes are
//! bucketed into Head (`n >= 100`), Torso (`20 <= n < 100`) and Tail
//! (`n < 20`) groups by [`head_torso_tail_buckets`].
//!
//! Labels are `0`-based everywhere in memory; report layers add 1 when
//! printing. All generators consume an explicit seed and draw in a fixed
//! per-sample order, so a `(config, seed)` pair pins the dataset exactly.

use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// A labelled dataset with dense feature rows.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// `n x d` feature matrix, one sample per row.
    pub features: Array2<f64>,
    /// `0`-based class labels, one per row.
    pub labels: Vec<usize>,
    /// Total number of classes (some may be absent from `labels`).
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::dim(format!(
                "{} feature rows vs {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Dataset { features, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Number of samples per class, indexed by label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Empirical class priors `n_y / n`.
    pub fn empirical_priors(&self) -> Vec<f64> {
        let n = self.len() as f64;
        self.class_counts().iter().map(|&c| c as f64 / n).collect()
    }

    /// Copies the rows at `indices` into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let d = self.dim();
        let mut features = Array2::zeros((indices.len(), d));
        let mut labels = Vec::with_capacity(indices.len());
        for (row, &i) in indices.iter().enumerate() {
            features.row_mut(row).assign(&self.features.row(i));
            labels.push(self.labels[i]);
        }
        Dataset { features, labels, num_classes: self.num_classes }
    }

    /// Writes the dataset as CSV with header `x_0,..,x_{d-1},y`.
    ///
    /// Floats use shortest round-trip formatting, so
    /// [`Dataset::import_csv`] reproduces the data exactly.
    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let header: Vec<String> = (0..self.dim()).map(|j| format!("x_{j}")).collect();
        writeln!(out, "{},y", header.join(","))?;
        for (row, &y) in self.features.rows().into_iter().zip(&self.labels) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            writeln!(out, "{},{y}", cells.join(","))?;
        }
        Ok(())
    }

    /// Reads a dataset written by [`Dataset::export_csv`].
    pub fn import_csv(path: &Path, num_classes: usize) -> Result<Self> {
        let reader = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Malformed("empty csv".into()))??;
        let cols = header.split(',').count();
        if cols < 2 || !header.ends_with(",y") {
            return Err(Error::Malformed(format!("unexpected csv header `{header}`")));
        }
        let d = cols - 1;
        let mut rows: Vec<f64> = Vec::new();
        let mut labels = Vec::new();
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != d + 1 {
                return Err(Error::Malformed(format!("row `{line}` has {} cells", cells.len())));
            }
            for cell in &cells[..d] {
                rows.push(cell.parse::<f64>().map_err(|e| Error::Malformed(e.to_string()))?);
            }
            labels.push(
                cells[d]
                    .parse::<usize>()
                    .map_err(|e| Error::Malformed(e.to_string()))?,
            );
        }
        let n = labels.len();
        let features = Array2::from_shape_vec((n, d), rows)
            .map_err(|e| Error::Malformed(e.to_string()))?;
        Dataset::new(features, labels, num_classes)
    }
}

/// One isotropic Gaussian class conditional `N(mean, sigma_sq * I)`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GaussianClass {
    pub mean: Vec<f64>,
    pub sigma_sq: f64,
    pub prior: f64,
}

/// A mixture of isotropic Gaussian classes.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GaussianMixtureSpec {
    pub classes: Vec<GaussianClass>,
}

impl GaussianMixtureSpec {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn dim(&self) -> usize {
        self.classes.first().map_or(0, |c| c.mean.len())
    }

    pub fn priors(&self) -> Vec<f64> {
        self.classes.iter().map(|c| c.prior).collect()
    }

    pub fn mean(&self, y: usize) -> Array1<f64> {
        Array1::from_vec(self.classes[y].mean.clone())
    }

    /// Validates dimensions, positive variances, and priors summing to one.
    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::invalid("mixture needs at least 2 classes"));
        }
        let d = self.dim();
        if d == 0 {
            return Err(Error::invalid("mixture means must be non-empty"));
        }
        let mut total = 0.0;
        for (y, c) in self.classes.iter().enumerate() {
            if c.mean.len() != d {
                return Err(Error::dim(format!(
                    "class {y} mean has {} coords, expected {d}",
                    c.mean.len()
                )));
            }
            if !(c.sigma_sq > 0.0) || !c.sigma_sq.is_finite() {
                return Err(Error::invalid(format!("class {y} sigma_sq must be positive")));
            }
            if !(c.prior >= 0.0) || !c.prior.is_finite() {
                return Err(Error::invalid(format!("class {y} prior must be non-negative")));
            }
            total += c.prior;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("priors sum to {total}, expected 1")));
        }
        Ok(())
    }
}

/// Samples `n` points from two interleaving half-circle "moons".
///
/// The head class (label 0) lies on the upper unit half-circle centred at
/// the origin; the tail class (label 1) lies on the lower unit half-circle
/// offset by `(0.5, -0.25)`. Each sample independently draws its label
/// (`P(tail) = tail_prob`), an angle uniform on `[0, pi]`, and isotropic
/// Gaussian coordinate noise with standard deviation `noise`.
pub fn two_moons_lt(n: usize, tail_prob: f64, noise: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&tail_prob) {
        return Err(Error::invalid(format!("tail_prob {tail_prob} outside [0, 1]")));
    }
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(Error::invalid(format!("noise {noise} must be finite and >= 0")));
    }
    let mut rng = rng_from_seed(seed);
    let gauss = Normal::new(0.0, 1.0).expect("unit normal");
    let mut features = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let tail = rng.gen::<f64>() < tail_prob;
        let t = rng.gen::<f64>() * std::f64::consts::PI;
        let (nx, ny) = (gauss.sample(&mut rng) * noise, gauss.sample(&mut rng) * noise);
        let (x, y) = if tail {
            (0.5 + t.cos(), -0.25 - t.sin())
        } else {
            (t.cos(), t.sin())
        };
        features[[i, 0]] = x + nx;
        features[[i, 1]] = y + ny;
        labels.push(usize::from(tail));
    }
    Dataset::new(features, labels, 2)
}

/// Samples `n` points from `spec`, drawing each label from the priors.
pub fn gaussian_mixture_lt(spec: &GaussianMixtureSpec, n: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = rng_from_seed(seed);
    let priors = spec.priors();
    let labels: Vec<usize> = (0..n)
        .map(|_| {
            let u = rng.gen::<f64>();
            let mut acc = 0.0;
            let mut pick = priors.len() - 1;
            for (y, &p) in priors.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = y;
                    break;
                }
            }
            pick
        })
        .collect();
    sample_gaussians(spec, labels, &mut rng)
}

/// Samples exactly `counts[y]` points of each class from `spec`.
///
/// Rows are shuffled so labels are not grouped; the shuffle is part of the
/// seeded draw.
pub fn gaussian_mixture_with_counts(
    spec: &GaussianMixtureSpec,
    counts: &[usize],
    seed: u64,
) -> Result<Dataset> {
    spec.validate()?;
    if counts.len() != spec.num_classes() {
        return Err(Error::dim(format!(
            "{} counts vs {} classes",
            counts.len(),
            spec.num_classes()
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(y, &c)| std::iter::repeat(y).take(c))
        .collect();
    // Fisher-Yates with the dataset RNG keeps the draw order deterministic.
    for i in (1..labels.len()).rev() {
        let j = rng.gen_range(0..=i);
        labels.swap(i, j);
    }
    sample_gaussians(spec, labels, &mut rng)
}

fn sample_gaussians(
    spec: &GaussianMixtureSpec,
    labels: Vec<usize>,
    rng: &mut impl Rng,
) -> Result<Dataset> {
    let d = spec.dim();
    let n = labels.len();
    let gauss = Normal::new(0.0, 1.0).expect("unit normal");
    let mut features = Array2::zeros((n, d));
    for (i, &y) in labels.iter().enumerate() {
        let class = &spec.classes[y];
        let sd = class.sigma_sq.sqrt();
        for j in 0..d {
            features[[i, j]] = class.mean[j] + sd * gauss.sample(rng);
        }
    }
    Dataset::new(features, labels, spec.num_classes())
}

/// Exponential class-count profile `n_y = round(n_max * rho^(-y / (L-1)))`.
///
/// `rho` is the head-to-tail imbalance ratio. Counts are strictly positive;
/// if rounding would drop a class to zero the profile is rejected.
pub fn exp_profile(n_max: usize, num_classes: usize, rho: f64) -> Result<Vec<usize>> {
    if num_classes == 0 {
        return Err(Error::invalid("num_classes must be positive"));
    }
    if !(rho >= 1.0) || !rho.is_finite() {
        return Err(Error::invalid(format!("imbalance ratio {rho} must be >= 1")));
    }
    if num_classes == 1 {
        return Ok(vec![n_max]);
    }
    let l = (num_classes - 1) as f64;
    let counts: Vec<usize> = (0..num_classes)
        .map(|y| (n_max as f64 * rho.powf(-(y as f64) / l)).round() as usize)
        .collect();
    if let Some(y) = counts.iter().position(|&c| c == 0) {
        return Err(Error::invalid(format!(
            "class {y} rounds to zero samples; raise n_max or lower rho"
        )));
    }
    Ok(counts)
}

/// Head / Torso / Tail grouping by per-class sample count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Bucket {
    Head,
    Torso,
    Tail,
}

impl std::fmt::Display for Bucket {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Bucket::Head => write!(f, "Head"),
            Bucket::Torso => write!(f, "Torso"),
            Bucket::Tail => write!(f, "Tail"),
        }
    }
}

/// Count thresholds for bucketing: `Head` at or above `head_min`, `Torso`
/// from `torso_min` up, `Tail` below.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct BucketThresholds {
    pub torso_min: usize,
    pub head_min: usize,
}

impl Default for BucketThresholds {
    fn default() -> Self {
        BucketThresholds { torso_min: 20, head_min: 100 }
    }
}

/// Assigns each class to a bucket from its training-sample count.
pub fn head_torso_tail_buckets(counts: &[usize], thresholds: BucketThresholds) -> Vec<Bucket> {
    counts
        .iter()
        .map(|&c| {
            if c >= thresholds.head_min {
                Bucket::Head
            } else if c >= thresholds.torso_min {
                Bucket::Torso
            } else {
                Bucket::Tail
            }
        })
        .collect()
}
