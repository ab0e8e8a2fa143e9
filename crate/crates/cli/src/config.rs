//! Experiment configuration: a versioned JSON document with strict parsing.
//!
//! Unknown fields and unknown enum variants are rejected with the offending
//! path in the message, so a typo fails fast instead of silently training
//! with a default.

use std::path::{Path, PathBuf};

use marginlab_core::data::{
    exp_profile, gaussian_mixture_lt, gaussian_mixture_with_counts, two_moons_lt, Dataset,
    GaussianClass, GaussianMixtureSpec,
};
use marginlab_core::losses::{delta_schedule, margin_schedule, DeltaSchedule, LossSpec};
use marginlab_core::rng::derive_seed;
use marginlab_core::trainer::{HeadMode, Schedule, TrainConfig};
use ndarray::Array1;

use crate::CliError;

/// The config format version this build understands.
pub const SCHEMA_VERSION: u32 = 1;

/// Seed stream for drawing the training split of one run seed.
const TRAIN_DATA_STREAM: u64 = 0x10;
/// Seed stream for drawing the evaluation split of one run seed.
const EVAL_DATA_STREAM: u64 = 0x11;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub dataset: DatasetConfig,
    pub architecture: ArchitectureConfig,
    pub loss: LossConfig,
    pub training: TrainingConfig,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Two interleaved crescents with a Bernoulli tail class; evaluation
    /// draws the classes evenly so tail metrics are well estimated.
    TwoMoons { n_train: usize, n_eval: usize, tail_prob: f64, noise: f64 },
    /// Isotropic Gaussian classes on a circle with an exponential
    /// head-to-tail count profile; evaluation is balanced per class.
    GaussianMixture {
        num_classes: usize,
        n_max: usize,
        imbalance: f64,
        eval_per_class: usize,
        mean_radius: f64,
        sigma_sq: f64,
    },
    /// Fully explicit mixture; both splits are i.i.d. draws from it.
    GaussianMixtureExplicit { classes: Vec<ClassConfig>, n_train: usize, n_eval: usize },
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassConfig {
    pub mean: Vec<f64>,
    pub sigma_sq: f64,
    pub prior: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureConfig {
    /// Hidden widths between the input and the embedding layer.
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
}

/// Logit-margin schedule names accepted in configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaName {
    Zero,
    Ldam,
    Tan,
    LogitAdjusted,
}

impl From<DeltaName> for DeltaSchedule {
    fn from(name: DeltaName) -> Self {
        match name {
            DeltaName::Zero => DeltaSchedule::Zero,
            DeltaName::Ldam => DeltaSchedule::Ldam,
            DeltaName::Tan => DeltaSchedule::Tan,
            DeltaName::LogitAdjusted => DeltaSchedule::LogAdjust,
        }
    }
}

/// Per-class embedding margin as a function of the empirical prior:
/// `margin_y = scale * prior_y ^ exponent`.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginRule {
    pub scale: f64,
    pub exponent: f64,
}

fn default_alpha() -> MarginRule {
    // Proportional to the class prior: rare classes get tighter pull margins.
    MarginRule { scale: 1.0, exponent: 1.0 }
}

fn default_beta() -> MarginRule {
    // Constant push margin.
    MarginRule { scale: 1.0, exponent: 0.0 }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub delta: DeltaName,
    #[serde(default = "one")]
    pub delta_scale: f64,
    #[serde(default)]
    pub lambda_pull: f64,
    #[serde(default)]
    pub lambda_push: f64,
    #[serde(default)]
    pub lambda_center: f64,
    #[serde(default = "default_alpha")]
    pub alpha: MarginRule,
    #[serde(default = "default_beta")]
    pub beta: MarginRule,
}

fn default_lr() -> f64 {
    0.1
}

// Momentum is opt-in: on these tiny rectifier nets a heavy-ball default
// multiplies the early, coherent shrink-the-logits direction tenfold and
// reliably drives the narrow embedding layer into the all-dead state.
fn default_momentum() -> f64 {
    0.0
}

fn default_schedule() -> Schedule {
    Schedule::Constant
}

fn default_head_mode() -> HeadMode {
    HeadMode::Learned
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub base_lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    #[serde(default = "default_head_mode")]
    pub head_mode: HeadMode,
}

impl ExperimentConfig {
    /// Parses and validates a config document, reporting the JSON path of
    /// the first offending field.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: ExperimentConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| CliError::Config(format!("config field `{}`: {}", e.path(), e.inner())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.schema != SCHEMA_VERSION {
            return bad(format!(
                "config field `schema`: version {} unsupported, this build reads {SCHEMA_VERSION}",
                self.schema
            ));
        }
        if self.seeds.is_empty() {
            return bad("config field `seeds`: at least one seed is required".to_string());
        }
        if self.architecture.embedding_dim == 0 {
            return bad("config field `architecture.embedding_dim`: must be positive".to_string());
        }
        if self.architecture.hidden.contains(&0) {
            return bad("config field `architecture.hidden`: widths must be positive".to_string());
        }
        for (name, lambda) in [
            ("lambda_pull", self.loss.lambda_pull),
            ("lambda_push", self.loss.lambda_push),
            ("lambda_center", self.loss.lambda_center),
        ] {
            if !(lambda >= 0.0) || !lambda.is_finite() {
                return bad(format!(
                    "config field `loss.{name}`: must be finite and non-negative"
                ));
            }
        }
        match &self.dataset {
            DatasetConfig::TwoMoons { n_train, n_eval, tail_prob, noise } => {
                if *n_train == 0 || *n_eval == 0 {
                    return bad("config field `dataset`: splits must be non-empty".to_string());
                }
                if !(*tail_prob > 0.0 && *tail_prob < 1.0) {
                    return bad(
                        "config field `dataset.tail_prob`: must lie strictly in (0, 1)".to_string()
                    );
                }
                if !(*noise >= 0.0) {
                    return bad("config field `dataset.noise`: must be non-negative".to_string());
                }
            }
            DatasetConfig::GaussianMixture {
                num_classes,
                n_max,
                imbalance,
                eval_per_class,
                mean_radius,
                sigma_sq,
            } => {
                if *num_classes < 2 {
                    return bad(
                        "config field `dataset.num_classes`: need at least 2 classes".to_string()
                    );
                }
                if *n_max == 0 || *eval_per_class == 0 {
                    return bad("config field `dataset`: counts must be positive".to_string());
                }
                if !(*imbalance >= 1.0) {
                    return bad("config field `dataset.imbalance`: must be >= 1".to_string());
                }
                if !(*mean_radius > 0.0) || !(*sigma_sq > 0.0) {
                    return bad(
                        "config field `dataset`: mean_radius and sigma_sq must be positive"
                            .to_string(),
                    );
                }
            }
            DatasetConfig::GaussianMixtureExplicit { classes, n_train, n_eval } => {
                if classes.len() < 2 {
                    return bad(
                        "config field `dataset.classes`: need at least 2 classes".to_string()
                    );
                }
                if *n_train == 0 || *n_eval == 0 {
                    return bad("config field `dataset`: splits must be non-empty".to_string());
                }
                self.mixture_spec()?.validate().map_err(|e| {
                    CliError::Config(format!("config field `dataset.classes`: {e}"))
                })?;
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        match &self.dataset {
            DatasetConfig::TwoMoons { .. } => 2,
            DatasetConfig::GaussianMixture { num_classes, .. } => *num_classes,
            DatasetConfig::GaussianMixtureExplicit { classes, .. } => classes.len(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match &self.dataset {
            DatasetConfig::TwoMoons { .. } | DatasetConfig::GaussianMixture { .. } => 2,
            DatasetConfig::GaussianMixtureExplicit { classes, .. } => {
                classes.first().map_or(0, |c| c.mean.len())
            }
        }
    }

    /// Full layer-size list for the scorer.
    pub fn arch(&self) -> Vec<usize> {
        let mut arch = vec![self.input_dim()];
        arch.extend(&self.architecture.hidden);
        arch.push(self.architecture.embedding_dim);
        arch.push(self.num_classes());
        arch
    }

    fn mixture_spec(&self) -> Result<GaussianMixtureSpec, CliError> {
        match &self.dataset {
            DatasetConfig::GaussianMixture {
                num_classes,
                n_max,
                imbalance,
                mean_radius,
                sigma_sq,
                ..
            } => {
                let counts = exp_profile(*n_max, *num_classes, *imbalance)?;
                let total: usize = counts.iter().sum();
                let classes = (0..*num_classes)
                    .map(|y| {
                        let angle =
                            2.0 * std::f64::consts::PI * y as f64 / *num_classes as f64;
                        GaussianClass {
                            mean: vec![mean_radius * angle.cos(), mean_radius * angle.sin()],
                            sigma_sq: *sigma_sq,
                            prior: counts[y] as f64 / total as f64,
                        }
                    })
                    .collect();
                Ok(GaussianMixtureSpec { classes })
            }
            DatasetConfig::GaussianMixtureExplicit { classes, .. } => Ok(GaussianMixtureSpec {
                classes: classes
                    .iter()
                    .map(|c| GaussianClass {
                        mean: c.mean.clone(),
                        sigma_sq: c.sigma_sq,
                        prior: c.prior,
                    })
                    .collect(),
            }),
            DatasetConfig::TwoMoons { .. } => {
                Err(CliError::Runtime("two-moons data has no mixture spec".to_string()))
            }
        }
    }

    /// Draws the train and eval splits for one run seed.
    pub fn build_datasets(&self, seed: u64) -> Result<(Dataset, Dataset), CliError> {
        let train_seed = derive_seed(seed, TRAIN_DATA_STREAM);
        let eval_seed = derive_seed(seed, EVAL_DATA_STREAM);
        match &self.dataset {
            DatasetConfig::TwoMoons { n_train, n_eval, tail_prob, noise } => {
                let train = two_moons_lt(*n_train, *tail_prob, *noise, train_seed)?;
                // Even class draw so tail-class metrics are well estimated.
                let eval = two_moons_lt(*n_eval, 0.5, *noise, eval_seed)?;
                Ok((train, eval))
            }
            DatasetConfig::GaussianMixture { num_classes, n_max, imbalance, eval_per_class, .. } => {
                let spec = self.mixture_spec()?;
                let counts = exp_profile(*n_max, *num_classes, *imbalance)?;
                let train = gaussian_mixture_with_counts(&spec, &counts, train_seed)?;
                let eval_counts = vec![*eval_per_class; *num_classes];
                let eval = gaussian_mixture_with_counts(&spec, &eval_counts, eval_seed)?;
                Ok((train, eval))
            }
            DatasetConfig::GaussianMixtureExplicit { n_train, n_eval, .. } => {
                let spec = self.mixture_spec()?;
                let train = gaussian_mixture_lt(&spec, *n_train, train_seed)?;
                let eval = gaussian_mixture_lt(&spec, *n_eval, eval_seed)?;
                Ok((train, eval))
            }
        }
    }

    /// Builds the loss spec from the training split's empirical priors.
    pub fn build_loss(&self, train: &Dataset) -> Result<LossSpec, CliError> {
        let priors = train.empirical_priors();
        let mut delta = delta_schedule(&priors, self.loss.delta.into())?;
        delta.mapv_inplace(|v| v * self.loss.delta_scale);
        let alpha = margin_schedule(&priors, self.loss.alpha.exponent, self.loss.alpha.scale)?;
        let beta = margin_schedule(&priors, self.loss.beta.exponent, self.loss.beta.scale)?;
        let spec = LossSpec {
            delta,
            alpha,
            beta,
            epsilon: Array1::zeros(priors.len()),
            lambda_pull: self.loss.lambda_pull,
            lambda_push: self.loss.lambda_push,
            lambda_center: self.loss.lambda_center,
            gaussian_scale_sq: 1.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Assembles the trainer configuration for one run seed.
    pub fn build_train_config(&self, train: &Dataset, seed: u64) -> Result<TrainConfig, CliError> {
        let loss = self.build_loss(train)?;
        let config = TrainConfig {
            epochs: self.training.epochs,
            batch_size: self.training.batch_size,
            base_lr: self.training.base_lr,
            momentum: self.training.momentum,
            weight_decay: self.training.weight_decay,
            schedule: self.training.schedule.clone(),
            seed,
            loss,
            head_mode: self.training.head_mode,
        };
        config
            .validate()
            .map_err(|e| CliError::Config(format!("config field `training`: {e}")))?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> String {
        r#"{
            "schema": 1,
            "output_dir": "out",
            "seeds": [0, 1],
            "dataset": {"kind": "two_moons", "n_train": 64, "n_eval": 64, "tail_prob": 0.2, "noise": 0.1},
            "architecture": {"hidden": [8], "embedding_dim": 2},
            "loss": {"delta": "logit_adjusted"},
            "training": {"epochs": 2, "batch_size": 16}
        }"#
        .to_string()
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let config = ExperimentConfig::from_json(&minimal_json()).unwrap();
        assert_eq!(config.arch(), vec![2, 8, 2, 2]);
        assert_eq!(config.loss.lambda_pull, 0.0);
        assert_eq!(config.training.base_lr, 0.1);
        assert_eq!(config.training.momentum, 0.0);
        assert_eq!(config.training.schedule, Schedule::Constant);
    }

    #[test]
    fn unknown_fields_are_rejected_with_their_path() {
        let json = minimal_json().replace("\"noise\"", "\"nosie\"");
        let err = ExperimentConfig::from_json(&json).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("nosie"), "message should name the bad field: {msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_margin_scheme_is_rejected_by_name() {
        let json = minimal_json().replace("logit_adjusted", "foo");
        let err = ExperimentConfig::from_json(&json).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("foo"), "message should name the bad variant: {msg}");
        assert!(msg.contains("loss"), "message should locate the field: {msg}");
    }

    #[test]
    fn schema_version_is_enforced() {
        let json = minimal_json().replace("\"schema\": 1", "\"schema\": 9");
        let err = ExperimentConfig::from_json(&json).unwrap_err();
        assert!(err.to_string().contains("schema"));
    }

    #[test]
    fn datasets_are_deterministic_per_seed_and_split() {
        let config = ExperimentConfig::from_json(&minimal_json()).unwrap();
        let (train_a, eval_a) = config.build_datasets(5).unwrap();
        let (train_b, eval_b) = config.build_datasets(5).unwrap();
        assert_eq!(train_a.features, train_b.features);
        assert_eq!(eval_a.features, eval_b.features);
        // Train and eval streams must differ.
        assert_ne!(train_a.features.row(0), eval_a.features.row(0));
    }

    #[test]
    fn loss_margins_follow_the_empirical_priors() {
        let config = ExperimentConfig::from_json(&minimal_json()).unwrap();
        let (train, _) = config.build_datasets(0).unwrap();
        let loss = config.build_loss(&train).unwrap();
        let priors = train.empirical_priors();
        for y in 0..2 {
            approx::assert_abs_diff_eq!(loss.alpha[y], priors[y], epsilon = 1e-15);
            approx::assert_abs_diff_eq!(loss.beta[y], 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn mixture_arch_and_priors_follow_the_profile() {
        let json = r#"{
            "schema": 1,
            "output_dir": "out",
            "seeds": [0],
            "dataset": {"kind": "gaussian_mixture", "num_classes": 4, "n_max": 100,
                        "imbalance": 10.0, "eval_per_class": 50, "mean_radius": 3.0, "sigma_sq": 0.5},
            "architecture": {"hidden": [16], "embedding_dim": 2},
            "loss": {"delta": "zero"},
            "training": {"epochs": 1, "batch_size": 32}
        }"#;
        let config = ExperimentConfig::from_json(json).unwrap();
        assert_eq!(config.arch(), vec![2, 16, 2, 4]);
        let (train, eval) = config.build_datasets(3).unwrap();
        let counts = train.class_counts();
        assert_eq!(counts[0], 100);
        assert_eq!(*counts.last().unwrap(), 10);
        assert_eq!(eval.class_counts(), vec![50, 50, 50, 50]);
    }
}
