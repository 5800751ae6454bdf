//! JSON experiment configuration. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::ImbalanceKind;
use crate::losses::{LossSpec, RegSpec};
use crate::models::{InitPolicy, ModelArch};
use crate::optim::{AbsgdConfig, Lambda, LambdaSchedule, NormalizerInit};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub data: DataSpec,
    #[serde(default)]
    pub arch: ArchSpec,
    #[serde(default)]
    pub loss: LossSpec,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Steps between `∇F_λ` probes; 0 disables step probes (the per-epoch
    /// probe always runs).
    #[serde(default)]
    pub probe_every: usize,
    #[serde(default = "default_probe_subset")]
    pub probe_subset: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_name() -> String {
    "experiment".to_string()
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_probe_subset() -> usize {
    512
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    /// Gaussian class blobs in `dim` dimensions with random centres.
    GaussianMixture {
        dim: usize,
        num_classes: usize,
        /// Training size of the largest class.
        n_max: usize,
        #[serde(default)]
        imbalance: Option<ImbalanceConfig>,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default = "default_stddev")]
        stddev: f64,
        test_per_class: usize,
        /// Symmetric flip probability applied to training labels only.
        #[serde(default)]
        label_noise: Option<f64>,
        /// Defaults to the run seed.
        #[serde(default)]
        data_seed: Option<u64>,
    },
    /// Two-dimensional blobs with explicit centres and class sizes.
    Toy2d {
        counts: Vec<usize>,
        means: Vec<[f64; 2]>,
        #[serde(default = "default_stddev")]
        stddev: f64,
        test_per_class: usize,
        #[serde(default)]
        data_seed: Option<u64>,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
        #[serde(default)]
        num_classes: Option<usize>,
    },
}

fn default_separation() -> f64 {
    3.0
}

fn default_stddev() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImbalanceConfig {
    pub kind: ImbalanceKind,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    #[serde(default)]
    pub init: InitPolicy,
}

impl ArchSpec {
    pub fn build(&self, input_dim: usize, num_classes: usize) -> ModelArch {
        ModelArch::mlp(input_dim, &self.hidden_dims, num_classes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Absgd,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub optimizer: OptimizerKind,
    pub eta: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_ema_gamma")]
    pub ema_gamma: f64,
    #[serde(default)]
    pub weight_decay: f64,
    /// Constant λ. Omitted means 1 for a constant schedule and ∞ for the
    /// first stage of a two-stage one.
    #[serde(default)]
    pub lambda: Option<Lambda>,
    #[serde(default)]
    pub lambda_stage2: Option<f64>,
    #[serde(default)]
    pub switch_epoch: Option<usize>,
    #[serde(default)]
    pub normalizer_init: NormalizerInit,
    #[serde(default = "default_true")]
    pub log_domain: bool,
    /// Layers frozen from `switch_epoch` on (from the start without one).
    #[serde(default)]
    pub freeze: Vec<usize>,
}

fn default_beta() -> f64 {
    0.9
}

fn default_ema_gamma() -> f64 {
    0.9
}

fn default_true() -> bool {
    true
}

impl OptimizerConfig {
    pub fn absgd(eta: f64, lambda: Lambda) -> Self {
        Self {
            optimizer: OptimizerKind::Absgd,
            eta,
            beta: default_beta(),
            ema_gamma: default_ema_gamma(),
            weight_decay: 0.0,
            lambda: Some(lambda),
            lambda_stage2: None,
            switch_epoch: None,
            normalizer_init: NormalizerInit::WarmFirstBatch,
            log_domain: true,
            freeze: Vec::new(),
        }
    }

    pub fn sgd(eta: f64) -> Self {
        Self {
            optimizer: OptimizerKind::Sgd,
            lambda: None,
            ..Self::absgd(eta, Lambda::Infinite)
        }
    }

    pub fn lambda_schedule(&self) -> Result<LambdaSchedule> {
        match (self.lambda_stage2, self.switch_epoch) {
            (Some(stage2), Some(switch_epoch)) => {
                if let Some(Lambda::Finite(v)) = self.lambda {
                    return Err(Error::config(format!(
                        "lambda = {v} conflicts with lambda_stage2: the first stage runs at lambda = \"inf\""
                    )));
                }
                let s = LambdaSchedule::TwoStage {
                    stage2,
                    switch_epoch,
                };
                s.validate()?;
                Ok(s)
            }
            (Some(_), None) => Err(Error::config("lambda_stage2 requires switch_epoch")),
            (None, Some(_)) if self.optimizer == OptimizerKind::Absgd => {
                Err(Error::config("switch_epoch requires lambda_stage2"))
            }
            _ => Ok(LambdaSchedule::Constant(self.lambda.unwrap_or(Lambda::Finite(1.0)))),
        }
    }

    pub fn to_absgd(&self) -> Result<AbsgdConfig> {
        let c = AbsgdConfig {
            eta: self.eta,
            beta: self.beta,
            ema_gamma: self.ema_gamma,
            weight_decay: self.weight_decay,
            lambda_schedule: self.lambda_schedule()?,
            normalizer_init: self.normalizer_init,
            log_domain: self.log_domain,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn reg(&self) -> RegSpec {
        RegSpec {
            weight_decay: self.weight_decay,
        }
    }

    /// λ used for `∇F_λ` probes when the optimizer itself has none.
    pub fn probe_lambda(&self) -> Lambda {
        self.lambda.unwrap_or(Lambda::Infinite)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Divide by `factor` at each milestone epoch reached.
    Stagewise { milestones: Vec<usize>, factor: f64 },
    /// Cosine annealing to zero at the last epoch, restarted at the
    /// two-stage switch when there is one.
    Cosine,
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if let LrSchedule::Stagewise { milestones, factor } = self {
            if milestones.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::config("milestones must be strictly increasing"));
            }
            if milestones.first() == Some(&0) {
                return Err(Error::config("milestones are 1-based epochs"));
            }
            if !(*factor >= 1.0) || !factor.is_finite() {
                return Err(Error::config("stagewise factor divides the step size and must be >= 1"));
            }
        }
        Ok(())
    }
}

/// Step size at a 1-based `epoch` of `total_epochs`. `restart_epoch` starts
/// a fresh cosine cycle (ignored by the other schedules).
pub fn lr_at(
    schedule: &LrSchedule,
    epoch: usize,
    base_lr: f64,
    total_epochs: usize,
    restart_epoch: Option<usize>,
) -> f64 {
    match schedule {
        LrSchedule::Constant => base_lr,
        LrSchedule::Stagewise { milestones, factor } => {
            let passed = milestones.iter().filter(|&&m| m <= epoch).count();
            base_lr / factor.powi(passed as i32)
        }
        LrSchedule::Cosine => {
            let (pos, span) = match restart_epoch {
                Some(r) if r > 1 && r <= total_epochs => {
                    if epoch < r {
                        (epoch, r)
                    } else {
                        (epoch + 1 - r, total_epochs + 1 - r)
                    }
                }
                _ => (epoch, total_epochs),
            };
            let t = (pos as f64 / span as f64).min(1.0);
            base_lr * (1.0 + (std::f64::consts::PI * t).cos()) / 2.0
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if self.probe_subset < 1 {
            return Err(Error::config("probe_subset must be >= 1"));
        }
        if self.arch.hidden_dims.len() > 2 || self.arch.hidden_dims.contains(&0) {
            return Err(Error::config("arch supports at most 2 non-empty hidden layers"));
        }
        self.loss.validate()?;
        self.lr_schedule.validate()?;
        self.optimizer.to_absgd()?;
        if let Some(s) = self.optimizer.switch_epoch {
            if s > self.epochs {
                return Err(Error::config(format!(
                    "switch_epoch {s} exceeds epochs {}",
                    self.epochs
                )));
            }
        }
        let layers = self.arch.hidden_dims.len() + 1;
        if let Some(&l) = self.optimizer.freeze.iter().find(|&&l| l >= layers) {
            return Err(Error::config(format!("freeze layer {l} out of range (model has {layers})")));
        }
        match &self.data {
            DataSpec::GaussianMixture {
                dim,
                num_classes,
                n_max,
                imbalance,
                stddev,
                test_per_class,
                label_noise,
                ..
            } => {
                if *dim < 1 || *num_classes < 2 || *n_max < 1 || *test_per_class < 1 {
                    return Err(Error::config(
                        "gaussian_mixture needs dim >= 1, num_classes >= 2, n_max >= 1, test_per_class >= 1",
                    ));
                }
                if let Some(imb) = imbalance {
                    if !(imb.rho >= 1.0) || imb.rho > *n_max as f64 {
                        return Err(Error::config(format!(
                            "imbalance rho {} must lie in [1, n_max]",
                            imb.rho
                        )));
                    }
                }
                if !(*stddev >= 0.0) {
                    return Err(Error::config("stddev must be >= 0"));
                }
                if let Some(p) = label_noise {
                    if !(0.0..1.0).contains(p) {
                        return Err(Error::config("label_noise must lie in [0, 1)"));
                    }
                }
            }
            DataSpec::Toy2d {
                counts,
                means,
                stddev,
                test_per_class,
                ..
            } => {
                if counts.len() < 2 || counts.len() != means.len() || counts.contains(&0) {
                    return Err(Error::config(
                        "toy2d needs >= 2 classes, one mean per class and non-zero counts",
                    ));
                }
                if *test_per_class < 1 || !(*stddev >= 0.0) {
                    return Err(Error::config("toy2d needs test_per_class >= 1 and stddev >= 0"));
                }
            }
            DataSpec::Csv { .. } => {}
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
