//! Per-sample classification losses and class-level weighting schemes.
//!
//! All losses are evaluated from logits through log-sum-exp, never through
//! explicit probabilities, so they stay finite for arbitrarily large logits.

use serde::{Deserialize, Serialize};

use crate::math::{log_sum_exp, softmax_unchecked};
use crate::models::ParamVector;
use crate::{Error, Result};

fn default_ldam_constant() -> f64 {
    0.5
}

fn default_ldam_exponent() -> f64 {
    0.25
}

fn default_ldam_scale() -> f64 {
    30.0
}

fn default_beta_cb() -> f64 {
    0.9999
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BaseLoss {
    Ce,
    Focal {
        gamma: f64,
    },
    Ldam {
        #[serde(default = "default_ldam_constant")]
        margin_constant: f64,
        #[serde(default = "default_ldam_exponent")]
        exponent: f64,
        #[serde(default = "default_ldam_scale")]
        scale: f64,
    },
}

impl BaseLoss {
    pub fn ldam() -> Self {
        BaseLoss::Ldam {
            margin_constant: default_ldam_constant(),
            exponent: default_ldam_exponent(),
            scale: default_ldam_scale(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassWeighting {
    #[default]
    None,
    ClassBalanced {
        #[serde(default = "default_beta_cb")]
        beta: f64,
    },
    Explicit {
        weights: Vec<f64>,
    },
}

/// A base loss, an optional class-level weighting, and the epoch from which
/// that weighting is switched on (deferred re-weighting).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    pub base: BaseLoss,
    #[serde(default)]
    pub class_weighting: ClassWeighting,
    #[serde(default)]
    pub defer_epoch: Option<usize>,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self::ce()
    }
}

impl LossSpec {
    pub fn ce() -> Self {
        Self {
            base: BaseLoss::Ce,
            class_weighting: ClassWeighting::None,
            defer_epoch: None,
        }
    }

    pub fn with_base(base: BaseLoss) -> Self {
        Self {
            base,
            ..Self::ce()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.base {
            BaseLoss::Ce => {}
            BaseLoss::Focal { gamma } => {
                if !(gamma > 0.0) || !gamma.is_finite() {
                    return Err(Error::config(format!("focal gamma must be > 0, got {gamma}")));
                }
            }
            BaseLoss::Ldam {
                margin_constant,
                exponent,
                scale,
            } => {
                if !(margin_constant > 0.0) || !(scale > 0.0) || !exponent.is_finite() {
                    return Err(Error::config(
                        "LDAM needs margin_constant > 0, scale > 0 and a finite exponent",
                    ));
                }
            }
        }
        match &self.class_weighting {
            ClassWeighting::None => {}
            ClassWeighting::ClassBalanced { beta } => {
                if !(0.0..1.0).contains(beta) {
                    return Err(Error::config(format!("beta_cb must lie in [0, 1), got {beta}")));
                }
            }
            ClassWeighting::Explicit { weights } => {
                if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
                    return Err(Error::config("explicit class weights must be > 0"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RegSpec {
    pub weight_decay: f64,
}

fn check_class(row: &[f64], y: usize) -> Result<()> {
    if y >= row.len() {
        return Err(Error::domain(format!("class {y} out of range for {} logits", row.len())));
    }
    Ok(())
}

/// `−log softmax(logits)[y]`.
pub fn ce_loss(logits: &[f64], y: usize) -> Result<f64> {
    check_class(logits, y)?;
    Ok((log_sum_exp(logits)? - logits[y]).max(0.0))
}

/// `(1 − p_y)^γ · CE` with `p_y = softmax(logits)[y]`.
pub fn focal_loss(logits: &[f64], y: usize, gamma: f64) -> Result<f64> {
    if !(gamma >= 0.0) {
        return Err(Error::domain(format!("focal gamma must be >= 0, got {gamma}")));
    }
    let ce = ce_loss(logits, y)?;
    let one_minus_p = -(-ce).exp_m1();
    Ok(one_minus_p.powf(gamma) * ce)
}

/// Cross-entropy of `scale · (logits − margin_y · e_y)` at class `y`.
pub fn ldam_loss(logits: &[f64], y: usize, margins: &[f64], scale: f64) -> Result<f64> {
    check_class(logits, y)?;
    if margins.len() != logits.len() {
        return Err(Error::domain("one margin per class required"));
    }
    if !(scale > 0.0) {
        return Err(Error::domain(format!("LDAM scale must be > 0, got {scale}")));
    }
    if margins.iter().any(|m| !(*m >= 0.0)) {
        return Err(Error::domain("LDAM margins must be >= 0"));
    }
    let shifted = ldam_shift(logits, y, margins[y], scale);
    ce_loss(&shifted, y)
}

fn ldam_shift(logits: &[f64], y: usize, margin: f64, scale: f64) -> Vec<f64> {
    logits
        .iter()
        .enumerate()
        .map(|(k, &z)| scale * if k == y { z - margin } else { z })
        .collect()
}

/// Per-class margins `∝ n_j^(−exponent)`, rescaled so the largest equals
/// `margin_constant`.
pub fn ldam_margins(class_counts: &[usize], margin_constant: f64, exponent: f64) -> Result<Vec<f64>> {
    let min = *class_counts
        .iter()
        .min()
        .ok_or_else(|| Error::domain("no classes"))?;
    if min == 0 {
        return Err(Error::domain("LDAM margins need every class count >= 1"));
    }
    Ok(class_counts
        .iter()
        .map(|&n| margin_constant * (min as f64 / n as f64).powf(exponent))
        .collect())
}

/// Inverse effective-number weights `(1 − β) / (1 − β^{n_j})`, normalized to
/// sum to the number of classes.
pub fn cb_class_weights(class_counts: &[usize], beta: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::domain(format!("beta_cb must lie in [0, 1), got {beta}")));
    }
    if class_counts.is_empty() || class_counts.contains(&0) {
        return Err(Error::domain("class-balanced weights need every class count >= 1"));
    }
    let raw: Vec<f64> = class_counts
        .iter()
        .map(|&n| {
            let one_minus_pow = if beta == 0.0 {
                1.0
            } else {
                -(n as f64 * beta.ln()).exp_m1()
            };
            (1.0 - beta) / one_minus_pow
        })
        .collect();
    let total: f64 = raw.iter().sum();
    let c = class_counts.len() as f64;
    Ok(raw.into_iter().map(|w| w * c / total).collect())
}

/// `(wd/2)·‖w‖²` over every coordinate of a raw vector, and its gradient.
pub fn l2_reg_slice(values: &[f64], weight_decay: f64) -> (f64, Vec<f64>) {
    let value = 0.5 * weight_decay * values.iter().map(|v| v * v).sum::<f64>();
    (value, values.iter().map(|v| weight_decay * v).collect())
}

/// L2 penalty over trainable non-bias coordinates.
pub fn l2_reg(params: &ParamVector, weight_decay: f64) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; params.len()];
    if weight_decay == 0.0 {
        return (0.0, grad);
    }
    let mut sq = 0.0;
    for (i, (&w, g)) in params.values().iter().zip(&mut grad).enumerate() {
        if params.is_decayed(i) {
            sq += w * w;
            *g = weight_decay * w;
        }
    }
    (0.5 * weight_decay * sq, grad)
}

/// Base loss times the class weight of `y` active at `epoch`.
pub fn effective_loss(
    spec: &LossSpec,
    epoch: usize,
    class_counts: &[usize],
    logits: &[f64],
    y: usize,
) -> Result<f64> {
    LossFn::resolve(spec, class_counts, epoch)?.loss(logits, y)
}

#[derive(Debug, Clone, PartialEq)]
enum ResolvedBase {
    Ce,
    Focal { gamma: f64 },
    Ldam { margins: Vec<f64>, scale: f64 },
}

/// A [`LossSpec`] bound to the training class sizes and a specific epoch,
/// ready for per-sample evaluation and logit gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LossFn {
    base: ResolvedBase,
    class_weights: Option<Vec<f64>>,
}

impl LossFn {
    pub fn ce() -> Self {
        Self {
            base: ResolvedBase::Ce,
            class_weights: None,
        }
    }

    pub fn resolve(spec: &LossSpec, class_counts: &[usize], epoch: usize) -> Result<Self> {
        let base = match spec.base {
            BaseLoss::Ce => ResolvedBase::Ce,
            BaseLoss::Focal { gamma } => ResolvedBase::Focal { gamma },
            BaseLoss::Ldam {
                margin_constant,
                exponent,
                scale,
            } => ResolvedBase::Ldam {
                margins: ldam_margins(class_counts, margin_constant, exponent)?,
                scale,
            },
        };
        let active = spec.defer_epoch.is_none_or(|d| epoch >= d);
        let class_weights = match (&spec.class_weighting, active) {
            (ClassWeighting::None, _) | (_, false) => None,
            (ClassWeighting::ClassBalanced { beta }, true) => {
                Some(cb_class_weights(class_counts, *beta)?)
            }
            (ClassWeighting::Explicit { weights }, true) => {
                if weights.len() != class_counts.len() {
                    return Err(Error::config(format!(
                        "{} explicit class weights for {} classes",
                        weights.len(),
                        class_counts.len()
                    )));
                }
                Some(weights.clone())
            }
        };
        Ok(Self {
            base,
            class_weights,
        })
    }

    pub fn class_weight(&self, y: usize) -> f64 {
        self.class_weights.as_ref().map_or(1.0, |w| w[y])
    }

    pub fn loss(&self, logits: &[f64], y: usize) -> Result<f64> {
        let base = match &self.base {
            ResolvedBase::Ce => ce_loss(logits, y)?,
            ResolvedBase::Focal { gamma } => focal_loss(logits, y, *gamma)?,
            ResolvedBase::Ldam { margins, scale } => ldam_loss(logits, y, margins, *scale)?,
        };
        Ok(self.class_weight(y) * base)
    }

    /// Loss value; writes `∂loss/∂logits` into `grad`.
    pub fn loss_and_grad(&self, logits: &[f64], y: usize, grad: &mut [f64]) -> Result<f64> {
        check_class(logits, y)?;
        let cw = self.class_weight(y);
        let value = match &self.base {
            ResolvedBase::Ce => {
                let q = softmax_unchecked(logits);
                for (k, g) in grad.iter_mut().enumerate() {
                    *g = q[k] - if k == y { 1.0 } else { 0.0 };
                }
                ce_loss(logits, y)?
            }
            ResolvedBase::Focal { gamma } => {
                let q = softmax_unchecked(logits);
                let ce = ce_loss(logits, y)?;
                let p = (-ce).exp();
                let one_minus_p = -(-ce).exp_m1();
                // d/dz_k = A · (δ_yk − q_k),  A = γ(1−p)^{γ−1} p ln p − (1−p)^γ
                let pow = one_minus_p.powf(*gamma);
                let lead = if one_minus_p > 0.0 {
                    gamma * one_minus_p.powf(gamma - 1.0) * p * (-ce)
                } else {
                    0.0
                };
                let a = lead - pow;
                for (k, g) in grad.iter_mut().enumerate() {
                    *g = a * (if k == y { 1.0 } else { 0.0 } - q[k]);
                }
                pow * ce
            }
            ResolvedBase::Ldam { margins, scale } => {
                let shifted = ldam_shift(logits, y, margins[y], *scale);
                let q = softmax_unchecked(&shifted);
                for (k, g) in grad.iter_mut().enumerate() {
                    *g = scale * (q[k] - if k == y { 1.0 } else { 0.0 });
                }
                ce_loss(&shifted, y)?
            }
        };
        if cw != 1.0 {
            for g in grad.iter_mut() {
                *g *= cw;
            }
        }
        Ok(cw * value)
    }
}
