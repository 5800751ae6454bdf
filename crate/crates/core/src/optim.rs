//! ABSGD: momentum SGD whose mini-batch gradients carry per-sample weights
//! `p̃ᵢ = exp(Lᵢ/λ) / s`, where `s` is a moving average of the batch means of
//! `exp(L/λ)`.
//!
//! One step is one forward pass (losses), a normalizer update, the weights,
//! one backward pass of the `p̃`-weighted mean loss, and the heavy-ball update
//! `w ← w − η·(g + ∇r) + β·(w − w_prev)`.
//!
//! Note the weights are *not* renormalized within the batch. Since `s`
//! estimates the mean of `exp(L/λ)`, `p̃ᵢ ≈ B·pᵢ*` and the `1/B` in the
//! weighted mean cancels that factor.

use std::fmt;

use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};

use crate::losses::{l2_reg, LossFn, RegSpec};
use crate::math::{log_add_exp, log_sum_exp, DenseMatrix};
use crate::models::{forward_with_losses, weighted_backward, ModelArch, ParamVector};
use crate::serde_ext;
use crate::{Error, Result};

/// Attention temperature. `Infinite` is a distinguished value (uniform
/// weights), not a large float, so that the reduction to plain momentum SGD
/// is exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lambda {
    Finite(f64),
    Infinite,
}

impl Lambda {
    pub fn new(v: f64) -> Result<Self> {
        if v == 0.0 || v.is_nan() {
            return Err(Error::domain("lambda must be non-zero"));
        }
        Ok(if v == f64::INFINITY {
            Lambda::Infinite
        } else {
            Lambda::Finite(v)
        })
    }

    pub fn value(self) -> f64 {
        match self {
            Lambda::Finite(v) => v,
            Lambda::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Lambda::Infinite)
    }
}

impl fmt::Display for Lambda {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lambda::Finite(v) => write!(f, "{v}"),
            Lambda::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Lambda {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        serde_ext::serialize_f64(&self.value(), s)
    }
}

impl<'de> Deserialize<'de> for Lambda {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = serde_ext::deserialize_f64(d)?;
        Lambda::new(v).map_err(de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaSchedule {
    Constant(Lambda),
    /// `λ = ∞` (momentum SGD) before `switch_epoch`, `stage2` from then on.
    TwoStage { stage2: f64, switch_epoch: usize },
}

impl LambdaSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LambdaSchedule::Constant(_) => Ok(()),
            LambdaSchedule::TwoStage {
                stage2,
                switch_epoch,
            } => {
                if stage2 == 0.0 || !stage2.is_finite() {
                    return Err(Error::config("lambda_stage2 must be finite and non-zero"));
                }
                if switch_epoch < 1 {
                    return Err(Error::config("switch_epoch must be >= 1"));
                }
                Ok(())
            }
        }
    }

    pub fn switch_epoch(&self) -> Option<usize> {
        match *self {
            LambdaSchedule::Constant(_) => None,
            LambdaSchedule::TwoStage { switch_epoch, .. } => Some(switch_epoch),
        }
    }
}

/// λ in effect at a 1-based epoch.
pub fn lambda_at(schedule: &LambdaSchedule, epoch: usize) -> Lambda {
    match *schedule {
        LambdaSchedule::Constant(l) => l,
        LambdaSchedule::TwoStage {
            stage2,
            switch_epoch,
        } => {
            if epoch < switch_epoch {
                Lambda::Infinite
            } else {
                Lambda::Finite(stage2)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormalizerInit {
    /// `s₀ = 0`; early weights are inflated by `1/γ`.
    #[serde(alias = "cold")]
    ColdZero,
    /// `s₁ = g̃(w₁)`.
    #[default]
    #[serde(alias = "warm")]
    WarmFirstBatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbsgdConfig {
    pub eta: f64,
    pub beta: f64,
    pub ema_gamma: f64,
    pub weight_decay: f64,
    pub lambda_schedule: LambdaSchedule,
    pub normalizer_init: NormalizerInit,
    pub log_domain: bool,
}

impl Default for AbsgdConfig {
    fn default() -> Self {
        Self {
            eta: 0.1,
            beta: 0.9,
            ema_gamma: 0.9,
            weight_decay: 0.0,
            lambda_schedule: LambdaSchedule::Constant(Lambda::Finite(1.0)),
            normalizer_init: NormalizerInit::WarmFirstBatch,
            log_domain: true,
        }
    }
}

impl AbsgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::config(format!("eta must be > 0, got {}", self.eta)));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::config(format!("beta must lie in [0, 1), got {}", self.beta)));
        }
        if !(self.ema_gamma > 0.0 && self.ema_gamma <= 1.0) {
            return Err(Error::config(format!(
                "ema_gamma must lie in (0, 1], got {}",
                self.ema_gamma
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay must be >= 0"));
        }
        self.lambda_schedule.validate()
    }

    pub fn reg(&self) -> RegSpec {
        RegSpec {
            weight_decay: self.weight_decay,
        }
    }
}

/// Moving-average normalizer, in linear or log representation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Normalizer {
    /// Warm start pending: the next batch sets `s` directly.
    Unset,
    Linear(f64),
    Log(f64),
}

impl Normalizer {
    fn initial(init: NormalizerInit, log_domain: bool) -> Self {
        match (init, log_domain) {
            (NormalizerInit::WarmFirstBatch, _) => Normalizer::Unset,
            (NormalizerInit::ColdZero, false) => Normalizer::Linear(0.0),
            (NormalizerInit::ColdZero, true) => Normalizer::Log(f64::NEG_INFINITY),
        }
    }

    /// `s` as a plain number (`None` while unset). May be `+inf` for a log
    /// normalizer whose value exceeds `f64::MAX`.
    pub fn value(&self) -> Option<f64> {
        match *self {
            Normalizer::Unset => None,
            Normalizer::Linear(s) => Some(s),
            Normalizer::Log(ls) => Some(ls.exp()),
        }
    }

    pub fn log_value(&self) -> Option<f64> {
        match *self {
            Normalizer::Unset => None,
            Normalizer::Linear(s) => Some(s.ln()),
            Normalizer::Log(ls) => Some(ls),
        }
    }
}

/// Heavy-ball state shared by ABSGD and the momentum-SGD baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsgdState {
    pub normalizer: Normalizer,
    /// `w_t − w_{t−1}`.
    pub momentum: Vec<f64>,
    pub step: u64,
    /// λ used by the previous step.
    pub lambda: Option<Lambda>,
    init: NormalizerInit,
    log_domain: bool,
}

impl AbsgdState {
    pub fn new(num_params: usize, config: &AbsgdConfig) -> Self {
        Self {
            normalizer: Normalizer::initial(config.normalizer_init, config.log_domain),
            momentum: vec![0.0; num_params],
            step: 0,
            lambda: None,
            init: config.normalizer_init,
            log_domain: config.log_domain,
        }
    }

    /// Re-initializes the normalizer when λ changes (the two-stage restart).
    fn observe_lambda(&mut self, lambda: Lambda) {
        if let Some(prev) = self.lambda {
            if prev != lambda {
                self.normalizer = Normalizer::initial(self.init, self.log_domain);
            }
        }
        self.lambda = Some(lambda);
    }
}

/// `log g̃ = log((1/B) Σ exp(Lᵢ/λ))`; `0` for `λ = ∞`.
pub fn log_batch_g_tilde(losses: &[f64], lambda: Lambda) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::domain("empty batch"));
    }
    match lambda {
        Lambda::Infinite => Ok(0.0),
        Lambda::Finite(l) => {
            let scaled: Vec<f64> = losses.iter().map(|v| v / l).collect();
            Ok(log_sum_exp(&scaled)? - (losses.len() as f64).ln())
        }
    }
}

/// `g̃ = (1/B) Σ exp(Lᵢ/λ)`.
///
/// In linear mode overflow is an error; in log mode the mean is formed in
/// the log domain and only the final exponential can overflow.
pub fn batch_g_tilde(losses: &[f64], lambda: Lambda, log_domain: bool) -> Result<f64> {
    let g = if log_domain || lambda.is_infinite() {
        log_batch_g_tilde(losses, lambda)?.exp()
    } else {
        if losses.is_empty() {
            return Err(Error::domain("empty batch"));
        }
        let l = lambda.value();
        losses.iter().map(|v| (v / l).exp()).sum::<f64>() / losses.len() as f64
    };
    if !g.is_finite() {
        return Err(overflow(losses, lambda));
    }
    Ok(g)
}

fn overflow(losses: &[f64], lambda: Lambda) -> Error {
    let max = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Error::numeric(format!(
        "exp(L/lambda) overflowed at lambda = {lambda} with max batch loss {max}; use log_domain"
    ))
}

/// `s_{t+1} = (1 − γ)·s_t + γ·g̃`.
pub fn update_normalizer(s: f64, g_tilde: f64, ema_gamma: f64) -> f64 {
    (1.0 - ema_gamma) * s + ema_gamma * g_tilde
}

/// Log-domain form of [`update_normalizer`].
pub fn update_log_normalizer(log_s: f64, log_g_tilde: f64, ema_gamma: f64) -> f64 {
    let keep = if ema_gamma >= 1.0 {
        f64::NEG_INFINITY
    } else {
        (1.0 - ema_gamma).ln() + log_s
    };
    log_add_exp(keep, ema_gamma.ln() + log_g_tilde)
}

/// `p̃ᵢ = exp(Lᵢ/λ) / s`. The batch sum is not constrained to 1.
pub fn batch_weights(losses: &[f64], lambda: Lambda, s: f64) -> Result<Vec<f64>> {
    if !(s > 0.0) {
        return Err(Error::domain(format!("normalizer must be > 0, got {s}")));
    }
    let w: Vec<f64> = match lambda {
        Lambda::Infinite => vec![1.0 / s; losses.len()],
        Lambda::Finite(l) => losses.iter().map(|v| (v / l).exp() / s).collect(),
    };
    if w.iter().any(|v| !v.is_finite()) {
        return Err(overflow(losses, lambda));
    }
    Ok(w)
}

/// `p̃ᵢ = exp(Lᵢ/λ − log s)`.
pub fn batch_weights_log(losses: &[f64], lambda: Lambda, log_s: f64) -> Result<Vec<f64>> {
    if !log_s.is_finite() {
        return Err(Error::domain(format!("log normalizer must be finite, got {log_s}")));
    }
    let w: Vec<f64> = match lambda {
        Lambda::Infinite => vec![(-log_s).exp(); losses.len()],
        Lambda::Finite(l) => losses.iter().map(|v| (v / l - log_s).exp()).collect(),
    };
    if w.iter().any(|v| !v.is_finite()) {
        return Err(overflow(losses, lambda));
    }
    Ok(w)
}

/// Heavy-ball update in place: `Δ ← −η·g + β·Δ`, `w ← w + Δ`. Coordinates
/// with `trainable[i] == false` are left untouched and their `Δ` cleared.
pub fn momentum_update(
    values: &mut [f64],
    grad: &[f64],
    trainable: &[bool],
    eta: f64,
    beta: f64,
    delta: &mut [f64],
) {
    for i in 0..values.len() {
        if !trainable[i] {
            delta[i] = 0.0;
            continue;
        }
        let d = -eta * grad[i] + beta * delta[i];
        values[i] += d;
        delta[i] = d;
    }
}

/// What one optimizer step observed.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub losses: Vec<f64>,
    pub weights: Vec<f64>,
    pub log_g_tilde: f64,
    /// Normalizer after the update (`None` for the baseline).
    pub normalizer: Option<Normalizer>,
}

impl StepInfo {
    pub fn mean_loss(&self) -> f64 {
        crate::math::mean(&self.losses)
    }
}

fn weighted_gradient(
    params: &ParamVector,
    arch: &ModelArch,
    eval: &crate::models::BatchEval,
    labels: &[usize],
    weights: &[f64],
    loss: &LossFn,
    reg: RegSpec,
) -> Result<Vec<f64>> {
    let mut grad = weighted_backward(params, arch, eval, labels, weights, loss)?;
    if reg.weight_decay != 0.0 {
        let (_, rg) = l2_reg(params, reg.weight_decay);
        for (g, r) in grad.iter_mut().zip(rg) {
            *g += r;
        }
    }
    Ok(grad)
}

/// One ABSGD iteration on the batch `(features, labels)` at temperature
/// `lambda`. A change of `lambda` from the previous step restarts the
/// normalizer according to `config.normalizer_init`.
#[allow(clippy::too_many_arguments)]
pub fn absgd_step(
    params: &mut ParamVector,
    arch: &ModelArch,
    features: &DenseMatrix,
    labels: &[usize],
    loss: &LossFn,
    config: &AbsgdConfig,
    lambda: Lambda,
    state: &mut AbsgdState,
) -> Result<StepInfo> {
    if labels.is_empty() {
        return Err(Error::domain("empty batch"));
    }
    state.observe_lambda(lambda);
    let eval = forward_with_losses(params, arch, features, labels, loss)?;
    let losses = &eval.per_sample_losses;
    let gamma = config.ema_gamma;

    let log_g = log_batch_g_tilde(losses, lambda)?;
    let weights = if config.log_domain {
        let log_s = match state.normalizer {
            Normalizer::Unset => log_g,
            Normalizer::Log(ls) => update_log_normalizer(ls, log_g, gamma),
            Normalizer::Linear(s) => update_log_normalizer(s.ln(), log_g, gamma),
        };
        state.normalizer = Normalizer::Log(log_s);
        batch_weights_log(losses, lambda, log_s)?
    } else {
        let g = batch_g_tilde(losses, lambda, false)?;
        let s = match state.normalizer {
            Normalizer::Unset => g,
            Normalizer::Linear(s) => update_normalizer(s, g, gamma),
            Normalizer::Log(ls) => update_normalizer(ls.exp(), g, gamma),
        };
        state.normalizer = Normalizer::Linear(s);
        batch_weights(losses, lambda, s)?
    };

    let grad = weighted_gradient(params, arch, &eval, labels, &weights, loss, config.reg())?;
    let mask = params.trainable_mask();
    momentum_update(
        params.values_mut(),
        &grad,
        &mask,
        config.eta,
        config.beta,
        &mut state.momentum,
    );
    state.step += 1;
    Ok(StepInfo {
        losses: eval.per_sample_losses,
        weights,
        log_g_tilde: log_g,
        normalizer: Some(state.normalizer),
    })
}

/// Momentum SGD: the same update with every sample weight equal to 1.
#[allow(clippy::too_many_arguments)]
pub fn sgd_momentum_step(
    params: &mut ParamVector,
    arch: &ModelArch,
    features: &DenseMatrix,
    labels: &[usize],
    loss: &LossFn,
    reg: RegSpec,
    eta: f64,
    beta: f64,
    state: &mut AbsgdState,
) -> Result<StepInfo> {
    if labels.is_empty() {
        return Err(Error::domain("empty batch"));
    }
    let eval = forward_with_losses(params, arch, features, labels, loss)?;
    let weights = vec![1.0; labels.len()];
    let grad = weighted_gradient(params, arch, &eval, labels, &weights, loss, reg)?;
    let mask = params.trainable_mask();
    momentum_update(params.values_mut(), &grad, &mask, eta, beta, &mut state.momentum);
    state.step += 1;
    Ok(StepInfo {
        losses: eval.per_sample_losses,
        weights,
        log_g_tilde: 0.0,
        normalizer: None,
    })
}

/// State for the moving-average momentum form
/// `v ← (1 − β₀)·v + β₀·g`, `w ← w − η₀·v`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaMomentumState {
    pub velocity: Vec<f64>,
    pub step: u64,
}

impl EmaMomentumState {
    pub fn new(num_params: usize) -> Self {
        Self {
            velocity: vec![0.0; num_params],
            step: 0,
        }
    }
}

/// Momentum SGD in moving-average form. With `η = η₀β₀` and `β = 1 − β₀`
/// it generates the same iterates as [`sgd_momentum_step`].
#[allow(clippy::too_many_arguments)]
pub fn sgd_ema_momentum_step(
    params: &mut ParamVector,
    arch: &ModelArch,
    features: &DenseMatrix,
    labels: &[usize],
    loss: &LossFn,
    reg: RegSpec,
    eta0: f64,
    beta0: f64,
    state: &mut EmaMomentumState,
) -> Result<()> {
    let eval = forward_with_losses(params, arch, features, labels, loss)?;
    let weights = vec![1.0; labels.len()];
    let grad = weighted_gradient(params, arch, &eval, labels, &weights, loss, reg)?;
    let mask = params.trainable_mask();
    let values = params.values_mut();
    for i in 0..values.len() {
        if !mask[i] {
            state.velocity[i] = 0.0;
            continue;
        }
        state.velocity[i] = (1.0 - beta0) * state.velocity[i] + beta0 * grad[i];
        values[i] -= eta0 * state.velocity[i];
    }
    state.step += 1;
    Ok(())
}
