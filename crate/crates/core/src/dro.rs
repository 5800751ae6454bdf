//! The KL-regularized DRO objective family.
//!
//! For per-sample losses `L` and regularization strength `λ`, the inner
//! maximizer over the simplex is `p* = softmax(L/λ)`, and substituting it
//! back gives the log-sum-exp objective
//! `F_λ = λ·(log Σ exp(Lᵢ/λ) − ln n) + r(w)`, which interpolates between the
//! mean loss (`λ → ∞`) and the maximum loss (`λ → 0⁺`). Negative `λ` turns
//! the weighting around and down-weights high-loss samples.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::losses::{l2_reg, LossFn, RegSpec};
use crate::math::{log_sum_exp, norm_sq, stable_softmax};
use crate::models::{backward, forward_with_losses, ModelArch, ParamVector};
use crate::optim::Lambda;
use crate::{Error, Result};

/// Dual weights on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct PStar(Vec<f64>);

impl PStar {
    /// Wraps a probability vector; entries must be `>= 0` and sum to 1.
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() || p.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::domain("probabilities must be non-empty and >= 0"));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("probabilities sum to {s}, not 1")));
        }
        Ok(Self(p))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `1 / Σ pᵢ²`, in `[1, n]`.
    pub fn effective_sample_size(&self) -> f64 {
        1.0 / norm_sq(&self.0)
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda == 0.0 || lambda.is_nan() {
        return Err(Error::domain("lambda must be non-zero"));
    }
    Ok(())
}

fn scaled(losses: &[f64], lambda: f64) -> Vec<f64> {
    losses.iter().map(|l| l / lambda).collect()
}

/// `pᵢ* = exp(Lᵢ/λ) / Σⱼ exp(Lⱼ/λ)`.
pub fn p_star(losses: &[f64], lambda: f64) -> Result<PStar> {
    check_lambda(lambda)?;
    if lambda.is_infinite() {
        return Ok(PStar::uniform(losses.len().max(1)));
    }
    Ok(PStar(stable_softmax(&scaled(losses, lambda))?))
}

/// `Σ pᵢ ln(n pᵢ)` with `0 · ln 0 = 0`.
pub fn kl_to_uniform(p: &PStar) -> f64 {
    let n = p.len() as f64;
    p.0.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * (n * v).ln())
        .sum::<f64>()
        .max(0.0)
}

/// `Σ pᵢLᵢ − λ·KL(p‖uniform) + r`.
pub fn f_minmax(losses: &[f64], p: &PStar, lambda: f64, reg_value: f64) -> f64 {
    let expected: f64 = losses.iter().zip(&p.0).map(|(l, q)| l * q).sum();
    let kl = if lambda == 0.0 { 0.0 } else { lambda * kl_to_uniform(p) };
    expected - kl + reg_value
}

/// `λ·(log Σ exp(Lᵢ/λ) − ln n) + r`.
pub fn f_lambda(losses: &[f64], lambda: f64, reg_value: f64) -> Result<f64> {
    check_lambda(lambda)?;
    if lambda.is_infinite() {
        if losses.is_empty() {
            return Err(Error::domain("f_lambda of an empty loss list"));
        }
        return Ok(crate::math::mean(losses) + reg_value);
    }
    let n = losses.len() as f64;
    Ok(lambda * (log_sum_exp(&scaled(losses, lambda))? - n.ln()) + reg_value)
}

fn lambda_value(lambda: Lambda) -> f64 {
    match lambda {
        Lambda::Finite(v) => v,
        Lambda::Infinite => f64::INFINITY,
    }
}

/// Value of `F_λ(w)` over a whole dataset.
pub fn f_lambda_at(
    params: &ParamVector,
    arch: &ModelArch,
    dataset: &Dataset,
    loss: &LossFn,
    lambda: Lambda,
    reg: RegSpec,
) -> Result<f64> {
    let eval = forward_with_losses(params, arch, dataset.features(), dataset.labels(), loss)?;
    let (r, _) = l2_reg(params, reg.weight_decay);
    f_lambda(&eval.per_sample_losses, lambda_value(lambda), r)
}

/// Exact full-batch `∇F_λ(w) = Σᵢ pᵢ* ∇L(w; zᵢ) + ∇r(w)`.
pub fn grad_f_lambda(
    params: &ParamVector,
    arch: &ModelArch,
    dataset: &Dataset,
    loss: &LossFn,
    lambda: Lambda,
    reg: RegSpec,
) -> Result<Vec<f64>> {
    Ok(objective_and_grad(params, arch, dataset, loss, lambda, reg)?.2)
}

/// `(losses, p*, ∇F_λ)` from one forward and one backward pass.
fn objective_and_grad(
    params: &ParamVector,
    arch: &ModelArch,
    dataset: &Dataset,
    loss: &LossFn,
    lambda: Lambda,
    reg: RegSpec,
) -> Result<(Vec<f64>, PStar, Vec<f64>)> {
    if dataset.is_empty() {
        return Err(Error::domain("empty dataset"));
    }
    let eval = forward_with_losses(params, arch, dataset.features(), dataset.labels(), loss)?;
    let p = p_star(&eval.per_sample_losses, lambda_value(lambda))?;
    // backward averages over the batch, so scale p* by n
    let n = dataset.len() as f64;
    let weights: Vec<f64> = p.as_slice().iter().map(|v| v * n).collect();
    let mut grad = backward(params, arch, &eval, dataset.labels(), &weights, loss)?;
    let (_, reg_grad) = l2_reg(params, reg.weight_decay);
    for (g, r) in grad.iter_mut().zip(reg_grad) {
        *g += r;
    }
    Ok((eval.per_sample_losses, p, grad))
}

/// Empirical stand-ins for the bounds `exp(L/λ) < C₀` and `‖∇L‖² ≤ C₁`.
///
/// `c0_hat` may be `+inf` when `exp(L/λ)` overflows; that is reported, not
/// raised.
pub fn estimate_bounds(
    params: &ParamVector,
    arch: &ModelArch,
    dataset: &Dataset,
    loss: &LossFn,
    lambda: Lambda,
) -> Result<(f64, f64)> {
    if dataset.is_empty() {
        return Err(Error::domain("empty dataset"));
    }
    let eval = forward_with_losses(params, arch, dataset.features(), dataset.labels(), loss)?;
    let c0 = c0_from_losses(&eval.per_sample_losses, lambda);
    let c1 = max_per_sample_grad_norm_sq(params, arch, dataset, loss)?;
    Ok((c0, c1))
}

fn c0_from_losses(losses: &[f64], lambda: Lambda) -> f64 {
    match lambda {
        Lambda::Infinite => 1.0,
        Lambda::Finite(l) => losses
            .iter()
            .map(|v| (v / l).exp())
            .fold(f64::NEG_INFINITY, f64::max),
    }
}

fn max_per_sample_grad_norm_sq(
    params: &ParamVector,
    arch: &ModelArch,
    dataset: &Dataset,
    loss: &LossFn,
) -> Result<f64> {
    let mut best = 0.0f64;
    for i in 0..dataset.len() {
        let x = dataset.features().select_rows(&[i]);
        let y = [dataset.labels()[i]];
        let eval = forward_with_losses(params, arch, &x, &y, loss)?;
        let g = backward(params, arch, &eval, &y, &[1.0], loss)?;
        best = best.max(norm_sq(&g));
    }
    Ok(best)
}

/// One probe of the objective and its stationarity measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroDiagnostics {
    #[serde(with = "crate::serde_ext::opt_f64")]
    pub lambda: Option<f64>,
    pub f_lambda: f64,
    /// `‖∇F_λ(w)‖²`.
    pub grad_norm_sq: f64,
    pub kl_to_uniform: f64,
    pub effective_sample_size: f64,
    #[serde(
        serialize_with = "crate::serde_ext::serialize_f64",
        deserialize_with = "crate::serde_ext::deserialize_f64"
    )]
    pub c0_hat: f64,
    pub c1_hat: f64,
}

/// Evaluates every diagnostic at `params` over `dataset`.
///
/// `lambda` of `Lambda::Infinite` probes the plain mean-loss objective
/// (uniform weights); its diagnostics are reported with `lambda: None`.
pub fn diagnose(
    params: &ParamVector,
    arch: &ModelArch,
    dataset: &Dataset,
    loss: &LossFn,
    lambda: Lambda,
    reg: RegSpec,
) -> Result<DroDiagnostics> {
    let (losses, p, grad) = objective_and_grad(params, arch, dataset, loss, lambda, reg)?;
    let (r, _) = l2_reg(params, reg.weight_decay);
    let lam = lambda_value(lambda);
    Ok(DroDiagnostics {
        lambda: lam.is_finite().then_some(lam),
        f_lambda: f_lambda(&losses, lam, r)?,
        grad_norm_sq: norm_sq(&grad),
        kl_to_uniform: kl_to_uniform(&p),
        effective_sample_size: p.effective_sample_size(),
        c0_hat: c0_from_losses(&losses, lambda),
        c1_hat: max_per_sample_grad_norm_sq(params, arch, dataset, loss)?,
    })
}
