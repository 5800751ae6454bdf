//! Finite-difference verification of the exact `∇F_λ` on small random
//! problems.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dro::{f_lambda_at, grad_f_lambda};
use crate::losses::{BaseLoss, ClassWeighting, LossFn, LossSpec, RegSpec};
use crate::math::{DenseMatrix, SeededRng};
use crate::models::{finite_diff_grad, init_params, relu_pattern, InitPolicy, ModelArch, ParamVector};
use crate::optim::Lambda;
use crate::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;

/// Gradients smaller than this are compared in absolute terms.
const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    Linear,
    Mlp1,
    Mlp2,
}

impl ArchKind {
    pub const ALL: [ArchKind; 3] = [ArchKind::Linear, ArchKind::Mlp1, ArchKind::Mlp2];

    pub fn build(self, input_dim: usize, num_classes: usize) -> ModelArch {
        match self {
            ArchKind::Linear => ModelArch::linear(input_dim, num_classes),
            ArchKind::Mlp1 => ModelArch::mlp(input_dim, &[6], num_classes),
            ArchKind::Mlp2 => ModelArch::mlp(input_dim, &[6, 5], num_classes),
        }
    }
}

impl FromStr for ArchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(ArchKind::Linear),
            "mlp1" | "mlp-1" => Ok(ArchKind::Mlp1),
            "mlp2" | "mlp-2" => Ok(ArchKind::Mlp2),
            other => Err(Error::config(format!(
                "unknown arch '{other}' (expected linear, mlp1 or mlp2)"
            ))),
        }
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArchKind::Linear => "linear",
            ArchKind::Mlp1 => "mlp1",
            ArchKind::Mlp2 => "mlp2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Ce,
    Focal,
    Ldam,
    CbCe,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Ce, LossKind::Focal, LossKind::Ldam, LossKind::CbCe];

    pub fn spec(self) -> LossSpec {
        match self {
            LossKind::Ce => LossSpec::ce(),
            LossKind::Focal => LossSpec::with_base(BaseLoss::Focal { gamma: 2.0 }),
            LossKind::Ldam => LossSpec::with_base(BaseLoss::ldam()),
            LossKind::CbCe => LossSpec {
                class_weighting: ClassWeighting::ClassBalanced { beta: 0.9 },
                ..LossSpec::ce()
            },
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ce" => Ok(LossKind::Ce),
            "focal" => Ok(LossKind::Focal),
            "ldam" => Ok(LossKind::Ldam),
            "cb-ce" | "cb_ce" | "cbce" => Ok(LossKind::CbCe),
            other => Err(Error::config(format!(
                "unknown loss '{other}' (expected ce, focal, ldam or cb-ce)"
            ))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Ce => "ce",
            LossKind::Focal => "focal",
            LossKind::Ldam => "ldam",
            LossKind::CbCe => "cb-ce",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckCase {
    pub arch: ArchKind,
    pub loss: LossKind,
    pub lambda: Lambda,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest error.
    pub worst_coord: Option<usize>,
    pub checked: usize,
    /// Coordinates whose probes straddle a ReLU kink.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

/// `|a − b| / max(|a|, |b|, 1e-4)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares [`grad_f_lambda`] to central differences of [`f_lambda_at`]
/// with step `h`.
pub fn check_gradient(
    params: &ParamVector,
    arch: &ModelArch,
    dataset: &Dataset,
    loss: &LossFn,
    lambda: Lambda,
    reg: RegSpec,
    h: f64,
) -> Result<GradCheckReport> {
    let analytic = grad_f_lambda(params, arch, dataset, loss, lambda, reg)?;
    let base_pattern = relu_pattern(params, arch, dataset.features())?;

    let mut probe = params.clone();
    let numeric = finite_diff_grad(
        |w| {
            probe.values_mut().copy_from_slice(w);
            f_lambda_at(&probe, arch, dataset, loss, lambda, reg).unwrap_or(f64::NAN)
        },
        params.values(),
        h,
    )?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_coord: None,
        checked: 0,
        skipped: 0,
    };
    let mut shifted = params.clone();
    for i in 0..params.len() {
        if !arch.hidden_dims.is_empty() && straddles_kink(&mut shifted, arch, dataset, i, h, &base_pattern)? {
            report.skipped += 1;
            continue;
        }
        report.checked += 1;
        let e = relative_error(analytic[i], numeric[i]);
        if e > report.max_rel_error || report.worst_coord.is_none() {
            report.max_rel_error = e;
            report.worst_coord = Some(i);
        }
    }
    Ok(report)
}

fn straddles_kink(
    shifted: &mut ParamVector,
    arch: &ModelArch,
    dataset: &Dataset,
    coord: usize,
    h: f64,
    base: &[bool],
) -> Result<bool> {
    let orig = shifted.values()[coord];
    let mut differs = false;
    for delta in [h, -h] {
        shifted.values_mut()[coord] = orig + delta;
        if relu_pattern(shifted, arch, dataset.features())? != base {
            differs = true;
        }
    }
    shifted.values_mut()[coord] = orig;
    Ok(differs)
}

/// A small imbalanced classification problem: 14 samples, 4 features,
/// 3 classes with sizes 7/5/2.
pub fn random_problem(case: &GradCheckCase) -> Result<(ModelArch, ParamVector, Dataset, LossFn)> {
    let mut rng = SeededRng::with_stream(case.seed, 0x6772_6164);
    let (dim, classes) = (4, 3);
    let counts = [7usize, 5, 2];
    let n: usize = counts.iter().sum();
    let features = DenseMatrix::new(n, dim, (0..n * dim).map(|_| rng.next_gaussian()).collect())?;
    let labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(k, &c)| std::iter::repeat_n(k, c))
        .collect();
    let dataset = Dataset::new(features, labels, classes)?;
    let arch = case.arch.build(dim, classes);
    let params = init_params(&arch, &mut rng, InitPolicy::FanIn);
    let loss = LossFn::resolve(&case.loss.spec(), dataset.class_counts(), 1)?;
    Ok((arch, params, dataset, loss))
}

pub fn check_case(case: &GradCheckCase) -> Result<GradCheckReport> {
    let (arch, params, dataset, loss) = random_problem(case)?;
    let reg = RegSpec { weight_decay: 1e-2 };
    check_gradient(&params, &arch, &dataset, &loss, case.lambda, reg, DEFAULT_STEP)
}

pub const LAMBDA_GRID: [f64; 4] = [0.5, 1.0, 10.0, -1.0];

/// `count` cases cycling through every (arch, loss, λ) combination, each
/// with its own seed.
pub fn sweep_cases(count: usize, seed: u64) -> Vec<GradCheckCase> {
    (0..count)
        .map(|i| GradCheckCase {
            arch: ArchKind::ALL[i % 3],
            loss: LossKind::ALL[(i / 3) % 4],
            lambda: Lambda::Finite(LAMBDA_GRID[(i / 12) % 4]),
            seed: seed.wrapping_add(i as u64),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(1e-9, 0.0) - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn parsing() {
        assert_eq!("MLP-2".parse::<ArchKind>().unwrap(), ArchKind::Mlp2);
        assert_eq!("cb-ce".parse::<LossKind>().unwrap(), LossKind::CbCe);
        assert!("cnn".parse::<ArchKind>().is_err());
    }

    #[test]
    fn sweep_covers_grid() {
        let cases = sweep_cases(48, 0);
        for a in ArchKind::ALL {
            for l in LossKind::ALL {
                for lam in LAMBDA_GRID {
                    assert!(cases
                        .iter()
                        .any(|c| c.arch == a && c.loss == l && c.lambda == Lambda::Finite(lam)));
                }
            }
        }
    }

    #[test]
    fn every_combination_passes() {
        for case in sweep_cases(48, 11) {
            let r = check_case(&case).unwrap();
            assert!(r.passes(DEFAULT_TOLERANCE), "{case:?}: {r:?}");
            assert!(r.checked > 0);
        }
    }
}
