//! Attentional-biased momentum SGD (ABSGD) and the information-regularized
//! DRO objective family it optimizes.
//!
//! The crate is organised bottom-up:
//!
//! * [`math`]: log-domain primitives, dense storage and seeded randomness.
//! * [`data`]: imbalanced dataset synthesis (long-tailed, step, Gaussian toy,
//!   label noise) and CSV I/O.
//! * [`models`]: linear / MLP classifiers with weighted single-pass backprop,
//!   freeze masks, checkpoints and a finite-difference oracle.
//! * [`losses`]: CE, focal and LDAM losses plus class-level weighting.
//! * [`dro`]: closed-form dual weights, the min-max and log-sum-exp
//!   objectives, the exact full-batch gradient and convergence diagnostics.
//! * [`optim`]: the ABSGD step, the momentum-SGD baseline and λ schedules.
//! * [`harness`]: experiment configs, training loop, sweeps and reports.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod dro;
mod error;
pub mod gradcheck;
pub mod harness;
pub mod losses;
pub mod math;
pub mod models;
pub mod optim;
pub(crate) mod serde_ext;

pub use data::{Dataset, ImbalanceKind, ImbalanceSpec, NoiseSpec};
pub use dro::{DroDiagnostics, PStar};
pub use error::{Error, Result};
pub use losses::{BaseLoss, ClassWeighting, LossFn, LossSpec, RegSpec};
pub use math::{DenseMatrix, SeededRng};
pub use models::{ModelArch, ParamVector};
pub use optim::{AbsgdConfig, AbsgdState, Lambda, LambdaSchedule, NormalizerInit};
