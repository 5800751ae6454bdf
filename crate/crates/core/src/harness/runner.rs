//! The training loop.

use std::time::Instant;

use super::config::{lr_at, DataSpec, ExperimentConfig, OptimizerKind};
use super::metrics::{evaluate_grouped, minority_classes};
use super::record::{ProbeRow, RunRecord, TraceRow};
use crate::data::{
    gaussian_mixture, gaussian_mixture_2d, inject_label_noise, random_class_means, read_csv,
    Dataset, ImbalanceSpec, NoiseSpec,
};
use crate::dro::{diagnose, DroDiagnostics};
use crate::losses::{LossFn, RegSpec};
use crate::math::SeededRng;
use crate::models::{init_params, ModelArch, ParamVector};
use crate::optim::{absgd_step, lambda_at, sgd_momentum_step, AbsgdState, Lambda, LambdaSchedule};
use crate::{Error, Result};

// Independent random streams derived from one seed.
const DATA_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;
const SHUFFLE_STREAM: u64 = 3;
const PROBE_STREAM: u64 = 4;

pub struct ExperimentData {
    pub train: Dataset,
    pub test: Dataset,
    /// Minority classes by (clean) training class size.
    pub minority: Vec<usize>,
}

/// Generates or loads the train/test split for `seed`.
pub fn build_data(config: &ExperimentConfig, seed: u64) -> Result<ExperimentData> {
    build_data_from(&config.data, seed)
}

pub fn build_data_from(spec: &DataSpec, seed: u64) -> Result<ExperimentData> {
    match spec {
        DataSpec::GaussianMixture {
            dim,
            num_classes,
            n_max,
            imbalance,
            separation,
            stddev,
            test_per_class,
            label_noise,
            data_seed,
        } => {
            let mut rng = SeededRng::with_stream(data_seed.unwrap_or(seed), DATA_STREAM);
            let means = random_class_means(*num_classes, *dim, *separation, &mut rng);
            let counts = match imbalance {
                Some(imb) => ImbalanceSpec {
                    kind: imb.kind,
                    rho: imb.rho,
                    n0: *n_max,
                    num_classes: *num_classes,
                }
                .counts()?,
                None => vec![*n_max; *num_classes],
            };
            let sds = vec![*stddev; *num_classes];
            let mut train = gaussian_mixture(&counts, &means, &sds, &mut rng)?;
            let test = gaussian_mixture(&vec![*test_per_class; *num_classes], &means, &sds, &mut rng)?;
            if let Some(p) = label_noise {
                train = inject_label_noise(&train, NoiseSpec::new(*p)?, &mut rng)?.0;
            }
            Ok(ExperimentData {
                train,
                test,
                minority: minority_classes(&counts),
            })
        }
        DataSpec::Toy2d {
            counts,
            means,
            stddev,
            test_per_class,
            data_seed,
        } => {
            let mut rng = SeededRng::with_stream(data_seed.unwrap_or(seed), DATA_STREAM);
            let sds = vec![*stddev; counts.len()];
            let train = gaussian_mixture_2d(counts, means, &sds, &mut rng)?;
            let test = gaussian_mixture_2d(&vec![*test_per_class; counts.len()], means, &sds, &mut rng)?;
            Ok(ExperimentData {
                train,
                test,
                minority: minority_classes(counts),
            })
        }
        DataSpec::Csv {
            train,
            test,
            num_classes,
        } => {
            let train = read_csv(train, *num_classes)?;
            let test = read_csv(test, Some(train.num_classes()))?;
            let minority = minority_classes(train.class_counts());
            Ok(ExperimentData { train, test, minority })
        }
    }
}

/// A step probe, handed to the observer of [`run_experiment_with`].
pub struct ProbeEvent<'a> {
    pub step: u64,
    pub epoch: usize,
    pub arch: &'a ModelArch,
    pub params: &'a ParamVector,
    pub probe_set: &'a Dataset,
    pub loss: &'a LossFn,
    pub lambda: Lambda,
    pub reg: RegSpec,
    pub diagnostics: &'a DroDiagnostics,
}

pub struct RunOutput {
    pub record: RunRecord,
    pub arch: ModelArch,
    pub params: ParamVector,
}

pub fn run_experiment(config: &ExperimentConfig, seed: u64) -> Result<RunRecord> {
    Ok(run_experiment_with(config, seed, &mut |_| Ok(()))?.record)
}

fn locate(e: Error, epoch: usize, step: u64) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}, step {step}: {m}")),
        other => other,
    }
}

/// Trains one (config, seed) pair. `observer` sees every step probe
/// (`probe_every > 0`) with the parameters at that point.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    seed: u64,
    observer: &mut dyn FnMut(&ProbeEvent) -> Result<()>,
) -> Result<RunOutput> {
    config.validate()?;
    let start = Instant::now();
    let opt = &config.optimizer;
    let absgd = opt.to_absgd()?;
    let reg = opt.reg();
    let schedule = match opt.optimizer {
        OptimizerKind::Absgd => absgd.lambda_schedule,
        OptimizerKind::Sgd => LambdaSchedule::Constant(opt.probe_lambda()),
    };
    let switch = opt.switch_epoch;

    let data = build_data(config, seed)?;
    let train = &data.train;
    let arch = config.arch.build(train.dim(), train.num_classes());
    arch.validate()?;
    let mut params = init_params(&arch, &mut SeededRng::with_stream(seed, INIT_STREAM), config.arch.init);
    if switch.is_none() {
        params.set_frozen_layers(&opt.freeze)?;
    }

    let probe_set = {
        let mut rng = SeededRng::with_stream(seed, PROBE_STREAM);
        if train.len() <= config.probe_subset {
            train.clone()
        } else {
            let mut idx: Vec<usize> = (0..train.len()).collect();
            rng.shuffle(&mut idx);
            idx.truncate(config.probe_subset);
            idx.sort_unstable();
            train.subset(&idx)
        }
    };

    let mut shuffle_rng = SeededRng::with_stream(seed, SHUFFLE_STREAM);
    let mut state = AbsgdState::new(params.len(), &absgd);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    let mut probes = Vec::new();
    let mut step: u64 = 0;

    for epoch in 1..=config.epochs {
        if switch == Some(epoch) && !opt.freeze.is_empty() {
            params.set_frozen_layers(&opt.freeze)?;
        }
        let lambda = lambda_at(&schedule, epoch);
        let lr = lr_at(&config.lr_schedule, epoch, opt.eta, config.epochs, switch);
        let mut step_config = absgd.clone();
        step_config.eta = lr;
        let loss = LossFn::resolve(&config.loss, train.class_counts(), epoch)?;

        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let x = train.features().select_rows(batch);
            let y: Vec<usize> = batch.iter().map(|&i| train.labels()[i]).collect();
            let info = match opt.optimizer {
                OptimizerKind::Absgd => {
                    absgd_step(&mut params, &arch, &x, &y, &loss, &step_config, lambda, &mut state)
                }
                OptimizerKind::Sgd => {
                    sgd_momentum_step(&mut params, &arch, &x, &y, &loss, reg, lr, opt.beta, &mut state)
                }
            }
            .map_err(|e| locate(e, epoch, step + 1))?;
            step += 1;
            if params.values().iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!(
                    "epoch {epoch}, step {step}: parameters became non-finite (lr {lr})"
                )));
            }
            loss_sum += info.losses.iter().sum::<f64>();

            if config.probe_every > 0 && step.is_multiple_of(config.probe_every as u64) {
                let diagnostics =
                    diagnose(&params, &arch, &probe_set, &loss, lambda, reg).map_err(|e| locate(e, epoch, step))?;
                observer(&ProbeEvent {
                    step,
                    epoch,
                    arch: &arch,
                    params: &params,
                    probe_set: &probe_set,
                    loss: &loss,
                    lambda,
                    reg,
                    diagnostics: &diagnostics,
                })?;
                probes.push(ProbeRow {
                    step,
                    epoch,
                    diagnostics,
                });
            }
        }

        let end = diagnose(&params, &arch, &probe_set, &loss, lambda, reg).map_err(|e| locate(e, epoch, step))?;
        let test = evaluate_grouped(&params, &arch, &data.test, &data.minority)?;
        trace.push(TraceRow {
            epoch,
            lr,
            train_loss: loss_sum / train.len() as f64,
            test_top1: test.top1,
            lambda,
            s: match opt.optimizer {
                OptimizerKind::Absgd => state.normalizer.value(),
                OptimizerKind::Sgd => None,
            },
            grad_norm_sq: end.grad_norm_sq,
            c0_hat: end.c0_hat,
            c1_hat: end.c1_hat,
        });
    }

    let metrics = evaluate_grouped(&params, &arch, &data.test, &data.minority)?;
    let record = RunRecord {
        name: config.name.clone(),
        config_hash: config.hash(),
        seed,
        optimizer: opt.optimizer,
        steps: step,
        metrics,
        wall_time_secs: start.elapsed().as_secs_f64(),
        trace,
        probes,
    };
    Ok(RunOutput { record, arch, params })
}
