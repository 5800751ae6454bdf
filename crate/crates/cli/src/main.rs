//! `absgd` command-line front end.
//!
//! Exit codes: 0 success, 1 validation error (bad flags, config, input
//! format or domain), 2 numeric failure, 3 I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use absgd::data::{write_csv, ImbalanceKind};
use absgd::gradcheck::{check_case, ArchKind, GradCheckCase, LossKind, DEFAULT_TOLERANCE};
use absgd::harness::{
    build_data_from, compare_report, emit_plot_data, evaluate, read_run_dir, run_experiment_with,
    run_file_name, sweep, write_failure, write_run, DataSpec, ExperimentConfig, GridSpec, ImbalanceConfig,
    RunFile,
};
use absgd::losses::LossFn;
use absgd::models::{read_checkpoint, write_checkpoint};
use absgd::{Error, Lambda};

#[derive(Parser)]
#[command(name = "absgd", version, about = "Attention-weighted momentum SGD experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Imbalance {
    None,
    Lt,
    St,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Gaussian-mixture train/test split as CSV.
    Synth {
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        /// Training size of the largest class.
        #[arg(long, default_value_t = 500)]
        n_max: usize,
        #[arg(long, value_enum, default_value = "none")]
        imbalance: Imbalance,
        #[arg(long, default_value_t = 100.0)]
        rho: f64,
        #[arg(long, default_value_t = 3.0)]
        separation: f64,
        #[arg(long, default_value_t = 1.0)]
        stddev: f64,
        /// Symmetric label-flip probability for the training split.
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long, default_value_t = 100)]
        test_per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory receiving train.csv and test.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one (config, seed) pair; writes a run file and a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the first seed listed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Defaults to the config's output_dir, then `runs`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a CSV dataset; prints metrics as JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Compare the exact gradient of F_lambda with finite differences.
    Gradcheck {
        #[arg(long, default_value = "mlp1")]
        arch: String,
        #[arg(long, default_value = "ce")]
        loss: String,
        /// A number or `inf`.
        #[arg(long, default_value = "1", allow_hyphen_values = true)]
        lambda: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run every config in a directory over a list of seeds.
    Sweep {
        #[arg(long)]
        config_dir: PathBuf,
        /// Comma-separated; overrides each config's seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Summarize run files as a mean (std) table.
    Report {
        #[arg(long)]
        runs: PathBuf,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Dump decision-grid and per-sample weight CSVs for a 2-D dataset.
    PlotData {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "1", allow_hyphen_values = true)]
        lambda: String,
        /// Normalizer; defaults to the dataset mean of exp(L/lambda).
        #[arg(long)]
        s: Option<f64>,
        #[arg(long, default_value = "ce")]
        loss: String,
        #[arg(long, default_value_t = 100)]
        nx: usize,
        #[arg(long, default_value_t = 100)]
        ny: usize,
        #[arg(long, default_value_t = 1.0)]
        margin: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_lambda(s: &str) -> anyhow::Result<Lambda> {
    let v = match s.trim().to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" => f64::INFINITY,
        other => other.parse::<f64>().map_err(|_| Error::Config(format!("invalid lambda '{s}'")))?,
    };
    Ok(Lambda::new(v)?)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", message(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

// The library error already renders its source, so the chain stops there.
fn message(e: &anyhow::Error) -> String {
    let mut parts = Vec::new();
    for cause in e.chain() {
        parts.push(cause.to_string());
        if cause.downcast_ref::<Error>().is_some() {
            break;
        }
    }
    parts.join(": ")
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                Error::Numeric(_) => 2,
                Error::Io(_) => 3,
                Error::Domain(_) | Error::Parse { .. } | Error::Config(_) => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    1
}

fn run(cmd: Command) -> anyhow::Result<ExitCode> {
    match cmd {
        Command::Synth {
            classes,
            dim,
            n_max,
            imbalance,
            rho,
            separation,
            stddev,
            noise,
            test_per_class,
            seed,
            out,
        } => {
            let imbalance = match imbalance {
                Imbalance::None => None,
                Imbalance::Lt => Some(ImbalanceConfig {
                    kind: ImbalanceKind::LongTailed,
                    rho,
                }),
                Imbalance::St => Some(ImbalanceConfig {
                    kind: ImbalanceKind::Step,
                    rho,
                }),
            };
            let spec = DataSpec::GaussianMixture {
                dim,
                num_classes: classes,
                n_max,
                imbalance,
                separation,
                stddev,
                test_per_class,
                label_noise: noise,
                data_seed: None,
            };
            let data = build_data_from(&spec, seed)?;
            std::fs::create_dir_all(&out).map_err(Error::from)?;
            write_csv(out.join("train.csv"), &data.train)?;
            write_csv(out.join("test.csv"), &data.test)?;
            println!(
                "wrote {} train / {} test samples to {}; class counts {:?}",
                data.train.len(),
                data.test.len(),
                out.display(),
                data.train.class_counts()
            );
        }
        Command::Train { config, seed, out } => {
            let cfg = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let seed = seed.or_else(|| cfg.seeds.first().copied()).unwrap_or(0);
            let out = out
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("runs"));
            std::fs::create_dir_all(&out).map_err(Error::from)?;
            let result = run_experiment_with(&cfg, seed, &mut |_| Ok(()));
            let run_path = out.join(run_file_name(&cfg.name, seed));
            let output = match result {
                Ok(o) => o,
                Err(e) => {
                    let failure = absgd::harness::RunFailure {
                        name: cfg.name.clone(),
                        config_hash: cfg.hash(),
                        seed,
                        error: e.to_string(),
                    };
                    write_failure(&run_path, &failure)?;
                    return Err(e.into());
                }
            };
            write_run(&run_path, &output.record)?;
            let ckpt = run_path.with_extension("ckpt");
            write_checkpoint(&ckpt, &output.arch, &output.params)?;
            let m = &output.record.metrics;
            println!(
                "{} seed {}: top1 {:.2}%{}, {} steps; run file {}, checkpoint {}",
                cfg.name,
                seed,
                100.0 * m.top1,
                m.minority_mean
                    .map(|v| format!(", minority {:.2}%", 100.0 * v))
                    .unwrap_or_default(),
                output.record.steps,
                run_path.display(),
                ckpt.display()
            );
        }
        Command::Eval { checkpoint, data } => {
            let (arch, params) = read_checkpoint(&checkpoint)?;
            let ds = absgd::data::read_csv(&data, Some(arch.num_classes))?;
            if ds.dim() != arch.input_dim {
                bail!(Error::Domain(format!(
                    "data has {} features, checkpoint expects {}",
                    ds.dim(),
                    arch.input_dim
                )));
            }
            let m = evaluate(&params, &arch, &ds)?;
            println!("{}", serde_json::to_string_pretty(&m)?);
        }
        Command::Gradcheck {
            arch,
            loss,
            lambda,
            seed,
        } => {
            let case = GradCheckCase {
                arch: arch.parse::<ArchKind>()?,
                loss: loss.parse::<LossKind>()?,
                lambda: parse_lambda(&lambda)?,
                seed,
            };
            let r = check_case(&case)?;
            let pass = r.passes(DEFAULT_TOLERANCE);
            println!(
                "arch {} loss {} lambda {}: max relative error {:.3e} over {} coordinates ({} skipped at kinks): {}",
                case.arch,
                case.loss,
                case.lambda,
                r.max_rel_error,
                r.checked,
                r.skipped,
                if pass { "PASS" } else { "FAIL" }
            );
            if !pass {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Sweep {
            config_dir,
            seeds,
            jobs,
            out,
        } => {
            let configs = load_config_dir(&config_dir)?;
            std::fs::create_dir_all(&out).map_err(Error::from)?;
            let results = sweep(&configs, seeds.as_deref(), jobs.max(1))?;
            let mut records = Vec::new();
            let mut failed = 0;
            for r in &results {
                let name = &configs[r.config_index].name;
                let path = out.join(run_file_name(name, r.seed));
                match &r.outcome {
                    Ok(rec) => {
                        write_run(&path, rec)?;
                        records.push(rec.clone());
                    }
                    Err(f) => {
                        failed += 1;
                        eprintln!("run {name} seed {} failed: {}", r.seed, f.error);
                        write_failure(&path, f)?;
                    }
                }
            }
            print!("{}", compare_report(&records).to_text());
            if failed > 0 {
                eprintln!("{failed} of {} runs failed", results.len());
                return Ok(ExitCode::from(2));
            }
        }
        Command::Report { runs, csv } => {
            let mut records = Vec::new();
            for (path, file) in read_run_dir(&runs)? {
                match file {
                    RunFile::Completed(r) => records.push(r),
                    RunFile::Failed(f) => eprintln!("skipping failed run {}: {}", path.display(), f.error),
                }
            }
            if records.is_empty() {
                bail!(Error::Domain(format!("no completed runs in {}", runs.display())));
            }
            let rep = compare_report(&records);
            print!("{}", rep.to_text());
            if let Some(p) = csv {
                std::fs::write(&p, rep.to_csv()).map_err(Error::from)?;
            }
        }
        Command::PlotData {
            checkpoint,
            data,
            lambda,
            s,
            loss,
            nx,
            ny,
            margin,
            out,
        } => {
            let (arch, params) = read_checkpoint(&checkpoint)?;
            let ds = absgd::data::read_csv(&data, Some(arch.num_classes))?;
            let loss = LossFn::resolve(&loss.parse::<LossKind>()?.spec(), ds.class_counts(), 1)?;
            let grid = GridSpec::around(&ds, nx, ny, margin)?;
            let (g, p) = emit_plot_data(&params, &arch, &ds, &loss, parse_lambda(&lambda)?, s, &grid, &out)?;
            println!("wrote {} and {}", g.display(), p.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn load_config_dir(dir: &Path) -> anyhow::Result<Vec<ExperimentConfig>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(Error::from)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!(Error::Config(format!("no .json configs in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display())))
        .collect()
}
