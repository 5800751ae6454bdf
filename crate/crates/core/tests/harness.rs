use absgd::dro::grad_f_lambda;
use absgd::harness::*;
use absgd::losses::LossFn;
use absgd::math::norm_sq;
use absgd::models::{read_checkpoint, write_checkpoint};
use absgd::{Dataset, DenseMatrix, Error, Lambda, ModelArch, ParamVector};

fn toy(optimizer: OptimizerConfig) -> ExperimentConfig {
    ExperimentConfig {
        name: "toy".into(),
        data: DataSpec::Toy2d {
            counts: vec![120, 12],
            means: vec![[-1.0, 0.0], [1.5, 0.5]],
            stddev: 1.0,
            test_per_class: 40,
            data_seed: None,
        },
        arch: ArchSpec {
            hidden_dims: vec![6],
            init: Default::default(),
        },
        loss: Default::default(),
        optimizer,
        epochs: 4,
        batch_size: 16,
        lr_schedule: LrSchedule::Constant,
        seeds: vec![0, 1, 2],
        probe_every: 5,
        probe_subset: 64,
        output_dir: None,
    }
}

#[test]
fn one_epoch_gives_one_trace_row() {
    let mut c = toy(OptimizerConfig::absgd(0.1, Lambda::Finite(1.0)));
    c.epochs = 1;
    let r = run_experiment(&c, 3).unwrap();
    assert_eq!(r.trace.len(), 1);
    assert_eq!(r.steps, 9);
    c.epochs = 0;
    assert!(matches!(run_experiment(&c, 3), Err(Error::Config(_))));
}

#[test]
fn runs_are_deterministic() {
    for opt in [OptimizerConfig::absgd(0.1, Lambda::Finite(0.5)), OptimizerConfig::sgd(0.1)] {
        let c = toy(opt);
        let a = run_experiment(&c, 7).unwrap();
        let b = run_experiment(&c, 7).unwrap();
        assert!(a.same_result(&b));
        assert_eq!(a.trace.len(), c.epochs);
        let other = run_experiment(&c, 8).unwrap();
        assert!(!a.same_result(&other));
    }
}

#[test]
fn probes_match_offline_recomputation() {
    let c = toy(OptimizerConfig::absgd(0.1, Lambda::Finite(1.0)));
    let dir = tempfile::tempdir().unwrap();
    let mut seen = 0;
    run_experiment_with(&c, 1, &mut |ev| {
        let path = dir.path().join(format!("step{}.ckpt", ev.step));
        write_checkpoint(&path, ev.arch, ev.params)?;
        let (arch, params) = read_checkpoint(&path)?;
        let g = grad_f_lambda(&params, &arch, ev.probe_set, ev.loss, ev.lambda, ev.reg)?;
        assert!((norm_sq(&g) - ev.diagnostics.grad_norm_sq).abs() <= 1e-10);
        seen += 1;
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, 36 / 5);
}

#[test]
fn two_stage_trace_switches_lambda_and_freezes() {
    let mut opt = OptimizerConfig::absgd(0.1, Lambda::Infinite);
    opt.lambda = None;
    opt.lambda_stage2 = Some(1.0);
    opt.switch_epoch = Some(3);
    opt.freeze = vec![0];
    let c = toy(opt);
    let out = run_experiment_with(&c, 0, &mut |_| Ok(())).unwrap();
    let lambdas: Vec<Lambda> = out.record.trace.iter().map(|t| t.lambda).collect();
    assert_eq!(
        lambdas,
        vec![Lambda::Infinite, Lambda::Infinite, Lambda::Finite(1.0), Lambda::Finite(1.0)]
    );
    assert_eq!(out.record.trace[0].s, Some(1.0));
    assert_eq!(out.params.frozen_layers(), vec![0]);
}

#[test]
fn jsonl_round_trip() {
    let c = toy(OptimizerConfig::absgd(0.1, Lambda::Finite(1.0)));
    let r = run_experiment(&c, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(run_file_name(&r.name, r.seed));
    write_run(&path, &r).unwrap();
    assert_eq!(read_run(&path).unwrap(), RunFile::Completed(r.clone()));
    let text = std::fs::read_to_string(&path).unwrap();
    let epoch_lines = text.lines().filter(|l| l.contains("\"type\":\"epoch\"")).count();
    assert_eq!(epoch_lines, c.epochs);
    for key in ["train_loss", "test_top1", "lambda", "grad_norm_sq", "c0_hat", "c1_hat"] {
        assert!(text.contains(key));
    }
}

#[test]
fn sweep_order_and_parallel_invariance() {
    let a = toy(OptimizerConfig::absgd(0.1, Lambda::Finite(1.0)));
    let mut b = toy(OptimizerConfig::sgd(0.1));
    b.name = "sgd".into();
    let configs = vec![a.clone(), b];
    let seq = sweep(&configs, Some(&[5, 4]), 1).unwrap();
    let par = sweep(&configs, Some(&[5, 4]), 4).unwrap();
    let key: Vec<(usize, u64)> = seq.iter().map(|r| (r.config_index, r.seed)).collect();
    assert_eq!(key, vec![(0, 4), (0, 5), (1, 4), (1, 5)]);
    for (x, y) in seq.iter().zip(&par) {
        let (x, y) = (x.outcome.as_ref().unwrap(), y.outcome.as_ref().unwrap());
        assert!(x.same_result(y));
    }
    let three = sweep(&[a], None, 2).unwrap();
    let seeds: Vec<u64> = three.iter().map(|r| r.seed).collect();
    assert_eq!(seeds, vec![0, 1, 2]);
}

#[test]
fn sweep_records_failures_without_aborting() {
    let good = toy(OptimizerConfig::sgd(0.1));
    let mut bad = good.clone();
    bad.name = "missing".into();
    bad.data = DataSpec::Csv {
        train: "/nonexistent/train.csv".into(),
        test: "/nonexistent/test.csv".into(),
        num_classes: None,
    };
    let res = sweep(&[bad, good], Some(&[0]), 2).unwrap();
    assert!(res[0].outcome.is_err());
    assert!(res[1].outcome.is_ok());
}

fn record_with(name: &str, top1: f64, minority: Option<f64>) -> RunRecord {
    RunRecord {
        name: name.into(),
        config_hash: String::new(),
        seed: 0,
        optimizer: OptimizerKind::Sgd,
        steps: 0,
        metrics: Metrics {
            top1,
            per_class: vec![],
            majority_mean: top1,
            minority_mean: minority,
            confusion: vec![],
        },
        wall_time_secs: 0.0,
        trace: vec![],
        probes: vec![],
    }
}

#[test]
fn report_matches_brute_force() {
    let recs = vec![
        record_with("a", 0.70, Some(0.1)),
        record_with("b", 0.5, None),
        record_with("a", 0.72, Some(0.3)),
        record_with("a", 0.74, Some(0.2)),
    ];
    let rep = compare_report(&recs);
    assert_eq!(rep.rows.len(), 2);
    let a = &rep.rows[0];
    assert_eq!((a.method.as_str(), a.runs), ("a", 3));
    let vals = [70.0, 72.0, 74.0];
    let m = vals.iter().sum::<f64>() / 3.0;
    let s = (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 3.0).sqrt();
    assert!((a.top1.0 - m).abs() < 1e-12 && (a.top1.1 - s).abs() < 1e-12);
    assert!(rep.to_text().contains("72.00 (1.63)"));
    assert!(rep.to_text().contains("20.00 (8.16)"));
    assert_eq!(rep.rows[1].minority, None);
    assert_eq!(rep.warnings.len(), 1);
    assert!(rep.to_csv().starts_with("method,runs,top1_mean"));
    assert!(rep.to_csv().contains("b,1,50.00,0.00,,"));
}

#[test]
fn plot_data_files() {
    let arch = ModelArch::linear(2, 2);
    let params = ParamVector::from_values(&arch, vec![1.0, 0.0, -1.0, 0.0, 0.0, 0.0]).unwrap();
    let ds = Dataset::new(
        DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap(),
        vec![0, 1],
        2,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let grid = GridSpec {
        x_min: -1.0,
        x_max: 1.0,
        y_min: -1.0,
        y_max: 1.0,
        nx: 3,
        ny: 3,
    };
    let (g, p) = emit_plot_data(&params, &arch, &ds, &LossFn::ce(), Lambda::Finite(1.0), None, &grid, dir.path()).unwrap();
    let grid_rows = std::fs::read_to_string(g).unwrap();
    assert_eq!(grid_rows.lines().count(), 1 + 9);
    assert!(grid_rows.starts_with("x,y,pred\n"));
    // symmetric problem: both points have the same loss, hence weight 1
    let pts = std::fs::read_to_string(p).unwrap();
    let w: Vec<f64> = pts.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(w.len(), 2);
    assert!((w[0] - w[1]).abs() < 1e-15 && (w[0] - 1.0).abs() < 1e-12);

    let ds3 = Dataset::new(DenseMatrix::from_rows(&[vec![0.0; 3]]).unwrap(), vec![0], 2).unwrap();
    let arch3 = ModelArch::linear(3, 2);
    let r = emit_plot_data(&ParamVector::zeros(&arch3), &arch3, &ds3, &LossFn::ce(), Lambda::Finite(1.0), None, &grid, dir.path());
    assert!(matches!(r, Err(Error::Domain(_))));
}

#[test]
fn minority_points_carry_the_largest_weights() {
    // a majority-fit model: train plain SGD on the imbalanced toy
    let mut c = toy(OptimizerConfig::sgd(0.1));
    c.arch.hidden_dims.clear();
    c.probe_every = 0;
    let out = run_experiment_with(&c, 0, &mut |_| Ok(())).unwrap();
    let data = build_data(&c, 0).unwrap();
    let w = sample_weights(&out.params, &out.arch, &data.train, &LossFn::ce(), Lambda::Finite(1.0), None).unwrap();
    let labels = data.train.labels();
    let mean_of = |k: usize| {
        let v: Vec<f64> = (0..w.len()).filter(|&i| labels[i] == k).map(|i| w[i]).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(mean_of(1) > mean_of(0));
    let top = (0..w.len()).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap();
    assert_eq!(labels[top], 1);
}

#[test]
fn config_file_round_trip() {
    let c = toy(OptimizerConfig::absgd(0.1, Lambda::Infinite));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(&path, c.to_json()).unwrap();
    assert_eq!(ExperimentConfig::load(&path).unwrap(), c);
    std::fs::write(&path, c.to_json().replacen("\"epochs\"", "\"epochz\"", 1)).unwrap();
    assert!(matches!(ExperimentConfig::load(&path), Err(Error::Parse { .. })));
}
