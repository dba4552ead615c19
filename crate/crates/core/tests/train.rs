mod common;

use common::random_tensor;
use hystop::data::{normalize, prepare, AugmentConfig, NormScale, NormalizedDataset, SplitSpec};
use hystop::diffkernel::{Graph, Tensor};
use hystop::material::{generate_corpus, MaterialParams, GRID_FREQS, GRID_PEAKS};
use hystop::models::{Checkpoint, InputLayout, ModelRegistry, NeuralOperator, ParamSet};
use hystop::train::{
    config_hash, evaluate, fit, l2_loss, CheckpointSink, TrainConfig, TrainData, TrainError, TrainState,
};
use hystop::ErrorClass;

fn tiny_corpus(n_samples: usize) -> NormalizedDataset {
    let loops = generate_corpus(
        &[50.0, 200.0, 400.0],
        &[1.0, 1.5],
        &MaterialParams::default(),
        n_samples,
    )
    .unwrap();
    normalize(&loops, &NormScale::fit_all(&loops).unwrap()).unwrap()
}

fn small_fno() -> Box<dyn NeuralOperator<f64>> {
    ModelRegistry::builtin()
        .create("fno", &serde_json::json!({"lift_width": 8, "n_layers": 2, "modes": 6}))
        .unwrap()
}

fn cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn l2_loss_hand_cases() {
    let mut g = Graph::<f64>::new();
    let p = g.constant(&Tensor::from_f64(&[1, 2], &[1.0, 2.0]).unwrap());
    let same = l2_loss(&mut g, p, p).unwrap();
    assert_eq!(g.data(same).unwrap(), &[0.0]);
    let t = g.constant(&Tensor::from_f64(&[1, 2], &[-2.0, 6.0]).unwrap());
    let l = l2_loss(&mut g, p, t).unwrap();
    assert_eq!(g.data(l).unwrap(), &[5.0]);
    let bad = g.constant(&Tensor::zeros(&[2, 1]));
    assert!(l2_loss(&mut g, p, bad).is_err());
}

#[test]
fn l2_loss_gradient() {
    let ins = [random_tensor(&[3, 7], 1), random_tensor(&[3, 7], 2)];
    let err = common::grad_check(&ins, |g, v| l2_loss(g, v[0], v[1]).unwrap(), 1e-6, 100);
    assert!(err < 1e-6, "rel err {err:e}");
}

#[test]
fn config_validation_and_defaults() {
    assert_eq!(TrainConfig::for_model("deeponet").epochs, 6000);
    assert_eq!(TrainConfig::for_model("fno").epochs, 300);
    assert_eq!(TrainConfig::default().lr, 1e-3);
    assert!(cfg(0).validate().is_err());
    let neg = TrainConfig { lr: -1.0, ..cfg(1) };
    assert_eq!(neg.validate().unwrap_err().class(), ErrorClass::Config);
    assert!(TrainConfig {
        batch_size: Some(0),
        ..cfg(1)
    }
    .validate()
    .is_err());
    assert!(TrainConfig { lr: 0.0, ..cfg(1) }.validate().is_ok());
}

#[test]
fn zero_learning_rate_keeps_loss_constant() {
    let ds = tiny_corpus(32);
    let model = small_fno();
    let data = TrainData::assemble(&ds, InputLayout::Channels).unwrap();
    let c = TrainConfig { lr: 0.0, ..cfg(5) };
    let out = fit(
        model.as_ref(),
        TrainState::init(model.as_ref(), &c),
        &data,
        None,
        &c,
        None,
    )
    .unwrap();
    assert_eq!(out.report.losses.len(), 5);
    assert!(out.report.losses.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn same_seed_same_run() {
    let ds = tiny_corpus(32);
    let model = small_fno();
    let data = TrainData::assemble(&ds, InputLayout::Channels).unwrap();
    let c = TrainConfig {
        batch_size: Some(4),
        ..cfg(4)
    };
    let a = fit(
        model.as_ref(),
        TrainState::init(model.as_ref(), &c),
        &data,
        None,
        &c,
        None,
    )
    .unwrap();
    let b = fit(
        model.as_ref(),
        TrainState::init(model.as_ref(), &c),
        &data,
        None,
        &c,
        None,
    )
    .unwrap();
    assert_eq!(a.report.losses, b.report.losses);
    assert_eq!(a.state.params, b.state.params);
    assert_eq!(a.report.config_hash, b.report.config_hash);
    let other = TrainConfig { seed: 4, ..c.clone() };
    let d = fit(
        model.as_ref(),
        TrainState::init(model.as_ref(), &other),
        &data,
        None,
        &other,
        None,
    )
    .unwrap();
    assert_ne!(a.report.losses, d.report.losses);
    assert_ne!(a.report.config_hash, d.report.config_hash);
}

#[test]
fn resume_from_checkpoint_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let ds = tiny_corpus(32);
    let model = small_fno();
    let data = TrainData::assemble(&ds, InputLayout::Channels).unwrap();
    let full = TrainConfig {
        batch_size: Some(4),
        checkpoint_every: Some(2),
        ..cfg(6)
    };
    let straight = fit(
        model.as_ref(),
        TrainState::init(model.as_ref(), &full),
        &data,
        None,
        &full,
        None,
    )
    .unwrap();

    let sink = CheckpointSink {
        dir: dir.path().to_path_buf(),
        meta: serde_json::json!({}),
    };
    let first = TrainConfig {
        epochs: 3,
        ..full.clone()
    };
    fit(
        model.as_ref(),
        TrainState::init(model.as_ref(), &first),
        &data,
        None,
        &first,
        Some(&sink),
    )
    .unwrap();
    let ckpt = Checkpoint::<f64>::load(&sink.state_path()).unwrap();
    let state = TrainState::from_checkpoint(&ckpt).unwrap();
    assert_eq!(state.epoch, 3);
    let resumed = fit(model.as_ref(), state, &data, None, &full, None).unwrap();
    assert_eq!(resumed.report.losses, straight.report.losses);
    assert_eq!(resumed.state.params, straight.state.params);
    assert_eq!(resumed.state.adam, straight.state.adam);
}

#[test]
fn small_learning_rate_decreases_loss_monotonically() {
    let ds = tiny_corpus(32);
    let model = small_fno();
    let data = TrainData::assemble(&ds, InputLayout::Channels).unwrap();
    let c = TrainConfig { lr: 1e-5, ..cfg(11) };
    let out = fit(
        model.as_ref(),
        TrainState::init(model.as_ref(), &c),
        &data,
        None,
        &c,
        None,
    )
    .unwrap();
    let steps = out.report.losses.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(steps >= 9, "{:?}", out.report.losses);
}

#[test]
fn fno_halves_training_loss_on_corpus() {
    let loops = generate_corpus(&GRID_FREQS, &GRID_PEAKS, &MaterialParams::default(), 500).unwrap();
    let prep = prepare(
        &loops,
        "none",
        &AugmentConfig::default(),
        &SplitSpec::train_test(9.0, 1.0, 1),
        1,
    )
    .unwrap();
    let reg = ModelRegistry::<f32>::builtin();
    let model = reg.create("fno", &serde_json::Value::Null).unwrap();
    let data = TrainData::assemble(&prep.dataset.subset(&prep.split.train), model.layout()).unwrap();
    let c = TrainConfig {
        seed: 1,
        ..TrainConfig::default()
    };
    let out = fit(
        model.as_ref(),
        TrainState::init(model.as_ref(), &c),
        &data,
        None,
        &c,
        None,
    )
    .unwrap();
    let l = &out.report.losses;
    assert_eq!(l.len(), 300);
    assert!(l[299] < 0.5 * l[0], "{} -> {}", l[0], l[299]);
}

#[test]
fn zero_model_error_is_target_norm() {
    let ds = tiny_corpus(32);
    let model = small_fno();
    let data = TrainData::assemble(&ds, InputLayout::Channels).unwrap();
    let params: ParamSet<f64> = TrainState::init(model.as_ref(), &cfg(1)).params.zeros_like();
    let ev = evaluate(model.as_ref(), &params, &data).unwrap();
    for (i, s) in ds.samples.iter().enumerate() {
        let norm = s.h.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((ev.per_sample_l2[i] - norm).abs() <= 1e-12 * norm);
    }
}

#[test]
fn single_sample_evaluation_matches_full_batch_row() {
    let ds = tiny_corpus(64);
    let reg = ModelRegistry::<f64>::builtin();
    for (name, cfg_json) in [
        ("fno", serde_json::json!({"lift_width": 8, "modes": 6})),
        (
            "deeponet",
            serde_json::json!({"branch_in": 65, "depth": 2, "hidden": 12, "p": 9}),
        ),
    ] {
        let model = reg.create(name, &cfg_json).unwrap();
        let params = TrainState::init(model.as_ref(), &cfg(1)).params;
        let data = TrainData::assemble(&ds, model.layout()).unwrap();
        let full = evaluate(model.as_ref(), &params, &data).unwrap();
        let one = TrainData::assemble(&ds.subset(&[4]), model.layout()).unwrap();
        let single = evaluate(model.as_ref(), &params, &one).unwrap();
        assert_eq!(single.per_sample_l2[0], full.per_sample_l2[4]);
        assert_eq!(single.predictions.data(), &full.predictions.data()[4 * 64..5 * 64]);
    }
}

#[test]
fn evaluation_on_training_data_is_bounded_by_batch_loss() {
    let ds = tiny_corpus(32);
    let model = small_fno();
    let data = TrainData::assemble(&ds, InputLayout::Channels).unwrap();
    let c = cfg(20);
    let out = fit(
        model.as_ref(),
        TrainState::init(model.as_ref(), &c),
        &data,
        None,
        &c,
        None,
    )
    .unwrap();
    let ev = evaluate(model.as_ref(), &out.state.params, &data).unwrap();
    // mean_i ||e_i|| <= sqrt(sum_i ||e_i||^2 / N), the batch loss over sqrt(N).
    let batch = ev.per_sample_l2.iter().map(|v| v * v).sum::<f64>().sqrt();
    let n = ds.len() as f64;
    assert!(ev.mean_l2() <= batch / n.sqrt() * (1.0 + 1e-12));
    // The recorded loss of the last epoch was taken one Adam step earlier.
    assert!(batch < out.report.losses[0]);
}

#[test]
fn non_finite_loss_aborts_with_diagnostics() {
    let ds = tiny_corpus(32);
    let model = small_fno();
    let data = TrainData::assemble(&ds, InputLayout::Channels).unwrap();
    let mut state = TrainState::init(model.as_ref(), &cfg(1));
    state.params.get_mut("project.b").unwrap().data_mut()[0] = f64::NAN;
    let err = fit(model.as_ref(), state, &data, None, &cfg(3), None).err().unwrap();
    match &err {
        TrainError::NonFinite {
            epoch,
            batch,
            param_norms,
            ..
        } => {
            assert_eq!((*epoch, *batch), (1, 0));
            assert!(param_norms.iter().any(|(n, v)| n == "project.b" && v.is_nan()));
        }
        other => panic!("unexpected {other}"),
    }
    assert_eq!(err.class(), ErrorClass::Numerical);
    assert!(err.to_string().contains("lift.w="));
}

#[test]
fn early_stopping_and_best_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ds = tiny_corpus(32);
    let model = small_fno();
    let train = TrainData::assemble(&ds.subset(&[0, 1, 2, 3]), InputLayout::Channels).unwrap();
    let val = TrainData::assemble(&ds.subset(&[4, 5]), InputLayout::Channels).unwrap();
    let sink = CheckpointSink {
        dir: dir.path().join("run"),
        meta: serde_json::json!({"note": "kept"}),
    };
    let c = TrainConfig {
        lr: 0.0,
        patience: Some(2),
        ..cfg(50)
    };
    let out = fit(
        model.as_ref(),
        TrainState::init(model.as_ref(), &c),
        &train,
        Some(&val),
        &c,
        Some(&sink),
    )
    .unwrap();
    assert!(out.report.stopped_early);
    assert_eq!(out.report.best_epoch, 1);
    assert_eq!(out.report.losses.len(), 3);
    assert_eq!(out.report.val_losses.len(), 3);
    let best = Checkpoint::<f64>::load(&sink.best_path()).unwrap();
    assert_eq!(&best.params, out.best_params());
    assert_eq!(best.meta["note"], "kept");
    assert_eq!(best.meta["model"], "fno");
    assert_eq!(
        out.report.checkpoint.as_deref(),
        Some(sink.best_path().to_str().unwrap())
    );
}

#[test]
fn validation_selects_lowest_loss_parameters() {
    let ds = tiny_corpus(32);
    let model = small_fno();
    let train = TrainData::assemble(&ds.subset(&[0, 1, 2, 3]), InputLayout::Channels).unwrap();
    let val = TrainData::assemble(&ds.subset(&[4, 5]), InputLayout::Channels).unwrap();
    let c = TrainConfig { lr: 0.05, ..cfg(15) };
    let out = fit(
        model.as_ref(),
        TrainState::init(model.as_ref(), &c),
        &train,
        Some(&val),
        &c,
        None,
    )
    .unwrap();
    let v = &out.report.val_losses;
    let (best_i, best_v) = v
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &x)| if x < acc.1 { (i, x) } else { acc });
    assert_eq!(out.report.best_epoch, best_i + 1);
    let ev = evaluate(model.as_ref(), out.best_params(), &val).unwrap();
    let loss = ev.per_sample_l2.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!((loss - best_v).abs() <= 1e-12 * best_v);
}

#[test]
fn report_files() {
    let dir = tempfile::tempdir().unwrap();
    let ds = tiny_corpus(32);
    let model = small_fno();
    let data = TrainData::assemble(&ds, InputLayout::Channels).unwrap();
    let out = fit(
        model.as_ref(),
        TrainState::init(model.as_ref(), &cfg(3)),
        &data,
        None,
        &cfg(3),
        None,
    )
    .unwrap();
    let json = dir.path().join("report.json");
    let csv = dir.path().join("loss.csv");
    out.report.write_json(&json).unwrap();
    out.report.write_loss_csv(&csv).unwrap();
    let back: hystop::train::TrainReport = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(back, out.report);
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,loss");
    assert_eq!(lines.len(), 4);
    let (e, l) = lines[3].split_once(',').unwrap();
    assert_eq!(e, "3");
    assert_eq!(l.parse::<f64>().unwrap(), out.report.losses[2]);
    assert_eq!(config_hash(&serde_json::json!({"a": 1})).len(), 64);
}

#[test]
fn mismatched_dataset_is_an_input_error() {
    let ds = tiny_corpus(32);
    let reg = ModelRegistry::<f64>::builtin();
    let model = reg
        .create("deeponet", &serde_json::json!({"depth": 1, "hidden": 4, "p": 3}))
        .unwrap();
    let params = TrainState::init(model.as_ref(), &cfg(1)).params;
    let data = TrainData::assemble(&ds, model.layout()).unwrap();
    let err = evaluate(model.as_ref(), &params, &data).unwrap_err();
    assert_eq!(err.class(), ErrorClass::Input);
    let empty = ds.subset(&[]);
    assert!(TrainData::<f64>::assemble(&empty, InputLayout::Channels).is_err());
}
