//! Adam on the batch L2 loss, resumable checkpoints and held-out evaluation.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{assemble_deeponet, assemble_fno, DataError, NormalizedDataset};
use crate::diffkernel::{AdamState, Graph, KernelError, Real, Tensor, Var};
use crate::metrics::{LossFigure, LossSource, MetricsError, MetricsReport};
use crate::models::{Checkpoint, InputLayout, ModelBatch, ModelError, NeuralOperator, ParamSet};
use crate::ErrorClass;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}; parameter norms: {}", fmt_norms(.param_norms))]
    NonFinite {
        epoch: usize,
        batch: usize,
        loss: f64,
        param_norms: Vec<(String, f64)>,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn fmt_norms(norms: &[(String, f64)]) -> String {
    norms
        .iter()
        .map(|(n, v)| format!("{n}={v:.3e}"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl From<KernelError> for TrainError {
    fn from(e: KernelError) -> Self {
        Self::Model(e.into())
    }
}

impl TrainError {
    pub fn class(&self) -> ErrorClass {
        match self {
            Self::Config(_) => ErrorClass::Config,
            Self::Input(_) => ErrorClass::Input,
            Self::Model(e) => e.class(),
            Self::Data(e) => e.class(),
            Self::Metrics(e) => e.class(),
            Self::NonFinite { .. } => ErrorClass::Numerical,
            Self::Io { .. } => ErrorClass::Io,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// `sqrt(sum((pred - target)^2))` over every element of the batch.
pub fn l2_loss<T: Real>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var, KernelError> {
    let d = g.sub(pred, target)?;
    let s = g.sum_squares(d)?;
    g.sqrt(s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Samples per Adam step; `None` is full batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
    /// Stop after this many epochs without validation improvement.
    pub patience: Option<usize>,
    /// Write a resumable state every this many epochs.
    pub checkpoint_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            lr: 1e-3,
            batch_size: None,
            seed: 0,
            patience: None,
            checkpoint_every: None,
        }
    }
}

impl TrainConfig {
    /// Defaults with the epoch budget of the given model kind.
    pub fn for_model(kind: &str) -> Self {
        Self {
            epochs: if kind == "deeponet" { 6000 } else { 300 },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.lr
            )));
        }
        if self.batch_size == Some(0) || self.patience == Some(0) || self.checkpoint_every == Some(0) {
            return Err(TrainError::Config(
                "batch_size, patience and checkpoint_every must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Hex SHA-256 of the compact JSON encoding.
pub fn config_hash(v: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(v).expect("JSON value serializes")))
}

/// Model-ready inputs and targets in working precision.
#[derive(Clone, Debug)]
pub struct TrainData<T: Real> {
    pub inputs: Tensor<T>,
    pub trunk: Option<Tensor<T>>,
    pub targets: Tensor<T>,
}

impl<T: Real> TrainData<T> {
    pub fn assemble(ds: &NormalizedDataset, layout: InputLayout) -> Result<Self, TrainError> {
        if ds.is_empty() {
            return Err(TrainError::Input("empty dataset".into()));
        }
        Ok(match layout {
            InputLayout::Channels => {
                let t = assemble_fno(ds)?;
                Self {
                    inputs: t.inputs.cast(),
                    trunk: None,
                    targets: t.targets.cast(),
                }
            }
            InputLayout::BranchTrunk => {
                let t = assemble_deeponet(ds)?;
                Self {
                    inputs: t.branch.cast(),
                    trunk: Some(t.trunk.cast()),
                    targets: t.targets.cast(),
                }
            }
        })
    }

    pub fn len(&self) -> usize {
        self.targets.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> ModelBatch<T> {
        ModelBatch {
            inputs: self.inputs.clone(),
            trunk: self.trunk.clone(),
        }
    }

    pub fn batch(&self, rows: &[usize]) -> Result<(ModelBatch<T>, Tensor<T>), TrainError> {
        let batch = ModelBatch {
            inputs: self.inputs.select_leading(rows)?,
            trunk: self.trunk.clone(),
        };
        Ok((batch, self.targets.select_leading(rows)?))
    }
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T: Real> {
    /// Completed epochs.
    pub epoch: usize,
    pub params: ParamSet<T>,
    pub adam: AdamState<T>,
    pub losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    /// Epoch (1-based) and validation loss of the best parameters so far.
    pub best_epoch: usize,
    pub best_val: f64,
    pub best: ParamSet<T>,
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    model: String,
    config: serde_json::Value,
    epoch: usize,
    adam_step: u64,
    lr: f64,
    losses: Vec<f64>,
    val_losses: Vec<f64>,
    best_epoch: usize,
    /// `None` until a validation loss exists.
    best_val: Option<f64>,
}

impl<T: Real> TrainState<T> {
    pub fn fresh(params: ParamSet<T>, lr: f64) -> Self {
        Self {
            epoch: 0,
            adam: AdamState::new(params.tensors(), lr),
            best: params.clone(),
            params,
            losses: Vec::new(),
            val_losses: Vec::new(),
            best_epoch: 0,
            best_val: f64::INFINITY,
        }
    }

    /// Fresh state with parameters drawn from `seed`.
    pub fn init(model: &dyn NeuralOperator<T>, cfg: &TrainConfig) -> Self {
        let params = model.init_params(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
        Self::fresh(params, cfg.lr)
    }

    pub fn to_checkpoint(&self, model: &dyn NeuralOperator<T>) -> Checkpoint<T> {
        let meta = StateMeta {
            model: model.kind().into(),
            config: model.config(),
            epoch: self.epoch,
            adam_step: self.adam.step,
            lr: self.adam.lr,
            losses: self.losses.clone(),
            val_losses: self.val_losses.clone(),
            best_epoch: self.best_epoch,
            best_val: self.best_val.is_finite().then_some(self.best_val),
        };
        let mut ckpt = Checkpoint::new(
            serde_json::to_value(meta).expect("state serializes"),
            self.params.clone(),
        );
        for (i, name) in self.params.names().iter().enumerate() {
            ckpt.aux.insert(format!("adam.m.{name}"), self.adam.m[i].clone());
            ckpt.aux.insert(format!("adam.v.{name}"), self.adam.v[i].clone());
            ckpt.aux.insert(format!("best.{name}"), self.best.tensors()[i].clone());
        }
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint<T>) -> Result<Self, TrainError> {
        let meta: StateMeta = serde_json::from_value(ckpt.meta.clone())
            .map_err(|e| TrainError::Input(format!("checkpoint carries no training state: {e}")))?;
        let mut adam = AdamState::new(ckpt.params.tensors(), meta.lr);
        adam.step = meta.adam_step;
        let mut best = ckpt.params.clone();
        for (i, name) in ckpt.params.names().iter().enumerate() {
            let aux = |kind: &str| {
                ckpt.aux
                    .get(&format!("{kind}.{name}"))
                    .cloned()
                    .ok_or_else(|| TrainError::Input(format!("checkpoint lacks {kind}.{name}")))
            };
            adam.m[i] = aux("adam.m")?;
            adam.v[i] = aux("adam.v")?;
            best.tensors_mut()[i] = aux("best")?;
        }
        Ok(Self {
            epoch: meta.epoch,
            params: ckpt.params.clone(),
            adam,
            losses: meta.losses,
            val_losses: meta.val_losses,
            best_epoch: meta.best_epoch,
            best_val: meta.best_val.unwrap_or(f64::INFINITY),
            best,
        })
    }

    fn param_norms(&self) -> Vec<(String, f64)> {
        self.params.iter().map(|(n, t)| (n.to_string(), t.norm())).collect()
    }
}

/// Where `fit` writes `state.ckpt` (resumable) and `best.ckpt`.
#[derive(Clone, Debug)]
pub struct CheckpointSink {
    pub dir: PathBuf,
    /// Merged into the metadata of `best.ckpt`.
    pub meta: serde_json::Value,
}

impl CheckpointSink {
    pub fn state_path(&self) -> PathBuf {
        self.dir.join("state.ckpt")
    }

    pub fn best_path(&self) -> PathBuf {
        self.dir.join("best.ckpt")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub model: String,
    pub seed: u64,
    pub config_hash: String,
    /// Mean batch loss per epoch.
    pub losses: Vec<f64>,
    /// Full validation-set loss per epoch; empty without a validation split.
    pub val_losses: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    /// Mean per-sample L2 on the test split, filled in after evaluation.
    pub test_l2: Option<f64>,
    pub wall_seconds: f64,
    pub checkpoint: Option<String>,
}

impl TrainReport {
    pub fn write_json(&self, path: &Path) -> Result<(), TrainError> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text).map_err(io_err(path))
    }

    /// `epoch,loss` with 1-based epochs.
    pub fn write_loss_csv(&self, path: &Path) -> Result<(), TrainError> {
        let mut text = String::from("epoch,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            text.push_str(&format!("{},{l:e}\n", i + 1));
        }
        std::fs::write(path, text).map_err(io_err(path))
    }
}

pub struct FitOutcome<T: Real> {
    pub report: TrainReport,
    pub state: TrainState<T>,
}

impl<T: Real> FitOutcome<T> {
    /// Lowest-validation-loss parameters, or the final ones without validation.
    pub fn best_params(&self) -> &ParamSet<T> {
        if self.state.val_losses.is_empty() {
            &self.state.params
        } else {
            &self.state.best
        }
    }
}

fn batch_loss<T: Real>(
    model: &dyn NeuralOperator<T>,
    params: &ParamSet<T>,
    batch: &ModelBatch<T>,
    targets: &Tensor<T>,
    trainable: bool,
) -> Result<(f64, Option<Vec<Tensor<T>>>), TrainError> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g, trainable);
    let pred = model.forward(&mut g, &bound, batch)?;
    let tgt = g.constant(targets);
    let loss = l2_loss(&mut g, pred, tgt)?;
    let value = g.data(loss)?[0].as_f64();
    if !trainable || !value.is_finite() {
        return Ok((value, None));
    }
    let mut grads = g.backward(loss)?;
    let grads = bound
        .vars()
        .into_iter()
        .zip(params.tensors())
        .map(|(v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    Ok((value, Some(grads)))
}

/// Row order of one epoch; shuffled from `(seed, epoch)` so resumed runs
/// see the same batches.
fn epoch_order(n: usize, seed: u64, epoch: usize, batch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if batch < n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
    }
    order
}

/// Trains from `state` until `cfg.epochs` epochs are complete.
pub fn fit<T: Real>(
    model: &dyn NeuralOperator<T>,
    mut state: TrainState<T>,
    train: &TrainData<T>,
    val: Option<&TrainData<T>>,
    cfg: &TrainConfig,
    sink: Option<&CheckpointSink>,
) -> Result<FitOutcome<T>, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::Input("empty training split".into()));
    }
    if state.params.is_empty() {
        return Err(TrainError::Input("no parameters to train".into()));
    }
    if let Some(s) = sink {
        std::fs::create_dir_all(&s.dir).map_err(io_err(&s.dir))?;
    }
    let hash = config_hash(&serde_json::json!({
        "model": model.kind(),
        "config": model.config(),
        "train": cfg,
    }));
    let start = Instant::now();
    let n = train.len();
    let bs = cfg.batch_size.unwrap_or(n).min(n);
    state.adam.lr = cfg.lr;
    let mut stopped_early = false;
    while state.epoch < cfg.epochs {
        let epoch = state.epoch;
        let order = epoch_order(n, cfg.seed, epoch, bs);
        let mut total = 0.0;
        let mut batches = 0;
        for (bi, rows) in order.chunks(bs).enumerate() {
            let (batch, targets) = if bs == n {
                (train.all(), train.targets.clone())
            } else {
                train.batch(rows)?
            };
            let (loss, grads) = batch_loss(model, &state.params, &batch, &targets, true)?;
            let grads = match grads {
                Some(g) if loss.is_finite() => g,
                _ => {
                    return Err(TrainError::NonFinite {
                        epoch: epoch + 1,
                        batch: bi,
                        loss,
                        param_norms: state.param_norms(),
                    })
                }
            };
            state.adam.step(state.params.tensors_mut(), &grads)?;
            total += loss;
            batches += 1;
        }
        state.losses.push(total / batches as f64);
        state.epoch += 1;
        if let Some(v) = val {
            let (loss, _) = batch_loss(model, &state.params, &v.all(), &v.targets, false)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch: state.epoch,
                    batch: 0,
                    loss,
                    param_norms: state.param_norms(),
                });
            }
            state.val_losses.push(loss);
            if loss < state.best_val {
                state.best_val = loss;
                state.best_epoch = state.epoch;
                state.best = state.params.clone();
            }
        } else {
            state.best_epoch = state.epoch;
        }
        if let (Some(s), Some(every)) = (sink, cfg.checkpoint_every) {
            if state.epoch.is_multiple_of(every) {
                state.to_checkpoint(model).save(&s.state_path())?;
            }
        }
        if let (Some(p), Some(_)) = (cfg.patience, val) {
            if state.epoch - state.best_epoch >= p {
                stopped_early = true;
                break;
            }
        }
    }
    let wall_seconds = start.elapsed().as_secs_f64();
    let mut report = TrainReport {
        model: model.kind().into(),
        seed: cfg.seed,
        config_hash: hash,
        losses: state.losses.clone(),
        val_losses: state.val_losses.clone(),
        best_epoch: state.best_epoch,
        stopped_early,
        test_l2: None,
        wall_seconds,
        checkpoint: None,
    };
    let outcome_state = state;
    if let Some(s) = sink {
        outcome_state.to_checkpoint(model).save(&s.state_path())?;
        let mut meta = serde_json::json!({
            "model": model.kind(),
            "config": model.config(),
            "train": cfg,
            "epoch": report.best_epoch,
        });
        if let (Some(obj), Some(extra)) = (meta.as_object_mut(), s.meta.as_object()) {
            obj.extend(extra.clone());
        }
        let best = if outcome_state.val_losses.is_empty() {
            &outcome_state.params
        } else {
            &outcome_state.best
        };
        let path = s.best_path();
        Checkpoint::new(meta, best.clone()).save(&path)?;
        report.checkpoint = Some(path.display().to_string());
    }
    Ok(FitOutcome {
        report,
        state: outcome_state,
    })
}

/// Per-sample L2 errors and predictions of one dataset.
#[derive(Clone, Debug)]
pub struct Evaluation<T: Real> {
    pub per_sample_l2: Vec<f64>,
    /// `[N, L]` in normalized units.
    pub predictions: Tensor<T>,
}

impl<T: Real> Evaluation<T> {
    pub fn mean_l2(&self) -> f64 {
        self.per_sample_l2.iter().sum::<f64>() / self.per_sample_l2.len() as f64
    }
}

const EVAL_CHUNK: usize = 16;

/// Parameters are frozen; chunks of samples run in parallel.
pub fn evaluate<T: Real>(
    model: &dyn NeuralOperator<T>,
    params: &ParamSet<T>,
    data: &TrainData<T>,
) -> Result<Evaluation<T>, TrainError> {
    if data.is_empty() {
        return Err(TrainError::Input("nothing to evaluate: empty split".into()));
    }
    let rows: Vec<usize> = (0..data.len()).collect();
    let parts = rows
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| -> Result<Tensor<T>, TrainError> {
            let (batch, _) = data.batch(chunk)?;
            Ok(model.predict(params, &batch)?)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let predictions = Tensor::concat_leading(&parts)?;
    if predictions.shape() != data.targets.shape() {
        return Err(TrainError::Input(format!(
            "model output {:?} does not match targets {:?}",
            predictions.shape(),
            data.targets.shape()
        )));
    }
    let len = predictions.shape()[1];
    let per_sample_l2 = predictions
        .data()
        .chunks(len)
        .zip(data.targets.data().chunks(len))
        .map(|(p, t)| {
            p.iter()
                .zip(t)
                .map(|(&a, &b)| (a - b).as_f64().powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    Ok(Evaluation {
        per_sample_l2,
        predictions,
    })
}

/// Predicted H per sample in physical units.
pub fn denormalized_predictions<T: Real>(
    ds: &NormalizedDataset,
    predictions: &Tensor<T>,
) -> Result<Vec<Vec<f64>>, TrainError> {
    let shape = predictions.shape();
    let len = ds.sample_len()?;
    if shape != [ds.len(), len] {
        return Err(TrainError::Input(format!(
            "predictions {shape:?} do not match a dataset of {} samples x {len}",
            ds.len()
        )));
    }
    Ok(predictions
        .data()
        .chunks(len)
        .map(|row| {
            ds.scale
                .denormalize_h(&row.iter().map(|v| v.as_f64()).collect::<Vec<_>>())
        })
        .collect())
}

/// Core-loss errors of predictions `[N, L]` (normalized units) against `ds`.
pub fn score<T: Real>(
    ds: &NormalizedDataset,
    predictions: &Tensor<T>,
    baseline_mre: Option<f64>,
) -> Result<MetricsReport, TrainError> {
    let h_pred = denormalized_predictions(ds, predictions)?;
    let mut reference = Vec::with_capacity(ds.len());
    let mut predicted = Vec::with_capacity(ds.len());
    for (i, hp) in h_pred.iter().enumerate() {
        let (b, h) = ds.raw(i);
        let prov = &ds.samples[i].prov;
        let mut r = LossFigure::from_loop(&b, &h, prov.freq, LossSource::Reference)?;
        let mut p = LossFigure::from_loop(&b, hp, prov.freq, LossSource::Predicted)?;
        r.b_peak = prov.b_peak;
        p.b_peak = prov.b_peak;
        reference.push(r);
        predicted.push(p);
    }
    Ok(MetricsReport::build(&reference, &predicted, baseline_mre)?)
}
