//! FNO, U-FNO and DeepONet operators behind one trait, selected by name.

mod checkpoint;
mod deeponet;
mod fno;
mod unet;

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::diffkernel::{Graph, KernelError, Real, Tensor, Var};
use crate::ErrorClass;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use deeponet::{DeepOnet, DeepOnetConfig};
pub use fno::{fno_layer, spectral_conv, Fno, FnoConfig};
pub use unet::{ufno_layer, unet_forward, Ufno, UfnoConfig, UnetPrefix};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("unknown model {0:?} (known: {1})")]
    UnknownModel(String, String),
    #[error("missing parameter {0:?}")]
    MissingParam(String),
    #[error("input does not match the model: {0}")]
    Input(String),
    #[error(transparent)]
    Kernel(KernelError),
    #[error("{path}: {detail}")]
    Checkpoint { path: String, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<KernelError> for ModelError {
    fn from(e: KernelError) -> Self {
        match e {
            KernelError::ModeOverflow { .. } => ModelError::Config(e.to_string()),
            other => ModelError::Kernel(other),
        }
    }
}

impl ModelError {
    pub fn class(&self) -> ErrorClass {
        match self {
            Self::Config(_) | Self::UnknownModel(..) => ErrorClass::Config,
            Self::MissingParam(_) | Self::Input(_) | Self::Kernel(_) | Self::Checkpoint { .. } => ErrorClass::Input,
            Self::Io { .. } => ErrorClass::Io,
        }
    }
}

/// Ordered, named parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T: Real> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    /// Adds or replaces `name`.
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        let name = name.into();
        match self.names.iter().position(|n| *n == name) {
            Some(i) => self.tensors[i] = t,
            None => {
                self.names.push(name);
                self.tensors.push(t);
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.tensors[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    /// Places every tensor on `g`, differentiable when `trainable`.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|t| if trainable { g.param(t) } else { g.constant(t) })
            .collect::<Vec<_>>();
        BoundParams::from_vars(&self.names, &vars)
    }
}

/// Parameter names resolved to tape variables.
#[derive(Clone, Debug, Default)]
pub struct BoundParams {
    vars: HashMap<String, Var>,
    order: Vec<String>,
}

impl BoundParams {
    pub fn from_vars(names: &[String], vars: &[Var]) -> Self {
        Self {
            vars: names.iter().cloned().zip(vars.iter().copied()).collect(),
            order: names.to_vec(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var, ModelError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::MissingParam(name.into()))
    }

    pub fn vars(&self) -> Vec<Var> {
        self.order.iter().map(|n| self.vars[n]).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputLayout {
    /// `[N, 2, L]` (normalized B, scaled time).
    Channels,
    /// Branch `[N, L + 1]` plus shared trunk `[L, 1]`.
    BranchTrunk,
}

/// One forward batch. `trunk` is only used by branch/trunk operators.
#[derive(Clone, Debug)]
pub struct ModelBatch<T: Real> {
    pub inputs: Tensor<T>,
    pub trunk: Option<Tensor<T>>,
}

/// A neural operator mapping a sampled B period to the matching H period.
pub trait NeuralOperator<T: Real>: Send + Sync {
    fn kind(&self) -> &'static str;
    fn layout(&self) -> InputLayout;
    /// Serializable configuration, sufficient to rebuild through the registry.
    fn config(&self) -> serde_json::Value;
    fn init_params(&self, rng: &mut ChaCha8Rng) -> ParamSet<T>;
    /// Returns predictions `[N, L]`.
    fn forward(&self, g: &mut Graph<T>, p: &BoundParams, batch: &ModelBatch<T>) -> Result<Var, ModelError>;

    /// Forward pass without gradient tracking.
    fn predict(&self, params: &ParamSet<T>, batch: &ModelBatch<T>) -> Result<Tensor<T>, ModelError> {
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let y = self.forward(&mut g, &bound, batch)?;
        Ok(g.value(y)?)
    }
}

type Factory<T> = fn(&serde_json::Value) -> Result<Box<dyn NeuralOperator<T>>, ModelError>;

/// Name-keyed operator factories.
pub struct ModelRegistry<T: Real> {
    factories: BTreeMap<&'static str, Factory<T>>,
}

fn parse<C: serde::de::DeserializeOwned>(cfg: &serde_json::Value) -> Result<C, ModelError> {
    let v = if cfg.is_null() {
        serde_json::json!({})
    } else {
        cfg.clone()
    };
    serde_json::from_value(v).map_err(|e| ModelError::Config(e.to_string()))
}

impl<T: Real> ModelRegistry<T> {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("fno", |c| Ok(Box::new(Fno::new(parse(c)?)?)));
        r.register("ufno", |c| Ok(Box::new(Ufno::new(parse(c)?)?)));
        r.register("deeponet", |c| Ok(Box::new(DeepOnet::new(parse(c)?)?)));
        r
    }

    pub fn register(&mut self, name: &'static str, f: Factory<T>) {
        self.factories.insert(name, f);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    /// Builds `name` from a JSON config; `null` or missing fields take defaults.
    pub fn create(&self, name: &str, cfg: &serde_json::Value) -> Result<Box<dyn NeuralOperator<T>>, ModelError> {
        let f = self
            .factories
            .get(name)
            .ok_or_else(|| ModelError::UnknownModel(name.into(), self.names().join(", ")))?;
        f(cfg)
    }
}

pub(crate) fn uniform<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.gen_range(lo..hi))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub(crate) fn fan_in_uniform<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    uniform(rng, shape, -bound, bound)
}

pub(crate) fn check_width(what: &str, v: usize) -> Result<(), ModelError> {
    if v == 0 {
        return Err(ModelError::Config(format!("{what} must be at least 1")));
    }
    Ok(())
}
