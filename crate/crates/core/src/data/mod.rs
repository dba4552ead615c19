//! Normalized datasets, architecture-specific tensor layouts and splits.

mod archive;
mod augment;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffkernel::Tensor;
use crate::material::{LoopRecord, MaterialError};
use crate::ErrorClass;

pub use archive::{read_cache, read_dataset, write_cache, write_dataset, Manifest, CACHE_MAGIC};
pub use augment::{
    cyclic_roll, gaussian_augment, AugmentConfig, AugmentRegistry, Augmenter, CyclicGda, CyclicRoll, NoAugment,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("unknown augmentation regime {0:?} (known: {1})")]
    UnknownRegime(String, String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Format { path: String, detail: String },
    #[error(transparent)]
    Material(#[from] MaterialError),
}

impl DataError {
    pub fn class(&self) -> ErrorClass {
        match self {
            Self::Config(_) | Self::UnknownRegime(..) => ErrorClass::Config,
            Self::Input(_) | Self::Format { .. } => ErrorClass::Input,
            Self::Io { .. } => ErrorClass::Io,
            Self::Material(e) => e.class(),
        }
    }
}

pub const MAX_ABS: &str = "max-abs";

/// Max-abs scales. `t_scale` is the longest period, `f_scale` the highest frequency.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormScale {
    pub b_scale: f64,
    pub h_scale: f64,
    pub t_scale: f64,
    pub f_scale: f64,
    pub scheme: String,
}

impl NormScale {
    /// Fits the scales on `loops[i]` for `i` in `fit`.
    pub fn fit(loops: &[LoopRecord], fit: &[usize]) -> Result<Self, DataError> {
        if fit.is_empty() {
            return Err(DataError::Config("no loops to fit normalization on".into()));
        }
        let mut s = Self {
            b_scale: 0.0,
            h_scale: 0.0,
            t_scale: 0.0,
            f_scale: 0.0,
            scheme: MAX_ABS.into(),
        };
        for &i in fit {
            let l = loops
                .get(i)
                .ok_or_else(|| DataError::Input(format!("fit index {i} outside corpus of {}", loops.len())))?;
            s.b_scale = l.b.iter().fold(s.b_scale, |m, v| m.max(v.abs()));
            s.h_scale = l.h.iter().fold(s.h_scale, |m, v| m.max(v.abs()));
            s.t_scale = s.t_scale.max(1.0 / l.freq);
            s.f_scale = s.f_scale.max(l.freq);
        }
        if !(s.b_scale > 0.0) || !(s.h_scale > 0.0) {
            return Err(DataError::Config(format!(
                "all-zero channel in normalization fit (b_scale={}, h_scale={})",
                s.b_scale, s.h_scale
            )));
        }
        if !(s.f_scale > 0.0 && s.f_scale.is_finite()) {
            return Err(DataError::Config("frequencies must be positive".into()));
        }
        Ok(s)
    }

    pub fn fit_all(loops: &[LoopRecord]) -> Result<Self, DataError> {
        Self::fit(loops, &(0..loops.len()).collect::<Vec<_>>())
    }

    pub fn normalize_b(&self, v: &[f64]) -> Vec<f64> {
        v.iter().map(|x| x / self.b_scale).collect()
    }

    pub fn normalize_h(&self, v: &[f64]) -> Vec<f64> {
        v.iter().map(|x| x / self.h_scale).collect()
    }

    pub fn denormalize_b(&self, v: &[f64]) -> Vec<f64> {
        v.iter().map(|x| x * self.b_scale).collect()
    }

    pub fn denormalize_h(&self, v: &[f64]) -> Vec<f64> {
        v.iter().map(|x| x * self.h_scale).collect()
    }
}

/// Where a sample came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Index of the originating loop in the base corpus.
    pub source: usize,
    pub freq: f64,
    pub b_peak: f64,
    pub phase: f64,
    /// Roll index k: the sample was advanced by `k * L / n_shifts` samples.
    pub shift: usize,
    pub noisy: bool,
    /// Some normalized value lies outside [-1, 1].
    pub exceeds_unit: bool,
}

/// One normalized period. Time is implicit: `t_i = i / (freq * L)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub b: Vec<f64>,
    pub h: Vec<f64>,
    pub prov: Provenance,
}

impl Sample {
    pub fn freq(&self) -> f64 {
        self.prov.freq
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedDataset {
    pub samples: Vec<Sample>,
    pub scale: NormScale,
}

fn exceeds(b: &[f64], h: &[f64]) -> bool {
    b.iter().chain(h).any(|v| v.abs() > 1.0)
}

/// Scales every loop with `scale`.
pub fn normalize(loops: &[LoopRecord], scale: &NormScale) -> Result<NormalizedDataset, DataError> {
    if loops.is_empty() {
        return Err(DataError::Input("empty corpus".into()));
    }
    let samples = loops
        .iter()
        .enumerate()
        .map(|(i, l)| {
            if l.b.len() != l.h.len() {
                return Err(DataError::Input(format!(
                    "loop {i}: {} B samples, {} H samples",
                    l.b.len(),
                    l.h.len()
                )));
            }
            let (b, h) = (scale.normalize_b(&l.b), scale.normalize_h(&l.h));
            let exceeds_unit = exceeds(&b, &h);
            Ok(Sample {
                b,
                h,
                prov: Provenance {
                    source: i,
                    freq: l.freq,
                    b_peak: l.b_peak,
                    phase: l.phase,
                    shift: 0,
                    noisy: false,
                    exceeds_unit,
                },
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(NormalizedDataset {
        samples,
        scale: scale.clone(),
    })
}

impl NormalizedDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples per period; errors on ragged data.
    pub fn sample_len(&self) -> Result<usize, DataError> {
        let l = self
            .samples
            .first()
            .map(|s| s.b.len())
            .ok_or_else(|| DataError::Input("empty dataset".into()))?;
        for (i, s) in self.samples.iter().enumerate() {
            if s.b.len() != l || s.h.len() != l {
                return Err(DataError::Input(format!(
                    "ragged dataset: sample {i} has {} / {} points, expected {l}",
                    s.b.len(),
                    s.h.len()
                )));
            }
        }
        Ok(l)
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            scale: self.scale.clone(),
        }
    }

    /// Raw (B, H) of sample `i`.
    pub fn raw(&self, i: usize) -> (Vec<f64>, Vec<f64>) {
        let s = &self.samples[i];
        (self.scale.denormalize_b(&s.b), self.scale.denormalize_h(&s.h))
    }

    /// Re-expresses every sample under another scale.
    pub fn rescaled(&self, scale: &NormScale) -> Self {
        let samples = self
            .samples
            .iter()
            .map(|s| {
                let b = scale.normalize_b(&self.scale.denormalize_b(&s.b));
                let h = scale.normalize_h(&self.scale.denormalize_h(&s.h));
                let mut prov = s.prov.clone();
                prov.exceeds_unit = exceeds(&b, &h);
                Sample { b, h, prov }
            })
            .collect();
        Self {
            samples,
            scale: scale.clone(),
        }
    }
}

/// FNO / U-FNO layout.
#[derive(Clone, Debug)]
pub struct FnoTensors {
    /// `[N, 2, L]`: normalized B, then absolute time over the longest period.
    pub inputs: Tensor<f64>,
    /// `[N, L]` normalized H.
    pub targets: Tensor<f64>,
}

/// DeepONet layout.
#[derive(Clone, Debug)]
pub struct DeepOnetTensors {
    /// `[N, L + 1]`: normalized B followed by `f / f_scale`.
    pub branch: Tensor<f64>,
    /// `[L, 1]`: `t / T`, shared by every sample.
    pub trunk: Tensor<f64>,
    pub targets: Tensor<f64>,
}

fn targets(ds: &NormalizedDataset, l: usize) -> Result<Tensor<f64>, DataError> {
    let data = ds.samples.iter().flat_map(|s| s.h.iter().copied()).collect();
    Tensor::new(vec![ds.len(), l], data).map_err(|e| DataError::Input(e.to_string()))
}

pub fn assemble_fno(ds: &NormalizedDataset) -> Result<FnoTensors, DataError> {
    let l = ds.sample_len()?;
    let mut inputs = Vec::with_capacity(ds.len() * 2 * l);
    for s in &ds.samples {
        inputs.extend_from_slice(&s.b);
        let dt = 1.0 / (s.freq() * l as f64);
        inputs.extend((0..l).map(|i| i as f64 * dt / ds.scale.t_scale));
    }
    Ok(FnoTensors {
        inputs: Tensor::new(vec![ds.len(), 2, l], inputs).map_err(|e| DataError::Input(e.to_string()))?,
        targets: targets(ds, l)?,
    })
}

pub fn assemble_deeponet(ds: &NormalizedDataset) -> Result<DeepOnetTensors, DataError> {
    let l = ds.sample_len()?;
    let mut branch = Vec::with_capacity(ds.len() * (l + 1));
    for s in &ds.samples {
        branch.extend_from_slice(&s.b);
        branch.push(s.freq() / ds.scale.f_scale);
    }
    let trunk = (0..l).map(|i| i as f64 / l as f64).collect();
    let err = |e: crate::diffkernel::KernelError| DataError::Input(e.to_string());
    Ok(DeepOnetTensors {
        branch: Tensor::new(vec![ds.len(), l + 1], branch).map_err(err)?,
        trunk: Tensor::new(vec![l, 1], trunk).map_err(err)?,
        targets: targets(ds, l)?,
    })
}

/// Ratios `train : [val :] test` (any positive scale) and a shuffle seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: Vec<f64>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn train_test(train: f64, test: f64, seed: u64) -> Self {
        Self {
            ratios: vec![train, test],
            seed,
        }
    }

    pub fn train_val_test(train: f64, val: f64, test: f64, seed: u64) -> Self {
        Self {
            ratios: vec![train, val, test],
            seed,
        }
    }
}

/// Index sets of a split; `val` is empty for two-way splits.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `0..n` with the spec seed. Non-train parts get the nearest
/// whole count of `n * ratio`; train takes the rest.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<SplitIndices, DataError> {
    let r = &spec.ratios;
    if !(r.len() == 2 || r.len() == 3) || r.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(DataError::Config(format!(
            "split ratios must be 2 or 3 positive numbers, got {r:?}"
        )));
    }
    let total: f64 = r.iter().sum();
    if n < r.len() {
        return Err(DataError::Config(format!(
            "{n} samples cannot fill {} split parts",
            r.len()
        )));
    }
    let counts: Vec<usize> = r[1..].iter().map(|v| (n as f64 * v / total).round() as usize).collect();
    let rest: usize = counts.iter().sum();
    if counts.contains(&0) || rest >= n {
        return Err(DataError::Config(format!(
            "split {r:?} of {n} samples leaves an empty part"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let n_train = n - rest;
    let train = perm[..n_train].to_vec();
    let (val, test) = if counts.len() == 2 {
        (
            perm[n_train..n_train + counts[0]].to_vec(),
            perm[n_train + counts[0]..].to_vec(),
        )
    } else {
        (Vec::new(), perm[n_train..].to_vec())
    };
    Ok(SplitIndices { train, val, test })
}

pub struct SplitData {
    pub train: NormalizedDataset,
    pub val: Option<NormalizedDataset>,
    pub test: NormalizedDataset,
}

pub fn split(ds: &NormalizedDataset, spec: &SplitSpec) -> Result<SplitData, DataError> {
    let idx = split_indices(ds.len(), spec)?;
    Ok(SplitData {
        train: ds.subset(&idx.train),
        val: (!idx.val.is_empty()).then(|| ds.subset(&idx.val)),
        test: ds.subset(&idx.test),
    })
}

/// A dataset ready for training: augmented, normalized and split.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub dataset: NormalizedDataset,
    pub split: SplitIndices,
    pub regime: String,
}

/// Builds the training set for `regime`.
///
/// Without augmentation the corpus is split first and the scales are fitted
/// on the training loops. With augmentation the scales are fitted on the whole
/// clean corpus, because every source loop reappears (rolled or noisy) in the
/// training part of the augmented split.
pub fn prepare(
    loops: &[LoopRecord],
    regime: &str,
    cfg: &AugmentConfig,
    spec: &SplitSpec,
    seed: u64,
) -> Result<Prepared, DataError> {
    let aug = AugmentRegistry::builtin().create(regime, cfg)?;
    if aug.is_identity() {
        let split = split_indices(loops.len(), spec)?;
        let scale = NormScale::fit(loops, &split.train)?;
        let dataset = normalize(loops, &scale)?;
        return Ok(Prepared {
            dataset,
            split,
            regime: aug.name().into(),
        });
    }
    let scale = NormScale::fit_all(loops)?;
    let dataset = aug.apply(&normalize(loops, &scale)?, seed)?;
    let split = split_indices(dataset.len(), spec)?;
    Ok(Prepared {
        dataset,
        split,
        regime: aug.name().into(),
    })
}
