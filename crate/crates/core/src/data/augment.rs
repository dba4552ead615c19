//! Cyclic rolling and Gaussian input noise, selectable by regime name.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{exceeds, DataError, NormalizedDataset, Sample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub n_shifts: usize,
    pub mu: f64,
    pub sigma: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            n_shifts: 10,
            mu: 0.0,
            sigma: 0.05,
        }
    }
}

/// Rolls every (B, H) pair by `k * L / n_shifts` samples for `k = 0..n_shifts`.
/// Output is shift-major: all samples at k = 0, then k = 1, and so on.
pub fn cyclic_roll(ds: &NormalizedDataset, n_shifts: usize) -> Result<NormalizedDataset, DataError> {
    let l = ds.sample_len()?;
    if n_shifts == 0 || l % n_shifts != 0 {
        return Err(DataError::Config(format!(
            "{l} samples cannot be rolled in {n_shifts} equal shifts"
        )));
    }
    let step = l / n_shifts;
    let mut samples = Vec::with_capacity(ds.len() * n_shifts);
    for k in 0..n_shifts {
        for s in &ds.samples {
            let (mut b, mut h) = (s.b.clone(), s.h.clone());
            b.rotate_left(k * step);
            h.rotate_left(k * step);
            let mut prov = s.prov.clone();
            prov.shift = (prov.shift + k) % n_shifts;
            prov.phase += 2.0 * std::f64::consts::PI * (k * step) as f64 / l as f64;
            samples.push(Sample { b, h, prov });
        }
    }
    Ok(NormalizedDataset {
        samples,
        scale: ds.scale.clone(),
    })
}

/// Appends a copy of every sample with `N(mu, sigma^2)` noise on B; H untouched.
pub fn gaussian_augment(
    ds: &NormalizedDataset,
    mu: f64,
    sigma: f64,
    seed: u64,
) -> Result<NormalizedDataset, DataError> {
    if !(sigma >= 0.0 && sigma.is_finite()) || !mu.is_finite() {
        return Err(DataError::Config(format!(
            "noise needs finite mu and sigma >= 0, got {mu}, {sigma}"
        )));
    }
    let normal = Normal::new(mu, sigma).map_err(|e| DataError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = ds.samples.clone();
    for s in &ds.samples {
        let b: Vec<f64> = s.b.iter().map(|v| v + normal.sample(&mut rng)).collect();
        let mut prov = s.prov.clone();
        prov.noisy = true;
        prov.exceeds_unit = exceeds(&b, &s.h);
        samples.push(Sample {
            b,
            h: s.h.clone(),
            prov,
        });
    }
    Ok(NormalizedDataset {
        samples,
        scale: ds.scale.clone(),
    })
}

/// An augmentation regime.
pub trait Augmenter: Send + Sync {
    fn name(&self) -> &'static str;
    /// Output size for an input of `n` samples.
    fn output_len(&self, n: usize) -> usize;
    fn apply(&self, ds: &NormalizedDataset, seed: u64) -> Result<NormalizedDataset, DataError>;
    fn is_identity(&self) -> bool {
        false
    }
}

pub struct NoAugment;

impl Augmenter for NoAugment {
    fn name(&self) -> &'static str {
        "none"
    }

    fn output_len(&self, n: usize) -> usize {
        n
    }

    fn apply(&self, ds: &NormalizedDataset, _seed: u64) -> Result<NormalizedDataset, DataError> {
        Ok(ds.clone())
    }

    fn is_identity(&self) -> bool {
        true
    }
}

pub struct CyclicRoll {
    pub n_shifts: usize,
}

impl Augmenter for CyclicRoll {
    fn name(&self) -> &'static str {
        "cyclic"
    }

    fn output_len(&self, n: usize) -> usize {
        n * self.n_shifts
    }

    fn apply(&self, ds: &NormalizedDataset, _seed: u64) -> Result<NormalizedDataset, DataError> {
        cyclic_roll(ds, self.n_shifts)
    }
}

pub struct CyclicGda {
    pub n_shifts: usize,
    pub mu: f64,
    pub sigma: f64,
}

impl Augmenter for CyclicGda {
    fn name(&self) -> &'static str {
        "cyclic+gda"
    }

    fn output_len(&self, n: usize) -> usize {
        2 * n * self.n_shifts
    }

    fn apply(&self, ds: &NormalizedDataset, seed: u64) -> Result<NormalizedDataset, DataError> {
        gaussian_augment(&cyclic_roll(ds, self.n_shifts)?, self.mu, self.sigma, seed)
    }
}

type Factory = fn(&AugmentConfig) -> Box<dyn Augmenter>;

/// Name-keyed augmentation factories.
pub struct AugmentRegistry {
    factories: BTreeMap<&'static str, Factory>,
}

impl AugmentRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("none", |_| Box::new(NoAugment));
        r.register("cyclic", |c| Box::new(CyclicRoll { n_shifts: c.n_shifts }));
        r.register("cyclic+gda", |c| {
            Box::new(CyclicGda {
                n_shifts: c.n_shifts,
                mu: c.mu,
                sigma: c.sigma,
            })
        });
        r
    }

    pub fn register(&mut self, name: &'static str, f: Factory) {
        self.factories.insert(name, f);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn create(&self, name: &str, cfg: &AugmentConfig) -> Result<Box<dyn Augmenter>, DataError> {
        self.factories
            .get(name)
            .map(|f| f(cfg))
            .ok_or_else(|| DataError::UnknownRegime(name.into(), self.names().join(", ")))
    }
}
