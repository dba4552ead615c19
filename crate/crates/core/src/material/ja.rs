//! Inverse (flux-driven) Jiles–Atherton model.

use serde::{Deserialize, Serialize};

use super::MaterialError;

pub const MU0: f64 = 4e-7 * std::f64::consts::PI;

/// Explicit Euler substeps between consecutive flux samples.
pub const SUBSTEPS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JaParams {
    /// Saturation magnetization, A/m.
    pub ms: f64,
    /// Anhysteretic shape parameter, A/m.
    pub a: f64,
    /// Pinning coefficient, A/m.
    pub k: f64,
    /// Reversibility, in [0, 1].
    pub c: f64,
    /// Inter-domain coupling.
    pub alpha: f64,
}

impl JaParams {
    pub fn validate(&self) -> Result<(), MaterialError> {
        let finite = [self.ms, self.a, self.k, self.c, self.alpha]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(MaterialError::Config("JA parameters must be finite".into()));
        }
        if self.ms <= 0.0 || self.a <= 0.0 || self.k <= 0.0 {
            return Err(MaterialError::Config(format!(
                "JA ms, a, k must be positive (ms={}, a={}, k={})",
                self.ms, self.a, self.k
            )));
        }
        if !(0.0..=1.0).contains(&self.c) {
            return Err(MaterialError::Config(format!(
                "JA c must lie in [0, 1], got {}",
                self.c
            )));
        }
        if self.alpha < 0.0 {
            return Err(MaterialError::Config(format!(
                "JA alpha must be non-negative, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Magnetic state carried between calls: last flux density and magnetization.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct JaState {
    pub b: f64,
    pub m: f64,
}

impl JaState {
    pub fn demagnetized() -> Self {
        Self::default()
    }
}

fn langevin(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        x / 3.0 - x * x * x / 45.0
    } else {
        1.0 / x.tanh() - 1.0 / x
    }
}

fn dlangevin(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 / 3.0 - x * x / 15.0
    } else if x.abs() > 30.0 {
        // 1/sinh^2 underflows relative to 1/x^2 here.
        1.0 / (x * x)
    } else {
        let s = x.sinh();
        1.0 / (x * x) - 1.0 / (s * s)
    }
}

/// dM/dB at flux `b` and magnetization `m` for a flux change of sign `dir`.
fn susceptibility(p: &JaParams, b: f64, m: f64, dir: f64) -> f64 {
    let h = b / MU0 - m;
    let he = (h + p.alpha * m) / p.a;
    let man = p.ms * langevin(he);
    let dman = p.ms / p.a * dlangevin(he);
    let mut dirr = (man - m) / (MU0 * p.k * dir);
    if (man - m) * dir < 0.0 {
        dirr = 0.0;
    }
    let num = (1.0 - p.c) * dirr + p.c / MU0 * dman;
    let den = 1.0 + MU0 * (1.0 - p.c) * (1.0 - p.alpha) * dirr + p.c * (1.0 - p.alpha) * dman;
    num / den
}

/// Integrates the model along `b`, returning `H = B/mu0 - M` at each sample
/// and leaving `state` at the last sample.
pub fn integrate(b: &[f64], p: &JaParams, state: &mut JaState) -> Vec<f64> {
    let mut out = Vec::with_capacity(b.len());
    let mut m = state.m;
    let mut prev = state.b;
    for &target in b {
        let db = (target - prev) / SUBSTEPS as f64;
        if db != 0.0 {
            let dir = db.signum();
            for s in 0..SUBSTEPS {
                let bc = prev + db * s as f64;
                m += susceptibility(p, bc, m, dir) * db;
            }
        }
        prev = target;
        out.push(target / MU0 - m);
    }
    state.b = prev;
    state.m = m;
    out
}
