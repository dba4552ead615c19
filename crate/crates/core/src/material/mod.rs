//! Synthetic steady-state dynamic hysteresis loops from the thin-sheet model
//! `H = H_hys(B) + m^2/(12 rho) dB/dt + g(B) sign(dB/dt) |dB/dt|^alpha_exc`.

mod io;
mod ja;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ErrorClass;

pub use io::{read_loop, write_loop, LoopMeta};
pub use ja::{JaParams, JaState, MU0, SUBSTEPS};

/// Default measurement grid: 9 frequencies by 4 peak flux densities.
pub const GRID_FREQS: [f64; 9] = [5.0, 10.0, 25.0, 50.0, 100.0, 200.0, 400.0, 800.0, 1000.0];
pub const GRID_PEAKS: [f64; 4] = [1.0, 1.3, 1.5, 1.7];
pub const SAMPLES_PER_PERIOD: usize = 500;
pub const MIN_SAMPLES: usize = 16;

const DEFAULT_PARAMS: &str = include_str!("../../assets/go_steel.json");
const SETTLE_TOL: f64 = 1e-10;
const MAX_SETTLE_PERIODS: usize = 64;
const CLOSURE_TOL: f64 = 1e-2;

#[derive(Debug, Error)]
pub enum MaterialError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("no steady state after {periods} periods (closure error {closure:.3e})")]
    NotSettled { periods: usize, closure: f64 },
    #[error("loop at {freq} Hz, {b_peak} T: {source}")]
    Loop {
        freq: f64,
        b_peak: f64,
        #[source]
        source: Box<MaterialError>,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Format { path: String, detail: String },
}

impl MaterialError {
    pub fn class(&self) -> ErrorClass {
        match self {
            Self::Config(_) => ErrorClass::Config,
            Self::Input(_) | Self::Format { .. } => ErrorClass::Input,
            Self::NotSettled { .. } => ErrorClass::Numerical,
            Self::Loop { source, .. } => source.class(),
            Self::Io { .. } => ErrorClass::Io,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    /// Lamination thickness, m.
    pub m: f64,
    /// Resistivity, ohm m.
    pub rho: f64,
    /// Static model. `None` disables the hysteresis term.
    pub ja: Option<JaParams>,
    /// Coefficients of g(B), lowest order first.
    pub g_coeffs: Vec<f64>,
    pub alpha_exc: f64,
}

impl Default for MaterialParams {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_PARAMS).expect("shipped material parameters parse")
    }
}

impl MaterialParams {
    pub fn from_json(text: &str) -> Result<Self, MaterialError> {
        serde_json::from_str(text).map_err(|e| MaterialError::Config(format!("material parameters: {e}")))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, MaterialError> {
        let text = std::fs::read_to_string(path).map_err(|source| MaterialError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Checks the parameter invariants with g(B) probed over `[-b_max, b_max]`.
    pub fn validate(&self, b_max: f64) -> Result<(), MaterialError> {
        if !(self.m > 0.0 && self.m.is_finite()) || !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(MaterialError::Config(format!(
                "thickness and resistivity must be positive (m={}, rho={})",
                self.m, self.rho
            )));
        }
        if !(self.alpha_exc > 0.0 && self.alpha_exc.is_finite()) {
            return Err(MaterialError::Config(format!(
                "alpha_exc must be positive, got {}",
                self.alpha_exc
            )));
        }
        if let Some(ja) = &self.ja {
            ja.validate()?;
        }
        for i in 0..=400 {
            let b = b_max * (i as f64 / 200.0 - 1.0);
            let g = self.g(b);
            if !(g >= 0.0 && g.is_finite()) {
                return Err(MaterialError::Config(format!(
                    "g(B) = {g} at B = {b} T; must be non-negative"
                )));
            }
        }
        Ok(())
    }

    /// Eddy-current coefficient `m^2 / (12 rho)`, A/m per T/s.
    pub fn eddy_coefficient(&self) -> f64 {
        self.m * self.m / (12.0 * self.rho)
    }

    pub fn g(&self, b: f64) -> f64 {
        self.g_coeffs.iter().rev().fold(0.0, |acc, &c| acc * b + c)
    }

    /// Stable SHA-256 of the serialized parameters.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("parameters serialize");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcitationSpec {
    pub b_peak: f64,
    pub freq: f64,
    pub n_samples: usize,
    pub phase: f64,
    pub n_settle_periods: usize,
}

impl ExcitationSpec {
    pub fn new(freq: f64, b_peak: f64) -> Self {
        Self {
            b_peak,
            freq,
            n_samples: SAMPLES_PER_PERIOD,
            phase: 0.0,
            n_settle_periods: 2,
        }
    }

    pub fn validate(&self) -> Result<(), MaterialError> {
        if !(self.b_peak > 0.0 && self.b_peak.is_finite()) {
            return Err(MaterialError::Config(format!(
                "b_peak must be positive, got {}",
                self.b_peak
            )));
        }
        if !(self.freq > 0.0 && self.freq.is_finite()) {
            return Err(MaterialError::Config(format!(
                "frequency must be positive, got {}",
                self.freq
            )));
        }
        if self.n_samples < MIN_SAMPLES {
            return Err(MaterialError::Config(format!(
                "{} samples per period is below the minimum of {MIN_SAMPLES}",
                self.n_samples
            )));
        }
        if !self.phase.is_finite() {
            return Err(MaterialError::Config("phase must be finite".into()));
        }
        Ok(())
    }
}

/// One steady-state period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopRecord {
    pub t: Vec<f64>,
    pub b: Vec<f64>,
    pub h: Vec<f64>,
    pub freq: f64,
    pub b_peak: f64,
    pub phase: f64,
}

impl LoopRecord {
    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    pub fn period(&self) -> f64 {
        1.0 / self.freq
    }
}

/// `b[i] = b_peak sin(2 pi f t_i + phase)` with `t_i = i / (f n)`.
pub fn sinusoidal_flux(spec: &ExcitationSpec) -> (Vec<f64>, Vec<f64>) {
    let n = spec.n_samples;
    let t: Vec<f64> = (0..n).map(|i| i as f64 / (spec.freq * n as f64)).collect();
    let b = (0..n)
        .map(|i| {
            let theta = 2.0 * std::f64::consts::PI * i as f64 / n as f64 + spec.phase;
            spec.b_peak * theta.sin()
        })
        .collect();
    (b, t)
}

/// Fourth-order central difference of one period with periodic wrap.
pub fn periodic_derivative(y: &[f64], dt: f64) -> Vec<f64> {
    let n = y.len();
    let at = |i: isize| y[i.rem_euclid(n as isize) as usize];
    (0..n as isize)
        .map(|i| (-at(i + 2) + 8.0 * at(i + 1) - 8.0 * at(i - 1) + at(i - 2)) / (12.0 * dt))
        .collect()
}

fn check_finite(name: &str, v: &[f64]) -> Result<(), MaterialError> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(MaterialError::Input(format!("{name}[{i}] is not finite"))),
        None => Ok(()),
    }
}

/// Rate-independent hysteresis field along `b`, continuing from `state`.
/// Identically zero when the static model is disabled.
pub fn static_field(b: &[f64], params: &MaterialParams, state: &mut JaState) -> Result<Vec<f64>, MaterialError> {
    check_finite("b", b)?;
    match &params.ja {
        Some(ja) => {
            ja.validate()?;
            Ok(ja::integrate(b, ja, state))
        }
        None => Ok(vec![0.0; b.len()]),
    }
}

/// Repeats the periodic path until the static response is periodic.
/// Returns the recorded period and the field at the start of the next one.
fn settle(b: &[f64], params: &MaterialParams, min_periods: usize) -> Result<(Vec<f64>, f64), MaterialError> {
    let mut state = JaState::demagnetized();
    let mut prev: Option<Vec<f64>> = None;
    for period in 0..MAX_SETTLE_PERIODS {
        let h = static_field(b, params, &mut state)?;
        let scale = h.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let change = prev
            .as_ref()
            .map(|p| p.iter().zip(&h).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale);
        if period >= min_periods && change.is_some_and(|c| c <= SETTLE_TOL) {
            let mut probe = state;
            let next = static_field(&b[..1], params, &mut probe)?[0];
            return Ok((h, next));
        }
        prev = Some(h);
    }
    Err(MaterialError::NotSettled {
        periods: MAX_SETTLE_PERIODS,
        closure: f64::NAN,
    })
}

/// Steady-state field for one uniformly sampled period of `b`, after at
/// least `settle_periods` periods of pre-integration.
pub fn dynamic_field(
    b: &[f64],
    t: &[f64],
    params: &MaterialParams,
    settle_periods: usize,
) -> Result<Vec<f64>, MaterialError> {
    let n = b.len();
    if n != t.len() {
        return Err(MaterialError::Input(format!(
            "{} flux samples but {} timestamps",
            n,
            t.len()
        )));
    }
    if n < MIN_SAMPLES {
        return Err(MaterialError::Config(format!(
            "{n} samples per period cannot resolve dB/dt (minimum {MIN_SAMPLES})"
        )));
    }
    check_finite("b", b)?;
    check_finite("t", t)?;
    let dt = t[1] - t[0];
    if !(dt > 0.0) || t.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-9 * dt) {
        return Err(MaterialError::Input("timestamps must be uniformly increasing".into()));
    }
    let b_max = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    params.validate(b_max)?;

    let (h_hys, next) = settle(b, params, settle_periods)?;
    let dbdt = periodic_derivative(b, dt);
    let eddy = params.eddy_coefficient();
    let h: Vec<f64> = b
        .iter()
        .zip(&dbdt)
        .zip(&h_hys)
        .map(|((&bv, &d), &hs)| {
            let delta = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            hs + eddy * d + params.g(bv) * delta * d.abs().powf(params.alpha_exc)
        })
        .collect();

    let h_max = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let closure = if h_max > 0.0 {
        (next - h_hys[0]).abs() / h_max
    } else {
        0.0
    };
    if closure > CLOSURE_TOL {
        return Err(MaterialError::NotSettled {
            periods: settle_periods,
            closure,
        });
    }
    Ok(h)
}

pub fn generate_loop(spec: &ExcitationSpec, params: &MaterialParams) -> Result<LoopRecord, MaterialError> {
    let wrap = |source| MaterialError::Loop {
        freq: spec.freq,
        b_peak: spec.b_peak,
        source: Box::new(source),
    };
    spec.validate().map_err(wrap)?;
    let (b, t) = sinusoidal_flux(spec);
    let h = dynamic_field(&b, &t, params, spec.n_settle_periods).map_err(wrap)?;
    Ok(LoopRecord {
        t,
        b,
        h,
        freq: spec.freq,
        b_peak: spec.b_peak,
        phase: spec.phase,
    })
}

/// One phase-0 loop per `(freq, peak)` pair, frequency-major.
pub fn generate_corpus(
    freqs: &[f64],
    peaks: &[f64],
    params: &MaterialParams,
    n_samples: usize,
) -> Result<Vec<LoopRecord>, MaterialError> {
    if freqs.is_empty() || peaks.is_empty() {
        return Err(MaterialError::Config(
            "frequency and peak lists must be non-empty".into(),
        ));
    }
    let grid: Vec<(f64, f64)> = freqs.iter().flat_map(|&f| peaks.iter().map(move |&p| (f, p))).collect();
    grid.par_iter()
        .map(|&(freq, b_peak)| {
            let spec = ExcitationSpec {
                n_samples,
                ..ExcitationSpec::new(freq, b_peak)
            };
            generate_loop(&spec, params)
        })
        .collect()
}
