//! Core loss from loop area, mean relative error and augmentation gain.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::material::periodic_derivative;
use crate::ErrorClass;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("reference loss {index} is zero; relative error undefined")]
    ZeroReference { index: usize },
    #[error("baseline MRE is zero; improvement undefined")]
    ZeroBaseline,
}

impl MetricsError {
    pub fn class(&self) -> ErrorClass {
        ErrorClass::Input
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossSource {
    Reference,
    Predicted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PowerUnit {
    #[serde(rename = "W/m^3")]
    PerVolume,
    #[serde(rename = "W/kg")]
    PerMass,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossFigure {
    pub power: f64,
    pub unit: PowerUnit,
    pub freq: f64,
    pub b_peak: f64,
    pub source: LossSource,
}

impl LossFigure {
    /// Volumetric loss of one period of `(b, h)` sampled uniformly at `freq`.
    pub fn from_loop(b: &[f64], h: &[f64], freq: f64, source: LossSource) -> Result<Self, MetricsError> {
        Ok(Self {
            power: core_loss(b, h, freq)?,
            unit: PowerUnit::PerVolume,
            freq,
            b_peak: b.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            source,
        })
    }

    /// Converts a volumetric figure to W/kg given a density in kg/m^3.
    pub fn per_mass(self, density: f64) -> Result<Self, MetricsError> {
        if !(density > 0.0) {
            return Err(MetricsError::Input(format!("density must be positive, got {density}")));
        }
        match self.unit {
            PowerUnit::PerMass => Ok(self),
            PowerUnit::PerVolume => Ok(Self {
                power: self.power / density,
                unit: PowerUnit::PerMass,
                ..self
            }),
        }
    }
}

/// Composite Simpson over `y` sampled at spacing `dx`. An odd interval count
/// gets Simpson on the even prefix and a trapezoid on the last interval.
pub fn simpson(y: &[f64], dx: f64) -> f64 {
    let intervals = y.len().saturating_sub(1);
    if intervals == 0 {
        return 0.0;
    }
    let even = intervals - intervals % 2;
    let mut acc = 0.0;
    if even > 0 {
        acc += y[0] + y[even];
        for (i, v) in y.iter().enumerate().take(even).skip(1) {
            acc += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
        }
        acc *= dx / 3.0;
    }
    if even < intervals {
        acc += 0.5 * dx * (y[even] + y[intervals]);
    }
    acc
}

/// `P = f * closed integral of H dB`, in W/m^3 for H in A/m and B in T.
/// `b` and `h` hold one uniformly sampled period, without the repeated endpoint.
pub fn core_loss(b: &[f64], h: &[f64], freq: f64) -> Result<f64, MetricsError> {
    if b.len() != h.len() {
        return Err(MetricsError::Input(format!(
            "{} flux samples but {} field samples",
            b.len(),
            h.len()
        )));
    }
    if b.len() < 5 {
        return Err(MetricsError::Input(format!(
            "{} samples cannot describe a closed loop",
            b.len()
        )));
    }
    if !(freq > 0.0 && freq.is_finite()) {
        return Err(MetricsError::Input(format!("frequency must be positive, got {freq}")));
    }
    if let Some(i) = b.iter().chain(h).position(|v| !v.is_finite()) {
        return Err(MetricsError::Input(format!("sample {} is not finite", i % b.len())));
    }
    let dt = 1.0 / (freq * b.len() as f64);
    let dbdt = periodic_derivative(b, dt);
    let mut y: Vec<f64> = h.iter().zip(&dbdt).map(|(a, d)| a * d).collect();
    y.push(y[0]);
    Ok(freq * simpson(&y, dt))
}

/// Mean of `|P_i - P^_i| / |P_i|`.
pub fn mre(reference: &[f64], predicted: &[f64]) -> Result<f64, MetricsError> {
    if reference.len() != predicted.len() {
        return Err(MetricsError::Input(format!(
            "{} references but {} predictions",
            reference.len(),
            predicted.len()
        )));
    }
    if reference.is_empty() {
        return Err(MetricsError::Input("no samples".into()));
    }
    let mut total = 0.0;
    for (i, (r, p)) in reference.iter().zip(predicted).enumerate() {
        if *r == 0.0 {
            return Err(MetricsError::ZeroReference { index: i });
        }
        total += ((r - p) / r).abs();
    }
    Ok(total / reference.len() as f64)
}

/// Percentage reduction of MRE: `(1 - aug / baseline) * 100`.
pub fn improvement(mre_no_aug: f64, mre_aug: f64) -> Result<f64, MetricsError> {
    if mre_no_aug == 0.0 {
        return Err(MetricsError::ZeroBaseline);
    }
    Ok((1.0 - mre_aug / mre_no_aug) * 100.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetric {
    pub freq: f64,
    pub b_peak: f64,
    #[serde(rename = "P_ref")]
    pub p_ref: f64,
    #[serde(rename = "P_pred")]
    pub p_pred: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mre: f64,
    pub eta_vs_baseline: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: Vec<SampleMetric>,
    pub aggregate: Aggregate,
}

impl MetricsReport {
    /// Scores paired reference/predicted figures; `baseline_mre` adds eta.
    pub fn build(
        reference: &[LossFigure],
        predicted: &[LossFigure],
        baseline_mre: Option<f64>,
    ) -> Result<Self, MetricsError> {
        let r: Vec<f64> = reference.iter().map(|f| f.power).collect();
        let p: Vec<f64> = predicted.iter().map(|f| f.power).collect();
        let m = mre(&r, &p)?;
        let samples = reference
            .iter()
            .zip(predicted)
            .map(|(a, b)| SampleMetric {
                freq: a.freq,
                b_peak: a.b_peak,
                p_ref: a.power,
                p_pred: b.power,
                rel_err: ((a.power - b.power) / a.power).abs(),
            })
            .collect();
        let eta = baseline_mre.map(|b| improvement(b, m)).transpose()?;
        Ok(Self {
            samples,
            aggregate: Aggregate {
                mre: m,
                eta_vs_baseline: eta,
            },
        })
    }
}
