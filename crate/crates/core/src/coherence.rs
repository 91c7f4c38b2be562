//! T1 estimates from the decay probability within one measurement.
//!
//! With excitation neglected, the probability of a decay between preparation
//! and readout is `p = 1 - a exp(-dt / T1)`, where `a` absorbs preparation and
//! measurement fidelity. Calibrating `a` on a reference interval with known T1
//! lets later intervals be converted back to T1.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::record::RelaxationRecord;

/// Shortest window accepted by [`windowed_t1_track`].
pub const MIN_WINDOW: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum CoherenceError {
    #[error("no prepared measurements")]
    NoPreparations,
    #[error("{n_decay} decays exceed {n_prep} preparations")]
    TooManyDecays { n_decay: u64, n_prep: u64 },
    #[error("reference probability {0} outside [0, 1)")]
    ReferenceProbability(f64),
    #[error("probability {0} outside [0, 1)")]
    Probability(f64),
    #[error("{what} must be positive and finite, got {value}")]
    Nonpositive { what: &'static str, value: f64 },
    #[error("window of {window} measurements is below the minimum of {min}")]
    WindowTooShort { window: usize, min: usize },
    #[error("calibration covers {calibrated} qubits, record has {record}")]
    QubitMismatch { calibrated: usize, record: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayStats {
    pub n_decay: u64,
    pub n_prep: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Probability {
    pub p: f64,
    pub sigma: f64,
}

/// Binomial estimate `n_decay / n_prep` with its standard error.
pub fn decay_probability(d: DecayStats) -> Result<Probability, CoherenceError> {
    if d.n_prep == 0 {
        return Err(CoherenceError::NoPreparations);
    }
    if d.n_decay > d.n_prep {
        return Err(CoherenceError::TooManyDecays { n_decay: d.n_decay, n_prep: d.n_prep });
    }
    let p = d.n_decay as f64 / d.n_prep as f64;
    Ok(Probability { p, sigma: (p * (1.0 - p) / d.n_prep as f64).sqrt() })
}

fn positive(what: &'static str, value: f64) -> Result<(), CoherenceError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(CoherenceError::Nonpositive { what, value })
    }
}

/// Fidelity factor reproducing `t1_ref` from `p_ref`.
pub fn calibrate_a(p_ref: f64, t1_ref: f64, dt: f64) -> Result<f64, CoherenceError> {
    if !(0.0..1.0).contains(&p_ref) {
        return Err(CoherenceError::ReferenceProbability(p_ref));
    }
    positive("reference T1", t1_ref)?;
    positive("delay", dt)?;
    Ok((1.0 - p_ref) * (dt / t1_ref).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum T1Flag {
    Ok,
    /// `1 - p >= a`: no positive decay rate fits. The estimate falls back to `a = 1`.
    NonphysicalRate,
}

impl T1Flag {
    pub fn as_str(self) -> &'static str {
        match self {
            T1Flag::Ok => "ok",
            T1Flag::NonphysicalRate => "nonphysical_rate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct T1Estimate {
    pub t1: f64,
    pub sigma: f64,
    pub flag: T1Flag,
}

/// `T1 = dt / ln(a / (1 - p))`, with `sigma_p` propagated to first order.
pub fn estimate_t1_with_sigma(p: f64, sigma_p: f64, a: f64, dt: f64) -> Result<T1Estimate, CoherenceError> {
    if !(0.0..1.0).contains(&p) {
        return Err(CoherenceError::Probability(p));
    }
    positive("fidelity factor", a)?;
    positive("delay", dt)?;
    let q = 1.0 - p;
    let (a, flag) = if q >= a { (1.0, T1Flag::NonphysicalRate) } else { (a, T1Flag::Ok) };
    let l = (a / q).ln();
    let t1 = if l > 0.0 { dt / l } else { f64::INFINITY };
    let sigma = if l > 0.0 { dt * sigma_p / (q * l * l) } else { f64::INFINITY };
    Ok(T1Estimate { t1, sigma, flag })
}

pub fn estimate_t1(p: f64, a: f64, dt: f64) -> Result<T1Estimate, CoherenceError> {
    estimate_t1_with_sigma(p, 0.0, a, dt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceCalibration {
    pub a: Vec<f64>,
    pub delta_t: f64,
    pub reference_t1: Vec<f64>,
}

impl CoherenceCalibration {
    /// Calibrates every qubit from its reference probability and T1.
    pub fn from_reference(p_ref: &[f64], t1_ref: &[f64], dt: f64) -> Result<Self, CoherenceError> {
        let a = p_ref
            .iter()
            .zip(t1_ref)
            .map(|(&p, &t)| calibrate_a(p, t, dt))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { a, delta_t: dt, reference_t1: t1_ref.to_vec() })
    }

    /// Calibrates from the decay probabilities measured over all of `r`.
    pub fn from_record(r: &RelaxationRecord, t1_ref: &[f64], dt: f64) -> Result<Self, CoherenceError> {
        if t1_ref.len() != r.qubit_count() {
            return Err(CoherenceError::QubitMismatch { calibrated: t1_ref.len(), record: r.qubit_count() });
        }
        let p = (0..r.qubit_count())
            .map(|q| decay_probability(stats(r, q, 0, r.len())).map(|x| x.p))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_reference(&p, t1_ref, dt)
    }
}

/// Decays and preparations of qubit `q` over `[start, end)`. Discarded
/// measurements are not preparations.
pub fn stats(r: &RelaxationRecord, q: usize, start: usize, end: usize) -> DecayStats {
    DecayStats {
        n_decay: r.relaxed(q)[start..end].count_ones() as u64,
        n_prep: r.valid(q)[start..end].count_ones() as u64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct T1Point {
    pub window_start_s: f64,
    pub qubit: usize,
    pub t1: f64,
    pub sigma: f64,
    pub flag: T1Flag,
}

/// Per-window, per-qubit T1 over consecutive windows of `window` measurements.
/// A trailing partial window is dropped. Windows without any preparation are
/// reported with NaN values.
pub fn windowed_t1_track(
    r: &RelaxationRecord,
    cal: &CoherenceCalibration,
    window: usize,
) -> Result<Vec<T1Point>, CoherenceError> {
    if window < MIN_WINDOW {
        return Err(CoherenceError::WindowTooShort { window, min: MIN_WINDOW });
    }
    if cal.a.len() != r.qubit_count() {
        return Err(CoherenceError::QubitMismatch { calibrated: cal.a.len(), record: r.qubit_count() });
    }
    let n = r.len() / window;
    let per_window: Vec<Vec<T1Point>> = (0..n)
        .into_par_iter()
        .map(|w| {
            let (lo, hi) = (w * window, (w + 1) * window);
            let start = r.start_timestamp() + lo as f64 * r.cadence();
            (0..r.qubit_count())
                .map(|q| {
                    let est = decay_probability(stats(r, q, lo, hi)).and_then(|pr| {
                        let p = pr.p.min(1.0 - f64::EPSILON);
                        estimate_t1_with_sigma(p, pr.sigma, cal.a[q], cal.delta_t)
                    });
                    match est {
                        Ok(e) => T1Point { window_start_s: start, qubit: q, t1: e.t1, sigma: e.sigma, flag: e.flag },
                        Err(_) => T1Point {
                            window_start_s: start,
                            qubit: q,
                            t1: f64::NAN,
                            sigma: f64::NAN,
                            flag: T1Flag::NonphysicalRate,
                        },
                    }
                })
                .collect()
        })
        .collect();
    Ok(per_window.into_iter().flatten().collect())
}

pub fn write_track_csv<W: Write>(mut out: W, points: &[T1Point]) -> std::io::Result<()> {
    writeln!(out, "window_start_s,qubit,T1_s,sigma_T1_s,flag")?;
    for p in points {
        writeln!(out, "{:.6},Q{},{:.6e},{:.6e},{}", p.window_start_s, p.qubit + 1, p.t1, p.sigma, p.flag.as_str())?;
    }
    Ok(())
}
