//! Phenomenological burst templates.
//!
//! A burst adds an excess relaxation probability `amplitude_i * shape_i(t)`
//! to qubit `i`. Radiation bursts rise instantaneously and decay
//! exponentially with the orientation-dependent recovery lifetime. Pulse-tube
//! bursts rise over a few milliseconds, decay exponentially with a longer
//! lifetime and carry a log-normal secondary peak on the way down.

use crate::model::geometry::{DeviceGeometry, Orientation};
use crate::model::truth::{EventKind, GroundTruthEvent, InjectedLifetime};

use super::config::PulseTubeConfig;

/// Excess probabilities below this are not injected.
pub const EXCESS_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct PulseTubeShape {
    rise: f64,
    second_peak: f64,
    width: f64,
    weight2: f64,
    lifetime: f64,
    norm: f64,
}

fn lognormal_pulse(u: f64, peak: f64, width: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    let l = (u / peak).ln();
    (-(l * l) / (2.0 * width * width)).exp()
}

impl PulseTubeShape {
    pub fn from_config(pt: &PulseTubeConfig) -> Self {
        let mut shape = Self {
            rise: pt.rise_time,
            second_peak: pt.second_delay,
            width: pt.width,
            weight2: pt.second_weight,
            lifetime: pt.lifetime,
            norm: 1.0,
        };
        let horizon = 3.0 * shape.monotone_after();
        let steps = 8000;
        let max = (1..=steps)
            .map(|k| shape.raw(horizon * k as f64 / steps as f64))
            .fold(0.0, f64::max);
        shape.norm = if max > 0.0 { 1.0 / max } else { 0.0 };
        shape
    }

    // squared rise times exponential decay, modulated by the secondary peak
    fn raw(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        let rise = 1.0 - (-u / self.rise).exp();
        rise * rise * (-u / self.lifetime).exp() * (1.0 + self.weight2 * lognormal_pulse(u, self.second_peak, self.width))
    }

    /// Time after which every factor of the shape is decreasing.
    fn monotone_after(&self) -> f64 {
        let envelope_peak = self.rise * ((2.0 * self.lifetime + self.rise) / self.rise).ln();
        envelope_peak.max(self.second_peak)
    }

    /// Normalized shape at `u` seconds after the cycle onset; peak value 1.
    pub fn value(&self, u: f64) -> f64 {
        self.norm * self.raw(u)
    }

    /// Time after which the shape stays below `level`.
    pub fn extent(&self, level: f64) -> f64 {
        if level >= 1.0 || self.norm == 0.0 {
            return 0.0;
        }
        let mut lo = self.monotone_after();
        if self.value(lo) < level {
            return lo;
        }
        let mut hi = 2.0 * lo;
        while self.value(hi) >= level {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.value(mid) >= level {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BurstShape {
    /// Instantaneous rise, exponential decay with one lifetime per qubit.
    Exponential { lifetimes: Vec<f64> },
    PulseTube(PulseTubeShape),
}

/// One injected burst: per-qubit peak excess probability times a shape.
#[derive(Debug, Clone, PartialEq)]
pub struct BurstProfile {
    pub kind: EventKind,
    /// Onset on the global measurement axis.
    pub start: u64,
    pub amplitudes: Vec<f64>,
    pub shape: BurstShape,
    pub lifetime: InjectedLifetime,
    pub impact_xy: Option<(f64, f64)>,
}

impl BurstProfile {
    /// Radiation burst: `A_i = min(1, s * E * exp(-d_i / falloff))`, decaying
    /// with `tau_slow` on S qubits and `tau_fast` on F qubits.
    #[allow(clippy::too_many_arguments)]
    pub fn radiation(
        geometry: &DeviceGeometry,
        start: u64,
        impact_xy: (f64, f64),
        energy_scale: f64,
        falloff: f64,
        suppression: f64,
        tau_slow: f64,
        tau_fast: f64,
    ) -> Self {
        let n = geometry.qubit_count();
        let amplitudes = (0..n)
            .map(|i| {
                let a = suppression * energy_scale * (-geometry.distance(i, impact_xy) / falloff).exp();
                a.clamp(0.0, 1.0)
            })
            .collect();
        let lifetimes = (0..n)
            .map(|i| match geometry.orientation(i) {
                Orientation::S => tau_slow,
                Orientation::F => tau_fast,
            })
            .collect();
        Self {
            kind: EventKind::Radiation,
            start,
            amplitudes,
            shape: BurstShape::Exponential { lifetimes },
            lifetime: InjectedLifetime::Oriented { slow: tau_slow, fast: tau_fast },
            impact_xy: Some(impact_xy),
        }
    }

    pub fn pulse_tube(
        start: u64,
        cycle_amplitude: f64,
        gains: &[f64],
        suppression: f64,
        shape: PulseTubeShape,
        lifetime: f64,
    ) -> Self {
        let amplitudes = gains
            .iter()
            .map(|g| (cycle_amplitude * g * suppression).clamp(0.0, 1.0))
            .collect();
        Self {
            kind: EventKind::PulseTube,
            start,
            amplitudes,
            shape: BurstShape::PulseTube(shape),
            lifetime: InjectedLifetime::Single(lifetime),
            impact_xy: None,
        }
    }

    /// Excess probability on `qubit`, `dt` seconds after onset.
    pub fn excess(&self, qubit: usize, dt: f64) -> f64 {
        if dt < 0.0 {
            return 0.0;
        }
        let a = self.amplitudes[qubit];
        if a == 0.0 {
            return 0.0;
        }
        let v = match &self.shape {
            BurstShape::Exponential { lifetimes } => a * (-dt / lifetimes[qubit]).exp(),
            BurstShape::PulseTube(s) => a * s.value(dt),
        };
        v.clamp(0.0, 1.0)
    }

    /// Number of samples after onset beyond which every qubit's excess stays
    /// below [`EXCESS_FLOOR`].
    pub fn extent_samples(&self, cadence: f64) -> u64 {
        let amax = self.amplitudes.iter().cloned().fold(0.0, f64::max);
        if amax < EXCESS_FLOOR {
            return 0;
        }
        let seconds = match &self.shape {
            BurstShape::Exponential { lifetimes } => self
                .amplitudes
                .iter()
                .zip(lifetimes)
                .filter(|(a, _)| **a >= EXCESS_FLOOR)
                .map(|(a, tau)| tau * (a / EXCESS_FLOOR).ln())
                .fold(0.0, f64::max),
            BurstShape::PulseTube(s) => s.extent(EXCESS_FLOOR / amax),
        };
        (seconds / cadence).ceil() as u64 + 1
    }

    pub fn to_truth(&self) -> GroundTruthEvent {
        GroundTruthEvent {
            kind: self.kind,
            start_index: self.start,
            lifetime: self.lifetime,
            amplitudes: self.amplitudes.clone(),
            impact_xy: self.impact_xy,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pulse_tube_shape_is_normalized_and_rises() {
        let s = PulseTubeShape::from_config(&PulseTubeConfig::default());
        let max = (1..20000).map(|k| s.value(k as f64 * 1e-5)).fold(0.0, f64::max);
        assert!((max - 1.0).abs() < 1e-3, "{max}");
        assert_eq!(s.value(0.0), 0.0);
        assert!(s.value(0.2e-3) < 0.2);
        let end = s.extent(1e-4);
        assert!(s.value(end * 1.01) < 1e-4);
        assert!(s.value(end * 0.9) > 1e-4);
    }

    #[test]
    fn pulse_tube_shape_has_two_humps() {
        let s = PulseTubeShape::from_config(&PulseTubeConfig::default());
        let v: Vec<f64> = (1..4000).map(|k| s.value(k as f64 * 1e-5)).collect();
        let maxima = v.windows(3).filter(|w| w[1] > w[0] && w[1] >= w[2]).count();
        assert_eq!(maxima, 2);
    }

    #[test]
    fn radiation_amplitude_saturates_near_impact() {
        let g = DeviceGeometry::default();
        let q5 = g.positions[4];
        let b = BurstProfile::radiation(&g, 0, q5, 4.0, 1.5e-3, 1.0, 5e-3, 0.7e-3);
        assert_eq!(b.amplitudes[4], 1.0);
        // slow qubit Q5 vs fast qubit Q3 after 1 ms
        let slow = b.excess(4, 1e-3) / b.amplitudes[4];
        let fast = b.excess(2, 1e-3) / b.amplitudes[2];
        assert!((slow.ln() / fast.ln() - 0.7 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn zero_energy_has_no_extent() {
        let g = DeviceGeometry::default();
        let b = BurstProfile::radiation(&g, 0, (0.0, 0.0), 0.0, 1.5e-3, 1.0, 5e-3, 0.7e-3);
        assert_eq!(b.extent_samples(6.95e-6), 0);
    }
}
