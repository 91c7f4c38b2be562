//! Scenario configuration.
//!
//! Every field is reachable through a flat, documented key (SI units) so a
//! scenario can be written as a `key = value` file, overridden from the
//! environment (`QPBURST_<KEY>`) and again from the command line.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::geometry::{self, DeviceGeometry, GeometryError};

pub const ENV_PREFIX: &str = "QPBURST_";

/// Baseline T1 per qubit of the reference device, seconds.
pub const REFERENCE_T1: [f64; 10] =
    [12e-6, 31e-6, 62e-6, 27e-6, 50e-6, 43e-6, 60e-6, 13e-6, 37e-6, 49e-6];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },
    #[error("`{key}`: {reason}")]
    Constraint { key: &'static str, reason: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("config file: {0}")]
    File(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseTubeConfig {
    pub enabled: bool,
    /// Fundamental frequency, Hz.
    pub f0: f64,
    /// Start of the first burst as a fraction of one period.
    pub phase: f64,
    /// Time constant of the burst rise, seconds.
    pub rise_time: f64,
    /// Time of the secondary peak after the cycle onset, seconds.
    pub second_delay: f64,
    /// Relative height of the secondary peak.
    pub second_weight: f64,
    /// Log-width of the secondary peak.
    pub width: f64,
    /// Exponential decay lifetime of the burst, seconds.
    pub lifetime: f64,
    /// Median per-cycle peak excess probability.
    pub amp_median: f64,
    /// Log-normal spread of the per-cycle amplitude; 0 gives identical bursts.
    pub amp_log_sigma: f64,
    /// Fixed per-qubit response gains.
    pub gains: Vec<f64>,
    /// Time windows `[start, end)` in seconds during which the cooler is off.
    pub off_windows: Vec<(f64, f64)>,
}

impl Default for PulseTubeConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            f0: 1.4,
            phase: 0.25,
            rise_time: 3e-3,
            second_delay: 1.5e-3,
            second_weight: 1.0,
            width: 0.3,
            lifetime: 15e-3,
            amp_median: 0.3,
            amp_log_sigma: 0.1,
            gains: vec![1.0, 1.0, 0.9, 1.1, 1.0, 0.9, 1.0, 1.8, 0.95, 1.0],
            off_windows: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub geometry: DeviceGeometry,
    /// Baseline T1 per qubit, seconds.
    pub t1: Vec<f64>,
    /// Preparation and measurement fidelity constant per qubit.
    pub fidelity_a: Vec<f64>,
    /// Probability that a measurement is discarded.
    pub prep_infidelity: f64,
    /// Radiation events per second.
    pub radiation_rate: f64,
    pub tau_slow: f64,
    pub tau_fast: f64,
    /// Spatial falloff length of a radiation burst, meters.
    pub falloff: f64,
    /// Radiation energy scale is drawn log-uniformly from this range.
    pub energy_min: f64,
    pub energy_max: f64,
    /// Impacts are drawn uniformly over the qubit bounding box grown by this margin, meters.
    pub impact_margin: f64,
    pub pt: PulseTubeConfig,
    /// 1 for an unprotected device, 0 for full gap-engineering suppression.
    pub suppression_factor: f64,
    pub seed: u64,
    pub n_files: usize,
    pub measurements_per_file: usize,
    pub pitch: f64,
    pub row_spacing: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            geometry: DeviceGeometry::default(),
            t1: REFERENCE_T1.to_vec(),
            fidelity_a: vec![1.0; 10],
            prep_infidelity: 0.01,
            radiation_rate: 0.014,
            tau_slow: 5e-3,
            tau_fast: 0.7e-3,
            falloff: 1.5e-3,
            energy_min: 4.0,
            energy_max: 10.0,
            impact_margin: 0.5e-3,
            pt: PulseTubeConfig::default(),
            suppression_factor: 1.0,
            seed: 1,
            n_files: 999,
            measurements_per_file: 1_000_000,
            pitch: geometry::DEFAULT_PITCH,
            row_spacing: geometry::DEFAULT_ROW_SPACING,
        }
    }
}

/// Documented configuration keys with a one-line description each.
pub const KEYS: &[(&str, &str)] = &[
    ("rows", "row of each qubit, T or B, e.g. TBTBTBTBTB"),
    ("orientations", "junction orientation of each qubit, S or F"),
    ("pitch_m", "qubit pitch within a row, meters"),
    ("row_spacing_m", "distance between the two rows, meters"),
    ("cadence_s", "seconds per measurement"),
    ("readout_delay_s", "pi pulse to readout delay, seconds"),
    ("delta_t_s", "preparation to mid-measurement delay, seconds"),
    ("t1_s", "baseline T1 per qubit, comma separated, seconds"),
    ("fidelity_a", "fidelity constant a per qubit, comma separated"),
    ("prep_infidelity", "probability a measurement is discarded"),
    ("radiation_rate_hz", "radiation events per second"),
    ("tau_slow_s", "recovery lifetime of S qubits, seconds"),
    ("tau_fast_s", "recovery lifetime of F qubits, seconds"),
    ("falloff_m", "spatial falloff length of radiation bursts, meters"),
    ("energy_min", "lower bound of the log-uniform radiation energy scale"),
    ("energy_max", "upper bound of the log-uniform radiation energy scale"),
    ("impact_margin_m", "margin around the qubit array for impact positions, meters"),
    ("pt_enabled", "pulse tube bursts on (true/false)"),
    ("pt_f0_hz", "pulse tube fundamental frequency, Hz"),
    ("pt_phase", "first burst offset as a fraction of one period"),
    ("pt_rise_s", "rise time constant of a burst, seconds"),
    ("pt_second_delay_s", "time of the secondary peak after burst onset, seconds"),
    ("pt_second_weight", "relative height of the secondary peak"),
    ("pt_width", "log-width of the secondary peak"),
    ("pt_lifetime_s", "exponential decay lifetime of a burst, seconds"),
    ("pt_amp_median", "median per-cycle peak excess probability"),
    ("pt_amp_log_sigma", "log-normal spread of per-cycle amplitudes"),
    ("pt_gains", "per-qubit pulse tube gain, comma separated"),
    ("pt_off_windows_s", "cooler-off windows, `start:end` pairs separated by commas"),
    ("suppression_factor", "burst suppression, 1 none, 0 full"),
    ("seed", "random seed"),
    ("n_files", "number of record files"),
    ("measurements_per_file", "measurements per record file"),
];

/// Parses a flat TOML document into textual `(key, value)` pairs. Arrays are
/// joined with commas so that every value reads like a command-line value.
pub fn flat_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::File(e.to_string()))?;
    table
        .into_iter()
        .map(|(key, value)| {
            let text = match value {
                toml::Value::String(s) => s,
                toml::Value::Integer(i) => i.to_string(),
                toml::Value::Float(x) => format!("{x:e}"),
                toml::Value::Boolean(b) => b.to_string(),
                toml::Value::Array(items) => items
                    .iter()
                    .map(|v| match v {
                        toml::Value::Float(x) => Ok(format!("{x:e}")),
                        toml::Value::Integer(i) => Ok(i.to_string()),
                        toml::Value::String(s) => Ok(s.clone()),
                        _ => Err(ConfigError::InvalidValue {
                            key: key.clone(),
                            reason: "arrays may hold numbers or strings only".into(),
                        }),
                    })
                    .collect::<Result<Vec<_>, _>>()?
                    .join(","),
                _ => {
                    return Err(ConfigError::InvalidValue { key, reason: "nested tables are not supported".into() })
                }
            };
            Ok((key, text))
        })
        .collect()
}

fn parse_f64(key: &str, v: &str) -> Result<f64, ConfigError> {
    v.trim().parse::<f64>().map_err(|e| ConfigError::InvalidValue {
        key: key.to_string(),
        reason: e.to_string(),
    })
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>, ConfigError> {
    let v = v.trim().trim_start_matches('[').trim_end_matches(']');
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| parse_f64(key, x)).collect()
}

fn parse_windows(key: &str, v: &str) -> Result<Vec<(f64, f64)>, ConfigError> {
    let v = v.trim();
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|pair| {
            let (a, b) = pair.split_once(':').ok_or_else(|| ConfigError::InvalidValue {
                key: key.to_string(),
                reason: format!("expected start:end, got {pair:?}"),
            })?;
            Ok((parse_f64(key, a)?, parse_f64(key, b)?))
        })
        .collect()
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(",")
}

impl ScenarioConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim().trim_matches('"');
        let f = |v: &str| parse_f64(key, v);
        match key {
            "rows" | "orientations" | "pitch_m" | "row_spacing_m" => {
                match key {
                    "pitch_m" => self.pitch = f(value)?,
                    "row_spacing_m" => self.row_spacing = f(value)?,
                    _ => {}
                }
                let rows = if key == "rows" { value.to_string() } else { self.geometry.rows_string() };
                let orient = if key == "orientations" {
                    value.to_string()
                } else {
                    self.geometry.orientations_string()
                };
                let mut g = DeviceGeometry::two_row_array(&rows, &orient, self.pitch, self.row_spacing)?;
                g.cadence = self.geometry.cadence;
                g.readout_delay = self.geometry.readout_delay;
                g.prep_to_mid_delay = self.geometry.prep_to_mid_delay;
                self.geometry = g;
            }
            "cadence_s" => self.geometry.cadence = f(value)?,
            "readout_delay_s" => self.geometry.readout_delay = f(value)?,
            "delta_t_s" => self.geometry.prep_to_mid_delay = f(value)?,
            "t1_s" => self.t1 = parse_list(key, value)?,
            "fidelity_a" => self.fidelity_a = parse_list(key, value)?,
            "prep_infidelity" => self.prep_infidelity = f(value)?,
            "radiation_rate_hz" => self.radiation_rate = f(value)?,
            "tau_slow_s" => self.tau_slow = f(value)?,
            "tau_fast_s" => self.tau_fast = f(value)?,
            "falloff_m" => self.falloff = f(value)?,
            "energy_min" => self.energy_min = f(value)?,
            "energy_max" => self.energy_max = f(value)?,
            "impact_margin_m" => self.impact_margin = f(value)?,
            "pt_enabled" => {
                self.pt.enabled = match value.to_ascii_lowercase().as_str() {
                    "true" | "1" | "on" | "yes" => true,
                    "false" | "0" | "off" | "no" => false,
                    other => {
                        return Err(ConfigError::InvalidValue {
                            key: key.into(),
                            reason: format!("expected a boolean, got {other:?}"),
                        })
                    }
                }
            }
            "pt_f0_hz" => self.pt.f0 = f(value)?,
            "pt_phase" => self.pt.phase = f(value)?,
            "pt_rise_s" => self.pt.rise_time = f(value)?,
            "pt_second_delay_s" => self.pt.second_delay = f(value)?,
            "pt_second_weight" => self.pt.second_weight = f(value)?,
            "pt_width" => self.pt.width = f(value)?,
            "pt_lifetime_s" => self.pt.lifetime = f(value)?,
            "pt_amp_median" => self.pt.amp_median = f(value)?,
            "pt_amp_log_sigma" => self.pt.amp_log_sigma = f(value)?,
            "pt_gains" => self.pt.gains = parse_list(key, value)?,
            "pt_off_windows_s" => self.pt.off_windows = parse_windows(key, value)?,
            "suppression_factor" => self.suppression_factor = f(value)?,
            "seed" => {
                self.seed = value.parse().map_err(|e: std::num::ParseIntError| {
                    ConfigError::InvalidValue { key: key.into(), reason: e.to_string() }
                })?
            }
            "n_files" | "measurements_per_file" => {
                let n: usize = value.parse().map_err(|e: std::num::ParseIntError| {
                    ConfigError::InvalidValue { key: key.into(), reason: e.to_string() }
                })?;
                if key == "n_files" {
                    self.n_files = n;
                } else {
                    self.measurements_per_file = n;
                }
            }
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Resolved configuration as ordered key/value pairs; feeding them back
    /// through [`ScenarioConfig::set`] reproduces `self`.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let g = &self.geometry;
        let windows = self
            .pt
            .off_windows
            .iter()
            .map(|(a, b)| format!("{a:e}:{b:e}"))
            .collect::<Vec<_>>()
            .join(",");
        [
            ("rows", g.rows_string()),
            ("orientations", g.orientations_string()),
            ("pitch_m", format!("{:e}", self.pitch)),
            ("row_spacing_m", format!("{:e}", self.row_spacing)),
            ("cadence_s", format!("{:e}", g.cadence)),
            ("readout_delay_s", format!("{:e}", g.readout_delay)),
            ("delta_t_s", format!("{:e}", g.prep_to_mid_delay)),
            ("t1_s", join(&self.t1)),
            ("fidelity_a", join(&self.fidelity_a)),
            ("prep_infidelity", format!("{:e}", self.prep_infidelity)),
            ("radiation_rate_hz", format!("{:e}", self.radiation_rate)),
            ("tau_slow_s", format!("{:e}", self.tau_slow)),
            ("tau_fast_s", format!("{:e}", self.tau_fast)),
            ("falloff_m", format!("{:e}", self.falloff)),
            ("energy_min", format!("{:e}", self.energy_min)),
            ("energy_max", format!("{:e}", self.energy_max)),
            ("impact_margin_m", format!("{:e}", self.impact_margin)),
            ("pt_enabled", self.pt.enabled.to_string()),
            ("pt_f0_hz", format!("{:e}", self.pt.f0)),
            ("pt_phase", format!("{:e}", self.pt.phase)),
            ("pt_rise_s", format!("{:e}", self.pt.rise_time)),
            ("pt_second_delay_s", format!("{:e}", self.pt.second_delay)),
            ("pt_second_weight", format!("{:e}", self.pt.second_weight)),
            ("pt_width", format!("{:e}", self.pt.width)),
            ("pt_lifetime_s", format!("{:e}", self.pt.lifetime)),
            ("pt_amp_median", format!("{:e}", self.pt.amp_median)),
            ("pt_amp_log_sigma", format!("{:e}", self.pt.amp_log_sigma)),
            ("pt_gains", join(&self.pt.gains)),
            ("pt_off_windows_s", windows),
            ("suppression_factor", format!("{:e}", self.suppression_factor)),
            ("seed", self.seed.to_string()),
            ("n_files", self.n_files.to_string()),
            ("measurements_per_file", self.measurements_per_file.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Renders the configuration as a flat `key = "value"` file.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_pairs() {
            let _ = writeln!(out, "{k} = \"{v}\"");
        }
        out
    }

    /// Applies a flat `key = value` document on top of `self`. Values may be
    /// bare numbers, booleans, quoted strings or arrays of numbers.
    pub fn apply_file_str(&mut self, text: &str) -> Result<(), ConfigError> {
        for (key, value) in flat_pairs(text)? {
            self.set(&key, &value)?;
        }
        Ok(())
    }

    /// Applies every `QPBURST_<KEY>` variable from `vars`.
    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> Result<(), ConfigError> {
        let mut found: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| {
                let key = k.strip_prefix(ENV_PREFIX)?.to_ascii_lowercase();
                KEYS.iter().any(|(name, _)| *name == key).then_some((key, v))
            })
            .collect();
        found.sort();
        for (k, v) in found {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.geometry.validate()?;
        let n = self.geometry.qubit_count();
        let c = |key: &'static str, reason: String| Err(ConfigError::Constraint { key, reason });
        if self.t1.len() != n {
            return c("t1_s", format!("{} values for {n} qubits", self.t1.len()));
        }
        if self.t1.iter().any(|&t| !(t > 0.0)) {
            return c("t1_s", "every T1 must be positive (use inf for no decay)".into());
        }
        if self.fidelity_a.len() != n {
            return c("fidelity_a", format!("{} values for {n} qubits", self.fidelity_a.len()));
        }
        if self.pt.gains.len() != n {
            return c("pt_gains", format!("{} values for {n} qubits", self.pt.gains.len()));
        }
        if self.pt.gains.iter().any(|&g| !(g >= 0.0)) {
            return c("pt_gains", "gains must be nonnegative".into());
        }
        if !(0.0..=1.0).contains(&self.prep_infidelity) {
            return c("prep_infidelity", "must lie in [0, 1]".into());
        }
        if !(self.radiation_rate >= 0.0) {
            return c("radiation_rate_hz", "must be nonnegative".into());
        }
        if !(self.tau_fast > 0.0) {
            return c("tau_fast_s", "must be positive".into());
        }
        if !(self.tau_slow > self.tau_fast) {
            return c("tau_slow_s", "must exceed tau_fast_s".into());
        }
        if !(self.falloff > 0.0) {
            return c("falloff_m", "must be positive".into());
        }
        if !(self.energy_min >= 0.0 && self.energy_max >= self.energy_min) {
            return c("energy_max", "need 0 <= energy_min <= energy_max".into());
        }
        if !(self.pt.f0 > 0.0) {
            return c("pt_f0_hz", "must be positive".into());
        }
        if !(self.pt.rise_time > 0.0 && self.pt.second_delay >= 0.0 && self.pt.width > 0.0) {
            return c("pt_rise_s", "pulse timing and width must be positive".into());
        }
        if !(self.pt.lifetime > 0.0) {
            return c("pt_lifetime_s", "must be positive".into());
        }
        if !(self.pt.amp_median >= 0.0 && self.pt.amp_log_sigma >= 0.0 && self.pt.second_weight >= 0.0) {
            return c("pt_amp_median", "amplitude parameters must be nonnegative".into());
        }
        if !(0.0..=1.0).contains(&self.suppression_factor) {
            return c("suppression_factor", "must lie in [0, 1]".into());
        }
        if self.n_files == 0 {
            return c("n_files", "must be at least 1".into());
        }
        if self.measurements_per_file == 0 {
            return c("measurements_per_file", "must be at least 1".into());
        }
        for (i, p) in self.baseline_probabilities().iter().enumerate() {
            if !(0.0..=1.0).contains(p) {
                return Err(ConfigError::Constraint {
                    key: "fidelity_a",
                    reason: format!("baseline relaxation probability of Q{} is {p}", i + 1),
                });
            }
        }
        Ok(())
    }

    /// Baseline relaxation probability per qubit, `1 - a exp(-dt / T1)`.
    pub fn baseline_probabilities(&self) -> Vec<f64> {
        let dt = self.geometry.prep_to_mid_delay;
        self.t1
            .iter()
            .zip(&self.fidelity_a)
            .map(|(&t1, &a)| 1.0 - a * (-dt / t1).exp())
            .collect()
    }

    pub fn file_duration(&self) -> f64 {
        self.measurements_per_file as f64 * self.geometry.cadence
    }

    pub fn total_measurements(&self) -> u64 {
        self.n_files as u64 * self.measurements_per_file as u64
    }
}
