//! Dataset-level analysis: detection, characterization and labelling over
//! many files, one file per worker.
//!
//! Each file is analysed together with the tail of its predecessor and the
//! head of its successor, so bursts that straddle a file boundary are scored
//! and fitted as if the record were continuous. A candidate belongs to the
//! file that contains its onset.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::characterize::{
    boxcar_smooth, characterize_at, characterized_header, characterized_row, CharacterizeError,
    CharacterizeParams, CharacterizedEvent,
};
use crate::classify::{build_histogram, classify_event, ClassifyError, CutConfig, Histogram2D, Label};
use crate::detect::{
    build_exponential_filter, candidate, find_peaks, matched_filter, DetectError, FilterKernel,
    DEFAULT_LIFETIME, DEFAULT_N_LIFETIMES, DEFAULT_THRESHOLD,
};
use crate::model::format::{read_record, FormatError};
use crate::model::geometry::DeviceGeometry;
use crate::model::record::{sum_over_qubits, RelaxationRecord};
use crate::synth::{flat_pairs, ConfigError, Dataset, SynthError, ENV_PREFIX};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Characterize(#[from] CharacterizeError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("file {index}: cadence {got} differs from {expected}")]
    CadenceMismatch { index: usize, got: f64, expected: f64 },
    #[error("file {index}: {got} qubits, geometry has {expected}")]
    QubitMismatch { index: usize, got: usize, expected: usize },
    #[error("no input files")]
    NoInput,
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Something that yields the records of a dataset by index.
pub trait RecordSource: Sync {
    fn n_files(&self) -> usize;
    fn load(&self, index: usize) -> Result<RelaxationRecord, AnalysisError>;
}

impl RecordSource for [RelaxationRecord] {
    fn n_files(&self) -> usize {
        self.len()
    }

    fn load(&self, index: usize) -> Result<RelaxationRecord, AnalysisError> {
        Ok(self[index].clone())
    }
}

impl RecordSource for Vec<RelaxationRecord> {
    fn n_files(&self) -> usize {
        self.len()
    }

    fn load(&self, index: usize) -> Result<RelaxationRecord, AnalysisError> {
        Ok(self[index].clone())
    }
}

/// Record files on disk, analysed in the given order.
pub struct RecordFiles(pub Vec<PathBuf>);

impl RecordSource for RecordFiles {
    fn n_files(&self) -> usize {
        self.0.len()
    }

    fn load(&self, index: usize) -> Result<RelaxationRecord, AnalysisError> {
        Ok(read_record(&self.0[index])?)
    }
}

/// Renders synthetic files on demand.
impl RecordSource for Dataset {
    fn n_files(&self) -> usize {
        Dataset::n_files(self)
    }

    fn load(&self, index: usize) -> Result<RelaxationRecord, AnalysisError> {
        Ok(self.generate_file(index)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisParams {
    pub kernel_lifetime: f64,
    pub n_lifetimes: f64,
    pub threshold: f64,
    /// Defaults to one kernel length.
    pub min_separation: Option<usize>,
    pub smooth_window: usize,
    /// Defaults to `max(20 ms, 5 kernel lifetimes)`.
    pub fit_span_s: Option<f64>,
    pub peak_before_s: f64,
    pub peak_after_s: f64,
    pub cuts: CutConfig,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        Self {
            kernel_lifetime: DEFAULT_LIFETIME,
            n_lifetimes: DEFAULT_N_LIFETIMES,
            threshold: DEFAULT_THRESHOLD,
            min_separation: None,
            smooth_window: crate::characterize::DEFAULT_SMOOTH_WINDOW,
            fit_span_s: None,
            peak_before_s: 5e-3,
            peak_after_s: 20e-3,
            cuts: CutConfig::default(),
        }
    }
}

/// Documented analysis keys with a one-line description each.
pub const ANALYSIS_KEYS: &[(&str, &str)] = &[
    ("kernel_lifetime_s", "decay constant of the matched-filter kernel, seconds"),
    ("n_lifetimes", "kernel length in kernel lifetimes"),
    ("threshold", "minimum filter score of a candidate"),
    ("min_separation", "minimum spacing of candidates, samples (default: kernel length)"),
    ("smooth_window", "boxcar window before fitting, samples"),
    ("fit_span_s", "length of the decay fit, seconds (default: max(20 ms, 5 kernel lifetimes))"),
    ("peak_before_s", "per-qubit peak window before the onset, seconds"),
    ("peak_after_s", "per-qubit peak window after the onset, seconds"),
    ("radiation_lifetime_max_s", "radiation cut: lifetime below, seconds"),
    ("radiation_score_min", "radiation cut: score above"),
    ("pt_lifetime_min_s", "pulse tube cut: lifetime above, seconds"),
    ("pt_score_min", "pulse tube cut: score above"),
];

impl AnalysisParams {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim().trim_matches('"');
        let f = || {
            value
                .parse::<f64>()
                .map_err(|e| ConfigError::InvalidValue { key: key.to_string(), reason: e.to_string() })
        };
        let n = || {
            value
                .parse::<usize>()
                .map_err(|e| ConfigError::InvalidValue { key: key.to_string(), reason: e.to_string() })
        };
        match key {
            "kernel_lifetime_s" => self.kernel_lifetime = f()?,
            "n_lifetimes" => self.n_lifetimes = f()?,
            "threshold" => self.threshold = f()?,
            "min_separation" => self.min_separation = Some(n()?),
            "smooth_window" => self.smooth_window = n()?,
            "fit_span_s" => self.fit_span_s = Some(f()?),
            "peak_before_s" => self.peak_before_s = f()?,
            "peak_after_s" => self.peak_after_s = f()?,
            "radiation_lifetime_max_s" => self.cuts.radiation.lifetime_max = f()?,
            "radiation_score_min" => self.cuts.radiation.score_min = f()?,
            "pt_lifetime_min_s" => self.cuts.pt.lifetime_min = f()?,
            "pt_score_min" => self.cuts.pt.score_min = f()?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Applies every `QPBURST_<KEY>` variable naming an analysis key.
    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> Result<(), ConfigError> {
        let mut found: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| {
                let key = k.strip_prefix(ENV_PREFIX)?.to_ascii_lowercase();
                ANALYSIS_KEYS.iter().any(|(name, _)| *name == key).then_some((key, v))
            })
            .collect();
        found.sort();
        for (k, v) in found {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    /// Every key with its current value; unset optional keys are omitted.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("kernel_lifetime_s", format!("{:e}", self.kernel_lifetime));
        put("n_lifetimes", format!("{:e}", self.n_lifetimes));
        put("threshold", format!("{:e}", self.threshold));
        if let Some(n) = self.min_separation {
            put("min_separation", n.to_string());
        }
        put("smooth_window", self.smooth_window.to_string());
        if let Some(s) = self.fit_span_s {
            put("fit_span_s", format!("{s:e}"));
        }
        put("peak_before_s", format!("{:e}", self.peak_before_s));
        put("peak_after_s", format!("{:e}", self.peak_after_s));
        put("radiation_lifetime_max_s", format!("{:e}", self.cuts.radiation.lifetime_max));
        put("radiation_score_min", format!("{:e}", self.cuts.radiation.score_min));
        put("pt_lifetime_min_s", format!("{:e}", self.cuts.pt.lifetime_min));
        put("pt_score_min", format!("{:e}", self.cuts.pt.score_min));
        m
    }

    pub fn apply_file_str(&mut self, text: &str) -> Result<(), ConfigError> {
        for (k, v) in flat_pairs(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn kernel(&self, cadence: f64) -> Result<FilterKernel, DetectError> {
        build_exponential_filter(self.kernel_lifetime, cadence, self.n_lifetimes)
    }

    pub fn characterize_params(&self, cadence: f64) -> CharacterizeParams {
        let mut p = CharacterizeParams::defaults(cadence, self.kernel_lifetime);
        p.smooth_window = self.smooth_window;
        p.peak_window.smooth = self.smooth_window;
        if let Some(s) = self.fit_span_s {
            p.fit_span = (s / cadence).round() as usize;
        }
        p.peak_window.before = (self.peak_before_s / cadence).round() as usize;
        p.peak_window.after = (self.peak_after_s / cadence).round() as usize;
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileFailure {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOutput {
    pub events: Vec<CharacterizedEvent>,
    pub labels: Vec<Label>,
    pub kernel_len: usize,
    pub cadence: f64,
    /// Files that could not be analysed. Their neighbours are analysed
    /// without context across the missing file.
    pub failures: Vec<FileFailure>,
}

impl AnalysisOutput {
    pub fn histogram(&self) -> Histogram2D {
        let h = Histogram2D::default_binning();
        build_histogram(&self.events, h.lifetime_edges, h.score_edges).expect("default edges are valid")
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        let qubits = self.events.first().map_or(10, |e| e.peaks.len());
        let mut header = characterized_header(qubits);
        header.push("label".into());
        w.write_record(&header)?;
        for (e, l) in self.events.iter().zip(&self.labels) {
            let mut row = characterized_row(e);
            row.push(l.as_str().into());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Margins {
    before: usize,
    after: usize,
}

fn margins(kernel_len: usize, min_sep: usize, cp: &CharacterizeParams) -> Margins {
    Margins {
        before: (2 * min_sep).max(cp.peak_window.before),
        after: kernel_len + min_sep + cp.fit_span.max(cp.peak_window.after) + cp.smooth_window,
    }
}

fn contiguous(a: &RelaxationRecord, b: &RelaxationRecord) -> bool {
    a.first_global_index() + a.len() as u64 == b.first_global_index()
}

fn check(index: usize, r: &RelaxationRecord, cadence: f64, qubits: usize) -> Result<(), AnalysisError> {
    if (r.cadence() - cadence).abs() > 1e-9 * cadence {
        return Err(AnalysisError::CadenceMismatch { index, got: r.cadence(), expected: cadence });
    }
    if r.qubit_count() != qubits {
        return Err(AnalysisError::QubitMismatch { index, got: r.qubit_count(), expected: qubits });
    }
    Ok(())
}

/// Analyses file `index` of `source` with its neighbours as context.
pub fn analyze_file<S: RecordSource + ?Sized>(
    source: &S,
    index: usize,
    params: &AnalysisParams,
    geometry: &DeviceGeometry,
) -> Result<(Vec<CharacterizedEvent>, Vec<Label>), AnalysisError> {
    let own = source.load(index)?;
    let cadence = geometry.cadence;
    let qubits = geometry.qubit_count();
    check(index, &own, cadence, qubits)?;
    let kernel = params.kernel(cadence)?;
    let min_sep = params.min_separation.unwrap_or(kernel.len());
    let cp = params.characterize_params(cadence);
    let m = margins(kernel.len(), min_sep, &cp);

    // an unreadable or mismatched neighbour is reported on its own turn
    let neighbour = |i: usize| source.load(i).ok().filter(|r| check(i, r, cadence, qubits).is_ok());
    let prev = index.checked_sub(1).and_then(neighbour).and_then(|r| {
        let from = r.len().saturating_sub(m.before);
        let tail = r.slice(from, r.len()).expect("tail slice within bounds");
        contiguous(&tail, &own).then_some(tail)
    });
    let next = (index + 1 < source.n_files()).then(|| neighbour(index + 1)).flatten().and_then(|r| {
        let head = r.slice(0, m.after.min(r.len())).expect("head slice within bounds");
        contiguous(&own, &head).then_some(head)
    });
    let offset = prev.as_ref().map_or(0, |p| p.len());
    let parts: Vec<&RelaxationRecord> = prev.iter().chain(std::iter::once(&own)).chain(next.iter()).collect();
    let joined = if parts.len() == 1 {
        own.clone()
    } else {
        RelaxationRecord::concat(&parts).expect("neighbouring files share layout")
    };
    let g0 = joined.first_global_index();

    let summed = sum_over_qubits(&joined).as_f64();
    if summed.len() < kernel.len() {
        return Ok((Vec::new(), Vec::new()));
    }
    let scores = matched_filter(&summed, &kernel)?;
    let smoothed = boxcar_smooth(&summed, cp.smooth_window.min(summed.len()))?;

    let mut events = Vec::new();
    let mut labels = Vec::new();
    for (t, score) in find_peaks(&scores, params.threshold, min_sep) {
        if t < offset || t >= offset + own.len() {
            continue;
        }
        let c = candidate(index, t - offset, g0 + offset as u64, cadence, score);
        let e = characterize_at(c, &joined, &smoothed, t, &cp, geometry);
        labels.push(classify_event(&e, &params.cuts));
        events.push(e);
    }
    Ok((events, labels))
}

/// Analyses every file of `source` on `workers` threads (0: all cores).
/// The output order, and every number in it, is independent of `workers`.
/// Per-file failures are collected rather than aborting the run.
pub fn analyze<S: RecordSource + ?Sized>(
    source: &S,
    params: &AnalysisParams,
    geometry: &DeviceGeometry,
    workers: usize,
) -> Result<AnalysisOutput, AnalysisError> {
    let n = source.n_files();
    if n == 0 {
        return Err(AnalysisError::NoInput);
    }
    params.cuts.validate()?;
    let cadence = geometry.cadence;
    let kernel_len = params.kernel(cadence)?.len();
    let run = || -> Vec<_> { (0..n).into_par_iter().map(|i| analyze_file(source, i, params, geometry)).collect() };
    let per_file = if workers == 0 {
        run()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| AnalysisError::Pool(e.to_string()))?
            .install(run)
    };
    let (mut events, mut labels, mut failures) = (Vec::new(), Vec::new(), Vec::new());
    for (index, r) in per_file.into_iter().enumerate() {
        match r {
            Ok((e, l)) => {
                events.extend(e);
                labels.extend(l);
            }
            Err(e) => failures.push(FileFailure { index, reason: e.to_string() }),
        }
    }
    Ok(AnalysisOutput { events, labels, kernel_len, cadence, failures })
}
