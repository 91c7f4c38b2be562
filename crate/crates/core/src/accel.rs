//! Accelerometer traces: loading, the acquisition instrument's moving-average
//! enhancement, ASDs in g/sqrt(Hz) and harmonic comparisons between two
//! environments.
//!
//! Trace files are CSV with a `# key = value` header followed by `time_s,volts`
//! rows. Recognised keys are `rate_hz` (required), `axis`, `environment` and
//! `gain`.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::{local_noise, SpectralError, SpectralTable, WelchAccumulator, WelchParams};

pub const DEFAULT_RATE: f64 = 50_000.0;
pub const DEFAULT_ENHANCE_WINDOW: usize = 256;
/// Harmonics whose amplitude is below this multiple of the local median are flagged.
pub const NOISE_FLOOR_FACTOR: f64 = 3.0;

#[derive(Debug, Error)]
pub enum AccelError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {reason}")]
    Malformed { path: PathBuf, line: usize, reason: String },
    #[error("{0}: no samples")]
    Empty(PathBuf),
    #[error("no input files")]
    NoInput,
    #[error("{path}: missing header key `{key}`")]
    MissingKey { path: PathBuf, key: &'static str },
    #[error("rate mismatch: {path} has {got} Hz, expected {expected} Hz")]
    RateMismatch { path: PathBuf, got: f64, expected: f64 },
    #[error("unknown axis `{0}`")]
    BadAxis(String),
    #[error("volts-per-g calibration must be positive and finite, got {0}")]
    Calibration(f64),
    #[error("moving-average window must be at least 1")]
    ZeroWindow,
    #[error("window of {window} samples exceeds a segment of {len}")]
    WindowTooLong { window: usize, len: usize },
    #[error("frequency grids differ and resampling is off")]
    IncompatibleGrids,
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "X",
            Axis::Y => "Y",
            Axis::Z => "Z",
        })
    }
}

impl FromStr for Axis {
    type Err = AccelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "X" => Ok(Axis::X),
            "Y" => Ok(Axis::Y),
            "Z" => Ok(Axis::Z),
            _ => Err(AccelError::BadAxis(s.to_string())),
        }
    }
}

/// Voltage samples from one accelerometer axis. `segments` holds the ranges of
/// contiguous data; a gap lies between consecutive segments.
#[derive(Debug, Clone, PartialEq)]
pub struct AccelTrace {
    pub samples: Vec<f64>,
    pub rate: f64,
    pub axis: Axis,
    pub environment: String,
    /// Volts per g, including converter and conditioner gain.
    pub volts_per_g: f64,
    pub segments: Vec<Range<usize>>,
}

impl AccelTrace {
    pub fn new(samples: Vec<f64>, rate: f64, axis: Axis, environment: &str, volts_per_g: f64) -> Result<Self, AccelError> {
        if !(volts_per_g > 0.0 && volts_per_g.is_finite()) {
            return Err(AccelError::Calibration(volts_per_g));
        }
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(SpectralError::BadRate.into());
        }
        let segments = vec![0..samples.len()];
        Ok(Self { samples, rate, axis, environment: environment.to_string(), volts_per_g, segments })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.rate
    }

    pub fn segment(&self, i: usize) -> &[f64] {
        &self.samples[self.segments[i].clone()]
    }

    /// Writes the trace as one file; gaps are not represented.
    pub fn write_csv<W: Write>(&self, mut out: W, gain: f64) -> std::io::Result<()> {
        writeln!(out, "# rate_hz = {}", self.rate)?;
        writeln!(out, "# axis = {}", self.axis)?;
        writeln!(out, "# environment = {}", self.environment)?;
        writeln!(out, "# gain = {gain}")?;
        writeln!(out, "time_s,volts")?;
        for (i, v) in self.samples.iter().enumerate() {
            writeln!(out, "{:.6},{:.9e}", i as f64 / self.rate, v)?;
        }
        Ok(())
    }
}

struct TraceFile {
    rate: f64,
    axis: Option<Axis>,
    environment: Option<String>,
    samples: Vec<f64>,
}

fn read_trace_file(path: &Path) -> Result<TraceFile, AccelError> {
    let io = |source| AccelError::Io { path: path.to_path_buf(), source };
    let bad = |line: usize, reason: String| AccelError::Malformed { path: path.to_path_buf(), line, reason };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let (mut rate, mut axis, mut environment) = (None, None, None);
    let mut samples = Vec::new();
    let mut seen_columns = false;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        let n = i + 1;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if let Some(h) = text.strip_prefix('#') {
            let Some((k, v)) = h.split_once('=') else { continue };
            let v = v.trim();
            match k.trim() {
                "rate_hz" => rate = Some(v.parse::<f64>().map_err(|e| bad(n, format!("rate_hz: {e}")))?),
                "axis" => axis = Some(v.parse::<Axis>()?),
                "environment" => environment = Some(v.to_string()),
                _ => {}
            }
            continue;
        }
        if !seen_columns && text.starts_with(|c: char| c.is_ascii_alphabetic()) {
            seen_columns = true;
            continue;
        }
        let mut cols = text.split(',');
        let (Some(_), Some(v), None) = (cols.next(), cols.next(), cols.next()) else {
            return Err(bad(n, "expected two columns".into()));
        };
        let v: f64 = v.trim().parse().map_err(|e| bad(n, format!("volts: {e}")))?;
        if !v.is_finite() {
            return Err(bad(n, "non-finite sample".into()));
        }
        samples.push(v);
    }
    if samples.is_empty() {
        return Err(AccelError::Empty(path.to_path_buf()));
    }
    let rate = rate.ok_or(AccelError::MissingKey { path: path.to_path_buf(), key: "rate_hz" })?;
    Ok(TraceFile { rate, axis, environment, samples })
}

/// Loads and concatenates trace files in order, marking each file boundary as
/// a gap. `axis` and `environment` override the file headers.
pub fn load_accel_trace(
    paths: &[PathBuf],
    volts_per_g: f64,
    axis: Option<Axis>,
    environment: Option<&str>,
) -> Result<AccelTrace, AccelError> {
    if paths.is_empty() {
        return Err(AccelError::NoInput);
    }
    let files: Vec<TraceFile> = paths.par_iter().map(|p| read_trace_file(p)).collect::<Result<_, _>>()?;
    let rate = files[0].rate;
    for (f, p) in files.iter().zip(paths) {
        if f.rate != rate {
            return Err(AccelError::RateMismatch { path: p.clone(), got: f.rate, expected: rate });
        }
    }
    let axis = axis
        .or(files[0].axis)
        .ok_or(AccelError::MissingKey { path: paths[0].clone(), key: "axis" })?;
    let environment = environment.map(str::to_string).or_else(|| files[0].environment.clone()).unwrap_or_default();
    let mut samples = Vec::with_capacity(files.iter().map(|f| f.samples.len()).sum());
    let mut segments = Vec::with_capacity(files.len());
    for f in files {
        let start = samples.len();
        samples.extend(f.samples);
        segments.push(start..samples.len());
    }
    let mut t = AccelTrace::new(samples, rate, axis, &environment, volts_per_g)?;
    t.segments = segments;
    Ok(t)
}

/// Trailing moving average of `window` samples within each segment. Each
/// segment loses its first `window - 1` samples; the rate is unchanged.
pub fn resolution_enhance(t: &AccelTrace, window: usize) -> Result<AccelTrace, AccelError> {
    if window == 0 {
        return Err(AccelError::ZeroWindow);
    }
    if let Some(s) = t.segments.iter().find(|s| s.len() < window) {
        return Err(AccelError::WindowTooLong { window, len: s.len() });
    }
    if window == 1 {
        return Ok(t.clone());
    }
    let mut samples = Vec::with_capacity(t.samples.len());
    let mut segments = Vec::with_capacity(t.segments.len());
    for s in &t.segments {
        let x = &t.samples[s.clone()];
        let start = samples.len();
        let mut acc: f64 = x[..window].iter().sum();
        samples.push(acc / window as f64);
        for i in window..x.len() {
            acc += x[i] - x[i - window];
            samples.push(acc / window as f64);
        }
        segments.push(start..samples.len());
    }
    Ok(AccelTrace { samples, segments, ..t.clone() })
}

/// Magnitude response of a `window`-sample moving average at frequency `f`.
pub fn moving_average_response(f: f64, window: usize, rate: f64) -> f64 {
    let x = std::f64::consts::PI * f / rate;
    let den = window as f64 * x.sin();
    if den.abs() < 1e-300 {
        1.0
    } else {
        ((window as f64 * x).sin() / den).abs()
    }
}

/// ASD in g/sqrt(Hz), averaged over every segment without crossing gaps.
pub fn accel_asd(t: &AccelTrace, params: WelchParams) -> Result<SpectralTable, AccelError> {
    let mut acc = WelchAccumulator::new(params, t.rate)?;
    let scale = 1.0 / t.volts_per_g;
    for i in 0..t.segments.len() {
        let g: Vec<f64> = t.segment(i).iter().map(|v| v * scale).collect();
        acc.feed(&g);
    }
    if acc.count() == 0 {
        let longest = t.segments.iter().map(|s| s.len()).max().unwrap_or(0);
        return Err(SpectralError::SegmentTooLong { segment: params.segment_len, len: longest }.into());
    }
    Ok(acc.finish()?)
}

/// Undoes the moving-average response. Bins where the response is below
/// `1e-3` become NaN.
pub fn correct_enhancement(table: &SpectralTable, window: usize) -> SpectralTable {
    let mut out = table.clone();
    for (a, &f) in out.asd.iter_mut().zip(&table.frequencies) {
        let h = moving_average_response(f, window, table.sample_rate);
        *a = if h < 1e-3 { f64::NAN } else { *a / h };
    }
    out
}

/// Peak amplitude of a tone near `f`, from the power in `half_width` bins on
/// either side of the nearest bin.
pub fn tone_amplitude(table: &SpectralTable, f: f64, half_width: usize) -> Option<f64> {
    let c = table.bin_of(f)?;
    let lo = c.saturating_sub(half_width);
    let hi = (c + half_width).min(table.asd.len() - 1);
    let power: f64 = table.asd[lo..=hi].iter().map(|a| a * a).sum::<f64>() * table.df();
    Some((2.0 * power).sqrt())
}

/// Re-bins `fine` onto the grid of `coarse` by averaging power over the fine
/// bins that fall within each coarse bin.
pub fn resample_to(fine: &SpectralTable, coarse: &SpectralTable) -> SpectralTable {
    let half = 0.5 * coarse.df();
    let mut sum = vec![0.0; coarse.asd.len()];
    let mut count = vec![0usize; coarse.asd.len()];
    for (&f, &a) in fine.frequencies.iter().zip(&fine.asd) {
        let j = ((f - half) / coarse.df()).floor() as i64;
        if j >= 0 && (j as usize) < sum.len() {
            sum[j as usize] += a * a;
            count[j as usize] += 1;
        }
    }
    SpectralTable {
        frequencies: coarse.frequencies.clone(),
        asd: sum.iter().zip(&count).map(|(&s, &n)| if n > 0 { (s / n as f64).sqrt() } else { f64::NAN }).collect(),
        sample_rate: coarse.sample_rate,
        params: coarse.params,
        averages: fine.averages,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PeakFlag {
    Ok,
    ABelowFloor,
    BBelowFloor,
    BothBelowFloor,
}

impl PeakFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            PeakFlag::Ok => "ok",
            PeakFlag::ABelowFloor => "a_below_floor",
            PeakFlag::BBelowFloor => "b_below_floor",
            PeakFlag::BothBelowFloor => "both_below_floor",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HarmonicPair {
    pub k: usize,
    pub frequency: f64,
    pub amp_a: f64,
    pub amp_b: f64,
    pub ratio: f64,
    pub flag: PeakFlag,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HarmonicComparison {
    pub f0: f64,
    pub harmonics: Vec<HarmonicPair>,
}

impl HarmonicComparison {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "k,f_k,amp_a,amp_b,ratio,flag")?;
        for h in &self.harmonics {
            writeln!(out, "{},{:.6},{:.6e},{:.6e},{:.6e},{}", h.k, h.frequency, h.amp_a, h.amp_b, h.ratio, h.flag.as_str())?;
        }
        Ok(())
    }
}

fn same_grid(a: &SpectralTable, b: &SpectralTable) -> bool {
    a.sample_rate == b.sample_rate && a.params.segment_len == b.params.segment_len
}

/// Largest ASD value within one bin of `bin`, and whether it clears the noise floor.
fn peak(t: &SpectralTable, bin: usize) -> (f64, bool) {
    let hi = (bin + 1).min(t.asd.len() - 1);
    let amp = t.asd[bin.saturating_sub(1)..=hi].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (amp, amp >= NOISE_FLOOR_FACTOR * local_noise(&t.asd, bin))
}

/// Compares the first `harmonics` multiples of `f0` between two ASDs. With
/// `resample`, tables on different grids are brought to the coarser one.
pub fn compare_pt_peaks(
    a: &SpectralTable,
    b: &SpectralTable,
    f0: f64,
    harmonics: usize,
    resample: bool,
) -> Result<HarmonicComparison, AccelError> {
    if harmonics == 0 {
        return Err(SpectralError::NoHarmonics.into());
    }
    let (a, b) = if same_grid(a, b) {
        (a.clone(), b.clone())
    } else if !resample {
        return Err(AccelError::IncompatibleGrids);
    } else if a.df() >= b.df() {
        (a.clone(), resample_to(b, a))
    } else {
        (resample_to(a, b), b.clone())
    };
    let out = (1..=harmonics)
        .map(|k| {
            let f = k as f64 * f0;
            let bin = a
                .bin_of(f)
                .ok_or(SpectralError::BeyondNyquist { k, f, nyquist: a.nyquist() })?;
            let (amp_a, ok_a) = peak(&a, bin);
            let (amp_b, ok_b) = peak(&b, bin);
            let flag = match (ok_a, ok_b) {
                (true, true) => PeakFlag::Ok,
                (false, true) => PeakFlag::ABelowFloor,
                (true, false) => PeakFlag::BBelowFloor,
                (false, false) => PeakFlag::BothBelowFloor,
            };
            Ok(HarmonicPair { k, frequency: a.frequencies[bin], amp_a, amp_b, ratio: amp_a / amp_b, flag })
        })
        .collect::<Result<Vec<_>, AccelError>>()?;
    Ok(HarmonicComparison { f0, harmonics: out })
}

/// Synthetic vibration: a harmonic comb in g plus white noise, expressed in volts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VibrationModel {
    pub rate: f64,
    pub duration: f64,
    pub f0: f64,
    /// Peak amplitude of each harmonic, g.
    pub harmonic_amplitudes: Vec<f64>,
    /// White noise density, g/sqrt(Hz).
    pub noise_density: f64,
    pub volts_per_g: f64,
}

impl VibrationModel {
    pub fn render(&self, axis: Axis, environment: &str, seed: u64) -> Result<AccelTrace, AccelError> {
        let n = (self.duration * self.rate).round() as usize;
        // one-sided density d corresponds to a per-sample sigma of d * sqrt(fs / 2)
        let sigma = self.noise_density * (0.5 * self.rate).sqrt();
        let normal = Normal::new(0.0, sigma.max(0.0)).map_err(|_| AccelError::Calibration(sigma))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tau = 2.0 * std::f64::consts::PI;
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / self.rate;
                let comb: f64 = self
                    .harmonic_amplitudes
                    .iter()
                    .enumerate()
                    .map(|(k, a)| a * (tau * (k + 1) as f64 * self.f0 * t + 0.3 * k as f64).sin())
                    .sum();
                (comb + normal.sample(&mut rng)) * self.volts_per_g
            })
            .collect();
        AccelTrace::new(samples, self.rate, axis, environment, self.volts_per_g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn trace(samples: Vec<f64>, rate: f64, vpg: f64) -> AccelTrace {
        AccelTrace::new(samples, rate, Axis::X, "test", vpg).unwrap()
    }

    fn sine(n: usize, rate: f64, f: f64, amp: f64) -> Vec<f64> {
        (0..n).map(|i| amp * (2.0 * PI * f * i as f64 / rate).sin()).collect()
    }

    #[test]
    fn enhancement_matches_direct_mean() {
        let t = trace(sine(5000, 1000.0, 37.0, 1.0), 1000.0, 1.0);
        assert_eq!(resolution_enhance(&t, 1).unwrap().samples, t.samples);
        let w = 16;
        let e = resolution_enhance(&t, w).unwrap();
        assert_eq!(e.len(), 5000 - w + 1);
        for (i, v) in e.samples.iter().enumerate() {
            let direct = t.samples[i..i + w].iter().sum::<f64>() / w as f64;
            assert!((v - direct).abs() < 1e-12);
        }
        let c = resolution_enhance(&trace(vec![2.5; 1000], 1000.0, 1.0), 256).unwrap();
        assert!(c.samples.iter().all(|&v| (v - 2.5).abs() < 1e-12));
        assert!(matches!(resolution_enhance(&t, 6000), Err(AccelError::WindowTooLong { .. })));
        assert!(matches!(resolution_enhance(&t, 0), Err(AccelError::ZeroWindow)));
    }

    #[test]
    fn sinusoid_gain_follows_response() {
        let (rate, w, f) = (1000.0, 16, 37.0);
        let e = resolution_enhance(&trace(sine(20_000, rate, f, 1.0), rate, 1.0), w).unwrap();
        let peak = e.samples[100..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let h = moving_average_response(f, w, rate);
        assert!((peak - h).abs() < 2e-3, "{peak} {h}");
    }

    #[test]
    fn asd_calibration_and_tone_recovery() {
        let rate = 50_000.0;
        let vpg = 0.1;
        let t = trace(sine(1_000_000, rate, 10.0, vpg), rate, vpg);
        let p = WelchParams::new(50_000);
        let a = accel_asd(&t, p).unwrap();
        let amp = tone_amplitude(&a, 10.0, 3).unwrap();
        assert!((amp - 1.0).abs() < 0.02, "{amp}");
        let doubled = AccelTrace { volts_per_g: 2.0 * vpg, ..t.clone() };
        let b = accel_asd(&doubled, p).unwrap();
        for (x, y) in a.asd.iter().zip(&b.asd) {
            assert!((x - 2.0 * y).abs() <= 1e-12 * x.abs().max(1e-30));
        }
        let zero = accel_asd(&trace(vec![0.0; 100_000], rate, 1.0), p).unwrap();
        assert!(zero.asd.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn enhanced_asd_equals_response_times_raw() {
        let m = VibrationModel {
            rate: 2000.0,
            duration: 200.0,
            f0: 1.4,
            harmonic_amplitudes: vec![],
            noise_density: 1e-3,
            volts_per_g: 1.0,
        };
        let t = m.render(Axis::Z, "x", 3).unwrap();
        let w = 8;
        let p = WelchParams::new(4000);
        let raw = accel_asd(&t, p).unwrap();
        let enh = accel_asd(&resolution_enhance(&t, w).unwrap(), p).unwrap();
        let mut worst = 0.0f64;
        for i in 0..raw.asd.len() {
            let h = moving_average_response(raw.frequencies[i], w, t.rate);
            if h < 0.2 {
                continue;
            }
            // compare band averages; single bins carry Welch scatter
            if i % 50 == 0 && i + 50 < raw.asd.len() {
                let r: f64 = (i..i + 50).map(|j| (raw.asd[j] * moving_average_response(raw.frequencies[j], w, t.rate)).powi(2)).sum();
                let e: f64 = (i..i + 50).map(|j| enh.asd[j].powi(2)).sum();
                worst = worst.max(((e / r).sqrt() - 1.0).abs());
            }
        }
        assert!(worst < 0.02, "{worst}");
    }

    fn table(asd: Vec<f64>, df: f64) -> SpectralTable {
        let n = asd.len();
        SpectralTable {
            frequencies: (1..=n).map(|k| k as f64 * df).collect(),
            asd,
            sample_rate: 2.0 * n as f64 * df,
            params: WelchParams::new(2 * n),
            averages: 1,
        }
    }

    fn comb_table(n: usize, df: f64, f0: f64, k: usize, height: f64, seed: u64) -> SpectralTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(1.0, 0.1).unwrap();
        let mut asd: Vec<f64> = (0..n).map(|_| noise.sample(&mut rng)).collect();
        for j in 1..=k {
            let bin = (j as f64 * f0 / df).round() as usize - 1;
            asd[bin] += height;
        }
        table(asd, df)
    }

    #[test]
    fn comparison_identity_scaling_and_swap() {
        let a = comb_table(2000, 0.05, 1.4, 5, 20.0, 1);
        let same = compare_pt_peaks(&a, &a, 1.4, 5, false).unwrap();
        assert!(same.harmonics.iter().all(|h| h.ratio == 1.0 && h.flag == PeakFlag::Ok));
        let b = SpectralTable { asd: a.asd.iter().map(|v| 2.0 * v).collect(), ..a.clone() };
        let half = compare_pt_peaks(&a, &b, 1.4, 5, false).unwrap();
        assert!(half.harmonics.iter().all(|h| h.ratio == 0.5));
        let c = comb_table(2000, 0.05, 1.4, 5, 5.0, 2);
        let ac = compare_pt_peaks(&a, &c, 1.4, 5, false).unwrap();
        let ca = compare_pt_peaks(&c, &a, 1.4, 5, false).unwrap();
        for (x, y) in ac.harmonics.iter().zip(&ca.harmonics) {
            assert!((x.ratio * y.ratio - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn comb_missing_in_b_is_flagged() {
        let a = comb_table(2000, 0.05, 1.4, 5, 20.0, 1);
        let b = comb_table(2000, 0.05, 1.4, 0, 0.0, 2);
        let r = compare_pt_peaks(&a, &b, 1.4, 5, false).unwrap();
        assert!(r.harmonics.iter().all(|h| h.flag == PeakFlag::BBelowFloor));
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("k,f_k,amp_a,amp_b,ratio,flag\n1,"));
    }

    #[test]
    fn grids_must_match_unless_resampled() {
        let a = comb_table(2000, 0.05, 1.4, 3, 20.0, 1);
        let b = comb_table(1000, 0.1, 1.4, 3, 20.0, 2);
        assert!(matches!(compare_pt_peaks(&a, &b, 1.4, 3, false), Err(AccelError::IncompatibleGrids)));
        let r = compare_pt_peaks(&a, &b, 1.4, 3, true).unwrap();
        assert_eq!(r.harmonics.len(), 3);
        assert!((r.harmonics[0].frequency - 1.4).abs() < 0.051);
    }

    #[test]
    fn stronger_comb_environment_has_larger_fundamental() {
        let base = VibrationModel {
            rate: 1000.0,
            duration: 120.0,
            f0: 1.4,
            harmonic_amplitudes: vec![2e-3, 1e-3, 5e-4],
            noise_density: 1e-5,
            volts_per_g: 0.5,
        };
        let weak = VibrationModel { harmonic_amplitudes: vec![5e-4, 3e-4, 2e-4], ..base.clone() };
        let p = WelchParams::new(10_000);
        let dr1 = accel_asd(&base.render(Axis::X, "DR1", 1).unwrap(), p).unwrap();
        let dr2 = accel_asd(&weak.render(Axis::X, "DR2", 2).unwrap(), p).unwrap();
        let c = compare_pt_peaks(&dr1, &dr2, 1.4, 3, false).unwrap();
        assert!(c.harmonics[0].ratio > 1.0);
        assert_eq!(c.harmonics[0].flag, PeakFlag::Ok);
    }

    #[test]
    fn load_concatenates_with_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let mk = |name: &str, n: usize, rate: f64| {
            let t = AccelTrace::new((0..n).map(|i| i as f64).collect(), rate, Axis::Y, "DR1", 1.0).unwrap();
            let p = dir.path().join(name);
            t.write_csv(File::create(&p).unwrap(), 100.0).unwrap();
            p
        };
        let a = mk("a.csv", 100, 500.0);
        let b = mk("b.csv", 50, 500.0);
        let t = load_accel_trace(&[a.clone(), b.clone()], 0.2, None, None).unwrap();
        assert_eq!(t.len(), 150);
        assert_eq!(t.segments, vec![0..100, 100..150]);
        assert_eq!((t.axis, t.environment.as_str(), t.rate), (Axis::Y, "DR1", 500.0));
        assert_eq!(t.samples[100], 0.0);
        let e = resolution_enhance(&t, 10).unwrap();
        assert_eq!(e.segments, vec![0..91, 91..132]);

        let c = mk("c.csv", 50, 400.0);
        let err = load_accel_trace(&[a.clone(), c], 0.2, None, None).unwrap_err();
        assert!(err.to_string().contains("rate mismatch"));
        let empty = dir.path().join("empty.csv");
        std::fs::write(&empty, "# rate_hz = 500\ntime_s,volts\n").unwrap();
        assert!(matches!(load_accel_trace(&[empty], 0.2, None, None), Err(AccelError::Empty(_))));
        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "# rate_hz = 500\n# axis = X\ntime_s,volts\n0,1\n0.002,abc\n").unwrap();
        assert!(matches!(load_accel_trace(&[bad], 0.2, None, None), Err(AccelError::Malformed { line: 5, .. })));
        assert!(matches!(load_accel_trace(&[a], 0.0, None, None), Err(AccelError::Calibration(_))));
    }
}
