//! Welch amplitude spectral densities, spectrograms and harmonic-comb search.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("segment of {segment} samples is longer than the series ({len})")]
    SegmentTooLong { segment: usize, len: usize },
    #[error("segment length must be at least 2")]
    SegmentTooShort,
    #[error("overlap {0} outside [0, 0.9]")]
    BadOverlap(f64),
    #[error("sample rate must be positive")]
    BadRate,
    #[error("slice of {slice} samples is shorter than one segment ({segment})")]
    SliceTooShort { slice: usize, segment: usize },
    #[error("search band around {f0} Hz contains no frequency bin")]
    BandTooNarrow { f0: f64 },
    #[error("search band reaches below the first bin at {df} Hz")]
    BandBelowResolution { df: f64 },
    #[error("harmonic {k} at {f} Hz lies beyond Nyquist ({nyquist} Hz)")]
    BeyondNyquist { k: usize, f: f64, nyquist: f64 },
    #[error("need at least one harmonic")]
    NoHarmonics,
    #[error("nothing accumulated")]
    Empty,
    #[error("accumulators with different parameters cannot be merged")]
    Incompatible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Window {
    Hann,
    Rectangular,
}

impl Window {
    pub fn name(self) -> &'static str {
        match self {
            Window::Hann => "hann",
            Window::Rectangular => "rectangular",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hann" | "hanning" => Some(Window::Hann),
            "rectangular" | "boxcar" | "none" => Some(Window::Rectangular),
            _ => None,
        }
    }

    /// Periodic window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
                .collect(),
            Window::Rectangular => vec![1.0; n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchParams {
    pub segment_len: usize,
    pub window: Window,
    pub overlap: f64,
}

impl WelchParams {
    pub fn new(segment_len: usize) -> Self {
        Self { segment_len, window: Window::Hann, overlap: 0.5 }
    }

    fn validate(&self) -> Result<(), SpectralError> {
        if self.segment_len < 2 {
            return Err(SpectralError::SegmentTooShort);
        }
        if !(0.0..=0.9).contains(&self.overlap) {
            return Err(SpectralError::BadOverlap(self.overlap));
        }
        Ok(())
    }

    pub fn step(&self) -> usize {
        ((self.segment_len as f64 * (1.0 - self.overlap)).round() as usize).max(1)
    }
}

/// One-sided ASD on bins `df, 2 df, ..`, DC excluded.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralTable {
    pub frequencies: Vec<f64>,
    pub asd: Vec<f64>,
    pub sample_rate: f64,
    pub params: WelchParams,
    pub averages: usize,
}

impl SpectralTable {
    pub fn df(&self) -> f64 {
        self.sample_rate / self.params.segment_len as f64
    }

    pub fn nyquist(&self) -> f64 {
        0.5 * self.sample_rate
    }

    /// Index of the bin nearest to `f`, if inside the table.
    pub fn bin_of(&self, f: f64) -> Option<usize> {
        let i = (f / self.df()).round() as i64 - 1;
        (i >= 0 && (i as usize) < self.asd.len()).then_some(i as usize)
    }

    /// Sum of PSD times bin width.
    pub fn integrated_power(&self) -> f64 {
        self.asd.iter().map(|a| a * a).sum::<f64>() * self.df()
    }

    pub fn write_csv<W: Write>(&self, mut out: W, unit: &str) -> std::io::Result<()> {
        writeln!(out, "# sample_rate_hz = {}", self.sample_rate)?;
        writeln!(out, "# segment_len = {}", self.params.segment_len)?;
        writeln!(out, "# window = {}", self.params.window.name())?;
        writeln!(out, "# overlap = {}", self.params.overlap)?;
        writeln!(out, "# averages = {}", self.averages)?;
        writeln!(out, "frequency_hz,asd_{unit}")?;
        for (f, a) in self.frequencies.iter().zip(&self.asd) {
            writeln!(out, "{f:.9e},{a:.9e}")?;
        }
        Ok(())
    }
}

/// Running Welch average. Segments never span two `feed` calls, so separate
/// files can be fed one at a time without joining them.
#[derive(Clone)]
pub struct WelchAccumulator {
    params: WelchParams,
    sample_rate: f64,
    window: Vec<f64>,
    window_power: f64,
    fft: Arc<dyn Fft<f64>>,
    sum: Vec<f64>,
    count: usize,
}

impl std::fmt::Debug for WelchAccumulator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WelchAccumulator")
            .field("params", &self.params)
            .field("sample_rate", &self.sample_rate)
            .field("count", &self.count)
            .finish()
    }
}

impl WelchAccumulator {
    pub fn new(params: WelchParams, sample_rate: f64) -> Result<Self, SpectralError> {
        params.validate()?;
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(SpectralError::BadRate);
        }
        let window = params.window.coefficients(params.segment_len);
        let window_power = window.iter().map(|w| w * w).sum();
        let fft = FftPlanner::new().plan_fft_forward(params.segment_len);
        Ok(Self {
            params,
            sample_rate,
            window,
            window_power,
            fft,
            sum: vec![0.0; params.segment_len / 2],
            count: 0,
        })
    }

    pub fn params(&self) -> WelchParams {
        self.params
    }

    pub fn count(&self) -> usize {
        self.count
    }

    fn segment_psd(&self, seg: &[f64]) -> Vec<f64> {
        let n = seg.len();
        let mean = seg.iter().sum::<f64>() / n as f64;
        let mut buf: Vec<Complex<f64>> =
            seg.iter().zip(&self.window).map(|(x, w)| Complex::new((x - mean) * w, 0.0)).collect();
        self.fft.process(&mut buf);
        let scale = 1.0 / (self.sample_rate * self.window_power);
        (1..=n / 2)
            .map(|k| {
                let p = buf[k].norm_sqr() * scale;
                if 2 * k == n {
                    p
                } else {
                    2.0 * p
                }
            })
            .collect()
    }

    /// Adds every complete segment of `s`. Returns the number added.
    pub fn feed(&mut self, s: &[f64]) -> usize {
        let l = self.params.segment_len;
        if s.len() < l {
            return 0;
        }
        let step = self.params.step();
        let starts: Vec<usize> = (0..=(s.len() - l)).step_by(step).collect();
        let psds: Vec<Vec<f64>> = starts.par_iter().map(|&b| self.segment_psd(&s[b..b + l])).collect();
        for p in &psds {
            self.sum.iter_mut().zip(p).for_each(|(a, b)| *a += b);
        }
        self.count += psds.len();
        psds.len()
    }

    pub fn merge(&mut self, other: &WelchAccumulator) -> Result<(), SpectralError> {
        if self.params != other.params || self.sample_rate != other.sample_rate {
            return Err(SpectralError::Incompatible);
        }
        self.sum.iter_mut().zip(&other.sum).for_each(|(a, b)| *a += b);
        self.count += other.count;
        Ok(())
    }

    pub fn finish(&self) -> Result<SpectralTable, SpectralError> {
        if self.count == 0 {
            return Err(SpectralError::Empty);
        }
        let df = self.sample_rate / self.params.segment_len as f64;
        Ok(SpectralTable {
            frequencies: (1..=self.sum.len()).map(|k| k as f64 * df).collect(),
            asd: self.sum.iter().map(|p| (p / self.count as f64).sqrt()).collect(),
            sample_rate: self.sample_rate,
            params: self.params,
            averages: self.count,
        })
    }
}

/// Welch-averaged one-sided ASD of `s` sampled at `sample_rate`. Each segment
/// has its mean removed before windowing.
pub fn compute_asd(s: &[f64], sample_rate: f64, params: WelchParams) -> Result<SpectralTable, SpectralError> {
    params.validate()?;
    if params.segment_len > s.len() {
        return Err(SpectralError::SegmentTooLong { segment: params.segment_len, len: s.len() });
    }
    let mut acc = WelchAccumulator::new(params, sample_rate)?;
    acc.feed(s);
    acc.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Spectrogram {
    /// Start of each column, seconds.
    pub times: Vec<f64>,
    pub frequencies: Vec<f64>,
    /// `columns[t][f]`.
    pub columns: Vec<Vec<f64>>,
    pub params: WelchParams,
    pub sample_rate: f64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SpectrogramAxes {
    pub n_times: usize,
    pub n_frequencies: usize,
    pub dtype: String,
    pub order: String,
    pub times_s: Vec<f64>,
    pub frequencies_hz: Vec<f64>,
    pub window: String,
    pub segment_len: usize,
    pub overlap: f64,
}

impl Spectrogram {
    pub fn from_tables(times: Vec<f64>, tables: Vec<SpectralTable>) -> Result<Self, SpectralError> {
        let first = tables.first().ok_or(SpectralError::Empty)?;
        if tables.iter().any(|t| t.params != first.params || t.sample_rate != first.sample_rate) {
            return Err(SpectralError::Incompatible);
        }
        Ok(Self {
            frequencies: first.frequencies.clone(),
            params: first.params,
            sample_rate: first.sample_rate,
            times,
            columns: tables.into_iter().map(|t| t.asd).collect(),
        })
    }

    /// Rows are frequencies, one column per time slice.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "frequency_hz")?;
        for t in &self.times {
            write!(out, ",t_{t:.3}")?;
        }
        writeln!(out)?;
        for (i, f) in self.frequencies.iter().enumerate() {
            write!(out, "{f:.9e}")?;
            for c in &self.columns {
                write!(out, ",{:.9e}", c[i])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Little-endian f64 matrix, time-major.
    pub fn write_binary<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for c in &self.columns {
            for v in c {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn axes(&self) -> SpectrogramAxes {
        SpectrogramAxes {
            n_times: self.times.len(),
            n_frequencies: self.frequencies.len(),
            dtype: "f64le".into(),
            order: "time-major".into(),
            times_s: self.times.clone(),
            frequencies_hz: self.frequencies.clone(),
            window: self.params.window.name().into(),
            segment_len: self.params.segment_len,
            overlap: self.params.overlap,
        }
    }
}

/// One ASD per consecutive slice of `slice_len` samples; a trailing partial
/// slice is dropped.
pub fn compute_spectrogram(
    s: &[f64],
    sample_rate: f64,
    slice_len: usize,
    params: WelchParams,
) -> Result<Spectrogram, SpectralError> {
    params.validate()?;
    if slice_len < params.segment_len {
        return Err(SpectralError::SliceTooShort { slice: slice_len, segment: params.segment_len });
    }
    if slice_len > s.len() {
        return Err(SpectralError::SegmentTooLong { segment: slice_len, len: s.len() });
    }
    let n = s.len() / slice_len;
    let tables = (0..n)
        .map(|i| compute_asd(&s[i * slice_len..(i + 1) * slice_len], sample_rate, params))
        .collect::<Result<Vec<_>, _>>()?;
    let times = (0..n).map(|i| (i * slice_len) as f64 / sample_rate).collect();
    Spectrogram::from_tables(times, tables)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Harmonic {
    pub k: usize,
    pub frequency: f64,
    pub amplitude: f64,
    pub noise: f64,
    pub snr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CombResult {
    pub f0: f64,
    pub score: f64,
    pub harmonics: Vec<Harmonic>,
}

/// A harmonic counts as present at this SNR.
pub const HARMONIC_SNR: f64 = 3.0;
const NOISE_HALF_WIDTH: usize = 10;
const NOISE_GUARD: usize = 2;

impl CombResult {
    pub fn median_snr(&self) -> f64 {
        let mut v: Vec<f64> = self.harmonics.iter().map(|h| h.snr).collect();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }

    pub fn detected(&self) -> usize {
        self.harmonics.iter().filter(|h| h.snr >= HARMONIC_SNR).count()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# f0_hz = {}", self.f0)?;
        writeln!(out, "# score = {}", self.score)?;
        writeln!(out, "k,frequency_hz,amplitude,noise,snr")?;
        for h in &self.harmonics {
            writeln!(out, "{},{:.6},{:.6e},{:.6e},{:.4}", h.k, h.frequency, h.amplitude, h.noise, h.snr)?;
        }
        Ok(())
    }
}

pub(crate) fn local_noise(asd: &[f64], bin: usize) -> f64 {
    let lo = bin.saturating_sub(NOISE_HALF_WIDTH);
    let hi = (bin + NOISE_HALF_WIDTH).min(asd.len() - 1);
    let mut v: Vec<f64> = (lo..=hi).filter(|&j| j.abs_diff(bin) > NOISE_GUARD).map(|j| asd[j]).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn harmonic_at(t: &SpectralTable, k: usize, f0: f64) -> Harmonic {
    let bin = t.bin_of(k as f64 * f0).expect("harmonic checked against table range");
    let amplitude = t.asd[bin];
    let noise = local_noise(&t.asd, bin);
    let snr = if noise > 0.0 { amplitude / noise } else if amplitude > 0.0 { f64::INFINITY } else { 0.0 };
    Harmonic { k, frequency: t.frequencies[bin], amplitude, noise, snr }
}

/// Scans the fundamental over `f0_guess +- band` and scores each candidate by
/// the summed SNR of its first `harmonics` multiples, each relative to the
/// median ASD of nearby bins. The reported fundamental is the centre of the
/// best-scoring run of candidates.
pub fn detect_harmonic_comb(
    t: &SpectralTable,
    f0_guess: f64,
    harmonics: usize,
    band: f64,
) -> Result<CombResult, SpectralError> {
    if harmonics == 0 {
        return Err(SpectralError::NoHarmonics);
    }
    let df = t.df();
    let (lo, hi) = (f0_guess - band, f0_guess + band);
    if !(lo > df * 0.5) {
        return Err(SpectralError::BandBelowResolution { df });
    }
    let top = harmonics as f64 * (hi + 0.5 * df);
    if top > t.nyquist() {
        return Err(SpectralError::BeyondNyquist { k: harmonics, f: harmonics as f64 * hi, nyquist: t.nyquist() });
    }
    if (lo / df).ceil() > (hi / df).floor() {
        return Err(SpectralError::BandTooNarrow { f0: f0_guess });
    }
    let step = df / (10.0 * harmonics as f64);
    let n = ((hi - lo) / step).floor() as usize;
    let score_at = |f0: f64| -> f64 { (1..=harmonics).map(|k| harmonic_at(t, k, f0).snr).sum() };
    let grid: Vec<f64> = (0..=n).map(|i| lo + i as f64 * step).collect();
    let scores: Vec<f64> = grid.iter().map(|&f| score_at(f)).collect();
    let best = (0..grid.len()).max_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(b.cmp(&a))).unwrap_or(0);
    let (mut a, mut b) = (best, best);
    while a > 0 && scores[a - 1] == scores[best] {
        a -= 1;
    }
    while b + 1 < grid.len() && scores[b + 1] == scores[best] {
        b += 1;
    }
    let f0 = 0.5 * (grid[a] + grid[b]);
    let harmonics: Vec<Harmonic> = (1..=harmonics).map(|k| harmonic_at(t, k, f0)).collect();
    let score = harmonics.iter().map(|h| h.snr).sum();
    Ok(CombResult { f0, score, harmonics })
}
