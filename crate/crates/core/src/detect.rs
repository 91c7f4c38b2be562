//! Matched-filter burst search.
//!
//! The summed relaxation series is correlated with a zero-mean exponential
//! template. A constant baseline produces no response, while a burst that
//! rises instantly and decays with the template lifetime gives its largest
//! score exactly at onset.

use std::collections::BTreeSet;
use std::io::Write;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;
use thiserror::Error;

pub const DEFAULT_LIFETIME: f64 = 5e-3;
pub const DEFAULT_N_LIFETIMES: f64 = 5.0;
pub const DEFAULT_THRESHOLD: f64 = 300.0;

#[derive(Debug, Error, PartialEq)]
pub enum DetectError {
    #[error("degenerate kernel")]
    DegenerateKernel,
    #[error("lifetime and cadence must be positive and finite")]
    NonpositiveParameter,
    #[error("series of length {series} is shorter than kernel of length {kernel}")]
    SeriesShorterThanKernel { series: usize, kernel: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterKernel {
    taps: Vec<f64>,
    lifetime: f64,
    cadence: f64,
}

impl FilterKernel {
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn lifetime(&self) -> f64 {
        self.lifetime
    }

    pub fn cadence(&self) -> f64 {
        self.cadence
    }
}

/// Zero-mean exponential template spanning `n_lifetimes` lifetimes, rounded
/// to the nearest whole sample.
pub fn build_exponential_filter(lifetime: f64, cadence: f64, n_lifetimes: f64) -> Result<FilterKernel, DetectError> {
    if !(lifetime > 0.0 && cadence > 0.0 && cadence.is_finite() && n_lifetimes > 0.0) {
        if lifetime == f64::INFINITY && cadence > 0.0 {
            // flat template: nothing left after mean removal
            return Err(DetectError::DegenerateKernel);
        }
        return Err(DetectError::NonpositiveParameter);
    }
    let len = (n_lifetimes * lifetime / cadence).round();
    if !(len >= 2.0) || !len.is_finite() {
        return Err(DetectError::DegenerateKernel);
    }
    let len = len as usize;
    let mut taps: Vec<f64> = (0..len).map(|k| (-(k as f64) * cadence / lifetime).exp()).collect();
    let mean = taps.iter().sum::<f64>() / len as f64;
    taps.iter_mut().for_each(|t| *t -= mean);
    let scale = taps.iter().map(|t| t.abs()).sum::<f64>();
    if !(scale > 1e-12 * len as f64) {
        return Err(DetectError::DegenerateKernel);
    }
    Ok(FilterKernel { taps, lifetime, cadence })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    pub values: Vec<f64>,
    pub cadence: f64,
    pub kernel_lifetime: f64,
    pub kernel_len: usize,
}

impl ScoreSeries {
    /// Number of leading samples with a complete correlation window. The
    /// remaining `kernel_len - 1` samples are zero-filled.
    pub fn valid_len(&self) -> usize {
        self.values.len() + 1 - self.kernel_len
    }

    pub fn is_boundary(&self, t: usize) -> bool {
        t >= self.valid_len()
    }
}

fn check_lengths(s: &[f64], k: &FilterKernel) -> Result<(), DetectError> {
    if s.len() < k.len() {
        return Err(DetectError::SeriesShorterThanKernel { series: s.len(), kernel: k.len() });
    }
    Ok(())
}

/// `C[t] = sum_k taps[k] * s[t + k]`, computed blockwise in the frequency
/// domain. The last `len - 1` samples are set to zero.
pub fn matched_filter(s: &[f64], k: &FilterKernel) -> Result<ScoreSeries, DetectError> {
    check_lengths(s, k)?;
    Ok(ScoreSeries {
        values: FftCorrelator::new(k).correlate(s),
        cadence: k.cadence,
        kernel_lifetime: k.lifetime,
        kernel_len: k.len(),
    })
}

/// Direct `O(N L)` evaluation of [`matched_filter`].
pub fn matched_filter_direct(s: &[f64], k: &FilterKernel) -> Result<ScoreSeries, DetectError> {
    check_lengths(s, k)?;
    let l = k.len();
    let mut values = vec![0.0; s.len()];
    for (t, v) in values.iter_mut().enumerate().take(s.len() + 1 - l) {
        *v = k.taps.iter().zip(&s[t..t + l]).map(|(a, b)| a * b).sum();
    }
    Ok(ScoreSeries { values, cadence: k.cadence, kernel_lifetime: k.lifetime, kernel_len: l })
}

struct FftCorrelator {
    block: usize,
    kernel_len: usize,
    kernel_conj: Vec<Complex<f64>>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl FftCorrelator {
    fn new(k: &FilterKernel) -> Self {
        let block = (4 * k.len()).next_power_of_two().max(1 << 12);
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(block);
        let inverse = planner.plan_fft_inverse(block);
        let mut kernel_conj: Vec<Complex<f64>> =
            (0..block).map(|i| Complex::new(k.taps.get(i).copied().unwrap_or(0.0), 0.0)).collect();
        forward.process(&mut kernel_conj);
        kernel_conj.iter_mut().for_each(|c| *c = c.conj() / block as f64);
        Self { block, kernel_len: k.len(), kernel_conj, forward, inverse }
    }

    fn correlate(&self, s: &[f64]) -> Vec<f64> {
        let n = s.len();
        let valid = n + 1 - self.kernel_len;
        let step = self.block + 1 - self.kernel_len;
        let mut out = vec![0.0; n];
        let mut buf = vec![Complex::new(0.0, 0.0); self.block];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        let mut b = 0;
        while b < valid {
            for (i, c) in buf.iter_mut().enumerate() {
                *c = Complex::new(s.get(b + i).copied().unwrap_or(0.0), 0.0);
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            buf.iter_mut().zip(&self.kernel_conj).for_each(|(x, h)| *x *= h);
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            let m = step.min(valid - b);
            for (o, c) in out[b..b + m].iter_mut().zip(&buf) {
                *o = c.re;
            }
            b += step;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateEvent {
    pub file_id: usize,
    /// Position within the file.
    pub start_index: usize,
    /// Position on the dataset-wide measurement axis.
    pub global_index: u64,
    pub start_time_s: f64,
    pub filter_score: f64,
}

/// Scored peak positions of `c`: local maxima above `threshold`, thinned so
/// that no two survivors are closer than `min_separation`. Larger maxima win.
pub fn find_peaks(c: &ScoreSeries, threshold: f64, min_separation: usize) -> Vec<(usize, f64)> {
    let v = &c.values[..c.valid_len()];
    let mut maxima: Vec<(usize, f64)> = Vec::new();
    let mut t = 0;
    while t < v.len() {
        if v[t] > threshold && (t == 0 || v[t] > v[t - 1]) {
            // walk a plateau; keep its first sample
            let mut e = t;
            while e + 1 < v.len() && v[e + 1] == v[t] {
                e += 1;
            }
            if e + 1 == v.len() || v[e + 1] < v[t] {
                maxima.push((t, v[t]));
            }
            t = e + 1;
        } else {
            t += 1;
        }
    }
    maxima.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let sep = min_separation.max(1);
    let mut kept: BTreeSet<usize> = BTreeSet::new();
    for &(t, _) in &maxima {
        let lo = t.saturating_sub(sep - 1);
        if kept.range(lo..t + sep).next().is_none() {
            kept.insert(t);
        }
    }
    kept.into_iter().map(|t| (t, v[t])).collect()
}

/// Candidate events in one file's score series, ordered by position.
pub fn find_event_candidates(
    c: &ScoreSeries,
    threshold: f64,
    min_separation: usize,
    file_id: usize,
    first_global_index: u64,
) -> Vec<CandidateEvent> {
    find_peaks(c, threshold, min_separation)
        .into_iter()
        .map(|(t, score)| candidate(file_id, t, first_global_index, c.cadence, score))
        .collect()
}

pub(crate) fn candidate(file_id: usize, local: usize, first_global: u64, cadence: f64, score: f64) -> CandidateEvent {
    let global_index = first_global + local as u64;
    CandidateEvent {
        file_id,
        start_index: local,
        global_index,
        start_time_s: global_index as f64 * cadence,
        filter_score: score,
    }
}

pub fn write_candidates_csv<W: Write>(out: W, events: &[CandidateEvent]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["file_id", "start_index", "global_index", "start_time_s", "filter_score"])?;
    for e in events {
        w.write_record([
            e.file_id.to_string(),
            e.start_index.to_string(),
            e.global_index.to_string(),
            format!("{:.9}", e.start_time_s),
            format!("{:.6}", e.filter_score),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const CAD: f64 = 6.95e-6;

    fn kernel() -> FilterKernel {
        build_exponential_filter(5e-3, CAD, 5.0).unwrap()
    }

    fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
        let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
        a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
    }

    #[test]
    fn default_kernel_length_and_zero_sum() {
        let k = kernel();
        assert_eq!(k.len(), 3597);
        let sum: f64 = k.taps().iter().sum();
        let abs: f64 = k.taps().iter().map(|t| t.abs()).sum();
        assert!(sum.abs() <= 1e-12 * abs);
        // shape before mean removal
        let d = k.taps()[0] - k.taps()[1];
        let d2 = k.taps()[1] - k.taps()[2];
        assert!((d2 / d - (-CAD / 5e-3f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn degenerate_kernels() {
        assert_eq!(build_exponential_filter(f64::INFINITY, CAD, 5.0), Err(DetectError::DegenerateKernel));
        assert_eq!(build_exponential_filter(1e-6, CAD, 0.001), Err(DetectError::DegenerateKernel));
        assert_eq!(build_exponential_filter(5e-3, 0.0, 5.0), Err(DetectError::NonpositiveParameter));
        // so flat that mean removal leaves only rounding noise
        assert_eq!(build_exponential_filter(1e300, 1.0, 1e-299), Err(DetectError::DegenerateKernel));
    }

    #[test]
    fn short_series_is_an_error() {
        let k = kernel();
        assert!(matches!(matched_filter(&[0.0; 100], &k), Err(DetectError::SeriesShorterThanKernel { .. })));
    }

    #[test]
    fn zero_series_scores_zero() {
        let c = matched_filter(&vec![0.0; 20_000], &kernel()).unwrap();
        assert!(c.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fft_matches_direct_sum() {
        let k = kernel();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [3597, 3600, 10_000, 40_000] {
            let s: Vec<f64> = (0..n).map(|_| rng.random_range(0..=10) as f64).collect();
            let fast = matched_filter(&s, &k).unwrap();
            let slow = matched_filter_direct(&s, &k).unwrap();
            assert!(rel_diff(&fast.values, &slow.values) < 1e-9);
            assert!(fast.values[fast.valid_len()..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn exponential_burst_peaks_at_onset() {
        let k = kernel();
        let t0 = 5000;
        let s: Vec<f64> = (0..20_000)
            .map(|t| if t >= t0 { 10.0 * (-((t - t0) as f64) * CAD / 5e-3).exp() } else { 0.0 })
            .collect();
        let c = matched_filter(&s, &k).unwrap();
        let argmax = (0..c.valid_len()).max_by(|&a, &b| c.values[a].total_cmp(&c.values[b])).unwrap();
        assert_eq!(argmax, t0);
    }

    #[test]
    fn two_bursts_give_two_candidates() {
        let k = kernel();
        let onsets = [4000usize, 4000 + (50e-3 / CAD) as usize];
        let s: Vec<f64> = (0..30_000)
            .map(|t| {
                onsets
                    .iter()
                    .filter(|&&t0| t >= t0)
                    .map(|&t0| 10.0 * (-((t - t0) as f64) * CAD / 5e-3).exp())
                    .sum()
            })
            .collect();
        let c = matched_filter(&s, &k).unwrap();
        let found = find_event_candidates(&c, 300.0, k.len(), 0, 0);
        let starts: Vec<usize> = found.iter().map(|e| e.start_index).collect();
        assert_eq!(starts, onsets);
    }

    #[test]
    fn empty_scores_give_no_candidates() {
        let c = ScoreSeries { values: vec![0.0; 10_000], cadence: CAD, kernel_lifetime: 5e-3, kernel_len: 3597 };
        assert!(find_event_candidates(&c, 300.0, 3597, 0, 0).is_empty());
    }

    #[test]
    fn separation_keeps_larger_peak() {
        let mut v = vec![0.0; 100];
        v[10] = 500.0;
        v[14] = 800.0;
        v[40] = 400.0;
        let c = ScoreSeries { values: v, cadence: 1.0, kernel_lifetime: 1.0, kernel_len: 1 };
        let p = find_peaks(&c, 300.0, 10);
        assert_eq!(p, vec![(14, 800.0), (40, 400.0)]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn constant_series_is_rejected(c in 0.0f64..1e4, n in 3600usize..12_000) {
            let k = kernel();
            let out = matched_filter(&vec![c; n], &k).unwrap();
            let bound = 1e-9 * c.max(1e-300) * k.len() as f64;
            prop_assert!(out.values.iter().all(|v| v.abs() <= bound));
        }

        #[test]
        fn filter_is_linear(seed in any::<u64>(), a in -5.0f64..5.0, b in -5.0f64..5.0) {
            let k = build_exponential_filter(1e-3, CAD, 5.0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s1: Vec<f64> = (0..3000).map(|_| rng.random::<f64>()).collect();
            let s2: Vec<f64> = (0..3000).map(|_| rng.random::<f64>()).collect();
            let mix: Vec<f64> = s1.iter().zip(&s2).map(|(x, y)| a * x + b * y).collect();
            let f1 = matched_filter(&s1, &k).unwrap().values;
            let f2 = matched_filter(&s2, &k).unwrap().values;
            let fm = matched_filter(&mix, &k).unwrap().values;
            let lin: Vec<f64> = f1.iter().zip(&f2).map(|(x, y)| a * x + b * y).collect();
            let scale = 1.0 + lin.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            prop_assert!(fm.iter().zip(&lin).all(|(x, y)| (x - y).abs() <= 1e-9 * scale));
        }

        #[test]
        fn detection_is_translation_covariant(shift in 0usize..2000) {
            let k = kernel();
            let burst = |t0: usize| -> Vec<f64> {
                (0..24_000)
                    .map(|t| if t >= t0 { 8.0 * (-((t - t0) as f64) * CAD / 5e-3).exp() } else { 0.0 })
                    .collect()
            };
            let a = find_peaks(&matched_filter(&burst(6000), &k).unwrap(), 300.0, k.len());
            let b = find_peaks(&matched_filter(&burst(6000 + shift), &k).unwrap(), 300.0, k.len());
            prop_assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                prop_assert_eq!(x.0 + shift, y.0);
            }
        }
    }
}
