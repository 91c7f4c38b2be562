//! Event characterization: smoothing, decay fit, per-qubit response and
//! row asymmetry.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::detect::CandidateEvent;
use crate::model::geometry::{DeviceGeometry, Row};
use crate::model::record::RelaxationRecord;

pub const DEFAULT_SMOOTH_WINDOW: usize = 100;
pub const MIN_FIT_LIFETIME: f64 = 1e-4;
pub const MAX_FIT_LIFETIME: f64 = 10.0;

#[derive(Debug, Error, PartialEq)]
pub enum CharacterizeError {
    #[error("smoothing window {window} exceeds series length {len}")]
    WindowTooLong { window: usize, len: usize },
    #[error("smoothing window must be at least 1")]
    ZeroWindow,
    #[error("fit span {span} from index {start} runs past series length {len}")]
    FitOutOfRange { start: usize, span: usize, len: usize },
    #[error("fit span {span} is shorter than ten smoothing windows ({window})")]
    FitSpanTooShort { span: usize, window: usize },
    #[error("peak window [{lo}, {hi}) exceeds record of length {len}")]
    PeakWindowOutOfRange { lo: i64, hi: i64, len: usize },
    #[error("no response on any qubit")]
    NoResponse,
    #[error("{got} peaks for {expected} qubits")]
    PeakCount { got: usize, expected: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedSeries {
    pub values: Vec<f64>,
    pub window: usize,
}

/// Forward-looking moving average: `out[t]` is the mean of `s[t..t+window]`.
/// Near the end, where fewer than `window` samples remain, the mean runs
/// over what is left.
pub fn boxcar_smooth(s: &[f64], window: usize) -> Result<SmoothedSeries, CharacterizeError> {
    if window == 0 {
        return Err(CharacterizeError::ZeroWindow);
    }
    if window > s.len() {
        return Err(CharacterizeError::WindowTooLong { window, len: s.len() });
    }
    let mut prefix = Vec::with_capacity(s.len() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &x in s {
        acc += x;
        prefix.push(acc);
    }
    let n = s.len();
    let values = (0..n)
        .map(|t| {
            let end = (t + window).min(n);
            if window == 1 {
                s[t]
            } else {
                (prefix[end] - prefix[t]) / (end - t) as f64
            }
        })
        .collect();
    Ok(SmoothedSeries { values, window })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FitFlag {
    Ok,
    NonpositiveAmplitude,
    LifetimeOutOfRange,
    NonFinite,
    /// The record ended before a full fit span was available.
    Truncated,
}

impl FitFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            FitFlag::Ok => "ok",
            FitFlag::NonpositiveAmplitude => "nonpositive_amplitude",
            FitFlag::LifetimeOutOfRange => "lifetime_out_of_range",
            FitFlag::NonFinite => "non_finite",
            FitFlag::Truncated => "truncated",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Ok, Self::NonpositiveAmplitude, Self::LifetimeOutOfRange, Self::NonFinite, Self::Truncated]
            .into_iter()
            .find(|f| f.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub lifetime: f64,
    pub baseline: f64,
    pub amplitude: f64,
    pub rms: f64,
    pub flag: FitFlag,
}

impl DecayFit {
    pub fn failed(&self) -> bool {
        self.flag != FitFlag::Ok
    }
}

/// Linear part of the fit at a fixed decay ratio `r` per sample:
/// returns `(baseline, amplitude, residual sum of squares)`.
fn solve_linear(y: &[f64], r: f64, sum_y: f64, sum_y2: f64) -> (f64, f64, f64) {
    let n = y.len() as f64;
    let (mut e, mut sum_ye) = (1.0, 0.0);
    for &v in y {
        sum_ye += v * e;
        e *= r;
    }
    let rn = r.powi(y.len() as i32);
    let s1 = if r < 1.0 { (1.0 - rn) / (1.0 - r) } else { n };
    let s2 = if r < 1.0 { (1.0 - rn * rn) / (1.0 - r * r) } else { n };
    let det = n * s2 - s1 * s1;
    if !(det > 1e-12 * n * s2) {
        let b = sum_y / n;
        return (b, 0.0, (sum_y2 - b * sum_y).max(0.0));
    }
    let b = (s2 * sum_y - s1 * sum_ye) / det;
    let a = (n * sum_ye - s1 * sum_y) / det;
    // direct residuals; the normal-equation shortcut cancels badly near a perfect fit
    let (mut e, mut rss) = (a, 0.0);
    for &v in y {
        let d = v - b - e;
        rss += d * d;
        e *= r;
    }
    (b, a, rss)
}

/// Least-squares fit of `baseline + amplitude * exp(-(t - start) cadence / lifetime)`
/// over `[start, start + fit_span)`.
///
/// For a fixed lifetime the baseline and amplitude follow in closed form, so
/// only the lifetime is searched: a log-spaced scan followed by golden-section
/// refinement of the best bracket.
pub fn fit_decay_lifetime(
    sm: &SmoothedSeries,
    cadence: f64,
    start: usize,
    fit_span: usize,
) -> Result<DecayFit, CharacterizeError> {
    if fit_span < 10 * sm.window {
        return Err(CharacterizeError::FitSpanTooShort { span: fit_span, window: sm.window });
    }
    if start + fit_span > sm.values.len() {
        return Err(CharacterizeError::FitOutOfRange { start, span: fit_span, len: sm.values.len() });
    }
    Ok(fit_exponential(&sm.values[start..start + fit_span], cadence))
}

pub(crate) fn fit_exponential(y: &[f64], cadence: f64) -> DecayFit {
    let sum_y: f64 = y.iter().sum();
    let sum_y2: f64 = y.iter().map(|v| v * v).sum();
    if !sum_y2.is_finite() {
        return DecayFit { lifetime: f64::NAN, baseline: f64::NAN, amplitude: f64::NAN, rms: f64::NAN, flag: FitFlag::NonFinite };
    }
    let eval = |log_tau: f64| {
        let r = (-cadence / log_tau.exp()).exp();
        solve_linear(y, r, sum_y, sum_y2)
    };
    // search a little beyond the accepted range so boundary optima are visible
    let (lo, hi) = ((0.5 * MIN_FIT_LIFETIME).ln(), (2.0 * MAX_FIT_LIFETIME).ln());
    let steps = 96;
    let grid: Vec<f64> = (0..=steps).map(|i| lo + (hi - lo) * i as f64 / steps as f64).collect();
    let rss: Vec<f64> = grid.iter().map(|&g| eval(g).2).collect();
    let best = (0..grid.len()).min_by(|&a, &b| rss[a].total_cmp(&rss[b])).unwrap_or(0);
    let (mut a, mut b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(steps)]);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (eval(c).2, eval(d).2);
    for _ in 0..80 {
        if (b - a).abs() < 1e-12 {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = eval(c).2;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = eval(d).2;
        }
    }
    let log_tau = 0.5 * (a + b);
    let (baseline, amplitude, rss) = eval(log_tau);
    let lifetime = log_tau.exp();
    let rms = (rss / y.len() as f64).sqrt();
    let flag = if !(lifetime.is_finite() && baseline.is_finite() && amplitude.is_finite()) {
        FitFlag::NonFinite
    } else if amplitude <= 1e-12 * (1.0 + baseline.abs()) {
        FitFlag::NonpositiveAmplitude
    } else if !(MIN_FIT_LIFETIME..=MAX_FIT_LIFETIME).contains(&lifetime) {
        FitFlag::LifetimeOutOfRange
    } else {
        FitFlag::Ok
    };
    DecayFit { lifetime, baseline, amplitude, rms, flag }
}

/// Peak search window around an event onset, in samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakWindow {
    pub before: usize,
    pub after: usize,
    pub smooth: usize,
}

impl PeakWindow {
    /// 5 ms before to 20 ms after onset.
    pub fn default_for(cadence: f64) -> Self {
        Self {
            before: (5e-3 / cadence).round() as usize,
            after: (20e-3 / cadence).round() as usize,
            smooth: DEFAULT_SMOOTH_WINDOW,
        }
    }
}

/// Maximum of each qubit's smoothed relaxation indicator over
/// `[start - before, start + after)`. Discarded measurements count as 0.
pub fn per_qubit_peak(r: &RelaxationRecord, start: usize, w: PeakWindow) -> Result<Vec<f64>, CharacterizeError> {
    let lo = start as i64 - w.before as i64;
    let hi = (start + w.after) as i64;
    if lo < 0 || hi as usize > r.len() || lo >= hi {
        return Err(CharacterizeError::PeakWindowOutOfRange { lo, hi, len: r.len() });
    }
    Ok(peaks_in_range(r, lo as usize, hi as usize, w.smooth))
}

pub(crate) fn peaks_in_range(r: &RelaxationRecord, lo: usize, hi: usize, smooth: usize) -> Vec<f64> {
    let smooth = smooth.max(1);
    let end = (hi + smooth - 1).min(r.len());
    (0..r.qubit_count())
        .map(|q| {
            let bits = &r.relaxed(q)[lo..end];
            // running count over the forward window
            let mut count = bits[..smooth.min(bits.len())].count_ones();
            let mut best = 0.0f64;
            for t in 0..hi - lo {
                let avail = (bits.len() - t).min(smooth);
                best = best.max(count as f64 / avail as f64);
                if bits[t] {
                    count -= 1;
                }
                if t + smooth < bits.len() && bits[t + smooth] {
                    count += 1;
                }
            }
            best
        })
        .collect()
}

/// Top/bottom asymmetry `(S_top - S_bot) / (2 (S_top + S_bot))`, in `[-1/2, 1/2]`.
pub fn localization_metric(peaks: &[f64], g: &DeviceGeometry) -> Result<f64, CharacterizeError> {
    if peaks.len() != g.qubit_count() {
        return Err(CharacterizeError::PeakCount { got: peaks.len(), expected: g.qubit_count() });
    }
    let (mut top, mut bot) = (0.0, 0.0);
    for (i, &p) in peaks.iter().enumerate() {
        match g.row(i) {
            Row::Top => top += p,
            Row::Bottom => bot += p,
        }
    }
    let total = top + bot;
    if !(total > 0.0) {
        return Err(CharacterizeError::NoResponse);
    }
    Ok(0.5 * (top - bot) / total)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CharacterizedEvent {
    pub candidate: CandidateEvent,
    pub fit: DecayFit,
    pub peaks: Vec<f64>,
    /// NaN when no qubit responded.
    pub asymmetry: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharacterizeParams {
    pub smooth_window: usize,
    pub fit_span: usize,
    pub peak_window: PeakWindow,
}

impl CharacterizeParams {
    /// Fit span of `max(20 ms, 5 kernel lifetimes)`.
    pub fn defaults(cadence: f64, kernel_lifetime: f64) -> Self {
        Self {
            smooth_window: DEFAULT_SMOOTH_WINDOW,
            fit_span: (20e-3f64.max(5.0 * kernel_lifetime) / cadence).round() as usize,
            peak_window: PeakWindow::default_for(cadence),
        }
    }
}

/// Characterizes a candidate located at `local` in `record`, whose summed
/// and smoothed series is `smoothed`. Windows that run past the record are
/// clipped; a clipped fit is flagged `Truncated`.
pub fn characterize_at(
    candidate: CandidateEvent,
    record: &RelaxationRecord,
    smoothed: &SmoothedSeries,
    local: usize,
    params: &CharacterizeParams,
    geometry: &DeviceGeometry,
) -> CharacterizedEvent {
    let n = smoothed.values.len();
    let end = (local + params.fit_span).min(n);
    let fit = if end - local >= 10 * smoothed.window.max(1) {
        let mut fit = fit_exponential(&smoothed.values[local..end], record.cadence());
        if end - local < params.fit_span && fit.flag == FitFlag::Ok {
            fit.flag = FitFlag::Truncated;
        }
        fit
    } else {
        DecayFit { lifetime: f64::NAN, baseline: f64::NAN, amplitude: f64::NAN, rms: f64::NAN, flag: FitFlag::Truncated }
    };
    let lo = local.saturating_sub(params.peak_window.before);
    let hi = (local + params.peak_window.after).min(record.len());
    let peaks = peaks_in_range(record, lo, hi, params.peak_window.smooth);
    let asymmetry = localization_metric(&peaks, geometry).unwrap_or(f64::NAN);
    CharacterizedEvent { candidate, fit, peaks, asymmetry }
}

pub(crate) fn characterized_header(qubits: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "file_id",
        "start_index",
        "global_index",
        "start_time_s",
        "filter_score",
        "lifetime_s",
        "baseline",
        "amplitude",
        "rms",
        "fit_flag",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend((1..=qubits).map(|q| format!("peak_Q{q}")));
    h.push("A".into());
    h
}

pub(crate) fn characterized_row(e: &CharacterizedEvent) -> Vec<String> {
    let c = &e.candidate;
    let mut row = vec![
        c.file_id.to_string(),
        c.start_index.to_string(),
        c.global_index.to_string(),
        format!("{:.9}", c.start_time_s),
        format!("{:.6}", c.filter_score),
        format!("{:.6e}", e.fit.lifetime),
        format!("{:.6e}", e.fit.baseline),
        format!("{:.6e}", e.fit.amplitude),
        format!("{:.6e}", e.fit.rms),
        e.fit.flag.as_str().to_string(),
    ];
    row.extend(e.peaks.iter().map(|p| format!("{p:.4}")));
    row.push(if e.asymmetry.is_nan() { "NaN".into() } else { format!("{:.6}", e.asymmetry) });
    row
}

pub fn write_characterized_csv<W: Write>(out: W, events: &[CharacterizedEvent]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let qubits = events.first().map_or(10, |e| e.peaks.len());
    w.write_record(characterized_header(qubits))?;
    for e in events {
        w.write_record(characterized_row(e))?;
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

    #[test]
    fn smoothing_identity_and_constant() {
        let s = vec![1.0, 5.0, 2.0, 0.0];
        assert_eq!(boxcar_smooth(&s, 1).unwrap().values, s);
        let c = boxcar_smooth(&[3.5; 500], 100).unwrap();
        assert!(c.values.iter().all(|&v| (v - 3.5).abs() < 1e-12));
        assert_eq!(boxcar_smooth(&s, 5), Err(CharacterizeError::WindowTooLong { window: 5, len: 4 }));
        assert_eq!(boxcar_smooth(&s, 0), Err(CharacterizeError::ZeroWindow));
    }

    #[test]
    fn smoothing_matches_direct_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s: Vec<f64> = (0..5000).map(|_| rng.random_range(0..=10) as f64).collect();
        let fast = boxcar_smooth(&s, 100).unwrap();
        for t in 0..s.len() {
            let w = &s[t..(t + 100).min(s.len())];
            let direct = w.iter().sum::<f64>() / w.len() as f64;
            assert!((fast.values[t] - direct).abs() < 1e-12);
        }
    }

    fn synthetic_decay(lifetime: f64, n: usize) -> Vec<f64> {
        (0..n).map(|t| 0.7 + 6.0 * (-(t as f64) * CAD / lifetime).exp()).collect()
    }

    #[test]
    fn noiseless_fit_recovers_lifetime() {
        for tau in [1e-3, 5e-3, 22e-3, 100e-3] {
            let s = synthetic_decay(tau, 6000);
            let sm = boxcar_smooth(&s, 100).unwrap();
            let fit = fit_decay_lifetime(&sm, CAD, 0, 3597).unwrap();
            assert_eq!(fit.flag, FitFlag::Ok);
            assert!((fit.lifetime / tau - 1.0).abs() < 1e-6, "{tau} -> {}", fit.lifetime);
            assert!((fit.baseline - 0.7).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_series_fit_is_flagged() {
        let sm = boxcar_smooth(&[2.0; 5000], 100).unwrap();
        let fit = fit_decay_lifetime(&sm, CAD, 0, 3597).unwrap();
        assert!(fit.failed());
        let zero = boxcar_smooth(&[0.0; 5000], 100).unwrap();
        assert!(fit_decay_lifetime(&zero, CAD, 0, 3597).unwrap().failed());
    }

    #[test]
    fn rising_series_fit_is_flagged() {
        let s: Vec<f64> = (0..5000).map(|t| 1.0 - (-(t as f64) / 500.0).exp()).collect();
        let sm = boxcar_smooth(&s, 100).unwrap();
        assert!(fit_decay_lifetime(&sm, CAD, 0, 3597).unwrap().failed());
    }

    #[test]
    fn fit_preconditions() {
        let sm = boxcar_smooth(&[1.0; 2000], 100).unwrap();
        assert!(matches!(fit_decay_lifetime(&sm, CAD, 0, 500), Err(CharacterizeError::FitSpanTooShort { .. })));
        assert!(matches!(fit_decay_lifetime(&sm, CAD, 1500, 1000), Err(CharacterizeError::FitOutOfRange { .. })));
    }

    fn record_with(bits: &[(usize, usize)], n: usize) -> RelaxationRecord {
        let mut r = RelaxationRecord::quiet(10, n, CAD, 0.0);
        for &(q, t) in bits {
            r.set_relaxed(q, t);
        }
        r
    }

    #[test]
    fn peak_of_single_relaxation_and_saturation() {
        let mut hits = vec![(3, 1000)];
        hits.extend((0..5000).map(|t| (4, t)));
        let r = record_with(&hits, 5000);
        let w = PeakWindow { before: 500, after: 2000, smooth: 100 };
        let p = per_qubit_peak(&r, 1000, w).unwrap();
        assert_eq!(p[3], 0.01);
        assert_eq!(p[4], 1.0);
        assert_eq!(p[0], 0.0);
        assert!(per_qubit_peak(&r, 100, w).is_err());
        assert!(per_qubit_peak(&r, 4000, w).is_err());
    }

    #[test]
    fn peaks_match_smoothed_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let hits: Vec<(usize, usize)> =
            (0..3000).map(|_| (rng.random_range(0..10), rng.random_range(0..4000))).collect();
        let r = record_with(&hits, 4000);
        let p = peaks_in_range(&r, 3500, 4000, 100);
        for q in 0..10 {
            let s: Vec<f64> = (0..4000).map(|t| r.is_relaxed(q, t) as u8 as f64).collect();
            let sm = boxcar_smooth(&s, 100).unwrap();
            let want = sm.values[3500..4000].iter().cloned().fold(0.0, f64::max);
            assert!((p[q] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn asymmetry_extremes() {
        let g = DeviceGeometry::default();
        let top = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let bottom: Vec<f64> = top.iter().map(|v| 1.0 - v).collect();
        assert_eq!(localization_metric(&top, &g), Ok(0.5));
        assert_eq!(localization_metric(&bottom, &g), Ok(-0.5));
        assert_eq!(localization_metric(&[0.3; 10], &g), Ok(0.0));
        assert_eq!(localization_metric(&[0.0; 10], &g), Err(CharacterizeError::NoResponse));
    }

    proptest! {
        #[test]
        fn asymmetry_scale_and_permutation(p in prop::collection::vec(0.01f64..1.0, 10), k in 0.01f64..50.0) {
            let g = DeviceGeometry::default();
            let a = localization_metric(&p, &g).unwrap();
            prop_assert!((-0.5..=0.5).contains(&a));
            let scaled: Vec<f64> = p.iter().map(|x| x * k).collect();
            prop_assert!((localization_metric(&scaled, &g).unwrap() - a).abs() < 1e-12);
            // swap the two rows pairwise
            let swapped: Vec<f64> = (0..10).map(|i| p[i ^ 1]).collect();
            prop_assert!((localization_metric(&swapped, &g).unwrap() + a).abs() < 1e-12);
            // permute within the top row
            let mut perm = p.clone();
            perm.swap(0, 8);
            perm.swap(2, 6);
            prop_assert!((localization_metric(&perm, &g).unwrap() - a).abs() < 1e-12);
        }
    }
}
