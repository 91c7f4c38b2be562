//! C ABI over the qpburst library.
//!
//! Every fallible function returns a [`QpStatus`]; on failure the message is
//! available from [`qp_last_error`] on the same thread until the next call.
//! Objects are opaque handles created by `*_open`/`*_compute` style functions
//! and released by the matching `*_free`. Passing NULL to a `*_free` is a
//! no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use qpburst::characterize::localization_metric;
use qpburst::classify::Label;
use qpburst::coherence::{calibrate_a, estimate_t1, T1Flag};
use qpburst::model::format::read_record;
use qpburst::model::geometry::DeviceGeometry;
use qpburst::model::record::RelaxationRecord;
use qpburst::pipeline::{analyze, AnalysisOutput, AnalysisParams};
use qpburst::spectral::{compute_asd, detect_harmonic_comb, SpectralTable, WelchParams};
use qpburst::synth::{Dataset, ScenarioConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    OutOfRange = 4,
    Internal = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpLabel {
    Radiation = 0,
    PulseTube = 1,
    Ambiguous = 2,
    FailedFit = 3,
}

impl From<Label> for QpLabel {
    fn from(l: Label) -> Self {
        match l {
            Label::Radiation => QpLabel::Radiation,
            Label::PulseTube => QpLabel::PulseTube,
            Label::Ambiguous => QpLabel::Ambiguous,
            Label::FailedFit => QpLabel::FailedFit,
        }
    }
}

/// One characterized event.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpEvent {
    pub file_id: u64,
    pub start_index: u64,
    pub global_index: u64,
    pub start_time_s: f64,
    pub filter_score: f64,
    pub lifetime_s: f64,
    /// NaN when no qubit responded.
    pub asymmetry: f64,
    /// Nonzero when the decay fit was flagged.
    pub fit_failed: i32,
    pub label: QpLabel,
}

/// A relaxation record.
pub struct QpRecord(RelaxationRecord);

/// Labelled events of an analysis run.
pub struct QpEvents(AnalysisOutput);

/// An amplitude spectral density table.
pub struct QpSpectrum(SpectralTable);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(QpStatus, String);

impl Failure {
    fn invalid(msg: impl ToString) -> Self {
        Failure(QpStatus::InvalidArgument, msg.to_string())
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> QpStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QpStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            QpStatus::Internal
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(QpStatus::NullPointer, format!("{what} is NULL")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be NULL or point to a valid `T`.
unsafe fn write_out<T>(p: *mut T, v: T, what: &str) -> Result<(), Failure> {
    non_null(p, what)?;
    p.write(v);
    Ok(())
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    non_null(p, "path")?;
    let s = CStr::from_ptr(p).to_str().map_err(|_| Failure::invalid("path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

/// Message of the last failure on this thread, or NULL. Valid until the next
/// call into the library from this thread.
#[no_mangle]
pub extern "C" fn qp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Fidelity factor `a` reproducing `t1_ref` from decay probability `p_ref`.
///
/// # Safety
/// `out` must point to writable storage for one double.
#[no_mangle]
pub unsafe extern "C" fn qp_calibrate_a(p_ref: f64, t1_ref: f64, delta_t: f64, out: *mut f64) -> QpStatus {
    guard(|| {
        let a = calibrate_a(p_ref, t1_ref, delta_t).map_err(Failure::invalid)?;
        write_out(out, a, "out")
    })
}

/// T1 from decay probability `p`. `nonphysical` receives 1 when the rate is
/// nonphysical and the estimate fell back to `a = 1`.
///
/// # Safety
/// `t1` and `nonphysical` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn qp_estimate_t1(p: f64, a: f64, delta_t: f64, t1: *mut f64, nonphysical: *mut i32) -> QpStatus {
    guard(|| {
        let e = estimate_t1(p, a, delta_t).map_err(Failure::invalid)?;
        write_out(t1, e.t1, "t1")?;
        write_out(nonphysical, i32::from(e.flag == T1Flag::NonphysicalRate), "nonphysical")
    })
}

/// Top/bottom asymmetry of `n` per-qubit peaks on the default ten-qubit layout.
///
/// # Safety
/// `peaks` must point to `n` doubles and `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn qp_localization_metric(peaks: *const f64, n: usize, out: *mut f64) -> QpStatus {
    guard(|| {
        non_null(peaks, "peaks")?;
        let peaks = std::slice::from_raw_parts(peaks, n);
        let a = localization_metric(peaks, &DeviceGeometry::default()).map_err(Failure::invalid)?;
        write_out(out, a, "out")
    })
}

/// Reads a record file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qp_record_open(path: *const c_char, out: *mut *mut QpRecord) -> QpStatus {
    guard(|| {
        let p = path_arg(path)?;
        let r = read_record(&p).map_err(|e| Failure(QpStatus::Io, format!("{}: {e}", p.display())))?;
        write_out(out, Box::into_raw(Box::new(QpRecord(r))), "out")
    })
}

/// Renders file `index` of the default scenario with `seed`, with
/// `n_files` files planned in total.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qp_record_synth(seed: u64, n_files: usize, index: usize, out: *mut *mut QpRecord) -> QpStatus {
    guard(|| {
        if index >= n_files {
            return Err(Failure(QpStatus::OutOfRange, format!("file {index} of {n_files}")));
        }
        let cfg = ScenarioConfig { seed, n_files, ..ScenarioConfig::default() };
        let ds = Dataset::plan(&cfg).map_err(Failure::invalid)?;
        let r = ds.generate_file(index).map_err(|e| Failure(QpStatus::Internal, e.to_string()))?;
        write_out(out, Box::into_raw(Box::new(QpRecord(r))), "out")
    })
}

/// # Safety
/// `r` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qp_record_free(r: *mut QpRecord) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Measurements per qubit; 0 for NULL.
///
/// # Safety
/// `r` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qp_record_len(r: *const QpRecord) -> usize {
    r.as_ref().map_or(0, |r| r.0.len())
}

/// # Safety
/// `r` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qp_record_qubits(r: *const QpRecord) -> usize {
    r.as_ref().map_or(0, |r| r.0.qubit_count())
}

/// Seconds per measurement; NaN for NULL.
///
/// # Safety
/// `r` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qp_record_cadence(r: *const QpRecord) -> f64 {
    r.as_ref().map_or(f64::NAN, |r| r.0.cadence())
}

/// Relaxations recorded on 0-based `qubit`.
///
/// # Safety
/// `r` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qp_record_relaxations(r: *const QpRecord, qubit: usize, out: *mut u64) -> QpStatus {
    guard(|| {
        non_null(r, "record")?;
        let r = &(*r).0;
        if qubit >= r.qubit_count() {
            return Err(Failure(QpStatus::OutOfRange, format!("qubit {qubit} of {}", r.qubit_count())));
        }
        write_out(out, r.relaxation_count(qubit) as u64, "out")
    })
}

/// Runs detection, characterization and labelling over `n` consecutive
/// records with default parameters and the given score `threshold`
/// (non-positive: default).
///
/// # Safety
/// `records` must point to `n` live handles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qp_analyze(
    records: *const *const QpRecord,
    n: usize,
    threshold: f64,
    workers: usize,
    out: *mut *mut QpEvents,
) -> QpStatus {
    guard(|| {
        non_null(records, "records")?;
        let handles = std::slice::from_raw_parts(records, n);
        let mut recs = Vec::with_capacity(n);
        for (i, &h) in handles.iter().enumerate() {
            non_null(h, &format!("records[{i}]"))?;
            recs.push((*h).0.clone());
        }
        let mut params = AnalysisParams::default();
        if threshold > 0.0 {
            params.threshold = threshold;
        }
        let geometry = DeviceGeometry::default();
        let o = analyze(&recs, &params, &geometry, workers).map_err(|e| Failure(QpStatus::Internal, e.to_string()))?;
        if let Some(f) = o.failures.first() {
            return Err(Failure::invalid(format!("record {}: {}", f.index, f.reason)));
        }
        write_out(out, Box::into_raw(Box::new(QpEvents(o))), "out")
    })
}

/// # Safety
/// `e` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qp_events_len(e: *const QpEvents) -> usize {
    e.as_ref().map_or(0, |e| e.0.events.len())
}

/// Copies event `i` into `out`.
///
/// # Safety
/// `e` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qp_events_get(e: *const QpEvents, i: usize, out: *mut QpEvent) -> QpStatus {
    guard(|| {
        non_null(e, "events")?;
        let o = &(*e).0;
        let ev = o
            .events
            .get(i)
            .ok_or_else(|| Failure(QpStatus::OutOfRange, format!("event {i} of {}", o.events.len())))?;
        let c = &ev.candidate;
        let v = QpEvent {
            file_id: c.file_id as u64,
            start_index: c.start_index as u64,
            global_index: c.global_index,
            start_time_s: c.start_time_s,
            filter_score: c.filter_score,
            lifetime_s: ev.fit.lifetime,
            asymmetry: ev.asymmetry,
            fit_failed: i32::from(ev.fit.failed()),
            label: o.labels[i].into(),
        };
        write_out(out, v, "out")
    })
}

/// Writes the labelled event catalog as CSV.
///
/// # Safety
/// `e` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn qp_events_write_csv(e: *const QpEvents, path: *const c_char) -> QpStatus {
    guard(|| {
        non_null(e, "events")?;
        let p = path_arg(path)?;
        let f = std::fs::File::create(&p).map_err(|x| Failure(QpStatus::Io, format!("{}: {x}", p.display())))?;
        (*e).0.write_csv(std::io::BufWriter::new(f)).map_err(|x| Failure(QpStatus::Io, x.to_string()))
    })
}

/// # Safety
/// `e` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qp_events_free(e: *mut QpEvents) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

/// Welch ASD of `n` samples at `sample_rate` with Hann segments of
/// `segment_len` and 50% overlap.
///
/// # Safety
/// `series` must point to `n` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qp_spectrum_compute(
    series: *const f64,
    n: usize,
    sample_rate: f64,
    segment_len: usize,
    out: *mut *mut QpSpectrum,
) -> QpStatus {
    guard(|| {
        non_null(series, "series")?;
        let s = std::slice::from_raw_parts(series, n);
        let t = compute_asd(s, sample_rate, WelchParams::new(segment_len)).map_err(Failure::invalid)?;
        write_out(out, Box::into_raw(Box::new(QpSpectrum(t))), "out")
    })
}

/// # Safety
/// `s` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qp_spectrum_len(s: *const QpSpectrum) -> usize {
    s.as_ref().map_or(0, |s| s.0.asd.len())
}

/// Frequency and ASD of bin `i`.
///
/// # Safety
/// `s` must be a live handle; `frequency` and `asd` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qp_spectrum_get(s: *const QpSpectrum, i: usize, frequency: *mut f64, asd: *mut f64) -> QpStatus {
    guard(|| {
        non_null(s, "spectrum")?;
        let t = &(*s).0;
        if i >= t.asd.len() {
            return Err(Failure(QpStatus::OutOfRange, format!("bin {i} of {}", t.asd.len())));
        }
        write_out(frequency, t.frequencies[i], "frequency")?;
        write_out(asd, t.asd[i], "asd")
    })
}

/// Harmonic-comb search around `f0_guess +- band` over `harmonics` multiples.
///
/// # Safety
/// `s` must be a live handle; `f0` and `score` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qp_spectrum_comb(
    s: *const QpSpectrum,
    f0_guess: f64,
    harmonics: usize,
    band: f64,
    f0: *mut f64,
    score: *mut f64,
) -> QpStatus {
    guard(|| {
        non_null(s, "spectrum")?;
        let c = detect_harmonic_comb(&(*s).0, f0_guess, harmonics, band).map_err(Failure::invalid)?;
        write_out(f0, c.f0, "f0")?;
        write_out(score, c.score, "score")
    })
}

/// # Safety
/// `s` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qp_spectrum_free(s: *mut QpSpectrum) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}
