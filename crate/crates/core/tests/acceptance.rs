//! End-to-end acceptance checks. Runs without the libtest harness so each
//! criterion prints one PASS/FAIL line with its runtime.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qpburst::accel::{accel_asd, compare_pt_peaks, correct_enhancement, resolution_enhance, tone_amplitude, AccelTrace, Axis};
use qpburst::characterize::{boxcar_smooth, fit_decay_lifetime, localization_metric, CharacterizeParams};
use qpburst::classify::classification_report;
use qpburst::coherence::{calibrate_a, decay_probability, estimate_t1, stats, windowed_t1_track, CoherenceCalibration};
use qpburst::detect::{build_exponential_filter, matched_filter, matched_filter_direct};
use qpburst::model::{sum_over_qubits, DeviceGeometry, EventKind, RelaxationRecord};
use qpburst::pipeline::{analyze, AnalysisParams, RecordFiles};
use qpburst::spectral::{compute_asd, detect_harmonic_comb, SpectralTable, WelchAccumulator, WelchParams};
use qpburst::synth::{gen_baseline, Dataset, ScenarioConfig};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn cadence() -> f64 {
    DeviceGeometry::default().cadence
}

fn constant_rejection() -> Outcome {
    let kernel = build_exponential_filter(5e-3, cadence(), 5.0).map_err(|e| e.to_string())?;
    let l = kernel.len() as f64;
    let mut worst = 0.0f64;
    for baseline in [0.0, 0.3, 1.0, 2.5, 7.0, 123.456, 1e4] {
        let c = matched_filter(&vec![baseline; 20_000], &kernel).map_err(|e| e.to_string())?;
        let m = c.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if m > 1e-9 * baseline * l {
            return Err(format!("baseline {baseline}: max |C| = {m:e}"));
        }
        if baseline > 0.0 {
            worst = worst.max(m / (baseline * l));
        }
    }
    Ok(format!("worst max|C|/(baseline*L) = {worst:.2e}"))
}

fn convolution_oracle() -> Outcome {
    let kernel = build_exponential_filter(5e-3, cadence(), 5.0).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let s: Vec<f64> = (0..10_000).map(|_| rng.random_range(0..=10) as f64).collect();
        let fast = matched_filter(&s, &kernel).map_err(|e| e.to_string())?;
        let slow = matched_filter_direct(&s, &kernel).map_err(|e| e.to_string())?;
        let scale = slow.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = fast.values.iter().zip(&slow.values).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst = worst.max(diff / scale);
    }
    ensure(worst <= 1e-9, format!("max relative deviation {worst:.2e}"))
}

fn fit_recovery() -> Outcome {
    let cad = cadence();
    let cp = CharacterizeParams::defaults(cad, 5e-3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let onset = 1000;
    let mut errors = Vec::with_capacity(100);
    for _ in 0..100 {
        let tau = (rng.random_range(1e-3f64.ln()..100e-3f64.ln())).exp();
        let baseline = rng.random_range(0.5..3.0);
        let amplitude = rng.random_range(5.0..10.0);
        let n = onset + cp.fit_span + cp.smooth_window;
        let s: Vec<f64> = (0..n)
            .map(|i| {
                if i < onset {
                    baseline
                } else {
                    baseline + amplitude * (-((i - onset) as f64) * cad / tau).exp()
                }
            })
            .collect();
        let sm = boxcar_smooth(&s, cp.smooth_window).map_err(|e| e.to_string())?;
        let fit = fit_decay_lifetime(&sm, cad, onset, cp.fit_span).map_err(|e| e.to_string())?;
        errors.push((fit.lifetime / tau - 1.0).abs());
    }
    errors.sort_by(f64::total_cmp);
    let median = 0.5 * (errors[49] + errors[50]);
    let worst = errors[99];
    ensure(median < 0.01 && worst < 0.05, format!("median {median:.2e}, worst {worst:.2e}"))
}

fn population_separation() -> Outcome {
    let cfg = ScenarioConfig { n_files: 87, ..ScenarioConfig::default() };
    let ds = Dataset::plan(&cfg).map_err(|e| e.to_string())?;
    let truth = ds.catalog();
    let (n_rad, n_pt) = (truth.count(EventKind::Radiation), truth.count(EventKind::PulseTube));
    let out = analyze(&ds, &AnalysisParams::default(), &cfg.geometry, 0).map_err(|e| e.to_string())?;
    let r = classification_report(&out.events, &out.labels, &truth, out.kernel_len as u64);
    let detail = format!(
        "{:.0} s, truth {n_rad} radiation / {n_pt} PT; radiation precision {:.3} recall {:.3}, PT precision {:.3}, labeled PT fraction {:.4}",
        truth.total_duration_s(),
        r.radiation.precision,
        r.radiation.recall,
        r.pt.precision,
        r.labeled_pt_fraction
    );
    ensure(
        r.radiation.precision >= 0.9
            && r.radiation.recall >= 0.9
            && r.pt.precision >= 0.95
            && (r.labeled_pt_fraction - 0.99).abs() <= 0.01,
        detail,
    )
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let x = q * (sorted.len() - 1) as f64;
    let (i, f) = (x.floor() as usize, x.fract());
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - f) + sorted[i + 1] * f
    } else {
        sorted[i]
    }
}

fn iqr(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.75) - quantile(&v, 0.25)
}

fn localization() -> Outcome {
    let g = DeviceGeometry::default();
    let top: Vec<f64> = (0..10).map(|q| if q % 2 == 0 { 1.0 } else { 0.0 }).collect();
    let bottom: Vec<f64> = top.iter().map(|v| 1.0 - v).collect();
    let a = |p: &[f64]| localization_metric(p, &g).map_err(|e| e.to_string());
    if a(&top)? != 0.5 || a(&bottom)? != -0.5 || a(&[0.7; 10])? != 0.0 {
        return Err("analytic extremes not reproduced".into());
    }

    let cfg = ScenarioConfig { n_files: 40, radiation_rate: 1.0, ..ScenarioConfig::default() };
    let ds = Dataset::plan(&cfg).map_err(|e| e.to_string())?;
    let truth = ds.catalog();
    let out = analyze(&ds, &AnalysisParams::default(), &cfg.geometry, 0).map_err(|e| e.to_string())?;
    let t0 = Instant::now();
    let r = classification_report(&out.events, &out.labels, &truth, out.kernel_len as u64);
    let (mut rad, mut pt) = (Vec::new(), Vec::new());
    for (e, m) in out.events.iter().zip(&r.matches) {
        let Some(t) = m else { continue };
        if !e.asymmetry.is_finite() {
            continue;
        }
        match truth.events[*t].kind {
            EventKind::Radiation => rad.push(e.asymmetry),
            EventKind::PulseTube => pt.push(e.asymmetry),
        }
    }
    let matched = rad.len() + pt.len();
    let (ir, ip) = (iqr(rad.clone()), iqr(pt.clone()));
    let catalog_time = t0.elapsed();
    ensure(
        matched >= 200 && rad.len() >= 20 && ir >= 2.0 * ip && catalog_time < Duration::from_secs(60),
        format!(
            "extremes exact; {matched} matched ({} radiation, {} PT), IQR radiation {ir:.4} vs PT {ip:.4} (x{:.1})",
            rad.len(),
            pt.len(),
            ir / ip
        ),
    )
}

fn dataset_asd(cfg: &ScenarioConfig) -> Result<SpectralTable, String> {
    let ds = Dataset::plan(cfg).map_err(|e| e.to_string())?;
    let fs = 1.0 / cfg.geometry.cadence;
    let params = WelchParams::new(cfg.measurements_per_file);
    let mut acc = WelchAccumulator::new(params, fs).map_err(|e| e.to_string())?;
    for i in 0..ds.n_files() {
        let r = ds.generate_file(i).map_err(|e| e.to_string())?;
        acc.feed(&sum_over_qubits(&r).as_f64());
    }
    acc.finish().map_err(|e| e.to_string())
}

fn spectral_signature() -> Outcome {
    let on = ScenarioConfig { n_files: 20, radiation_rate: 0.0, ..ScenarioConfig::default() };
    let mut off = on.clone();
    off.pt.enabled = false;
    let (t_on, t_off) = (dataset_asd(&on)?, dataset_asd(&off)?);
    let c_on = detect_harmonic_comb(&t_on, 1.5, 5, 0.3).map_err(|e| e.to_string())?;
    let c_off = detect_harmonic_comb(&t_off, 1.5, 5, 0.3).map_err(|e| e.to_string())?;
    let ratio = c_on.score / c_off.score;
    let df = t_on.df();
    ensure(
        ratio >= 10.0 && (c_on.f0 - on.pt.f0).abs() <= df,
        format!("score {:.1} vs {:.1} (x{ratio:.1}), f0 {:.4} Hz, bin {df:.4} Hz", c_on.score, c_off.score, c_on.f0),
    )
}

fn parseval() -> Outcome {
    let (fs, l) = (1000.0, 1000);
    let f = 50.0;
    let s: Vec<f64> = (0..50_000).map(|i| (2.0 * PI * f * i as f64 / fs).sin()).collect();
    let t = compute_asd(&s, fs, WelchParams::new(l)).map_err(|e| e.to_string())?;
    let power = t.asd.iter().map(|a| a * a).sum::<f64>() * t.df();
    let err = (power / 0.5 - 1.0).abs();
    ensure(err < 0.01, format!("integrated power {power:.6}, relative error {err:.2e}"))
}

fn coherence_identities() -> Outcome {
    let dt = 3e-6;
    let mut worst = 0.0f64;
    for &t1 in &[5e-6, 12e-6, 38e-6, 50e-6, 200e-6, 1e-3] {
        for &p in &[0.0, 0.01, 0.05, 0.1, 0.3, 0.6] {
            let a = calibrate_a(p, t1, dt).map_err(|e| e.to_string())?;
            let e = estimate_t1(p, a, dt).map_err(|e| e.to_string())?;
            worst = worst.max((e.t1 / t1 - 1.0).abs());
        }
    }
    if worst > 1e-12 {
        return Err(format!("roundtrip error {worst:e}"));
    }

    let cfg = ScenarioConfig { t1: vec![50e-6; 10], ..ScenarioConfig::default() };
    let r = gen_baseline(&cfg, 1_000_000).map_err(|e| e.to_string())?;
    let p = decay_probability(stats(&r, 0, 0, r.len())).map_err(|e| e.to_string())?;
    let closed = estimate_t1(p.p, 1.0, dt).map_err(|e| e.to_string())?.t1;
    let closed_err = (closed / 50e-6 - 1.0).abs();
    if closed_err > 0.02 {
        return Err(format!("closed loop T1 {closed:e}"));
    }

    // first half PT on, second half off
    let mut cfg = ScenarioConfig { n_files: 4, radiation_rate: 0.0, ..ScenarioConfig::default() };
    let half = 2.0 * cfg.file_duration();
    cfg.pt.off_windows = vec![(half, 2.0 * half)];
    let ds = Dataset::plan(&cfg).map_err(|e| e.to_string())?;
    let files: Vec<RelaxationRecord> = ds.generate_all(0).map_err(|e| e.to_string())?;
    let on_part = RelaxationRecord::concat(&[&files[0], &files[1]]).map_err(|e| e.to_string())?;
    let cal = CoherenceCalibration::from_record(&on_part, &cfg.t1, dt).map_err(|e| e.to_string())?;
    let mean_t1 = |recs: &[RelaxationRecord]| -> Result<f64, String> {
        let mut v = Vec::new();
        for r in recs {
            v.extend(windowed_t1_track(r, &cal, 100_000).map_err(|e| e.to_string())?.into_iter().map(|p| p.t1 / cfg.t1[p.qubit]));
        }
        Ok(v.iter().sum::<f64>() / v.len() as f64)
    };
    let (m_on, m_off) = (mean_t1(&files[..2])?, mean_t1(&files[2..])?);
    ensure(
        m_off > m_on,
        format!(
            "roundtrip {worst:.1e}, closed loop {:.2} us ({closed_err:.2e}), mean T1/T1_ref PT on {m_on:.4} vs off {m_off:.4}",
            closed * 1e6
        ),
    )
}

fn accelerometer_chain() -> Outcome {
    let (rate, vpg, w) = (50_000.0, 0.05, 256);
    let samples: Vec<f64> = (0..1_000_000).map(|i| vpg * (2.0 * PI * 10.0 * i as f64 / rate).sin()).collect();
    let t = AccelTrace::new(samples, rate, Axis::X, "bench", vpg).map_err(|e| e.to_string())?;
    let enhanced = resolution_enhance(&t, w).map_err(|e| e.to_string())?;
    let table = accel_asd(&enhanced, WelchParams::new(250_000)).map_err(|e| e.to_string())?;
    let corrected = correct_enhancement(&table, w);
    let amp = tone_amplitude(&corrected, 10.0, 3).ok_or("10 Hz outside table")?;
    if (amp - 1.0).abs() > 0.02 {
        return Err(format!("recovered {amp:.4} g"));
    }

    let comb: Vec<f64> = (0..500_000u64)
        .map(|i| {
            let x = i as f64 / rate;
            vpg * (1..=3).map(|k| 1e-2 / k as f64 * (2.0 * PI * 1.4 * k as f64 * x).sin()).sum::<f64>()
                + vpg * 1e-4 * ((i * 7919 % 1009) as f64 / 1009.0 - 0.5)
        })
        .collect();
    let ct = AccelTrace::new(comb, rate, Axis::Y, "DR", vpg).map_err(|e| e.to_string())?;
    let a = accel_asd(&ct, WelchParams::new(500_000)).map_err(|e| e.to_string())?;
    let b = SpectralTable { asd: a.asd.iter().map(|v| 2.0 * v).collect(), ..a.clone() };
    let same = compare_pt_peaks(&a, &a, 1.4, 3, false).map_err(|e| e.to_string())?;
    let half = compare_pt_peaks(&a, &b, 1.4, 3, false).map_err(|e| e.to_string())?;
    let exact = same.harmonics.iter().all(|h| h.ratio == 1.0) && half.harmonics.iter().all(|h| h.ratio == 0.5);
    ensure(exact, format!("recovered {amp:.4} g; ratio tables exact: {exact}"))
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["records", ""] {
        let d = dir.join(sub);
        let mut names: Vec<_> = fs::read_dir(&d).unwrap().filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_file()).collect();
        names.sort();
        for p in names {
            out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
        }
    }
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = ScenarioConfig { n_files: 8, radiation_rate: 0.5, seed: 42, ..ScenarioConfig::default() };
    let mut runs = Vec::new();
    for workers in [1usize, 8] {
        let dir = tmp.path().join(format!("w{workers}"));
        let ds = Dataset::plan(&cfg).map_err(|e| e.to_string())?;
        let paths = ds.write_to(&dir, workers).map_err(|e| e.to_string())?;
        let out = analyze(&RecordFiles(paths), &AnalysisParams::default(), &cfg.geometry, workers).map_err(|e| e.to_string())?;
        let mut events = Vec::new();
        out.write_csv(&mut events).map_err(|e| e.to_string())?;
        runs.push((dir_bytes(&dir), events, out.events.len()));
    }
    let same_data = runs[0].0 == runs[1].0;
    let same_events = runs[0].1 == runs[1].1;
    ensure(
        same_data && same_events && runs[0].2 > 0,
        format!("{} files, {} events; dataset identical: {same_data}, catalog identical: {same_events}", runs[0].0.len(), runs[0].2),
    )
}

fn main() -> ExitCode {
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let criteria: [(&str, fn() -> Outcome, u64); 10] = [
        ("constant rejection", constant_rejection, 1),
        ("convolution oracle", convolution_oracle, 10),
        ("fit recovery", fit_recovery, 30),
        ("population separation", population_separation, 300),
        ("localization", localization, 300),
        ("spectral signature", spectral_signature, 60),
        ("parseval", parseval, 5),
        ("coherence identities", coherence_identities, 30),
        ("accelerometer chain", accelerometer_chain, 10),
        ("determinism", determinism, 120),
    ];
    let mut failed = 0;
    for (i, (name, f, limit)) in criteria.iter().enumerate() {
        if filter.as_deref().is_some_and(|s| !name.contains(s)) {
            continue;
        }
        let t = Instant::now();
        let r = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let dt = t.elapsed();
        let in_time = dt <= Duration::from_secs(*limit);
        let (verdict, detail) = match &r {
            Ok(d) if in_time => ("PASS", d.clone()),
            Ok(d) => ("FAIL", format!("{d}; over the {limit} s limit")),
            Err(d) => ("FAIL", d.clone()),
        };
        if verdict == "FAIL" {
            failed += 1;
        }
        println!("criterion {:>2} {verdict} {name} ({:.2} s): {detail}", i + 1, dt.as_secs_f64());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
