use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use qpburst::cli::RunManifest;

fn qpburst(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qpburst"))
        .args(args)
        .env_remove("QPBURST_SEED")
        .env_remove("QPBURST_N_FILES")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = qpburst(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn synth_n(dir: &Path, n_files: &str, extra: &[&str]) {
    let mut args = vec!["synth", "-o", dir.to_str().unwrap(), "--seed", "11", "--n-files", n_files];
    args.extend_from_slice(extra);
    ok(&args);
}

fn synth(dir: &Path, extra: &[&str]) {
    synth_n(dir, "3", extra);
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir.join("records"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v.push(("truth.csv".into(), fs::read(dir.join("truth.csv")).unwrap()));
    v
}

#[test]
fn synth_is_deterministic_and_records_its_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, &["--workers", "1"]);
    synth(&b, &["--workers", "4"]);
    assert_eq!(tree(&a), tree(&b));

    let m = RunManifest::read(&a).unwrap();
    assert_eq!(m.subcommand, "synth");
    assert_eq!(m.seed, Some(11));
    assert_eq!(m.config["n_files"], "3");
    assert!(m.failures.is_empty());
    assert!(m.outputs.iter().any(|o| o == "truth.csv"));
}

#[test]
fn unknown_key_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let out = qpburst(&["synth", "-o", tmp.path().to_str().unwrap(), "--set", "bogus_key=1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus_key"));
}

#[test]
fn analyze_reports_against_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, res) = (tmp.path().join("data"), tmp.path().join("res"));
    synth(&data, &["--set", "radiation_rate_hz=0.5"]);
    ok(&["analyze", "-i", data.to_str().unwrap(), "-o", res.to_str().unwrap()]);
    for name in ["candidates.csv", "events.csv", "histogram.csv", "report.txt", "manifest.json"] {
        assert!(res.join(name).is_file(), "{name}");
    }
    let events = fs::read_to_string(res.join("events.csv")).unwrap();
    assert!(events.lines().count() > 10);
    assert!(fs::read_to_string(res.join("report.txt")).unwrap().contains("precision"));

    let rep = tmp.path().join("rep");
    ok(&[
        "report",
        "--events",
        res.join("events.csv").to_str().unwrap(),
        "--truth",
        data.join("truth.csv").to_str().unwrap(),
        "-o",
        rep.to_str().unwrap(),
    ]);
    assert_eq!(fs::read(rep.join("report.txt")).unwrap(), fs::read(res.join("report.txt")).unwrap());
}

#[test]
fn analyze_empty_directory_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = qpburst(&["analyze", "-i", tmp.path().to_str().unwrap(), "-o", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no records"));
}

#[test]
fn corrupt_file_is_listed_not_fatal() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, res) = (tmp.path().join("data"), tmp.path().join("res"));
    synth(&data, &[]);
    let mut files: Vec<_> = fs::read_dir(data.join("records")).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    fs::write(&files[1], b"QRX1 truncated").unwrap();
    let out = qpburst(&["analyze", "-i", data.to_str().unwrap(), "-o", res.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let m = RunManifest::read(&res).unwrap();
    assert_eq!(m.failures.len(), 1);
    assert!(res.join("events.csv").is_file());
}

fn comb_detected(dir: &Path) -> bool {
    let text = fs::read_to_string(dir.join("comb.csv")).unwrap();
    let line = text.lines().find(|l| l.starts_with("# detected")).expect("detected header");
    line.ends_with("true")
}

#[test]
fn spectrum_sees_the_pulse_tube_only_when_on() {
    let tmp = tempfile::tempdir().unwrap();
    for (name, pt) in [("on", "true"), ("off", "false")] {
        let data = tmp.path().join(name);
        synth(&data, &["--set", &format!("pt_enabled={pt}"), "--set", "radiation_rate_hz=0"]);
        let res = tmp.path().join(format!("{name}_asd"));
        ok(&["spectrum", "-i", data.to_str().unwrap(), "-o", res.to_str().unwrap()]);
        assert!(res.join("asd.csv").is_file());
        assert_eq!(comb_detected(&res), pt == "true", "{name}");
    }
}

fn mean_t1(dir: &Path) -> f64 {
    let mut r = csv::Reader::from_path(dir.join("t1_track.csv")).unwrap();
    let v: Vec<f64> = r.records().map(|row| row.unwrap()[2].parse().unwrap()).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn coherence_tracks_longer_t1_with_the_cooler_off() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_n(&data, "4", &["--set", "pt_off_windows_s=13.9:27.8", "--set", "radiation_rate_hz=0"]);
    let (on, off) = (tmp.path().join("on"), tmp.path().join("off"));
    let d = data.to_str().unwrap();
    ok(&["coherence", "-i", d, "-o", on.to_str().unwrap(), "--reference-files", "0:2", "--files", "0:2"]);
    let cal = on.join("calibration.json");
    ok(&["coherence", "-i", d, "-o", off.to_str().unwrap(), "--calibration", cal.to_str().unwrap(), "--files", "2:4"]);
    assert!(mean_t1(&off) > mean_t1(&on));
}

#[test]
fn accel_writes_comparison_table() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, res) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("res"));
    let common = ["--duration-s", "20", "--volts-per-g", "0.1", "--rate", "2000"];
    let mut args = vec!["accel-synth", "-o", a.to_str().unwrap(), "--amplitudes", "2e-3,1e-3"];
    args.extend(common);
    ok(&args);
    let mut args = vec!["accel-synth", "-o", b.to_str().unwrap(), "--amplitudes", "1e-3,5e-4", "--seed", "2"];
    args.extend(common);
    ok(&args);
    let file = |d: &Path| d.join("trace_000.csv").to_str().unwrap().to_owned();
    let out = ok(&[
        "accel",
        "--a",
        &file(&a),
        "--b",
        &file(&b),
        "--volts-per-g",
        "0.1",
        "--harmonics",
        "2",
        "--enhance",
        "0",
        "-o",
        res.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let mut r = csv::Reader::from_path(res.join("comparison.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        let ratio: f64 = row[4].parse().unwrap();
        assert!((ratio - 2.0).abs() < 0.2, "{ratio}");
        assert_eq!(&row[5], "ok");
    }
}

#[test]
fn keys_lists_configuration() {
    let out = ok(&["keys"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for key in ["radiation_rate_hz", "pt_amp_log_sigma", "threshold"] {
        assert!(text.contains(key), "{key}");
    }
}
