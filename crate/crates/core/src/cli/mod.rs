//! The `qpburst` command line.
//!
//! Configuration is resolved as defaults, then `--config` file, then
//! `QPBURST_<KEY>` environment variables, then `--set key=value` flags.
//! Each subcommand writes a `manifest.json` next to its outputs. The process
//! exits with 0 on success, 1 on error and 2 when some input files failed.

mod manifest;

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

pub use manifest::{RunManifest, MANIFEST_NAME};
use manifest::Recorder;

use crate::accel::{
    accel_asd, compare_pt_peaks, correct_enhancement, load_accel_trace, resolution_enhance, Axis, VibrationModel,
    DEFAULT_ENHANCE_WINDOW,
};
use crate::classify::{report_from_starts, Label};
use crate::coherence::{stats, windowed_t1_track, write_track_csv, CoherenceCalibration, DecayStats, T1Point};
use crate::detect::write_candidates_csv;
use crate::model::format::{read_record, write_record_csv};
use crate::model::record::sum_over_qubits;
use crate::model::truth::GroundTruthCatalog;
use crate::pipeline::{analyze, AnalysisParams, RecordFiles, ANALYSIS_KEYS};
use crate::spectral::{detect_harmonic_comb, Spectrogram, WelchAccumulator, WelchParams, Window, HARMONIC_SNR};
use crate::synth::{Dataset, ScenarioConfig, KEYS};

pub const CONFIG_NAME: &str = "config.toml";

#[derive(Debug, Parser)]
#[command(name = "qpburst", version, about = "Correlated relaxation bursts in qubit arrays: synthesis and analysis")]
pub struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    /// Output table format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with its ground-truth catalog.
    Synth(SynthArgs),
    /// Detect, characterize and label bursts in a dataset.
    Analyze(AnalyzeArgs),
    /// ASD, spectrogram and harmonic comb of the summed relaxation count.
    Spectrum(SpectrumArgs),
    /// Windowed T1 track from decay probabilities.
    Coherence(CoherenceArgs),
    /// Accelerometer ASDs and harmonic comparison of two environments.
    Accel(AccelArgs),
    /// Write synthetic accelerometer trace files.
    AccelSynth(AccelSynthArgs),
    /// Classification report of an event catalog against ground truth.
    Report(ReportArgs),
    /// Convert one record file to CSV.
    Export(ExportArgs),
    /// List configuration keys.
    Keys,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Flat `key = value` file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_files: Option<usize>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Dataset directory (or a directory of `.qrx` files).
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Ground truth; defaults to `truth.csv` in the input directory when present.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Match tolerance in samples; defaults to the kernel length.
    #[arg(long)]
    pub tolerance: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Segment length in samples; defaults to one file.
    #[arg(long)]
    pub segment_len: Option<usize>,
    #[arg(long, default_value = "hann")]
    pub window: String,
    #[arg(long, default_value_t = 0.5)]
    pub overlap: f64,
    /// Only files `START:END` (end exclusive).
    #[arg(long)]
    pub files: Option<String>,
    /// Files per spectrogram column; no spectrogram without it.
    #[arg(long)]
    pub slice_files: Option<usize>,
    #[arg(long, default_value_t = 1.5)]
    pub f0: f64,
    #[arg(long, default_value_t = 0.3)]
    pub band: f64,
    #[arg(long, default_value_t = 5)]
    pub harmonics: usize,
}

#[derive(Debug, Args)]
pub struct CoherenceArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Window length in measurements.
    #[arg(long, default_value_t = 100_000)]
    pub window: usize,
    /// Reference T1 per qubit, comma separated; defaults to the dataset's `t1_s`.
    #[arg(long)]
    pub t1_ref: Option<String>,
    /// Preparation to mid-measurement delay; defaults to the dataset's `delta_t_s`.
    #[arg(long)]
    pub delta_t: Option<f64>,
    /// Files used for calibration, `START:END`; defaults to all.
    #[arg(long)]
    pub reference_files: Option<String>,
    /// Reuse a `calibration.json` instead of calibrating.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// Only track files `START:END`.
    #[arg(long)]
    pub files: Option<String>,
}

#[derive(Debug, Args)]
pub struct AccelArgs {
    /// Trace files of environment A, in order.
    #[arg(long = "a", num_args = 1.., required = true)]
    pub a: Vec<PathBuf>,
    /// Trace files of environment B, in order.
    #[arg(long = "b", num_args = 1.., required = true)]
    pub b: Vec<PathBuf>,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Volts per g of A, including all gain stages.
    #[arg(long)]
    pub volts_per_g: f64,
    /// Volts per g of B; defaults to that of A.
    #[arg(long)]
    pub volts_per_g_b: Option<f64>,
    #[arg(long)]
    pub axis: Option<String>,
    /// Moving-average window in samples; 0 skips the enhancement.
    #[arg(long, default_value_t = DEFAULT_ENHANCE_WINDOW)]
    pub enhance: usize,
    /// Divide the ASDs by the moving-average response.
    #[arg(long)]
    pub correct: bool,
    /// Welch segment length, capped at the shortest file.
    #[arg(long, default_value_t = 10.0)]
    pub segment_s: f64,
    #[arg(long, default_value_t = 1.4)]
    pub f0: f64,
    #[arg(long, default_value_t = 5)]
    pub harmonics: usize,
    /// Bring tables on different grids to the coarser one.
    #[arg(long)]
    pub resample: bool,
}

#[derive(Debug, Args)]
pub struct AccelSynthArgs {
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub n_files: usize,
    #[arg(long, default_value_t = 10.0)]
    pub duration_s: f64,
    #[arg(long, default_value_t = crate::accel::DEFAULT_RATE)]
    pub rate: f64,
    #[arg(long, default_value_t = 1.4)]
    pub f0: f64,
    /// Harmonic amplitudes in g, comma separated.
    #[arg(long, default_value = "1e-3,5e-4,2.5e-4")]
    pub amplitudes: String,
    /// White noise density, g/sqrt(Hz).
    #[arg(long, default_value_t = 1e-5)]
    pub noise: f64,
    #[arg(long)]
    pub volts_per_g: f64,
    #[arg(long, default_value = "X")]
    pub axis: String,
    #[arg(long, default_value = "synthetic")]
    pub environment: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// `events.csv` written by `analyze`.
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Match tolerance in samples; defaults to the default kernel length.
    #[arg(long)]
    pub tolerance: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub record: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
}

/// Parses `args` and runs the subcommand.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("qpburst: {n} input file(s) failed; see the manifest");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("qpburst: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Runs a parsed command line. Returns the number of failed input files.
pub fn run(cli: Cli) -> Result<usize> {
    let w = cli.workers;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(w).build()?;
    pool.install(|| match cli.command {
        Command::Synth(a) => synth(a, w),
        Command::Analyze(a) => analyze_cmd(a, w),
        Command::Spectrum(a) => spectrum(a, w),
        Command::Coherence(a) => coherence(a, w),
        Command::Accel(a) => accel(a, w),
        Command::AccelSynth(a) => accel_synth(a, w),
        Command::Report(a) => report(a, w),
        Command::Export(a) => export(a, w),
        Command::Keys => {
            println!("# scenario (synth)");
            for (k, d) in KEYS {
                println!("{k:<26} {d}");
            }
            println!("\n# analysis (analyze)");
            for (k, d) in ANALYSIS_KEYS {
                println!("{k:<26} {d}");
            }
            Ok(0)
        }
    })
}

fn env_vars() -> Vec<(String, String)> {
    std::env::vars().collect()
}

fn split_kv(s: &str) -> Result<(&str, &str)> {
    s.split_once('=').with_context(|| format!("expected KEY=VALUE, got `{s}`"))
}

fn read_text(p: &Path) -> Result<String> {
    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
}

fn scenario_config(a: &ConfigArgs) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::default();
    if let Some(p) = &a.config {
        cfg.apply_file_str(&read_text(p)?).with_context(|| p.display().to_string())?;
    }
    cfg.apply_env(env_vars()).context("environment")?;
    for s in &a.set {
        let (k, v) = split_kv(s)?;
        cfg.set(k.trim(), v)?;
    }
    Ok(cfg)
}

/// Scenario written next to a dataset by `synth`, if any.
fn dataset_config(dir: &Path) -> Result<Option<ScenarioConfig>> {
    let p = dir.join(CONFIG_NAME);
    if !p.is_file() {
        return Ok(None);
    }
    let mut cfg = ScenarioConfig::default();
    cfg.apply_file_str(&read_text(&p)?).with_context(|| p.display().to_string())?;
    Ok(Some(cfg))
}

fn record_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let sub = dir.join("records");
    let dir = if sub.is_dir() { sub } else { dir.to_path_buf() };
    let entries = fs::read_dir(&dir).with_context(|| format!("reading {}", dir.display()))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "qrx"))
        .collect();
    if paths.is_empty() {
        bail!("no records in {}", dir.display());
    }
    paths.sort();
    Ok(paths)
}

fn file_range(spec: Option<&str>, n: usize) -> Result<std::ops::Range<usize>> {
    let Some(s) = spec else { return Ok(0..n) };
    let (a, b) = s.split_once(':').with_context(|| format!("expected START:END, got `{s}`"))?;
    let a: usize = if a.is_empty() { 0 } else { a.parse()? };
    let b: usize = if b.is_empty() { n } else { b.parse()? };
    if a >= b || b > n {
        bail!("file range {a}:{b} outside 0:{n}");
    }
    Ok(a..b)
}

fn create(p: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?))
}

fn synth(a: SynthArgs, workers: usize) -> Result<usize> {
    let mut cfg = scenario_config(&a.cfg)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.n_files {
        cfg.n_files = n;
    }
    cfg.validate()?;
    let mut rec = Recorder::new("synth", &a.out, workers)?;
    rec.seed(cfg.seed);
    rec.config(cfg.to_pairs());
    let ds = Dataset::plan(&cfg)?;
    let paths = ds.write_to(&a.out, workers)?;
    rec.output("records/");
    rec.output("truth.csv");
    fs::write(rec.output(CONFIG_NAME), cfg.to_file_string())?;
    let truth = ds.catalog();
    println!(
        "wrote {} files ({:.1} s), {} PT and {} radiation bursts",
        paths.len(),
        truth.total_duration_s(),
        truth.count(crate::model::truth::EventKind::PulseTube),
        truth.count(crate::model::truth::EventKind::Radiation)
    );
    rec.finish()
}

fn analyze_cmd(a: AnalyzeArgs, workers: usize) -> Result<usize> {
    let mut params = AnalysisParams::default();
    if let Some(p) = &a.cfg.config {
        params.apply_file_str(&read_text(p)?).with_context(|| p.display().to_string())?;
    }
    params.apply_env(env_vars()).context("environment")?;
    for s in &a.cfg.set {
        let (k, v) = split_kv(s)?;
        params.set(k.trim(), v)?;
    }
    let geometry = dataset_config(&a.input)?.map(|c| c.geometry).unwrap_or_default();
    let paths = record_paths(&a.input)?;
    let mut rec = Recorder::new("analyze", &a.out, workers)?;
    rec.input(&a.input);
    rec.config(params.to_pairs());
    let source = RecordFiles(paths.clone());
    let out = analyze(&source, &params, &geometry, workers)?;
    for f in &out.failures {
        rec.failure(format!("{}: {}", paths[f.index].display(), f.reason));
    }
    let candidates: Vec<_> = out.events.iter().map(|e| e.candidate.clone()).collect();
    write_candidates_csv(create(&rec.output("candidates.csv"))?, &candidates)?;
    out.write_csv(create(&rec.output("events.csv"))?)?;
    out.histogram().write_csv(create(&rec.output("histogram.csv"))?)?;

    let truth_path = a.truth.clone().or_else(|| Some(a.input.join("truth.csv")).filter(|p| p.is_file()));
    if let Some(tp) = truth_path {
        rec.input(&tp);
        let truth = GroundTruthCatalog::read_csv(File::open(&tp).with_context(|| tp.display().to_string())?)?;
        let tol = a.tolerance.unwrap_or(out.kernel_len as u64);
        rec.set("match_tolerance", tol);
        let starts: Vec<u64> = out.events.iter().map(|e| e.candidate.global_index).collect();
        let r = report_from_starts(&starts, &out.labels, &truth, tol);
        fs::write(rec.output("report.txt"), r.to_text())?;
        fs::write(rec.output("report.kv"), r.to_key_values())?;
        print!("{}", r.to_text());
    }
    println!(
        "{} events: {} Radiation, {} PT, {} Ambiguous, {} FailedFit",
        out.events.len(),
        out.count(Label::Radiation),
        out.count(Label::PulseTube),
        out.count(Label::Ambiguous),
        out.count(Label::FailedFit)
    );
    rec.finish()
}

fn spectrum(a: SpectrumArgs, workers: usize) -> Result<usize> {
    let all = record_paths(&a.input)?;
    let range = file_range(a.files.as_deref(), all.len())?;
    let paths = &all[range.clone()];
    let first = read_record(&paths[0])?;
    let fs_hz = 1.0 / first.cadence();
    let window = Window::parse(&a.window).with_context(|| format!("unknown window `{}`", a.window))?;
    let params = WelchParams { segment_len: a.segment_len.unwrap_or(first.len()), window, overlap: a.overlap };
    WelchAccumulator::new(params, fs_hz)?;

    let mut rec = Recorder::new("spectrum", &a.out, workers)?;
    rec.input(&a.input);
    rec.set("files", format!("{}:{}", range.start, range.end));
    rec.set("segment_len", params.segment_len);
    rec.set("window", params.window.name());
    rec.set("overlap", params.overlap);
    rec.set("f0_guess_hz", a.f0);
    rec.set("band_hz", a.band);
    rec.set("harmonics", a.harmonics);

    let per_file: Vec<Result<(f64, WelchAccumulator)>> = paths
        .par_iter()
        .map(|p| {
            let r = read_record(p)?;
            let mut acc = WelchAccumulator::new(params, fs_hz)?;
            acc.feed(&sum_over_qubits(&r).as_f64());
            Ok((r.start_timestamp(), acc))
        })
        .collect();
    let mut ok = Vec::new();
    for (p, r) in paths.iter().zip(per_file) {
        match r {
            Ok(x) => ok.push(x),
            Err(e) => rec.failure(format!("{}: {e:#}", p.display())),
        }
    }
    let mut total = WelchAccumulator::new(params, fs_hz)?;
    for (_, acc) in &ok {
        total.merge(acc)?;
    }
    let table = total.finish().context("no complete segment in the selected files")?;
    table.write_csv(create(&rec.output("asd.csv"))?, "counts/sqrt(Hz)")?;

    let comb = detect_harmonic_comb(&table, a.f0, a.harmonics, a.band)?;
    let detected = comb.median_snr() >= HARMONIC_SNR;
    let mut w = create(&rec.output("comb.csv"))?;
    writeln!(w, "# median_snr = {}", comb.median_snr())?;
    writeln!(w, "# detected = {detected}")?;
    comb.write_csv(&mut w)?;
    w.flush()?;
    println!("comb f0 = {:.4} Hz, score = {:.2}, median SNR = {:.2}, detected = {detected}", comb.f0, comb.score, comb.median_snr());

    if let Some(k) = a.slice_files {
        if k == 0 {
            bail!("--slice-files must be at least 1");
        }
        let mut times = Vec::new();
        let mut tables = Vec::new();
        for chunk in ok.chunks(k) {
            let mut acc = WelchAccumulator::new(params, fs_hz)?;
            for (_, c) in chunk {
                acc.merge(c)?;
            }
            if let Ok(t) = acc.finish() {
                times.push(chunk[0].0);
                tables.push(t);
            }
        }
        let sg = Spectrogram::from_tables(times, tables)?;
        sg.write_csv(create(&rec.output("spectrogram.csv"))?)?;
        sg.write_binary(create(&rec.output("spectrogram.bin"))?)?;
        fs::write(rec.output("spectrogram.json"), serde_json::to_string_pretty(&sg.axes())?)?;
    }
    rec.finish()
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',').map(|x| x.trim().parse::<f64>().with_context(|| format!("bad number `{x}`"))).collect()
}

fn coherence(a: CoherenceArgs, workers: usize) -> Result<usize> {
    let paths = record_paths(&a.input)?;
    let ds_cfg = dataset_config(&a.input)?;
    let mut rec = Recorder::new("coherence", &a.out, workers)?;
    rec.input(&a.input);
    rec.set("window", a.window);

    let cal = if let Some(p) = &a.calibration {
        rec.input(p);
        serde_json::from_str::<CoherenceCalibration>(&read_text(p)?).with_context(|| p.display().to_string())?
    } else {
        let t1_ref = match (&a.t1_ref, &ds_cfg) {
            (Some(s), _) => parse_list(s)?,
            (None, Some(c)) => c.t1.clone(),
            (None, None) => bail!("no reference T1: pass --t1-ref or use a dataset written by `synth`"),
        };
        let dt = a
            .delta_t
            .or(ds_cfg.as_ref().map(|c| c.geometry.prep_to_mid_delay))
            .unwrap_or(crate::model::geometry::DEFAULT_DELTA_T);
        let range = file_range(a.reference_files.as_deref(), paths.len())?;
        rec.set("reference_files", format!("{}:{}", range.start, range.end));
        let per_file: Vec<Result<Vec<DecayStats>>> = paths[range]
            .par_iter()
            .map(|p| {
                let r = read_record(p)?;
                Ok((0..r.qubit_count()).map(|q| stats(&r, q, 0, r.len())).collect())
            })
            .collect();
        let mut sum: Vec<DecayStats> = Vec::new();
        for s in per_file {
            let s = s?;
            if sum.is_empty() {
                sum = vec![DecayStats { n_decay: 0, n_prep: 0 }; s.len()];
            }
            for (acc, x) in sum.iter_mut().zip(s) {
                acc.n_decay += x.n_decay;
                acc.n_prep += x.n_prep;
            }
        }
        let p_ref: Vec<f64> = sum
            .iter()
            .map(|s| crate::coherence::decay_probability(*s).map(|x| x.p))
            .collect::<Result<_, _>>()?;
        if p_ref.len() != t1_ref.len() {
            bail!("{} reference T1 values for {} qubits", t1_ref.len(), p_ref.len());
        }
        CoherenceCalibration::from_reference(&p_ref, &t1_ref, dt)?
    };
    fs::write(rec.output("calibration.json"), serde_json::to_string_pretty(&cal)? + "\n")?;
    rec.set("delta_t_s", cal.delta_t);

    let range = file_range(a.files.as_deref(), paths.len())?;
    rec.set("files", format!("{}:{}", range.start, range.end));
    let tracks: Vec<Result<Vec<T1Point>>> = paths[range.clone()]
        .par_iter()
        .map(|p| Ok(windowed_t1_track(&read_record(p)?, &cal, a.window)?))
        .collect();
    let mut points = Vec::new();
    for (p, t) in paths[range].iter().zip(tracks) {
        match t {
            Ok(t) => points.extend(t),
            Err(e) => rec.failure(format!("{}: {e:#}", p.display())),
        }
    }
    write_track_csv(create(&rec.output("t1_track.csv"))?, &points)?;

    let mut w = create(&rec.output("t1_summary.csv"))?;
    writeln!(w, "qubit,mean_T1_s,windows")?;
    for q in 0..cal.a.len() {
        let v: Vec<f64> = points.iter().filter(|p| p.qubit == q && p.t1.is_finite()).map(|p| p.t1).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        writeln!(w, "Q{},{:.6e},{}", q + 1, mean, v.len())?;
    }
    w.flush()?;
    println!("{} windows tracked", points.len() / cal.a.len().max(1));
    rec.finish()
}

fn accel(a: AccelArgs, workers: usize) -> Result<usize> {
    let axis = a.axis.as_deref().map(str::parse::<Axis>).transpose()?;
    let ta = load_accel_trace(&a.a, a.volts_per_g, axis, None)?;
    let tb = load_accel_trace(&a.b, a.volts_per_g_b.unwrap_or(a.volts_per_g), axis, None)?;
    let mut rec = Recorder::new("accel", &a.out, workers)?;
    for p in a.a.iter().chain(&a.b) {
        rec.input(p);
    }
    rec.set("volts_per_g_a", ta.volts_per_g);
    rec.set("volts_per_g_b", tb.volts_per_g);
    rec.set("enhance", a.enhance);
    rec.set("correct", a.correct);
    rec.set("segment_s", a.segment_s);
    rec.set("f0_hz", a.f0);
    rec.set("harmonics", a.harmonics);
    rec.set("resample", a.resample);

    let spectrum = |t: &crate::accel::AccelTrace| -> Result<crate::spectral::SpectralTable> {
        let t = if a.enhance > 0 { resolution_enhance(t, a.enhance)? } else { t.clone() };
        // a segment never spans a gap, so cap it at the shortest file
        let shortest = t.segments.iter().map(|s| s.len()).min().unwrap_or(0);
        let params = WelchParams::new(((a.segment_s * t.rate).round() as usize).min(shortest));
        let s = accel_asd(&t, params)?;
        Ok(if a.correct && a.enhance > 0 { correct_enhancement(&s, a.enhance) } else { s })
    };
    let (sa, sb) = (spectrum(&ta)?, spectrum(&tb)?);
    sa.write_csv(create(&rec.output("asd_a.csv"))?, "g/sqrt(Hz)")?;
    sb.write_csv(create(&rec.output("asd_b.csv"))?, "g/sqrt(Hz)")?;
    let cmp = compare_pt_peaks(&sa, &sb, a.f0, a.harmonics, a.resample)?;
    cmp.write_csv(create(&rec.output("comparison.csv"))?)?;
    for h in &cmp.harmonics {
        println!("k={} f={:.3} Hz ratio={:.3} {}", h.k, h.frequency, h.ratio, h.flag.as_str());
    }
    rec.finish()
}

fn accel_synth(a: AccelSynthArgs, workers: usize) -> Result<usize> {
    let axis: Axis = a.axis.parse()?;
    let model = VibrationModel {
        rate: a.rate,
        duration: a.duration_s,
        f0: a.f0,
        harmonic_amplitudes: parse_list(&a.amplitudes)?,
        noise_density: a.noise,
        volts_per_g: a.volts_per_g,
    };
    let mut rec = Recorder::new("accel-synth", &a.out, workers)?;
    rec.seed(a.seed);
    rec.set("rate_hz", a.rate);
    rec.set("duration_s", a.duration_s);
    rec.set("f0_hz", a.f0);
    rec.set("amplitudes_g", &a.amplitudes);
    rec.set("noise_g_per_rt_hz", a.noise);
    rec.set("volts_per_g", a.volts_per_g);
    rec.set("axis", axis);
    rec.set("environment", &a.environment);
    let names: Vec<String> = (0..a.n_files).map(|i| format!("trace_{i:03}.csv")).collect();
    let outs: Vec<PathBuf> = names.iter().map(|n| rec.output(n)).collect();
    outs.par_iter().enumerate().try_for_each(|(i, p)| -> Result<()> {
        let t = model.render(axis, &a.environment, a.seed.wrapping_mul(1_000_003).wrapping_add(i as u64))?;
        let mut w = create(p)?;
        t.write_csv(&mut w, 100.0)?;
        w.flush()?;
        Ok(())
    })?;
    rec.finish()
}

fn read_events(path: &Path) -> Result<(Vec<u64>, Vec<Label>)> {
    let mut r = csv::Reader::from_path(path).with_context(|| path.display().to_string())?;
    let h = r.headers()?.clone();
    let col = |name: &str| h.iter().position(|c| c == name).with_context(|| format!("{}: no `{name}` column", path.display()));
    let (gi, li) = (col("global_index")?, col("label")?);
    let (mut starts, mut labels) = (Vec::new(), Vec::new());
    for row in r.records() {
        let row = row?;
        starts.push(row[gi].parse()?);
        labels.push(Label::parse(&row[li]).with_context(|| format!("unknown label `{}`", &row[li]))?);
    }
    Ok((starts, labels))
}

fn report(a: ReportArgs, workers: usize) -> Result<usize> {
    let (starts, labels) = read_events(&a.events)?;
    let truth = GroundTruthCatalog::read_csv(File::open(&a.truth).with_context(|| a.truth.display().to_string())?)?;
    let tol = match a.tolerance {
        Some(t) => t,
        None => AnalysisParams::default().kernel(truth.cadence)?.len() as u64,
    };
    let mut rec = Recorder::new("report", &a.out, workers)?;
    rec.input(&a.events);
    rec.input(&a.truth);
    rec.set("match_tolerance", tol);
    let r = report_from_starts(&starts, &labels, &truth, tol);
    fs::write(rec.output("report.txt"), r.to_text())?;
    fs::write(rec.output("report.kv"), r.to_key_values())?;
    print!("{}", r.to_text());
    rec.finish()
}

fn export(a: ExportArgs, workers: usize) -> Result<usize> {
    let r = read_record(&a.record)?;
    let mut rec = Recorder::new("export", &a.out, workers)?;
    rec.input(&a.record);
    let name = a.record.file_stem().map_or("record".into(), |s| s.to_string_lossy().into_owned()) + ".csv";
    let mut w = create(&rec.output(&name))?;
    write_record_csv(&r, &mut w)?;
    w.flush()?;
    rec.finish()
}
