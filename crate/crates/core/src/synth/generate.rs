use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::model::format::{write_record, FormatError};
use crate::model::record::{Bits, RelaxationRecord};
use crate::model::truth::{EventKind, GroundTruthCatalog, GroundTruthEvent};

use super::config::{ConfigError, ScenarioConfig};
use super::profile::{BurstProfile, PulseTubeShape, EXCESS_FLOOR};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("onset index {t0} outside record of length {len}")]
    OnsetOutOfRange { t0: usize, len: usize },
    #[error("record shorter than PT period")]
    ShorterThanPeriod,
    #[error("energy scale must be nonnegative and finite, got {0}")]
    InvalidEnergy(f64),
    #[error("record has {got} qubits, scenario describes {expected}")]
    QubitMismatch { got: usize, expected: usize },
    #[error("measurement count must be at least 1")]
    Empty,
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("worker pool: {0}")]
    Pool(String),
}

const PLAN_PT_STREAM: u64 = u64::MAX;
const PLAN_RADIATION_STREAM: u64 = u64::MAX - 1;

/// Independent random stream `stream` of the generator seeded with `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn baseline_stream(file: usize) -> u64 {
    2 * file as u64
}

fn injection_stream(file: usize) -> u64 {
    2 * file as u64 + 1
}

fn threshold(p: f64) -> u64 {
    (p.clamp(0.0, 1.0) * 4_294_967_296.0) as u64
}

/// Fills a record with independent baseline outcomes: each measurement of
/// qubit `i` is discarded with probability `prep_infidelity`, otherwise it
/// relaxes with probability `1 - a_i exp(-dt / T1_i)`.
///
/// One uniform draw decides each cell, so the baseline is a fixed function of
/// the random stream regardless of any burst injected afterwards.
pub fn baseline_record<R: RngCore>(
    cfg: &ScenarioConfig,
    n: usize,
    start_timestamp: f64,
    rng: &mut R,
) -> Result<RelaxationRecord, SynthError> {
    if n == 0 {
        return Err(SynthError::Empty);
    }
    let probs = cfg.baseline_probabilities();
    if let Some((i, p)) = probs.iter().enumerate().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
        return Err(ConfigError::Constraint {
            key: "fidelity_a",
            reason: format!("baseline relaxation probability of Q{} is {p}", i + 1),
        }
        .into());
    }
    let discard = cfg.prep_infidelity;
    let bytes = n.div_ceil(8);
    let mut relaxed = Vec::with_capacity(probs.len());
    let mut valid = Vec::with_capacity(probs.len());
    for &p in &probs {
        let t_discard = threshold(discard);
        let t_relax = threshold(discard + (1.0 - discard) * p);
        let mut rbuf = vec![0u8; bytes];
        let mut vbuf = vec![0u8; bytes];
        for t in 0..n {
            let u = rng.next_u32() as u64;
            let (byte, bit) = (t >> 3, t & 7);
            if u >= t_discard {
                vbuf[byte] |= 1 << bit;
                if u < t_relax {
                    rbuf[byte] |= 1 << bit;
                }
            }
        }
        let mut r = Bits::from_vec(rbuf);
        r.truncate(n);
        let mut v = Bits::from_vec(vbuf);
        v.truncate(n);
        relaxed.push(r);
        valid.push(v);
    }
    Ok(RelaxationRecord::from_parts(cfg.geometry.cadence, start_timestamp, relaxed, valid)
        .expect("baseline construction upholds record invariants"))
}

/// Baseline record of `n` measurements drawn from the scenario's own seed.
pub fn gen_baseline(cfg: &ScenarioConfig, n: usize) -> Result<RelaxationRecord, SynthError> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, baseline_stream(0));
    baseline_record(cfg, n, 0.0, &mut rng)
}

/// Adds a burst on top of `record`. A valid, not yet relaxed measurement
/// relaxes with the burst's excess probability `q`, which composes with the
/// existing probability `p` as `1 - (1 - p)(1 - q)`.
pub fn apply_burst<R: RngCore>(record: &mut RelaxationRecord, burst: &BurstProfile, rng: &mut R) {
    let g0 = record.first_global_index();
    let n = record.len() as u64;
    let cadence = record.cadence();
    let extent = burst.extent_samples(cadence);
    let lo = burst.start.max(g0);
    let hi = (burst.start + extent).min(g0 + n);
    if lo >= hi {
        return;
    }
    for q in 0..record.qubit_count().min(burst.amplitudes.len()) {
        if burst.amplitudes[q] < EXCESS_FLOOR {
            continue;
        }
        let (relaxed, valid) = record.bits_mut(q);
        for g in lo..hi {
            let t = (g - g0) as usize;
            let excess = burst.excess(q, (g - burst.start) as f64 * cadence);
            if excess < EXCESS_FLOOR || !valid[t] || relaxed[t] {
                continue;
            }
            if (rng.next_u32() as u64) < threshold(excess) {
                relaxed.set(t, true);
            }
        }
    }
}

/// Injects one radiation burst with onset at local index `t0`.
pub fn inject_radiation_event<R: RngCore>(
    record: &mut RelaxationRecord,
    cfg: &ScenarioConfig,
    t0: usize,
    impact_xy: (f64, f64),
    energy_scale: f64,
    rng: &mut R,
) -> Result<GroundTruthEvent, SynthError> {
    if t0 >= record.len() {
        return Err(SynthError::OnsetOutOfRange { t0, len: record.len() });
    }
    if !(energy_scale >= 0.0 && energy_scale.is_finite()) {
        return Err(SynthError::InvalidEnergy(energy_scale));
    }
    check_qubits(record, cfg)?;
    let burst = BurstProfile::radiation(
        &cfg.geometry,
        record.first_global_index() + t0 as u64,
        impact_xy,
        energy_scale,
        cfg.falloff,
        cfg.suppression_factor,
        cfg.tau_slow,
        cfg.tau_fast,
    );
    apply_burst(record, &burst, rng);
    Ok(burst.to_truth())
}

fn check_qubits(record: &RelaxationRecord, cfg: &ScenarioConfig) -> Result<(), SynthError> {
    let expected = cfg.geometry.qubit_count();
    if record.qubit_count() != expected {
        return Err(SynthError::QubitMismatch { got: record.qubit_count(), expected });
    }
    Ok(())
}

/// Integer number of measurements per pulse-tube period.
pub fn pt_period_samples(cfg: &ScenarioConfig) -> u64 {
    (1.0 / (cfg.pt.f0 * cfg.geometry.cadence)).round().max(1.0) as u64
}

/// Per-cycle amplitude: log-normal around the configured median.
fn cycle_amplitude<R: Rng>(cfg: &ScenarioConfig, rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    cfg.pt.amp_median * (cfg.pt.amp_log_sigma * z).exp()
}

fn pt_is_off(cfg: &ScenarioConfig, time_s: f64) -> bool {
    cfg.pt.off_windows.iter().any(|&(a, b)| time_s >= a && time_s < b)
}

/// One burst per cooler cycle. Onsets sit at `phase0 * P + k * P` where `P`
/// is the period rounded to whole measurements, so consecutive onsets are
/// exactly `P` apart.
fn pt_train<R: Rng>(
    cfg: &ScenarioConfig,
    first: u64,
    len: u64,
    phase0: f64,
    rng: &mut R,
) -> Vec<BurstProfile> {
    let period = pt_period_samples(cfg);
    let offset = (phase0.rem_euclid(1.0) * period as f64).round() as u64 % period;
    let shape = PulseTubeShape::from_config(&cfg.pt);
    let cadence = cfg.geometry.cadence;
    let mut out = Vec::new();
    let mut k = 0u64;
    loop {
        let start = first + offset + k * period;
        if start >= first + len {
            break;
        }
        let amp = cycle_amplitude(cfg, rng);
        if !pt_is_off(cfg, start as f64 * cadence) {
            out.push(BurstProfile::pulse_tube(
                start,
                amp,
                &cfg.pt.gains,
                cfg.suppression_factor,
                shape.clone(),
                cfg.pt.lifetime,
            ));
        }
        k += 1;
    }
    out
}

/// Injects a pulse-tube burst train over the whole record.
pub fn inject_pt_train<R: Rng>(
    record: &mut RelaxationRecord,
    cfg: &ScenarioConfig,
    phase0: f64,
    rng: &mut R,
) -> Result<Vec<GroundTruthEvent>, SynthError> {
    check_qubits(record, cfg)?;
    if !cfg.pt.enabled {
        return Ok(Vec::new());
    }
    if cfg.pt.f0 * record.duration() < 1.0 {
        return Err(SynthError::ShorterThanPeriod);
    }
    let bursts = pt_train(cfg, record.first_global_index(), record.len() as u64, phase0, rng);
    for b in &bursts {
        apply_burst(record, b, rng);
    }
    Ok(bursts.iter().map(BurstProfile::to_truth).collect())
}

/// A planned synthetic dataset: the global burst schedule plus everything
/// needed to render any file independently.
#[derive(Debug, Clone)]
pub struct Dataset {
    cfg: ScenarioConfig,
    bursts: Vec<BurstProfile>,
    extents: Vec<u64>,
    max_extent: u64,
}

impl Dataset {
    pub fn plan(cfg: &ScenarioConfig) -> Result<Self, SynthError> {
        cfg.validate()?;
        let cfg = cfg.clone();
        let total = cfg.total_measurements();
        let cadence = cfg.geometry.cadence;

        let mut bursts = Vec::new();
        if cfg.pt.enabled {
            let mut rng = stream_rng(cfg.seed, PLAN_PT_STREAM);
            bursts.extend(pt_train(&cfg, 0, total, cfg.pt.phase, &mut rng));
        }

        let mut rng = stream_rng(cfg.seed, PLAN_RADIATION_STREAM);
        if cfg.radiation_rate > 0.0 {
            let ((x0, y0), (x1, y1)) = cfg.geometry.bounding_box(cfg.impact_margin);
            let (lmin, lmax) = (cfg.energy_min.max(1e-300).ln(), cfg.energy_max.max(1e-300).ln());
            let mut t = 0.0;
            loop {
                let u: f64 = rng.random();
                t += -(1.0 - u).ln() / cfg.radiation_rate;
                let start = (t / cadence).floor();
                if start >= total as f64 {
                    break;
                }
                let impact = (x0 + rng.random::<f64>() * (x1 - x0), y0 + rng.random::<f64>() * (y1 - y0));
                let energy = if cfg.energy_max > cfg.energy_min {
                    (lmin + rng.random::<f64>() * (lmax - lmin)).exp()
                } else {
                    cfg.energy_min
                };
                bursts.push(BurstProfile::radiation(
                    &cfg.geometry,
                    start as u64,
                    impact,
                    energy,
                    cfg.falloff,
                    cfg.suppression_factor,
                    cfg.tau_slow,
                    cfg.tau_fast,
                ));
            }
        }

        bursts.sort_by_key(|b| (b.start, b.kind == EventKind::Radiation));
        // keep onsets strictly increasing
        for i in 1..bursts.len() {
            if bursts[i].start <= bursts[i - 1].start {
                bursts[i].start = bursts[i - 1].start + 1;
            }
        }
        let extents: Vec<u64> = bursts.iter().map(|b| b.extent_samples(cadence)).collect();
        let max_extent = extents.iter().copied().max().unwrap_or(0);
        Ok(Self { cfg, bursts, extents, max_extent })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn n_files(&self) -> usize {
        self.cfg.n_files
    }

    pub fn bursts(&self) -> &[BurstProfile] {
        &self.bursts
    }

    pub fn catalog(&self) -> GroundTruthCatalog {
        GroundTruthCatalog {
            cadence: self.cfg.geometry.cadence,
            n_files: self.cfg.n_files,
            measurements_per_file: self.cfg.measurements_per_file,
            events: self.bursts.iter().map(BurstProfile::to_truth).collect(),
        }
    }

    /// Renders file `index`. Depends only on the seed and the index, so files
    /// can be produced in any order or in parallel.
    pub fn generate_file(&self, index: usize) -> Result<RelaxationRecord, SynthError> {
        let n = self.cfg.measurements_per_file;
        let g0 = index as u64 * n as u64;
        let start_ts = g0 as f64 * self.cfg.geometry.cadence;
        let mut rng = stream_rng(self.cfg.seed, baseline_stream(index));
        let mut record = baseline_record(&self.cfg, n, start_ts, &mut rng)?;
        let mut rng = stream_rng(self.cfg.seed, injection_stream(index));
        let g1 = g0 + n as u64;
        let first = self.bursts.partition_point(|b| b.start + self.max_extent < g0);
        for (b, &ext) in self.bursts[first..].iter().zip(&self.extents[first..]) {
            if b.start >= g1 {
                break;
            }
            if b.start + ext > g0 {
                apply_burst(&mut record, b, &mut rng);
            }
        }
        Ok(record)
    }

    pub fn generate_all(&self, workers: usize) -> Result<Vec<RelaxationRecord>, SynthError> {
        with_pool(workers, || {
            (0..self.n_files()).into_par_iter().map(|i| self.generate_file(i)).collect()
        })
    }

    /// Writes `records/rec_NNNNNN.qrx` and `truth.csv` under `dir`.
    pub fn write_to(&self, dir: &Path, workers: usize) -> Result<Vec<PathBuf>, SynthError> {
        let rec_dir = dir.join("records");
        fs::create_dir_all(&rec_dir).map_err(|source| SynthError::Io { path: rec_dir.clone(), source })?;
        let paths: Vec<PathBuf> = (0..self.n_files()).map(|i| rec_dir.join(record_file_name(i))).collect();
        with_pool(workers, || {
            paths.par_iter().enumerate().try_for_each(|(i, path)| -> Result<(), SynthError> {
                let rec = self.generate_file(i)?;
                write_record(&rec, path)?;
                Ok(())
            })
        })?;
        let truth = dir.join("truth.csv");
        let file = fs::File::create(&truth).map_err(|source| SynthError::Io { path: truth.clone(), source })?;
        self.catalog()
            .write_csv(std::io::BufWriter::new(file), self.cfg.geometry.qubit_count())
            .map_err(|e| SynthError::Io { path: truth.clone(), source: std::io::Error::other(e.to_string()) })?;
        Ok(paths)
    }
}

pub fn record_file_name(index: usize) -> String {
    format!("rec_{index:06}.qrx")
}

/// Plans and renders `n_files` files of the scenario in memory.
pub fn gen_dataset(
    cfg: &ScenarioConfig,
    n_files: usize,
) -> Result<(Vec<RelaxationRecord>, GroundTruthCatalog), SynthError> {
    let mut cfg = cfg.clone();
    cfg.n_files = n_files;
    let ds = Dataset::plan(&cfg)?;
    let records = ds.generate_all(0)?;
    Ok((records, ds.catalog()))
}

/// Runs `f` on a pool of `workers` threads; 0 uses the global pool.
pub(crate) fn with_pool<T: Send, F: FnOnce() -> Result<T, SynthError> + Send>(
    workers: usize,
    f: F,
) -> Result<T, SynthError> {
    if workers == 0 {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| SynthError::Pool(e.to_string()))?;
    pool.install(f)
}
