//! Cut-based labels, the score-vs-lifetime histogram and truth matching.

use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::characterize::CharacterizedEvent;
use crate::model::truth::{EventKind, GroundTruthCatalog};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RadiationCut {
    pub lifetime_max: f64,
    pub score_min: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PulseTubeCut {
    pub lifetime_min: f64,
    pub score_min: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CutConfig {
    pub radiation: RadiationCut,
    pub pt: PulseTubeCut,
}

impl Default for CutConfig {
    fn default() -> Self {
        Self {
            radiation: RadiationCut { lifetime_max: 9e-3, score_min: 700.0 },
            pt: PulseTubeCut { lifetime_min: 12e-3, score_min: 300.0 },
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ClassifyError {
    #[error("cut lifetimes overlap: radiation below {radiation_max} s, PT above {pt_min} s")]
    OverlappingCuts { radiation_max: f64, pt_min: f64 },
    #[error("score minima must be positive")]
    NonpositiveScore,
    #[error("{axis} edges must be strictly increasing with at least two entries")]
    BadEdges { axis: &'static str },
}

impl CutConfig {
    pub fn validate(&self) -> Result<(), ClassifyError> {
        if !(self.radiation.lifetime_max <= self.pt.lifetime_min) {
            return Err(ClassifyError::OverlappingCuts {
                radiation_max: self.radiation.lifetime_max,
                pt_min: self.pt.lifetime_min,
            });
        }
        if !(self.radiation.score_min > 0.0 && self.pt.score_min > 0.0) {
            return Err(ClassifyError::NonpositiveScore);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Label {
    Radiation,
    #[serde(rename = "PT")]
    PulseTube,
    Ambiguous,
    FailedFit,
}

impl Label {
    pub const ALL: [Label; 4] = [Label::Radiation, Label::PulseTube, Label::Ambiguous, Label::FailedFit];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Radiation => "Radiation",
            Label::PulseTube => "PT",
            Label::Ambiguous => "Ambiguous",
            Label::FailedFit => "FailedFit",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.as_str() == s)
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Label from lifetime and score alone. A flagged fit is never trusted.
pub fn classify(lifetime: f64, score: f64, fit_failed: bool, cuts: &CutConfig) -> Label {
    if fit_failed {
        Label::FailedFit
    } else if lifetime < cuts.radiation.lifetime_max && score > cuts.radiation.score_min {
        Label::Radiation
    } else if lifetime > cuts.pt.lifetime_min && score > cuts.pt.score_min {
        Label::PulseTube
    } else {
        Label::Ambiguous
    }
}

pub fn classify_event(e: &CharacterizedEvent, cuts: &CutConfig) -> Label {
    classify(e.fit.lifetime, e.candidate.filter_score, e.fit.failed(), cuts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram2D {
    pub lifetime_edges: Vec<f64>,
    pub score_edges: Vec<f64>,
    /// `counts[lifetime_bin][score_bin]`.
    pub counts: Vec<Vec<u64>>,
    pub below_lifetime: u64,
    pub above_lifetime: u64,
    pub below_score: u64,
    pub above_score: u64,
    /// Events without a finite lifetime or score.
    pub unbinned: u64,
}

pub fn log_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..=bins).map(|i| (a + (b - a) * i as f64 / bins as f64).exp()).collect()
}

fn check_edges(e: &[f64], axis: &'static str) -> Result<(), ClassifyError> {
    if e.len() < 2 || !e.windows(2).all(|w| w[0] < w[1]) {
        return Err(ClassifyError::BadEdges { axis });
    }
    Ok(())
}

fn bin_of(edges: &[f64], x: f64) -> Result<usize, bool> {
    if x < edges[0] {
        return Err(false);
    }
    if x >= edges[edges.len() - 1] {
        return Err(true);
    }
    Ok(edges.partition_point(|&e| e <= x) - 1)
}

impl Histogram2D {
    pub fn new(lifetime_edges: Vec<f64>, score_edges: Vec<f64>) -> Result<Self, ClassifyError> {
        check_edges(&lifetime_edges, "lifetime")?;
        check_edges(&score_edges, "score")?;
        let counts = vec![vec![0; score_edges.len() - 1]; lifetime_edges.len() - 1];
        Ok(Self {
            lifetime_edges,
            score_edges,
            counts,
            below_lifetime: 0,
            above_lifetime: 0,
            below_score: 0,
            above_score: 0,
            unbinned: 0,
        })
    }

    /// 50 log bins over 0.3 ms to 3 s by 50 log bins over 1e2 to 1e5.
    pub fn default_binning() -> Self {
        Self::new(log_edges(0.3e-3, 3.0, 50), log_edges(1e2, 1e5, 50)).expect("default edges are increasing")
    }

    pub fn add(&mut self, lifetime: f64, score: f64) {
        if !(lifetime.is_finite() && score.is_finite()) {
            self.unbinned += 1;
            return;
        }
        let l = bin_of(&self.lifetime_edges, lifetime);
        let s = bin_of(&self.score_edges, score);
        match (l, s) {
            (Ok(i), Ok(j)) => self.counts[i][j] += 1,
            (Err(false), _) => self.below_lifetime += 1,
            (Err(true), _) => self.above_lifetime += 1,
            (_, Err(false)) => self.below_score += 1,
            (_, Err(true)) => self.above_score += 1,
        }
    }

    pub fn merge(&mut self, other: &Histogram2D) {
        assert_eq!(self.lifetime_edges, other.lifetime_edges);
        assert_eq!(self.score_edges, other.score_edges);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.below_lifetime += other.below_lifetime;
        self.above_lifetime += other.above_lifetime;
        self.below_score += other.below_score;
        self.above_score += other.above_score;
        self.unbinned += other.unbinned;
    }

    pub fn binned(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn outside(&self) -> u64 {
        self.below_lifetime + self.above_lifetime + self.below_score + self.above_score + self.unbinned
    }

    /// Long format: one row per bin.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# below_lifetime = {}", self.below_lifetime)?;
        writeln!(out, "# above_lifetime = {}", self.above_lifetime)?;
        writeln!(out, "# below_score = {}", self.below_score)?;
        writeln!(out, "# above_score = {}", self.above_score)?;
        writeln!(out, "# unbinned = {}", self.unbinned)?;
        writeln!(out, "lifetime_lo_s,lifetime_hi_s,score_lo,score_hi,count")?;
        for (i, row) in self.counts.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                writeln!(
                    out,
                    "{:.6e},{:.6e},{:.6e},{:.6e},{}",
                    self.lifetime_edges[i],
                    self.lifetime_edges[i + 1],
                    self.score_edges[j],
                    self.score_edges[j + 1],
                    c
                )?;
            }
        }
        Ok(())
    }
}

pub fn build_histogram(
    events: &[CharacterizedEvent],
    lifetime_edges: Vec<f64>,
    score_edges: Vec<f64>,
) -> Result<Histogram2D, ClassifyError> {
    let mut h = Histogram2D::new(lifetime_edges, score_edges)?;
    for e in events {
        h.add(e.fit.lifetime, e.candidate.filter_score);
    }
    Ok(h)
}

/// Truth class of a detection after matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TruthClass {
    Radiation,
    PulseTube,
    Unmatched,
}

impl TruthClass {
    pub const ALL: [TruthClass; 3] = [TruthClass::Radiation, TruthClass::PulseTube, TruthClass::Unmatched];

    pub fn as_str(self) -> &'static str {
        match self {
            TruthClass::Radiation => "Radiation",
            TruthClass::PulseTube => "PT",
            TruthClass::Unmatched => "none",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl From<EventKind> for TruthClass {
    fn from(k: EventKind) -> Self {
        match k {
            EventKind::Radiation => TruthClass::Radiation,
            EventKind::PulseTube => TruthClass::PulseTube,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReport {
    pub labeled: usize,
    pub correct: usize,
    pub truth: usize,
    /// NaN when nothing carries the label.
    pub precision: f64,
    /// NaN when no truth event of the class exists.
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub match_tolerance: u64,
    /// `confusion[truth][label]`, truth in [`TruthClass::ALL`] order and
    /// label in [`Label::ALL`] order.
    pub confusion: [[usize; 4]; 3],
    /// Truth events with no detection within tolerance, per kind.
    pub missed: [usize; 2],
    pub radiation: ClassReport,
    pub pt: ClassReport,
    pub labeled_pt_fraction: f64,
    /// Truth index matched by each detection, in input order.
    #[serde(skip)]
    pub matches: Vec<Option<usize>>,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        f64::NAN
    } else {
        a as f64 / b as f64
    }
}

/// One-to-one matching of detections to truth onsets, closest pairs first,
/// accepting pairs within `tolerance` samples.
pub fn match_to_truth(starts: &[u64], truth: &GroundTruthCatalog, tolerance: u64) -> Vec<Option<usize>> {
    let truth_starts: Vec<u64> = truth.events.iter().map(|e| e.start_index).collect();
    let mut order: Vec<usize> = (0..truth_starts.len()).collect();
    order.sort_by_key(|&i| truth_starts[i]);
    let sorted: Vec<u64> = order.iter().map(|&i| truth_starts[i]).collect();
    let mut pairs: Vec<(u64, usize, usize)> = Vec::new();
    for (d, &s) in starts.iter().enumerate() {
        let lo = sorted.partition_point(|&t| t + tolerance < s);
        for (k, &t) in sorted.iter().enumerate().skip(lo) {
            if t > s + tolerance {
                break;
            }
            pairs.push((t.abs_diff(s), d, order[k]));
        }
    }
    pairs.sort();
    let mut det_used = vec![None; starts.len()];
    let mut truth_used = vec![false; truth_starts.len()];
    for (_, d, t) in pairs {
        if det_used[d].is_none() && !truth_used[t] {
            det_used[d] = Some(t);
            truth_used[t] = true;
        }
    }
    det_used
}

pub fn classification_report(
    events: &[CharacterizedEvent],
    labels: &[Label],
    truth: &GroundTruthCatalog,
    match_tolerance: u64,
) -> ClassificationReport {
    let starts: Vec<u64> = events.iter().map(|e| e.candidate.global_index).collect();
    report_from_starts(&starts, labels, truth, match_tolerance)
}

/// As [`classification_report`], from global onset indices alone.
pub fn report_from_starts(
    starts: &[u64],
    labels: &[Label],
    truth: &GroundTruthCatalog,
    match_tolerance: u64,
) -> ClassificationReport {
    let matches = match_to_truth(starts, truth, match_tolerance);
    let mut confusion = [[0usize; 4]; 3];
    for (m, l) in matches.iter().zip(labels) {
        let tc = m.map_or(TruthClass::Unmatched, |t| truth.events[t].kind.into());
        confusion[tc.index()][l.index()] += 1;
    }
    let matched_truth: usize = matches.iter().flatten().count();
    let per_kind = |k: EventKind| truth.count(k);
    let mut missed = [per_kind(EventKind::Radiation), per_kind(EventKind::PulseTube)];
    for t in matches.iter().flatten() {
        match truth.events[*t].kind {
            EventKind::Radiation => missed[0] -= 1,
            EventKind::PulseTube => missed[1] -= 1,
        }
    }
    debug_assert!(matched_truth <= truth.events.len());
    let class = |tc: TruthClass, l: Label, kind: EventKind| {
        let labeled: usize = (0..3).map(|r| confusion[r][l.index()]).sum();
        let correct = confusion[tc.index()][l.index()];
        let n = per_kind(kind);
        ClassReport { labeled, correct, truth: n, precision: ratio(correct, labeled), recall: ratio(correct, n) }
    };
    let radiation = class(TruthClass::Radiation, Label::Radiation, EventKind::Radiation);
    let pt = class(TruthClass::PulseTube, Label::PulseTube, EventKind::PulseTube);
    let labeled_pt_fraction = ratio(pt.labeled, pt.labeled + radiation.labeled);
    ClassificationReport { match_tolerance, confusion, missed, radiation, pt, labeled_pt_fraction, matches }
}

fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        "n/a".into()
    } else {
        format!("{x:.4}")
    }
}

impl ClassificationReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "match tolerance: {} samples", self.match_tolerance);
        let _ = writeln!(s, "{:<10} {:>8} {:>8} {:>8} {:>10} {:>10}", "class", "labeled", "correct", "truth", "precision", "recall");
        for (name, c) in [("Radiation", &self.radiation), ("PT", &self.pt)] {
            let _ = writeln!(
                s,
                "{:<10} {:>8} {:>8} {:>8} {:>10} {:>10}",
                name,
                c.labeled,
                c.correct,
                c.truth,
                fmt_num(c.precision),
                fmt_num(c.recall)
            );
        }
        let _ = writeln!(s, "labeled PT fraction: {}", fmt_num(self.labeled_pt_fraction));
        let _ = writeln!(s, "\nconfusion (rows: truth, columns: label)");
        let _ = write!(s, "{:<10}", "");
        for l in Label::ALL {
            let _ = write!(s, " {:>10}", l.as_str());
        }
        let _ = writeln!(s);
        for tc in TruthClass::ALL {
            let _ = write!(s, "{:<10}", tc.as_str());
            for l in Label::ALL {
                let _ = write!(s, " {:>10}", self.confusion[tc.index()][l.index()]);
            }
            let _ = writeln!(s);
        }
        let _ = writeln!(s, "missed truth: Radiation {}, PT {}", self.missed[0], self.missed[1]);
        s
    }

    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "match_tolerance = {}", self.match_tolerance);
        for (name, c) in [("radiation", &self.radiation), ("pt", &self.pt)] {
            let _ = writeln!(s, "{name}_labeled = {}", c.labeled);
            let _ = writeln!(s, "{name}_correct = {}", c.correct);
            let _ = writeln!(s, "{name}_truth = {}", c.truth);
            let _ = writeln!(s, "{name}_precision = {}", c.precision);
            let _ = writeln!(s, "{name}_recall = {}", c.recall);
        }
        let _ = writeln!(s, "labeled_pt_fraction = {}", self.labeled_pt_fraction);
        for tc in TruthClass::ALL {
            for l in Label::ALL {
                let _ = writeln!(s, "confusion_{}_{} = {}", tc.as_str(), l.as_str(), self.confusion[tc.index()][l.index()]);
            }
        }
        let _ = writeln!(s, "missed_radiation = {}", self.missed[0]);
        let _ = writeln!(s, "missed_pt = {}", self.missed[1]);
        s
    }
}
