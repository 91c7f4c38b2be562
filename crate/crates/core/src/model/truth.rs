use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventKind {
    Radiation,
    #[serde(rename = "PT")]
    PulseTube,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Radiation => "Radiation",
            EventKind::PulseTube => "PT",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "Radiation" => Some(EventKind::Radiation),
            "PT" => Some(EventKind::PulseTube),
            _ => None,
        }
    }
}

/// Lifetimes used to shape an injected event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InjectedLifetime {
    /// Orientation-dependent recovery of a radiation burst.
    Oriented { slow: f64, fast: f64 },
    Single(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthEvent {
    pub kind: EventKind,
    /// Index on the dataset-global measurement axis.
    pub start_index: u64,
    pub lifetime: InjectedLifetime,
    /// Peak excess relaxation probability per qubit, after suppression.
    pub amplitudes: Vec<f64>,
    /// Chip-plane impact point, meters. Radiation only.
    pub impact_xy: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruthCatalog {
    pub cadence: f64,
    pub n_files: usize,
    pub measurements_per_file: usize,
    pub events: Vec<GroundTruthEvent>,
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("catalog row {row}: {reason}")]
    Row { row: usize, reason: String },
    #[error("catalog: {0}")]
    Csv(#[from] csv::Error),
    #[error("catalog: {0}")]
    Io(#[from] std::io::Error),
    #[error("catalog metadata: {0}")]
    Metadata(String),
}

impl GroundTruthCatalog {
    pub fn total_duration_s(&self) -> f64 {
        self.n_files as f64 * self.measurements_per_file as f64 * self.cadence
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    /// Start indices within one file (global indices between `lo` and `hi`)
    /// must be strictly increasing.
    pub fn is_strictly_ordered(&self) -> bool {
        self.events.windows(2).all(|w| w[0].start_index < w[1].start_index)
    }

    pub fn write_csv<W: Write>(&self, mut out: W, qubits: usize) -> Result<(), CatalogError> {
        writeln!(out, "# cadence_s = {:e}", self.cadence)?;
        writeln!(out, "# n_files = {}", self.n_files)?;
        writeln!(out, "# measurements_per_file = {}", self.measurements_per_file)?;
        writeln!(out, "# total_duration_s = {}", self.total_duration_s())?;
        writeln!(out, "# total_duration_h = {:.4}", self.total_duration_s() / 3600.0)?;
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = [
            "kind",
            "start_index",
            "start_time_s",
            "lifetime_s",
            "lifetime_s_S",
            "lifetime_s_F",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend((1..=qubits).map(|q| format!("amp_Q{q}")));
        header.push("impact_x_m".into());
        header.push("impact_y_m".into());
        w.write_record(&header)?;
        for e in &self.events {
            let mut row = vec![
                e.kind.as_str().to_string(),
                e.start_index.to_string(),
                format!("{:.9}", e.start_index as f64 * self.cadence),
            ];
            match e.lifetime {
                InjectedLifetime::Single(t) => {
                    row.push(format!("{t:e}"));
                    row.push(String::new());
                    row.push(String::new());
                }
                InjectedLifetime::Oriented { slow, fast } => {
                    row.push(String::new());
                    row.push(format!("{slow:e}"));
                    row.push(format!("{fast:e}"));
                }
            }
            for q in 0..qubits {
                row.push(e.amplitudes.get(q).map(|a| format!("{a:.6}")).unwrap_or_default());
            }
            match e.impact_xy {
                Some((x, y)) => {
                    row.push(format!("{x:e}"));
                    row.push(format!("{y:e}"));
                }
                None => {
                    row.push(String::new());
                    row.push(String::new());
                }
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(mut input: R) -> Result<Self, CatalogError> {
        let mut text = String::new();
        input.read_to_string(&mut text)?;
        let mut cat = GroundTruthCatalog::default();
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            let Some((k, v)) = line.trim_start_matches('#').split_once('=') else { continue };
            let (k, v) = (k.trim(), v.trim());
            let bad = |_| CatalogError::Metadata(format!("{k} = {v}"));
            match k {
                "cadence_s" => cat.cadence = v.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
                "n_files" => cat.n_files = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                "measurements_per_file" => {
                    cat.measurements_per_file =
                        v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?
                }
                _ => {}
            }
        }
        if !(cat.cadence > 0.0) {
            return Err(CatalogError::Metadata("missing cadence_s".into()));
        }
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let amp_cols: Vec<usize> = (1..)
            .map_while(|q| col(&format!("amp_Q{q}")))
            .collect();
        let need = |name: &str| {
            col(name).ok_or_else(|| CatalogError::Metadata(format!("missing column {name}")))
        };
        let (c_kind, c_start) = (need("kind")?, need("start_index")?);
        let (c_life, c_ls, c_lf) = (need("lifetime_s")?, need("lifetime_s_S")?, need("lifetime_s_F")?);
        let (c_x, c_y) = (need("impact_x_m")?, need("impact_y_m")?);
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = i + 1;
            let err = |reason: String| CatalogError::Row { row, reason };
            let f = |c: usize| -> Result<Option<f64>, CatalogError> {
                let s = rec.get(c).unwrap_or("").trim();
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|_| err(format!("bad number {s:?}")))
                }
            };
            let kind = EventKind::parse(rec.get(c_kind).unwrap_or(""))
                .ok_or_else(|| err("unknown kind".into()))?;
            let start_index = rec
                .get(c_start)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|_| err("bad start_index".into()))?;
            let lifetime = match (f(c_life)?, f(c_ls)?, f(c_lf)?) {
                (Some(t), _, _) => InjectedLifetime::Single(t),
                (None, Some(slow), Some(fast)) => InjectedLifetime::Oriented { slow, fast },
                _ => return Err(err("missing lifetime".into())),
            };
            let amplitudes = amp_cols
                .iter()
                .map(|&c| f(c).map(|v| v.unwrap_or(0.0)))
                .collect::<Result<Vec<_>, _>>()?;
            let impact_xy = match (f(c_x)?, f(c_y)?) {
                (Some(x), Some(y)) => Some((x, y)),
                _ => None,
            };
            cat.events.push(GroundTruthEvent { kind, start_index, lifetime, amplitudes, impact_xy });
        }
        Ok(cat)
    }
}
