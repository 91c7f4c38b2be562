use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Which of the two qubit rows a qubit sits in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Row {
    Top,
    Bottom,
}

/// Junction orientation. `S` qubits recover slowly after a quasiparticle
/// burst, `F` qubits recover quickly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orientation {
    S,
    F,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("empty qubit array")]
    Empty,
    #[error("row conflict: qubit {qubit} has {count} row assignments")]
    RowConflict { qubit: usize, count: usize },
    #[error("orientation conflict: qubit {qubit} has {count} orientation assignments")]
    OrientationConflict { qubit: usize, count: usize },
    #[error("position table has {got} entries for {qubits} qubits")]
    PositionCount { got: usize, qubits: usize },
    #[error("nonpositive cadence")]
    NonpositiveCadence,
    #[error("nonpositive readout delay")]
    NonpositiveReadoutDelay,
    #[error("readout delay must be shorter than the cadence")]
    ReadoutDelayExceedsCadence,
    #[error("nonpositive preparation-to-measurement delay")]
    NonpositiveDelta,
    #[error("preparation-to-measurement delay exceeds the cadence")]
    DeltaExceedsCadence,
    #[error("cannot parse {what} from {text:?}")]
    Parse { what: &'static str, text: String },
}

/// Layout and timing of the qubit array.
///
/// Qubit indices are 0-based internally; every user-facing table labels them
/// `Q1..QN`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceGeometry {
    /// Row membership per qubit. Stored as a list of assignments so that a
    /// malformed geometry (double assignment) is representable and caught by
    /// [`DeviceGeometry::validate`].
    pub rows: Vec<Vec<Row>>,
    pub orientations: Vec<Vec<Orientation>>,
    /// Chip-plane position of each qubit, meters.
    pub positions: Vec<(f64, f64)>,
    /// Seconds per measurement.
    pub cadence: f64,
    /// Delay between the pi pulse and the readout, seconds.
    pub readout_delay: f64,
    /// Delay between state preparation and the middle of the measurement, seconds.
    pub prep_to_mid_delay: f64,
}

pub const DEFAULT_CADENCE: f64 = 6.95e-6;
pub const DEFAULT_READOUT_DELAY: f64 = 1e-6;
pub const DEFAULT_DELTA_T: f64 = 3e-6;
pub const DEFAULT_PITCH: f64 = 1.0e-3;
pub const DEFAULT_ROW_SPACING: f64 = 2.5e-3;

impl Default for DeviceGeometry {
    fn default() -> Self {
        Self::two_row_array(
            "TBTBTBTBTB",
            "SSFSSFFSFF",
            DEFAULT_PITCH,
            DEFAULT_ROW_SPACING,
        )
        .expect("default layout strings are well formed")
    }
}

impl DeviceGeometry {
    /// Builds an offset two-row array from per-qubit row (`T`/`B`) and
    /// orientation (`S`/`F`) strings. Qubits of each row are placed left to
    /// right at `pitch`; the bottom row is shifted by half a pitch.
    pub fn two_row_array(
        rows: &str,
        orientations: &str,
        pitch: f64,
        row_spacing: f64,
    ) -> Result<Self, GeometryError> {
        let rows = parse_rows(rows)?;
        let orientations = parse_orientations(orientations)?;
        let mut top_seen = 0usize;
        let mut bottom_seen = 0usize;
        let positions = rows
            .iter()
            .map(|row| match row {
                Row::Top => {
                    let x = top_seen as f64 * pitch;
                    top_seen += 1;
                    (x, row_spacing)
                }
                Row::Bottom => {
                    let x = (bottom_seen as f64 + 0.5) * pitch;
                    bottom_seen += 1;
                    (x, 0.0)
                }
            })
            .collect();
        Ok(Self {
            rows: rows.into_iter().map(|r| vec![r]).collect(),
            orientations: orientations.into_iter().map(|o| vec![o]).collect(),
            positions,
            cadence: DEFAULT_CADENCE,
            readout_delay: DEFAULT_READOUT_DELAY,
            prep_to_mid_delay: DEFAULT_DELTA_T,
        })
    }

    pub fn qubit_count(&self) -> usize {
        self.rows.len()
    }

    /// Row of qubit `i` (0-based). Only meaningful on a validated geometry.
    pub fn row(&self, i: usize) -> Row {
        self.rows[i][0]
    }

    pub fn orientation(&self, i: usize) -> Orientation {
        self.orientations[i][0]
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let n = self.rows.len();
        if n == 0 {
            return Err(GeometryError::Empty);
        }
        for (i, r) in self.rows.iter().enumerate() {
            if r.len() != 1 {
                return Err(GeometryError::RowConflict { qubit: i + 1, count: r.len() });
            }
        }
        if self.orientations.len() != n {
            return Err(GeometryError::OrientationConflict {
                qubit: self.orientations.len().min(n) + 1,
                count: 0,
            });
        }
        for (i, o) in self.orientations.iter().enumerate() {
            if o.len() != 1 {
                return Err(GeometryError::OrientationConflict { qubit: i + 1, count: o.len() });
            }
        }
        if self.positions.len() != n {
            return Err(GeometryError::PositionCount { got: self.positions.len(), qubits: n });
        }
        if !(self.cadence > 0.0) {
            return Err(GeometryError::NonpositiveCadence);
        }
        if !(self.readout_delay > 0.0) {
            return Err(GeometryError::NonpositiveReadoutDelay);
        }
        if self.readout_delay >= self.cadence {
            return Err(GeometryError::ReadoutDelayExceedsCadence);
        }
        if !(self.prep_to_mid_delay > 0.0) {
            return Err(GeometryError::NonpositiveDelta);
        }
        if self.prep_to_mid_delay > self.cadence {
            return Err(GeometryError::DeltaExceedsCadence);
        }
        Ok(())
    }

    pub fn distance(&self, i: usize, xy: (f64, f64)) -> f64 {
        let (x, y) = self.positions[i];
        ((x - xy.0).powi(2) + (y - xy.1).powi(2)).sqrt()
    }

    /// Bounding box of the qubit positions grown by `margin` on every side.
    pub fn bounding_box(&self, margin: f64) -> ((f64, f64), (f64, f64)) {
        let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
        let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &(x, y) in &self.positions {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        ((x0 - margin, y0 - margin), (x1 + margin, y1 + margin))
    }

    pub fn rows_string(&self) -> String {
        self.rows
            .iter()
            .map(|r| match r.first() {
                Some(Row::Top) => 'T',
                Some(Row::Bottom) => 'B',
                None => '?',
            })
            .collect()
    }

    pub fn orientations_string(&self) -> String {
        self.orientations
            .iter()
            .map(|o| match o.first() {
                Some(Orientation::S) => 'S',
                Some(Orientation::F) => 'F',
                None => '?',
            })
            .collect()
    }
}

pub fn parse_rows(text: &str) -> Result<Vec<Row>, GeometryError> {
    text.trim()
        .chars()
        .filter(|c| !c.is_whitespace() && *c != ',')
        .map(|c| match c.to_ascii_uppercase() {
            'T' => Ok(Row::Top),
            'B' => Ok(Row::Bottom),
            _ => Err(GeometryError::Parse { what: "row", text: text.to_string() }),
        })
        .collect()
}

pub fn parse_orientations(text: &str) -> Result<Vec<Orientation>, GeometryError> {
    text.trim()
        .chars()
        .filter(|c| !c.is_whitespace() && *c != ',')
        .map(|c| match c.to_ascii_uppercase() {
            'S' => Ok(Orientation::S),
            'F' => Ok(Orientation::F),
            _ => Err(GeometryError::Parse { what: "orientation", text: text.to_string() }),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_geometry_is_valid() {
        let g = DeviceGeometry::default();
        assert_eq!(g.validate(), Ok(()));
        assert_eq!(g.qubit_count(), 10);
        let top: Vec<usize> = (0..10).filter(|&i| g.row(i) == Row::Top).map(|i| i + 1).collect();
        assert_eq!(top, vec![1, 3, 5, 7, 9]);
        let slow: Vec<usize> =
            (0..10).filter(|&i| g.orientation(i) == Orientation::S).map(|i| i + 1).collect();
        assert_eq!(slow, vec![1, 2, 4, 5, 8]);
    }

    #[test]
    fn double_row_assignment_is_a_conflict() {
        let mut g = DeviceGeometry::default();
        g.rows[2] = vec![Row::Top, Row::Bottom];
        let err = g.validate().unwrap_err();
        assert!(err.to_string().contains("row conflict"), "{err}");
    }

    #[test]
    fn zero_cadence_rejected() {
        let mut g = DeviceGeometry::default();
        g.cadence = 0.0;
        let err = g.validate().unwrap_err();
        assert_eq!(err.to_string(), "nonpositive cadence");
    }

    #[test]
    fn timing_ordering() {
        let mut g = DeviceGeometry::default();
        g.readout_delay = 7e-6;
        assert_eq!(g.validate(), Err(GeometryError::ReadoutDelayExceedsCadence));
        let mut g = DeviceGeometry::default();
        g.prep_to_mid_delay = 8e-6;
        assert_eq!(g.validate(), Err(GeometryError::DeltaExceedsCadence));
    }

    #[test]
    fn layout_strings_roundtrip() {
        let g = DeviceGeometry::default();
        assert_eq!(g.rows_string(), "TBTBTBTBTB");
        assert_eq!(g.orientations_string(), "SSFSSFFSFF");
        assert!(parse_rows("TX").is_err());
    }
}
