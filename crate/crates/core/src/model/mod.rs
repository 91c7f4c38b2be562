//! Shared data model: array geometry, relaxation records, the record file
//! format and the ground-truth catalog of injected events.

pub mod format;
pub mod geometry;
pub mod record;
pub mod truth;

pub use format::{read_record, write_record, FormatError};
pub use geometry::{DeviceGeometry, GeometryError, Orientation, Row};
pub use record::{sum_over_qubits, RecordError, RelaxationRecord, SummedSeries};
pub use truth::{EventKind, GroundTruthCatalog, GroundTruthEvent, InjectedLifetime};
