//! The `QRX1` relaxation-record file format.
//!
//! Layout, all integers and floats little-endian:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 8    | magic `b"QRX1REC\0"`                    |
//! | 8      | 4    | format version (`1`)                    |
//! | 12     | 4    | reserved, zero                          |
//! | 16     | 4    | `u32` qubit count                       |
//! | 20     | 8    | `u64` measurement count `n`             |
//! | 28     | 8    | `f64` cadence, seconds                  |
//! | 36     | 8    | `f64` start timestamp, seconds          |
//! | 44     | ...  | per-qubit relaxed bitstreams            |
//! | ...    | ...  | per-qubit valid bitstreams              |
//!
//! Every bitstream occupies `ceil(n / 8)` bytes, packed LSB-first within each
//! byte; padding bits in the final byte are zero.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use bitvec::prelude::*;
use thiserror::Error;

use super::record::{Bits, RecordError, RelaxationRecord};

pub const MAGIC: &[u8; 8] = b"QRX1REC\0";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 44;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("missing header")]
    MissingHeader,
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },
    #[error("trailing data after payload ({0} bytes)")]
    TrailingData(u64),
    #[error(transparent)]
    Invariant(#[from] RecordError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn bytes_per_stream(n: u64) -> u64 {
    n.div_ceil(8)
}

pub fn encode_record<W: Write>(record: &RelaxationRecord, mut out: W) -> io::Result<()> {
    let n = record.len() as u64;
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(MAGIC);
    header.extend_from_slice(&VERSION.to_le_bytes());
    header.extend_from_slice(&0u32.to_le_bytes());
    header.extend_from_slice(&(record.qubit_count() as u32).to_le_bytes());
    header.extend_from_slice(&n.to_le_bytes());
    header.extend_from_slice(&record.cadence().to_le_bytes());
    header.extend_from_slice(&record.start_timestamp().to_le_bytes());
    out.write_all(&header)?;
    let stream_len = bytes_per_stream(n) as usize;
    let mut buf = vec![0u8; stream_len];
    let mut put = |bits: &BitSlice<u8, Lsb0>, out: &mut W| -> io::Result<()> {
        buf.fill(0);
        buf.view_bits_mut::<Lsb0>()[..bits.len()].copy_from_bitslice(bits);
        out.write_all(&buf)
    };
    for q in 0..record.qubit_count() {
        put(record.relaxed(q), &mut out)?;
    }
    for q in 0..record.qubit_count() {
        put(record.valid(q), &mut out)?;
    }
    out.flush()
}

pub fn decode_record<R: Read>(mut input: R) -> Result<RelaxationRecord, FormatError> {
    let mut header = [0u8; HEADER_LEN];
    let got = read_up_to(&mut input, &mut header).map_err(|e| FormatError::MalformedHeader(e.to_string()))?;
    if got == 0 {
        return Err(FormatError::MissingHeader);
    }
    if got < HEADER_LEN {
        return Err(FormatError::MalformedHeader(format!("{got} of {HEADER_LEN} header bytes")));
    }
    if &header[0..8] != MAGIC {
        return Err(FormatError::MalformedHeader("bad magic".into()));
    }
    let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(FormatError::MalformedHeader(format!("unsupported version {version}")));
    }
    let qubits = u32::from_le_bytes(header[16..20].try_into().unwrap()) as usize;
    let n = u64::from_le_bytes(header[20..28].try_into().unwrap());
    let cadence = f64::from_le_bytes(header[28..36].try_into().unwrap());
    let start = f64::from_le_bytes(header[36..44].try_into().unwrap());
    if qubits == 0 {
        return Err(FormatError::MalformedHeader("zero qubits".into()));
    }
    if !(cadence > 0.0) || !cadence.is_finite() {
        return Err(FormatError::MalformedHeader(format!("cadence {cadence}")));
    }
    if !start.is_finite() {
        return Err(FormatError::MalformedHeader("non-finite start timestamp".into()));
    }
    let stream_len = bytes_per_stream(n);
    let expected = stream_len
        .checked_mul(2 * qubits as u64)
        .ok_or_else(|| FormatError::MalformedHeader("payload size overflows".into()))?;

    let mut read_stream = |found_so_far: u64| -> Result<Bits, FormatError> {
        let mut buf = vec![0u8; stream_len as usize];
        let got = read_up_to(&mut input, &mut buf)
            .map_err(|e| FormatError::MalformedHeader(e.to_string()))? as u64;
        if got < stream_len {
            return Err(FormatError::TruncatedPayload { expected, found: found_so_far + got });
        }
        let mut bits = Bits::from_vec(buf);
        bits.truncate(n as usize);
        Ok(bits)
    };
    let mut relaxed = Vec::with_capacity(qubits);
    let mut valid = Vec::with_capacity(qubits);
    for q in 0..qubits {
        relaxed.push(read_stream(q as u64 * stream_len)?);
    }
    for q in 0..qubits {
        valid.push(read_stream((qubits + q) as u64 * stream_len)?);
    }
    let mut rest = Vec::new();
    input
        .read_to_end(&mut rest)
        .map_err(|e| FormatError::MalformedHeader(e.to_string()))?;
    if !rest.is_empty() {
        return Err(FormatError::TrailingData(rest.len() as u64));
    }
    Ok(RelaxationRecord::from_parts(cadence, start, relaxed, valid)?)
}

fn read_up_to<R: Read>(input: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match input.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(k) => filled += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

pub fn write_record(record: &RelaxationRecord, path: &Path) -> Result<(), FormatError> {
    let io_err = |source| FormatError::Io { path: path.to_path_buf(), source };
    let file = File::create(path).map_err(io_err)?;
    encode_record(record, BufWriter::new(file)).map_err(io_err)
}

pub fn read_record(path: &Path) -> Result<RelaxationRecord, FormatError> {
    let file = File::open(path).map_err(|source| FormatError::Io { path: path.to_path_buf(), source })?;
    decode_record(BufReader::new(file))
}

/// Debug export: one row per measurement, one column per qubit holding
/// `1` (relaxed), `0` (not relaxed) or `-1` (discarded).
pub fn write_record_csv<W: Write>(record: &RelaxationRecord, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["index".to_string(), "time_s".to_string()];
    header.extend((1..=record.qubit_count()).map(|q| format!("Q{q}")));
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for t in 0..record.len() {
        row.clear();
        row.push(t.to_string());
        row.push(format!("{:.9}", record.start_timestamp() + t as f64 * record.cadence()));
        for q in 0..record.qubit_count() {
            let cell = if !record.is_valid(q, t) {
                "-1"
            } else if record.is_relaxed(q, t) {
                "1"
            } else {
                "0"
            };
            row.push(cell.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record_from_cells(qubits: usize, cells: &[u8], cadence: f64, start: f64) -> RelaxationRecord {
        let n = cells.len() / qubits;
        let mut r = RelaxationRecord::quiet(qubits, n, cadence, start);
        for q in 0..qubits {
            for t in 0..n {
                match cells[q * n + t] % 3 {
                    0 => {}
                    1 => {
                        r.set_relaxed(q, t);
                    }
                    _ => r.discard(q, t),
                }
            }
        }
        r
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(
            qubits in 1usize..12,
            n in 1usize..200,
            seed_cells in proptest::collection::vec(any::<u8>(), 2400),
            cadence in 1e-7f64..1.0,
            start in 0.0f64..1e5,
        ) {
            let cells = &seed_cells[..qubits * n];
            let r = record_from_cells(qubits, cells, cadence, start);
            let mut bytes = Vec::new();
            encode_record(&r, &mut bytes).unwrap();
            prop_assert_eq!(bytes.len(), HEADER_LEN + 2 * qubits * n.div_ceil(8));
            let back = decode_record(bytes.as_slice()).unwrap();
            prop_assert_eq!(back, r);
        }
    }

    #[test]
    fn empty_input_is_missing_header() {
        let err = decode_record(&[][..]).unwrap_err();
        assert_eq!(err.to_string(), "missing header");
    }

    #[test]
    fn relaxation_on_discarded_cell_fails_to_load() {
        let r = RelaxationRecord::quiet(2, 16, 1e-3, 0.0);
        let mut bytes = Vec::new();
        encode_record(&r, &mut bytes).unwrap();
        // qubit 1, relaxed stream, bit 3 set; valid stream bit 3 cleared
        bytes[HEADER_LEN] |= 1 << 3;
        let valid_q1 = HEADER_LEN + 2 * 2;
        bytes[valid_q1] &= !(1 << 3);
        let err = decode_record(bytes.as_slice()).unwrap_err();
        assert!(err.to_string().contains("relaxation on discarded measurement"), "{err}");
    }

    #[test]
    fn truncated_payload_detected() {
        let r = RelaxationRecord::quiet(3, 100, 1e-3, 0.0);
        let mut bytes = Vec::new();
        encode_record(&r, &mut bytes).unwrap();
        bytes.truncate(bytes.len() - 5);
        assert!(matches!(
            decode_record(bytes.as_slice()),
            Err(FormatError::TruncatedPayload { .. })
        ));
    }

    #[test]
    fn bad_magic_and_short_header() {
        let r = RelaxationRecord::quiet(1, 8, 1e-3, 0.0);
        let mut bytes = Vec::new();
        encode_record(&r, &mut bytes).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_record(bad.as_slice()), Err(FormatError::MalformedHeader(_))));
        assert!(matches!(decode_record(&bytes[..10]), Err(FormatError::MalformedHeader(_))));
        bytes.push(0);
        assert!(matches!(decode_record(bytes.as_slice()), Err(FormatError::TrailingData(1))));
    }

    #[test]
    fn csv_export_marks_discards() {
        let mut r = RelaxationRecord::quiet(2, 2, 0.5, 0.0);
        r.set_relaxed(0, 1);
        r.discard(1, 0);
        let mut out = Vec::new();
        write_record_csv(&r, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, "index,time_s,Q1,Q2\n0,0.000000000,0,-1\n1,0.500000000,1,0\n");
    }
}
