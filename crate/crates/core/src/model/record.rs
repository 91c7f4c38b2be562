use bitvec::prelude::*;
use thiserror::Error;

pub type Bits = BitVec<u8, Lsb0>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecordError {
    #[error("relaxation on discarded measurement (qubit Q{qubit}, index {index})")]
    RelaxationOnDiscarded { qubit: usize, index: usize },
    #[error("qubit Q{qubit} has {got} samples, expected {expected}")]
    LengthMismatch { qubit: usize, got: usize, expected: usize },
    #[error("record has no qubits")]
    NoQubits,
    #[error("nonpositive cadence")]
    NonpositiveCadence,
    #[error("cannot concatenate records with different qubit counts or cadences")]
    Incompatible,
    #[error("range {start}..{end} outside record of length {len}")]
    OutOfRange { start: usize, end: usize, len: usize },
}

/// Binary relaxation outcomes of every qubit over a run of consecutive
/// measurements, with the validity mask of discarded measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxationRecord {
    cadence: f64,
    start_timestamp: f64,
    relaxed: Vec<Bits>,
    valid: Vec<Bits>,
}

impl RelaxationRecord {
    /// A record of `n` valid, unrelaxed measurements.
    pub fn quiet(qubits: usize, n: usize, cadence: f64, start_timestamp: f64) -> Self {
        Self {
            cadence,
            start_timestamp,
            relaxed: vec![bitvec![u8, Lsb0; 0; n]; qubits],
            valid: vec![bitvec![u8, Lsb0; 1; n]; qubits],
        }
    }

    pub fn from_parts(
        cadence: f64,
        start_timestamp: f64,
        relaxed: Vec<Bits>,
        valid: Vec<Bits>,
    ) -> Result<Self, RecordError> {
        if relaxed.is_empty() {
            return Err(RecordError::NoQubits);
        }
        if !(cadence > 0.0) {
            return Err(RecordError::NonpositiveCadence);
        }
        let n = relaxed[0].len();
        if valid.len() != relaxed.len() {
            return Err(RecordError::LengthMismatch {
                qubit: valid.len().min(relaxed.len()) + 1,
                got: 0,
                expected: n,
            });
        }
        for (q, (r, v)) in relaxed.iter().zip(&valid).enumerate() {
            for got in [r.len(), v.len()] {
                if got != n {
                    return Err(RecordError::LengthMismatch { qubit: q + 1, got, expected: n });
                }
            }
            if let Some(index) = r.iter_ones().find(|&i| !v[i]) {
                return Err(RecordError::RelaxationOnDiscarded { qubit: q + 1, index });
            }
        }
        Ok(Self { cadence, start_timestamp, relaxed, valid })
    }

    pub fn qubit_count(&self) -> usize {
        self.relaxed.len()
    }

    pub fn len(&self) -> usize {
        self.relaxed[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cadence(&self) -> f64 {
        self.cadence
    }

    pub fn start_timestamp(&self) -> f64 {
        self.start_timestamp
    }

    /// Index of the first measurement on the global, cadence-aligned time axis.
    pub fn first_global_index(&self) -> u64 {
        (self.start_timestamp / self.cadence).round().max(0.0) as u64
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 * self.cadence
    }

    pub fn relaxed(&self, qubit: usize) -> &BitSlice<u8, Lsb0> {
        &self.relaxed[qubit]
    }

    pub fn valid(&self, qubit: usize) -> &BitSlice<u8, Lsb0> {
        &self.valid[qubit]
    }

    pub fn is_relaxed(&self, qubit: usize, t: usize) -> bool {
        self.relaxed[qubit][t]
    }

    pub fn is_valid(&self, qubit: usize, t: usize) -> bool {
        self.valid[qubit][t]
    }

    /// Marks a measurement as relaxed. Ignored on discarded measurements so
    /// the record invariant cannot be broken.
    pub fn set_relaxed(&mut self, qubit: usize, t: usize) -> bool {
        if self.valid[qubit][t] {
            self.relaxed[qubit].set(t, true);
            true
        } else {
            false
        }
    }

    /// Discards a measurement, clearing any relaxation it carried.
    pub fn discard(&mut self, qubit: usize, t: usize) {
        self.valid[qubit].set(t, false);
        self.relaxed[qubit].set(t, false);
    }

    pub(crate) fn bits_mut(&mut self, qubit: usize) -> (&mut Bits, &mut Bits) {
        (&mut self.relaxed[qubit], &mut self.valid[qubit])
    }

    pub fn relaxation_count(&self, qubit: usize) -> usize {
        self.relaxed[qubit].count_ones()
    }

    pub fn valid_count(&self, qubit: usize) -> usize {
        self.valid[qubit].count_ones()
    }

    /// Fraction of valid cells over the whole record, `1 - discards / total`.
    pub fn valid_fraction(&self) -> f64 {
        let total = (self.qubit_count() * self.len()) as u64;
        if total == 0 {
            return 1.0;
        }
        let valid: u64 = self.valid.iter().map(|v| v.count_ones() as u64).sum();
        valid as f64 / total as f64
    }

    pub fn slice(&self, start: usize, end: usize) -> Result<Self, RecordError> {
        if start > end || end > self.len() {
            return Err(RecordError::OutOfRange { start, end, len: self.len() });
        }
        Ok(Self {
            cadence: self.cadence,
            start_timestamp: self.start_timestamp + start as f64 * self.cadence,
            relaxed: self.relaxed.iter().map(|b| b[start..end].to_bitvec()).collect(),
            valid: self.valid.iter().map(|b| b[start..end].to_bitvec()).collect(),
        })
    }

    /// Joins records back to back. The timestamp of the first part is kept.
    pub fn concat(parts: &[&RelaxationRecord]) -> Result<Self, RecordError> {
        let first = parts.first().ok_or(RecordError::NoQubits)?;
        let q = first.qubit_count();
        if parts.iter().any(|p| p.qubit_count() != q || p.cadence != first.cadence) {
            return Err(RecordError::Incompatible);
        }
        let mut relaxed: Vec<Bits> = vec![Bits::new(); q];
        let mut valid: Vec<Bits> = vec![Bits::new(); q];
        for p in parts {
            for i in 0..q {
                relaxed[i].extend_from_bitslice(&p.relaxed[i]);
                valid[i].extend_from_bitslice(&p.valid[i]);
            }
        }
        Ok(Self { cadence: first.cadence, start_timestamp: first.start_timestamp, relaxed, valid })
    }
}

/// Relaxation count summed over the qubit array at every measurement.
/// Discarded measurements contribute zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SummedSeries {
    pub values: Vec<u16>,
    pub cadence: f64,
}

impl SummedSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }
}

pub fn sum_over_qubits(record: &RelaxationRecord) -> SummedSeries {
    let mut values = vec![0u16; record.len()];
    for q in 0..record.qubit_count() {
        for t in record.relaxed(q).iter_ones() {
            values[t] += 1;
        }
    }
    SummedSeries { values, cadence: record.cadence() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_record(q: usize, n: usize, seed: u64) -> RelaxationRecord {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = RelaxationRecord::quiet(q, n, 1e-3, 0.0);
        for i in 0..q {
            for t in 0..n {
                if rng.random_bool(0.05) {
                    r.discard(i, t);
                } else if rng.random_bool(0.3) {
                    r.set_relaxed(i, t);
                }
            }
        }
        r
    }

    #[test]
    fn zero_record_sums_to_zero() {
        let r = RelaxationRecord::quiet(10, 50, 1e-3, 0.0);
        assert!(sum_over_qubits(&r).values.iter().all(|&v| v == 0));
    }

    #[test]
    fn unit_impulse() {
        let mut r = RelaxationRecord::quiet(10, 20, 1e-3, 0.0);
        r.set_relaxed(3, 5);
        let s = sum_over_qubits(&r);
        for (t, v) in s.values.iter().enumerate() {
            assert_eq!(*v, u16::from(t == 5));
        }
    }

    #[test]
    fn sum_matches_elementwise_loop() {
        let r = random_record(10, 10_000, 7);
        let s = sum_over_qubits(&r);
        for t in 0..r.len() {
            let mut expect = 0u16;
            for q in 0..10 {
                if r.is_relaxed(q, t) {
                    expect += 1;
                }
            }
            assert_eq!(s.values[t], expect, "t={t}");
        }
    }

    #[test]
    fn sum_commutes_with_concat() {
        let a = random_record(4, 333, 1);
        let b = random_record(4, 517, 2);
        let joined = RelaxationRecord::concat(&[&a, &b]).unwrap();
        let mut expect = sum_over_qubits(&a).values;
        expect.extend(sum_over_qubits(&b).values);
        assert_eq!(sum_over_qubits(&joined).values, expect);
    }

    #[test]
    fn discarded_cells_cannot_relax() {
        let mut r = RelaxationRecord::quiet(2, 8, 1e-3, 0.0);
        r.discard(1, 4);
        assert!(!r.set_relaxed(1, 4));
        assert!(!r.is_relaxed(1, 4));
        assert_eq!(r.valid_fraction(), 15.0 / 16.0);
    }

    #[test]
    fn from_parts_rejects_relaxed_invalid() {
        let relaxed = vec![bitvec![u8, Lsb0; 0, 1, 0]];
        let valid = vec![bitvec![u8, Lsb0; 1, 0, 1]];
        let err = RelaxationRecord::from_parts(1e-3, 0.0, relaxed, valid).unwrap_err();
        assert_eq!(err, RecordError::RelaxationOnDiscarded { qubit: 1, index: 1 });
    }

    #[test]
    fn slice_then_concat_restores() {
        let r = random_record(3, 100, 9);
        let a = r.slice(0, 37).unwrap();
        let b = r.slice(37, 100).unwrap();
        assert_eq!(RelaxationRecord::concat(&[&a, &b]).unwrap(), r);
        assert!((b.start_timestamp() - 0.037).abs() < 1e-12);
    }
}
