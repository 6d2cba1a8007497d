//! SIMD slot encoding and the record framing used to pack byte records into plaintexts.
//!
//! A plaintext carries `n * floor(log2 t) / 8` payload bytes. Records are stored in fixed
//! frames of `frame_bytes` bytes: a little-endian `u16` holding `len + 1`, the payload, then
//! zero padding. Frames are written back to back from the first slot; the first all-zero
//! frame terminates the record list, so an empty list is the all-zero plaintext. The stream
//! of frame bytes is packed into slots `floor(log2 t)` bits at a time, least significant
//! bit first.

use crate::arith::Modulus;
use crate::error::{HeError, Result};
use crate::ntt::NttTable;

/// Plaintext in slot representation: `n` values in `[0, t)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plaintext {
    slots: Vec<u64>,
}

impl Plaintext {
    pub fn new(slots: Vec<u64>, t: u64) -> Result<Self> {
        if let Some(bad) = slots.iter().find(|&&v| v >= t) {
            return Err(HeError::InvalidParams(format!("slot value {bad} not below t={t}")));
        }
        Ok(Plaintext { slots })
    }

    pub fn zero(n: usize) -> Self {
        Plaintext { slots: vec![0; n] }
    }

    pub fn slots(&self) -> &[u64] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.slots.iter().all(|&v| v == 0)
    }
}

/// Plaintext in coefficient representation (polynomial mod `t`), as consumed by encryption
/// and plaintext multiplication.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlainPoly {
    pub(crate) coeffs: Vec<u32>,
}

impl PlainPoly {
    pub fn from_coefficients(coeffs: Vec<u32>) -> Self {
        PlainPoly { coeffs }
    }

    pub fn coefficients(&self) -> &[u32] {
        &self.coeffs
    }

    /// The constant polynomial `c`, whose every slot equals `c`.
    pub fn constant(n: usize, c: u32) -> Self {
        let mut coeffs = vec![0; n];
        coeffs[0] = c;
        PlainPoly { coeffs }
    }
}

/// Maps slot vectors to polynomials and back (inverse / forward negacyclic NTT mod `t`).
#[derive(Debug, Clone)]
pub struct SlotEncoder {
    table: NttTable,
}

impl SlotEncoder {
    pub fn new(n: usize, t: u64) -> Self {
        SlotEncoder { table: NttTable::new(n, Modulus::new(t)) }
    }

    pub fn degree(&self) -> usize {
        self.table.degree()
    }

    pub fn plain_modulus(&self) -> u64 {
        self.table.modulus().value()
    }

    pub fn encode(&self, pt: &Plaintext) -> Result<PlainPoly> {
        if pt.len() != self.degree() {
            return Err(HeError::InvalidParams(format!(
                "plaintext has {} slots, ring degree is {}",
                pt.len(),
                self.degree()
            )));
        }
        let mut a = pt.slots.clone();
        self.table.inverse(&mut a);
        Ok(PlainPoly { coeffs: a.into_iter().map(|v| v as u32).collect() })
    }

    pub fn decode(&self, poly: &PlainPoly) -> Plaintext {
        let mut a: Vec<u64> = poly.coeffs.iter().map(|&v| v as u64).collect();
        self.table.forward(&mut a);
        Plaintext { slots: a }
    }
}

/// Packs length-prefixed records into plaintext slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordCodec {
    n: usize,
    slot_bits: u32,
    frame_bytes: usize,
}

impl RecordCodec {
    pub fn new(n: usize, slot_bits: u32, frame_bytes: usize) -> Result<Self> {
        if !(1..=32).contains(&slot_bits) {
            return Err(HeError::InvalidParams(format!("unsupported slot width {slot_bits}")));
        }
        if !(3..=u16::MAX as usize).contains(&frame_bytes) {
            return Err(HeError::InvalidParams(format!("frame size {frame_bytes} outside [3, 65535]")));
        }
        Ok(RecordCodec { n, slot_bits, frame_bytes })
    }

    pub fn capacity_bytes(&self) -> usize {
        self.n * self.slot_bits as usize / 8
    }

    /// Records that fit in one plaintext (`M`).
    pub fn records_per_plaintext(&self) -> usize {
        self.capacity_bytes() / self.frame_bytes
    }

    /// Largest payload a single frame can hold.
    pub fn max_record_len(&self) -> usize {
        self.frame_bytes - 2
    }

    pub fn frame_bytes(&self) -> usize {
        self.frame_bytes
    }

    pub fn encode<R: AsRef<[u8]>>(&self, records: &[R]) -> Result<Plaintext> {
        let m = self.records_per_plaintext();
        if records.len() > m {
            return Err(HeError::CapacityExceeded(format!(
                "{} records, at most {m} fit one plaintext",
                records.len()
            )));
        }
        let mut stream = vec![0u8; self.capacity_bytes()];
        for (i, rec) in records.iter().enumerate() {
            let rec = rec.as_ref();
            if rec.len() > self.max_record_len() {
                return Err(HeError::CapacityExceeded(format!(
                    "record of {} bytes exceeds frame payload {}",
                    rec.len(),
                    self.max_record_len()
                )));
            }
            let frame = &mut stream[i * self.frame_bytes..(i + 1) * self.frame_bytes];
            frame[..2].copy_from_slice(&((rec.len() + 1) as u16).to_le_bytes());
            frame[2..2 + rec.len()].copy_from_slice(rec);
        }
        Ok(Plaintext { slots: self.bytes_to_slots(&stream) })
    }

    /// Inverse of [`RecordCodec::encode`]. Rejects slot values wider than the slot width,
    /// out-of-range length prefixes and non-zero bytes after the terminating frame,
    /// which is how undecryptable (noise-exhausted) answers surface.
    pub fn decode(&self, pt: &Plaintext) -> Result<Vec<Vec<u8>>> {
        if pt.len() != self.n {
            return Err(HeError::MalformedPlaintext(format!("expected {} slots, got {}", self.n, pt.len())));
        }
        let limit = 1u64 << self.slot_bits;
        if let Some(v) = pt.slots.iter().find(|&&v| v >= limit) {
            return Err(HeError::MalformedPlaintext(format!("slot value {v} wider than {} bits", self.slot_bits)));
        }
        let stream = self.slots_to_bytes(&pt.slots);
        let mut out = Vec::new();
        let m = self.records_per_plaintext();
        let mut end = 0;
        for i in 0..m {
            let frame = &stream[i * self.frame_bytes..(i + 1) * self.frame_bytes];
            let tag = u16::from_le_bytes([frame[0], frame[1]]) as usize;
            if tag == 0 {
                break;
            }
            let len = tag - 1;
            if len > self.max_record_len() {
                return Err(HeError::MalformedPlaintext(format!("frame {i} claims {len} bytes")));
            }
            if frame[2 + len..].iter().any(|&b| b != 0) {
                return Err(HeError::MalformedPlaintext(format!("frame {i} has non-zero padding")));
            }
            out.push(frame[2..2 + len].to_vec());
            end = (i + 1) * self.frame_bytes;
        }
        if stream[end..].iter().any(|&b| b != 0) {
            return Err(HeError::MalformedPlaintext("data after terminating frame".into()));
        }
        Ok(out)
    }

    fn bytes_to_slots(&self, bytes: &[u8]) -> Vec<u64> {
        let bits = self.slot_bits as usize;
        let mut slots = vec![0u64; self.n];
        if bits % 8 == 0 {
            let per = bits / 8;
            for (slot, chunk) in slots.iter_mut().zip(bytes.chunks(per)) {
                *slot = chunk.iter().rev().fold(0u64, |acc, &b| (acc << 8) | b as u64);
            }
            return slots;
        }
        let mut acc: u64 = 0;
        let mut acc_bits = 0usize;
        let mut idx = 0;
        for &b in bytes {
            acc |= (b as u64) << acc_bits;
            acc_bits += 8;
            while acc_bits >= bits {
                slots[idx] = acc & ((1 << bits) - 1);
                acc >>= bits;
                acc_bits -= bits;
                idx += 1;
            }
        }
        if acc_bits > 0 && idx < self.n {
            slots[idx] = acc;
        }
        slots
    }

    fn slots_to_bytes(&self, slots: &[u64]) -> Vec<u8> {
        let bits = self.slot_bits as usize;
        let cap = self.capacity_bytes();
        let mut out = Vec::with_capacity(cap);
        if bits % 8 == 0 {
            let per = bits / 8;
            for &s in slots {
                for k in 0..per {
                    out.push((s >> (8 * k)) as u8);
                }
            }
            out.truncate(cap);
            return out;
        }
        let mut acc: u64 = 0;
        let mut acc_bits = 0usize;
        for &s in slots {
            acc |= s << acc_bits;
            acc_bits += bits;
            while acc_bits >= 8 && out.len() < cap {
                out.push(acc as u8);
                acc >>= 8;
                acc_bits -= 8;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn records_per_plaintext_4096_256() {
        let codec = RecordCodec::new(4096, 16, 256).unwrap();
        assert_eq!(codec.capacity_bytes(), 8192);
        assert_eq!(codec.records_per_plaintext(), 32);
    }

    #[test]
    fn empty_list_is_zero_plaintext() {
        let codec = RecordCodec::new(64, 16, 16).unwrap();
        let pt = codec.encode::<Vec<u8>>(&[]).unwrap();
        assert!(pt.is_zero());
        assert!(codec.decode(&pt).unwrap().is_empty());
    }

    #[test]
    fn random_250_byte_records_fill_capacity() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let codec = RecordCodec::new(8192, 16, 252).unwrap();
        let m = codec.records_per_plaintext();
        assert_eq!(m, 65);
        let records: Vec<Vec<u8>> = (0..m).map(|_| (0..250).map(|_| rng.random()).collect()).collect();
        let pt = codec.encode(&records).unwrap();
        assert_eq!(codec.decode(&pt).unwrap(), records);
    }

    #[test]
    fn capacity_errors() {
        let codec = RecordCodec::new(16, 16, 8).unwrap();
        assert_eq!(codec.records_per_plaintext(), 4);
        let five = vec![vec![1u8]; 5];
        assert!(matches!(codec.encode(&five), Err(HeError::CapacityExceeded(_))));
        assert!(matches!(codec.encode(&[vec![0u8; 7]]), Err(HeError::CapacityExceeded(_))));
    }

    #[test]
    fn garbage_is_rejected() {
        let codec = RecordCodec::new(16, 16, 8).unwrap();
        let pt = Plaintext::new(vec![65536; 16], 65537).unwrap();
        assert!(codec.decode(&pt).is_err());
        let mut slots = vec![0u64; 16];
        slots[15] = 7;
        assert!(codec.decode(&Plaintext::new(slots, 65537).unwrap()).is_err());
    }

    #[test]
    fn slot_encoder_constant_polynomial_fills_every_slot() {
        let enc = SlotEncoder::new(32, 65537);
        let pt = enc.decode(&PlainPoly::constant(32, 9));
        assert!(pt.slots().iter().all(|&v| v == 9));
        assert_eq!(enc.encode(&pt).unwrap(), PlainPoly::constant(32, 9));
    }

    proptest! {
        #[test]
        fn codec_bijection(
            records in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..14), 0..8),
            bits in prop_oneof![Just(16u32), Just(12u32), Just(20u32)],
        ) {
            let codec = RecordCodec::new(64, bits, 16).unwrap();
            prop_assume!(records.len() <= codec.records_per_plaintext());
            let pt = codec.encode(&records).unwrap();
            prop_assert_eq!(codec.decode(&pt).unwrap(), records);
        }
    }
}
