//! Canonical little-endian byte encoding shared by every serialized HE artifact.
//!
//! Each artifact starts with `[version: u8][flags: u8][params_id: u64]`; bit 0 of `flags`
//! marks toy (insecure) parameters. Integers are little-endian, polynomials are written
//! as one run of `n` 64-bit coefficients per RNS prime.

use crate::error::{HeError, Result};

pub const FORMAT_VERSION: u8 = 1;
pub const FLAG_TOY: u8 = 0x01;

#[derive(Debug, Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(cap: usize) -> Self {
        Writer { buf: Vec::with_capacity(cap) }
    }

    pub fn header(&mut self, toy: bool, params_id: u64) {
        self.u8(FORMAT_VERSION);
        self.u8(if toy { FLAG_TOY } else { 0 });
        self.u64(params_id);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64s(&mut self, vs: &[u64]) {
        self.buf.reserve(vs.len() * 8);
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    /// Length-prefixed (u32) byte string.
    pub fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.buf.extend_from_slice(b);
    }

    pub fn raw(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug)]
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    /// Reads the artifact header, returning `(toy, params_id)`.
    pub fn header(&mut self) -> Result<(bool, u64)> {
        let version = self.u8()?;
        if version != FORMAT_VERSION {
            return Err(HeError::Deserialize(format!("unsupported format version {version}")));
        }
        let flags = self.u8()?;
        if flags & !FLAG_TOY != 0 {
            return Err(HeError::Deserialize(format!("unknown flags {flags:#04x}")));
        }
        Ok((flags & FLAG_TOY != 0, self.u64()?))
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| HeError::Deserialize(format!("truncated input at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn u64s(&mut self, count: usize) -> Result<Vec<u64>> {
        let raw = self.take(count.checked_mul(8).ok_or_else(|| HeError::Deserialize("length overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn bytes(&mut self) -> Result<&'a [u8]> {
        let len = self.u32()? as usize;
        self.take(len)
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn expect_end(&self) -> Result<()> {
        if self.remaining() == 0 {
            Ok(())
        } else {
            Err(HeError::Deserialize(format!("{} trailing bytes", self.remaining())))
        }
    }
}
