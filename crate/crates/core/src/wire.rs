//! Length-prefixed byte encoding for signed and sealed payloads.
//!
//! Chain links and handshake tuples concatenate several variable-length
//! fields. Each field is written as a little-endian `u32` length followed by
//! its bytes, so no two distinct field sequences can encode to the same byte
//! string. The encoding must stay stable within a build: golden-transcript
//! tests compare runs byte for byte.

use alloc::vec::Vec;

#[derive(Debug, Default, Clone)]
pub struct WireWriter {
    buf: Vec<u8>,
}

impl WireWriter {
    pub fn new() -> Self {
        WireWriter::default()
    }

    pub fn field(mut self, bytes: &[u8]) -> Self {
        self.buf.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
        self.buf.extend_from_slice(bytes);
        self
    }

    pub fn u64(self, v: u64) -> Self {
        self.field(&v.to_le_bytes())
    }

    pub fn f64(self, v: f64) -> Self {
        self.field(&v.to_le_bytes())
    }

    pub fn str(self, s: &str) -> Self {
        self.field(s.as_bytes())
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Reader over the same framing. Fails on truncation rather than panicking;
/// a truncated payload is a protocol inconsistency, not a bug.
#[derive(Debug)]
pub struct WireReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WireError;

impl<'a> WireReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        WireReader { buf, pos: 0 }
    }

    pub fn field(&mut self) -> Result<&'a [u8], WireError> {
        if self.pos + 4 > self.buf.len() {
            return Err(WireError);
        }
        let mut len_bytes = [0u8; 4];
        len_bytes.copy_from_slice(&self.buf[self.pos..self.pos + 4]);
        let len = u32::from_le_bytes(len_bytes) as usize;
        self.pos += 4;
        if self.pos + len > self.buf.len() {
            return Err(WireError);
        }
        let out = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    pub fn u64(&mut self) -> Result<u64, WireError> {
        let f = self.field()?;
        if f.len() != 8 {
            return Err(WireError);
        }
        let mut b = [0u8; 8];
        b.copy_from_slice(f);
        Ok(u64::from_le_bytes(b))
    }

    pub fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub fn str(&mut self) -> Result<&'a str, WireError> {
        core::str::from_utf8(self.field()?).map_err(|_| WireError)
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }
}
