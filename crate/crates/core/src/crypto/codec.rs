//! Canonical byte encoding for everything that gets hashed or signed.
//!
//! Fields are written in schema order, integers little-endian, variable
//! length data behind a `u32` length prefix. Floats are written as their
//! IEEE-754 bit pattern and must be finite.

use thiserror::Error;

use super::hash::{Digest, DIGEST_LEN};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("value has no canonical form: {0}")]
    NotCanonical(&'static str),
    #[error("unexpected end of input while reading {0}")]
    Truncated(&'static str),
    #[error("{0} trailing bytes after decoding")]
    Trailing(usize),
    #[error("invalid {what}: {detail}")]
    Invalid { what: &'static str, detail: String },
}

/// Types with a fixed, platform independent byte representation.
pub trait Canonical: Sized {
    fn encode(&self, enc: &mut Encoder) -> Result<(), CodecError>;
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError>;
}

pub fn canonical_encode<T: Canonical>(value: &T) -> Result<Vec<u8>, CodecError> {
    let mut enc = Encoder::default();
    value.encode(&mut enc)?;
    Ok(enc.finish())
}

/// Decodes `bytes` completely; leftover input is an error.
pub fn canonical_decode<T: Canonical>(bytes: &[u8]) -> Result<T, CodecError> {
    let mut dec = Decoder::new(bytes);
    let value = T::decode(&mut dec)?;
    dec.finish()?;
    Ok(value)
}

#[derive(Debug, Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn finish(self) -> Vec<u8> {
        self.buf
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn len(&mut self, n: usize) -> Result<(), CodecError> {
        let n = u32::try_from(n).map_err(|_| CodecError::NotCanonical("length exceeds u32"))?;
        self.u32(n);
        Ok(())
    }

    pub fn f64(&mut self, v: f64) -> Result<(), CodecError> {
        if !v.is_finite() {
            return Err(CodecError::NotCanonical("non-finite float"));
        }
        // -0.0 and 0.0 compare equal, so they must encode equally.
        let v = if v == 0.0 { 0.0 } else { v };
        self.buf.extend_from_slice(&v.to_bits().to_le_bytes());
        Ok(())
    }

    pub fn bytes(&mut self, b: &[u8]) -> Result<(), CodecError> {
        self.len(b.len())?;
        self.buf.extend_from_slice(b);
        Ok(())
    }

    pub fn raw(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn str(&mut self, s: &str) -> Result<(), CodecError> {
        self.bytes(s.as_bytes())
    }

    pub fn digest(&mut self, d: &Digest) {
        self.buf.extend_from_slice(&d.0);
    }

    pub fn f64_slice(&mut self, values: &[f64]) -> Result<(), CodecError> {
        self.len(values.len())?;
        values.iter().try_for_each(|v| self.f64(*v))
    }
}

#[derive(Debug)]
pub struct Decoder<'a> {
    input: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(input: &'a [u8]) -> Self {
        Decoder { input, pos: 0 }
    }

    pub fn finish(self) -> Result<(), CodecError> {
        match self.input.len() - self.pos {
            0 => Ok(()),
            n => Err(CodecError::Trailing(n)),
        }
    }

    pub fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CodecError> {
        let end = self.pos.checked_add(n).ok_or(CodecError::Truncated(what))?;
        let out = self.input.get(self.pos..end).ok_or(CodecError::Truncated(what))?;
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N], CodecError> {
        let s = self.take(N, what)?;
        let mut out = [0u8; N];
        out.copy_from_slice(s);
        Ok(out)
    }

    pub fn u8(&mut self, what: &'static str) -> Result<u8, CodecError> {
        Ok(self.array::<1>(what)?[0])
    }

    pub fn u16(&mut self, what: &'static str) -> Result<u16, CodecError> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    pub fn u32(&mut self, what: &'static str) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    pub fn u64(&mut self, what: &'static str) -> Result<u64, CodecError> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    pub fn len(&mut self, what: &'static str) -> Result<usize, CodecError> {
        let n = self.u32(what)? as usize;
        // A length can never exceed what is left; rejects absurd allocations early.
        if n > self.input.len() - self.pos {
            return Err(CodecError::Truncated(what));
        }
        Ok(n)
    }

    pub fn f64(&mut self, what: &'static str) -> Result<f64, CodecError> {
        let bits = u64::from_le_bytes(self.array(what)?);
        let v = f64::from_bits(bits);
        if !v.is_finite() || (v == 0.0 && bits != 0) {
            return Err(CodecError::Invalid {
                what,
                detail: format!("non-canonical float bits {bits:#x}"),
            });
        }
        Ok(v)
    }

    pub fn bytes(&mut self, what: &'static str) -> Result<&'a [u8], CodecError> {
        let n = self.len(what)?;
        self.take(n, what)
    }

    pub fn str(&mut self, what: &'static str) -> Result<String, CodecError> {
        let b = self.bytes(what)?;
        String::from_utf8(b.to_vec()).map_err(|e| CodecError::Invalid {
            what,
            detail: e.to_string(),
        })
    }

    pub fn digest(&mut self, what: &'static str) -> Result<Digest, CodecError> {
        Ok(Digest(self.array::<DIGEST_LEN>(what)?))
    }

    pub fn f64_vec(&mut self, what: &'static str) -> Result<Vec<f64>, CodecError> {
        let n = self.u32(what)? as usize;
        if n.saturating_mul(8) > self.input.len() - self.pos {
            return Err(CodecError::Truncated(what));
        }
        (0..n).map(|_| self.f64(what)).collect()
    }
}

impl Canonical for Digest {
    fn encode(&self, enc: &mut Encoder) -> Result<(), CodecError> {
        enc.digest(self);
        Ok(())
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        dec.digest("digest")
    }
}
