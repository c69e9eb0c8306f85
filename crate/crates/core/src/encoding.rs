//! Canonical byte encoding.
//!
//! Every hashed or signed structure is turned into bytes through
//! [`canonical_encode`]: each field is written as a 4-byte big-endian length
//! followed by the field bytes. The encoding is injective over field lists, so
//! `["A", "B"]` and `["AB"]` can never collide.
//!
//! [`Fields`] is a small builder over the same format and [`FieldReader`] is
//! its inverse.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodingError {
    #[error("field of {0} bytes exceeds the 4-byte length prefix")]
    FieldTooLong(usize),
    #[error("truncated input: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("expected {expected} fields, found more")]
    TrailingFields { expected: usize },
    #[error("field {index} has length {actual}, expected {expected}")]
    BadFieldLength {
        index: usize,
        expected: usize,
        actual: usize,
    },
    #[error("field {0} is not valid UTF-8")]
    BadUtf8(usize),
    #[error("field {index} is malformed: {reason}")]
    Malformed { index: usize, reason: &'static str },
}

const MAX_FIELD: usize = u32::MAX as usize;

/// Concatenates `(len as u32 BE) || bytes` for each field.
pub fn canonical_encode<I, F>(fields: I) -> Result<Vec<u8>, EncodingError>
where
    I: IntoIterator<Item = F>,
    F: AsRef<[u8]>,
{
    let mut out = Vec::new();
    for field in fields {
        push_field(&mut out, field.as_ref())?;
    }
    Ok(out)
}

fn push_field(out: &mut Vec<u8>, field: &[u8]) -> Result<(), EncodingError> {
    if field.len() > MAX_FIELD {
        return Err(EncodingError::FieldTooLong(field.len()));
    }
    out.extend_from_slice(&(field.len() as u32).to_be_bytes());
    out.extend_from_slice(field);
    Ok(())
}

/// Builder producing the same bytes as [`canonical_encode`].
///
/// Integers are written as fixed-width big-endian fields, strings as UTF-8.
#[derive(Debug, Default, Clone)]
pub struct Fields {
    parts: Vec<Vec<u8>>,
}

impl Fields {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(mut self, b: impl AsRef<[u8]>) -> Self {
        self.parts.push(b.as_ref().to_vec());
        self
    }

    pub fn u64(self, v: u64) -> Self {
        self.bytes(v.to_be_bytes())
    }

    pub fn str(self, s: &str) -> Self {
        self.bytes(s.as_bytes())
    }

    pub fn bool(self, b: bool) -> Self {
        self.bytes([b as u8])
    }

    pub fn finish(self) -> Result<Vec<u8>, EncodingError> {
        canonical_encode(&self.parts)
    }

    /// Encodes fields that are known to be small (fixed-size digests, keys,
    /// integers). Panics only if a field exceeds 4 GiB.
    pub fn finish_small(self) -> Vec<u8> {
        self.finish()
            .expect("fixed-size protocol fields always fit a u32 length prefix")
    }
}

/// Sequential reader over a canonical encoding.
#[derive(Debug, Clone)]
pub struct FieldReader<'a> {
    buf: &'a [u8],
    index: usize,
}

impl<'a> FieldReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, index: 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn next_field(&mut self) -> Result<&'a [u8], EncodingError> {
        if self.buf.len() < 4 {
            return Err(EncodingError::Truncated {
                needed: 4,
                available: self.buf.len(),
            });
        }
        let len = u32::from_be_bytes(self.buf[..4].try_into().unwrap()) as usize;
        let rest = &self.buf[4..];
        if rest.len() < len {
            return Err(EncodingError::Truncated {
                needed: len,
                available: rest.len(),
            });
        }
        let (field, tail) = rest.split_at(len);
        self.buf = tail;
        self.index += 1;
        Ok(field)
    }

    pub fn fixed<const N: usize>(&mut self) -> Result<[u8; N], EncodingError> {
        let index = self.index;
        let f = self.next_field()?;
        f.try_into().map_err(|_| EncodingError::BadFieldLength {
            index,
            expected: N,
            actual: f.len(),
        })
    }

    pub fn u64(&mut self) -> Result<u64, EncodingError> {
        Ok(u64::from_be_bytes(self.fixed::<8>()?))
    }

    pub fn bool(&mut self) -> Result<bool, EncodingError> {
        let index = self.index;
        match self.fixed::<1>()? {
            [0] => Ok(false),
            [1] => Ok(true),
            _ => Err(EncodingError::Malformed {
                index,
                reason: "boolean must be 0 or 1",
            }),
        }
    }

    pub fn string(&mut self) -> Result<String, EncodingError> {
        let index = self.index;
        let f = self.next_field()?;
        String::from_utf8(f.to_vec()).map_err(|_| EncodingError::BadUtf8(index))
    }

    pub fn vec(&mut self) -> Result<Vec<u8>, EncodingError> {
        Ok(self.next_field()?.to_vec())
    }

    /// Fails if any bytes remain.
    pub fn finish(self) -> Result<(), EncodingError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(EncodingError::TrailingFields {
                expected: self.index,
            })
        }
    }
}
