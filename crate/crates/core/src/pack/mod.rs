//! Pack buffers and the two wire encodings.
//!
//! A [`Buffer`] is append-only on the write side and cursor-driven on the
//! read side: packing `a` then `b` leaves `enc(a) ++ enc(b)` in the buffer,
//! and unpacking walks the same bytes front to back.
//!
//! * [`Encoding::Native`] writes host byte order at natural widths with no
//!   padding. Only meaningful between identical architectures.
//! * [`Encoding::Portable`] is the XDR (RFC 4506) subset: big-endian,
//!   every item a multiple of four bytes.

mod typed;
mod value;

use thiserror::Error;

pub use typed::Pack;
pub use value::{pack, unpack, DynValue, Prim};

/// Longest string or sequence that may be written.
pub const MAX_LENGTH: usize = i32::MAX as usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Encoding {
    #[default]
    Native,
    Portable,
}

impl Encoding {
    pub fn as_byte(self) -> u8 {
        match self {
            Encoding::Native => 0,
            Encoding::Portable => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Encoding> {
        match b {
            0 => Some(Encoding::Native),
            1 => Some(Encoding::Portable),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PackError {
    #[error("schema mismatch at `{path}`: expected {expected}, found {found}")]
    SchemaMismatch {
        path: String,
        expected: String,
        found: String,
    },
    #[error("unknown type `{0}`")]
    UnknownType(String),
    #[error("truncated buffer: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("malformed variant tag {0}")]
    MalformedVariantTag(u32),
    #[error("malformed bool {0}")]
    MalformedBool(u32),
    #[error("value {0} out of range for u8")]
    MalformedByte(u32),
    #[error("non-zero padding byte")]
    MalformedPadding,
    #[error("string is not valid UTF-8")]
    InvalidUtf8,
    #[error("length {0} exceeds the 2^31-1 limit")]
    LengthOverflow(usize),
}

impl PackError {
    /// Prefixes a schema-mismatch path with the enclosing member.
    fn within(self, segment: &str) -> PackError {
        match self {
            PackError::SchemaMismatch { path, expected, found } => PackError::SchemaMismatch {
                path: if path.is_empty() {
                    segment.to_string()
                } else if path.starts_with('[') {
                    format!("{segment}{path}")
                } else {
                    format!("{segment}.{path}")
                },
                expected,
                found,
            },
            other => other,
        }
    }
}

/// A growable byte buffer with a read cursor.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Buffer {
    bytes: Vec<u8>,
    cursor: usize,
    encoding: Encoding,
}

macro_rules! scalar_io {
    ($put:ident, $take:ident, $t:ty) => {
        pub fn $put(&mut self, v: $t) {
            match self.encoding {
                Encoding::Native => self.bytes.extend_from_slice(&v.to_ne_bytes()),
                Encoding::Portable => self.bytes.extend_from_slice(&v.to_be_bytes()),
            }
        }

        pub fn $take(&mut self) -> Result<$t, PackError> {
            const N: usize = std::mem::size_of::<$t>();
            let raw: [u8; N] = self.take_raw(N)?.try_into().expect("length checked");
            Ok(match self.encoding {
                Encoding::Native => <$t>::from_ne_bytes(raw),
                Encoding::Portable => <$t>::from_be_bytes(raw),
            })
        }
    };
}

impl Buffer {
    pub fn new(encoding: Encoding) -> Buffer {
        Buffer { bytes: Vec::new(), cursor: 0, encoding }
    }

    pub fn with_capacity(encoding: Encoding, capacity: usize) -> Buffer {
        Buffer { bytes: Vec::with_capacity(capacity), cursor: 0, encoding }
    }

    /// Wraps received bytes for unpacking; the cursor starts at zero.
    pub fn from_bytes(encoding: Encoding, bytes: Vec<u8>) -> Buffer {
        Buffer { bytes, cursor: 0, encoding }
    }

    pub fn encoding(&self) -> Encoding {
        self.encoding
    }

    /// The packed bytes, including any already read.
    pub fn data(&self) -> &[u8] {
        &self.bytes
    }

    pub fn size(&self) -> usize {
        self.bytes.len()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.cursor
    }

    /// Empties the buffer and rewinds the cursor; the encoding is kept.
    pub fn reset(&mut self) -> &mut Self {
        self.bytes.clear();
        self.cursor = 0;
        self
    }

    pub fn rewind(&mut self) -> &mut Self {
        self.cursor = 0;
        self
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    /// Replaces the contents wholesale, cursor at zero.
    pub fn replace(&mut self, bytes: Vec<u8>) -> Vec<u8> {
        self.cursor = 0;
        std::mem::replace(&mut self.bytes, bytes)
    }

    pub fn put_raw(&mut self, bytes: &[u8]) {
        self.bytes.extend_from_slice(bytes);
    }

    pub fn take_raw(&mut self, n: usize) -> Result<&[u8], PackError> {
        self.require(n)?;
        let start = self.cursor;
        self.cursor += n;
        Ok(&self.bytes[start..start + n])
    }

    fn require(&self, n: usize) -> Result<(), PackError> {
        if self.remaining() < n {
            Err(PackError::Truncated { needed: n, available: self.remaining() })
        } else {
            Ok(())
        }
    }

    scalar_io!(put_i32, take_i32, i32);
    scalar_io!(put_u32, take_u32, u32);
    scalar_io!(put_i64, take_i64, i64);
    scalar_io!(put_u64, take_u64, u64);
    scalar_io!(put_f32, take_f32, f32);
    scalar_io!(put_f64, take_f64, f64);

    pub fn put_u8(&mut self, v: u8) {
        match self.encoding {
            Encoding::Native => self.bytes.push(v),
            Encoding::Portable => self.put_u32(u32::from(v)),
        }
    }

    pub fn take_u8(&mut self) -> Result<u8, PackError> {
        match self.encoding {
            Encoding::Native => Ok(self.take_raw(1)?[0]),
            Encoding::Portable => {
                let v = self.take_u32()?;
                u8::try_from(v).map_err(|_| PackError::MalformedByte(v))
            }
        }
    }

    pub fn put_bool(&mut self, v: bool) {
        match self.encoding {
            Encoding::Native => self.bytes.push(u8::from(v)),
            Encoding::Portable => self.put_u32(u32::from(v)),
        }
    }

    pub fn take_bool(&mut self) -> Result<bool, PackError> {
        let v = match self.encoding {
            Encoding::Native => u32::from(self.take_raw(1)?[0]),
            Encoding::Portable => self.take_u32()?,
        };
        match v {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(PackError::MalformedBool(other)),
        }
    }

    /// Writes a string or sequence length prefix.
    pub fn put_len(&mut self, len: usize) -> Result<(), PackError> {
        if len > MAX_LENGTH {
            return Err(PackError::LengthOverflow(len));
        }
        self.put_u32(len as u32);
        Ok(())
    }

    pub fn take_len(&mut self) -> Result<usize, PackError> {
        let len = self.take_u32()? as usize;
        if len > MAX_LENGTH {
            // A length this large can never be backed by the remaining bytes.
            return Err(PackError::Truncated { needed: len, available: self.remaining() });
        }
        Ok(len)
    }

    pub fn put_str(&mut self, s: &str) -> Result<(), PackError> {
        self.put_len(s.len())?;
        self.bytes.extend_from_slice(s.as_bytes());
        if self.encoding == Encoding::Portable {
            let pad = padding(s.len());
            self.bytes.extend_from_slice(&[0u8; 3][..pad]);
        }
        Ok(())
    }

    pub fn take_string(&mut self) -> Result<String, PackError> {
        let len = self.take_len()?;
        let pad = match self.encoding {
            Encoding::Native => 0,
            Encoding::Portable => padding(len),
        };
        self.require(len + pad)?;
        let raw = self.take_raw(len)?.to_vec();
        if self.take_raw(pad)?.iter().any(|&b| b != 0) {
            return Err(PackError::MalformedPadding);
        }
        String::from_utf8(raw).map_err(|_| PackError::InvalidUtf8)
    }
}

fn padding(len: usize) -> usize {
    (4 - len % 4) % 4
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn portable_scalars_are_big_endian() {
        let mut b = Buffer::new(Encoding::Portable);
        b.put_i32(1);
        assert_eq!(b.data(), &[0, 0, 0, 1]);
        b.put_u8(0xab);
        b.put_bool(true);
        assert_eq!(&b.data()[4..], &[0, 0, 0, 0xab, 0, 0, 0, 1]);
        assert_eq!(b.take_i32(), Ok(1));
        assert_eq!(b.take_u8(), Ok(0xab));
        assert_eq!(b.take_bool(), Ok(true));
        assert_eq!(b.remaining(), 0);
    }

    #[test]
    fn native_uses_natural_widths() {
        let mut b = Buffer::new(Encoding::Native);
        b.put_u8(7);
        b.put_bool(false);
        b.put_i64(-2);
        assert_eq!(b.size(), 10);
        assert_eq!(&b.data()[2..], &(-2i64).to_ne_bytes());
        b.put_str("abc").unwrap();
        assert_eq!(b.size(), 17);
    }

    #[test]
    fn string_padding() {
        let mut b = Buffer::new(Encoding::Portable);
        b.put_str("ab").unwrap();
        assert_eq!(b.data(), &[0, 0, 0, 2, 0x61, 0x62, 0, 0]);
        assert_eq!(b.take_string().unwrap(), "ab");

        let mut bad = Buffer::from_bytes(Encoding::Portable, vec![0, 0, 0, 2, 0x61, 0x62, 0, 9]);
        assert_eq!(bad.take_string(), Err(PackError::MalformedPadding));
        let mut short = Buffer::from_bytes(Encoding::Portable, vec![0, 0, 0, 2, 0x61, 0x62]);
        assert_eq!(short.take_string(), Err(PackError::Truncated { needed: 4, available: 2 }));
    }

    #[test]
    fn truncation_reports_needed_and_available() {
        let mut b = Buffer::from_bytes(Encoding::Portable, vec![0, 1]);
        assert_eq!(b.take_i32(), Err(PackError::Truncated { needed: 4, available: 2 }));
        assert_eq!(b.cursor(), 0);
    }

    #[test]
    fn malformed_bool_and_byte() {
        let mut b = Buffer::from_bytes(Encoding::Portable, vec![0, 0, 0, 5]);
        assert_eq!(b.take_bool(), Err(PackError::MalformedBool(5)));
        let mut b = Buffer::from_bytes(Encoding::Portable, vec![0, 0, 1, 0]);
        assert_eq!(b.take_u8(), Err(PackError::MalformedByte(256)));
        let mut b = Buffer::from_bytes(Encoding::Native, vec![2]);
        assert_eq!(b.take_bool(), Err(PackError::MalformedBool(2)));
    }

    #[test]
    fn hostile_length_is_truncation() {
        let mut b = Buffer::from_bytes(Encoding::Portable, vec![0xff, 0xff, 0xff, 0xff]);
        assert!(matches!(b.take_string(), Err(PackError::Truncated { .. })));
    }

    #[test]
    fn reset_keeps_encoding() {
        let mut b = Buffer::new(Encoding::Portable);
        b.put_raw(&[1; 12]);
        assert_eq!(b.size(), 12);
        b.reset();
        assert_eq!((b.size(), b.cursor()), (0, 0));
        b.reset();
        assert_eq!((b.size(), b.cursor()), (0, 0));
        b.put_i32(3);
        assert_eq!(b.size(), 4);
        assert_eq!(b.encoding(), Encoding::Portable);
    }

    #[test]
    fn data_view() {
        let mut b = Buffer::new(Encoding::Portable);
        assert_eq!((b.data(), b.size()), (&[][..], 0));
        b.put_i32(1);
        assert_eq!((b.data(), b.size()), (&[0, 0, 0, 1][..], 4));
        b.reset();
        assert_eq!((b.data(), b.size()), (&[][..], 0));
    }
}
