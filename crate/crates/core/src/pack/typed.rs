use super::{Buffer, Encoding, PackError};

/// Statically typed serialization, byte-compatible with the descriptor-driven
/// path for the equivalent [`FieldKind`](crate::typedesc::FieldKind).
///
/// `Vec<T>` encodes as `seq<T>`, `[T; N]` as `[T; N]`, tuples as records.
pub trait Pack: Sized {
    fn pack(&self, buf: &mut Buffer) -> Result<(), PackError>;

    fn unpack(buf: &mut Buffer) -> Result<Self, PackError>;

    /// Packs consecutive elements without a length prefix.
    fn pack_slice(items: &[Self], buf: &mut Buffer) -> Result<(), PackError> {
        items.iter().try_for_each(|v| v.pack(buf))
    }

    fn unpack_many(len: usize, buf: &mut Buffer) -> Result<Vec<Self>, PackError> {
        let mut out = Vec::with_capacity(len.min(buf.remaining()));
        for _ in 0..len {
            out.push(Self::unpack(buf)?);
        }
        Ok(out)
    }
}

macro_rules! scalar_pack {
    ($($t:ty => $put:ident, $take:ident);*) => {$(
        impl Pack for $t {
            fn pack(&self, buf: &mut Buffer) -> Result<(), PackError> {
                buf.$put(*self);
                Ok(())
            }

            fn unpack(buf: &mut Buffer) -> Result<Self, PackError> {
                buf.$take()
            }
        }
    )*};
}

scalar_pack! {
    i32 => put_i32, take_i32;
    u32 => put_u32, take_u32;
    i64 => put_i64, take_i64;
    u64 => put_u64, take_u64;
    f32 => put_f32, take_f32;
    f64 => put_f64, take_f64;
    bool => put_bool, take_bool
}

impl Pack for u8 {
    fn pack(&self, buf: &mut Buffer) -> Result<(), PackError> {
        buf.put_u8(*self);
        Ok(())
    }

    fn unpack(buf: &mut Buffer) -> Result<Self, PackError> {
        buf.take_u8()
    }

    fn pack_slice(items: &[u8], buf: &mut Buffer) -> Result<(), PackError> {
        match buf.encoding {
            Encoding::Native => buf.put_raw(items),
            Encoding::Portable => {
                buf.bytes.reserve(items.len() * 4);
                for &b in items {
                    buf.put_u32(u32::from(b));
                }
            }
        }
        Ok(())
    }

    fn unpack_many(len: usize, buf: &mut Buffer) -> Result<Vec<u8>, PackError> {
        match buf.encoding {
            Encoding::Native => Ok(buf.take_raw(len)?.to_vec()),
            Encoding::Portable => {
                let mark = buf.cursor;
                let mut out = Vec::with_capacity(len.min(buf.remaining() / 4));
                for _ in 0..len {
                    match buf.take_u8() {
                        Ok(b) => out.push(b),
                        Err(e) => {
                            buf.cursor = mark;
                            return Err(e);
                        }
                    }
                }
                Ok(out)
            }
        }
    }
}

impl Pack for String {
    fn pack(&self, buf: &mut Buffer) -> Result<(), PackError> {
        buf.put_str(self)
    }

    fn unpack(buf: &mut Buffer) -> Result<Self, PackError> {
        buf.take_string()
    }
}

impl<T: Pack> Pack for Vec<T> {
    fn pack(&self, buf: &mut Buffer) -> Result<(), PackError> {
        buf.put_len(self.len())?;
        T::pack_slice(self, buf)
    }

    fn unpack(buf: &mut Buffer) -> Result<Self, PackError> {
        let len = buf.take_len()?;
        if len > buf.remaining() {
            // every element kind this trait covers occupies at least one byte
            return Err(PackError::Truncated { needed: len, available: buf.remaining() });
        }
        T::unpack_many(len, buf)
    }
}

impl<T: Pack, const N: usize> Pack for [T; N] {
    fn pack(&self, buf: &mut Buffer) -> Result<(), PackError> {
        T::pack_slice(self, buf)
    }

    fn unpack(buf: &mut Buffer) -> Result<Self, PackError> {
        let items = T::unpack_many(N, buf)?;
        Ok(items.try_into().unwrap_or_else(|_| unreachable!("exactly N elements")))
    }
}

macro_rules! tuple_pack {
    ($($name:ident . $idx:tt),+) => {
        impl<$($name: Pack),+> Pack for ($($name,)+) {
            fn pack(&self, buf: &mut Buffer) -> Result<(), PackError> {
                $(self.$idx.pack(buf)?;)+
                Ok(())
            }

            fn unpack(buf: &mut Buffer) -> Result<Self, PackError> {
                Ok(($($name::unpack(buf)?,)+))
            }
        }
    };
}

tuple_pack!(A.0);
tuple_pack!(A.0, B.1);
tuple_pack!(A.0, B.1, C.2);
tuple_pack!(A.0, B.1, C.2, D.3);

impl Buffer {
    /// Appends a statically typed value.
    pub fn put<T: Pack>(&mut self, value: &T) -> Result<&mut Self, PackError> {
        value.pack(self)?;
        Ok(self)
    }

    /// Reads a statically typed value from the cursor.
    pub fn take<T: Pack>(&mut self) -> Result<T, PackError> {
        T::unpack(self)
    }
}
