use std::fmt;

use super::{Buffer, Encoding, PackError};
use crate::typedesc::{FieldKind, PrimTag, Shape, TypeRegistry};

/// A scalar payload.
#[derive(Clone, Copy, Debug)]
pub enum Prim {
    I32(i32),
    U32(u32),
    I64(i64),
    U64(u64),
    F32(f32),
    F64(f64),
    Bool(bool),
    U8(u8),
}

impl Prim {
    pub fn tag(&self) -> PrimTag {
        match self {
            Prim::I32(_) => PrimTag::I32,
            Prim::U32(_) => PrimTag::U32,
            Prim::I64(_) => PrimTag::I64,
            Prim::U64(_) => PrimTag::U64,
            Prim::F32(_) => PrimTag::F32,
            Prim::F64(_) => PrimTag::F64,
            Prim::Bool(_) => PrimTag::Bool,
            Prim::U8(_) => PrimTag::U8,
        }
    }
}

// Floats compare by bit pattern so that NaN payloads survive round-trip checks.
impl PartialEq for Prim {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Prim::I32(a), Prim::I32(b)) => a == b,
            (Prim::U32(a), Prim::U32(b)) => a == b,
            (Prim::I64(a), Prim::I64(b)) => a == b,
            (Prim::U64(a), Prim::U64(b)) => a == b,
            (Prim::F32(a), Prim::F32(b)) => a.to_bits() == b.to_bits(),
            (Prim::F64(a), Prim::F64(b)) => a.to_bits() == b.to_bits(),
            (Prim::Bool(a), Prim::Bool(b)) => a == b,
            (Prim::U8(a), Prim::U8(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Prim {}

/// A dynamically typed value shaped by a [`TypeDescriptor`](crate::typedesc::TypeDescriptor).
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DynValue {
    Prim(Prim),
    Str(String),
    /// Elements of a `seq<T>` or `[T; n]`.
    Seq(Vec<DynValue>),
    /// Record type name and field values in declaration order.
    Rec(String, Vec<DynValue>),
    /// Variant type name, active arm and its payload.
    Var(String, String, Option<Box<DynValue>>),
}

impl DynValue {
    pub fn rec(type_name: impl Into<String>, fields: Vec<DynValue>) -> DynValue {
        DynValue::Rec(type_name.into(), fields)
    }

    pub fn var(type_name: impl Into<String>, arm: impl Into<String>, payload: Option<DynValue>) -> DynValue {
        DynValue::Var(type_name.into(), arm.into(), payload.map(Box::new))
    }

    /// The kind a value announces by itself; sequences need an explicit kind.
    pub fn natural_kind(&self) -> Option<FieldKind> {
        match self {
            DynValue::Prim(p) => Some(FieldKind::Primitive(p.tag())),
            DynValue::Str(_) => Some(FieldKind::Primitive(PrimTag::String)),
            DynValue::Seq(_) => None,
            DynValue::Rec(n, _) | DynValue::Var(n, _, _) => Some(FieldKind::Named(n.clone())),
        }
    }

    fn describe(&self) -> String {
        match self {
            DynValue::Prim(p) => p.tag().to_string(),
            DynValue::Str(_) => "string".into(),
            DynValue::Seq(v) => format!("sequence of {}", v.len()),
            DynValue::Rec(n, _) => format!("record {n}"),
            DynValue::Var(n, a, _) => format!("variant {n}::{a}"),
        }
    }
}

impl fmt::Display for DynValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DynValue::Prim(p) => match p {
                Prim::I32(v) => write!(f, "{v}"),
                Prim::U32(v) => write!(f, "{v}"),
                Prim::I64(v) => write!(f, "{v}"),
                Prim::U64(v) => write!(f, "{v}"),
                Prim::F32(v) => write!(f, "{v:?}"),
                Prim::F64(v) => write!(f, "{v:?}"),
                Prim::Bool(v) => write!(f, "{v}"),
                Prim::U8(v) => write!(f, "{v}"),
            },
            DynValue::Str(s) => write!(f, "{s:?}"),
            DynValue::Seq(items) => {
                f.write_str("[")?;
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str("]")
            }
            DynValue::Rec(n, fields) => {
                write!(f, "{n} {{")?;
                for (i, v) in fields.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, " {v}")?;
                }
                f.write_str(" }")
            }
            DynValue::Var(n, arm, payload) => match payload {
                Some(p) => write!(f, "{n}::{arm}({p})"),
                None => write!(f, "{n}::{arm}"),
            },
        }
    }
}

macro_rules! prim_from {
    ($($t:ty => $v:ident),*) => {$(
        impl From<$t> for DynValue {
            fn from(x: $t) -> DynValue {
                DynValue::Prim(Prim::$v(x))
            }
        }
    )*};
}

prim_from!(i32 => I32, u32 => U32, i64 => I64, u64 => U64, f32 => F32, f64 => F64, bool => Bool, u8 => U8);

impl From<&str> for DynValue {
    fn from(s: &str) -> DynValue {
        DynValue::Str(s.to_string())
    }
}

impl From<String> for DynValue {
    fn from(s: String) -> DynValue {
        DynValue::Str(s)
    }
}

fn mismatch(expected: impl fmt::Display, found: &DynValue) -> PackError {
    PackError::SchemaMismatch {
        path: String::new(),
        expected: expected.to_string(),
        found: found.describe(),
    }
}

/// Appends `value`, checked against `kind`, to `buf`.
///
/// Nothing is written when the value does not conform.
pub fn pack(buf: &mut Buffer, registry: &TypeRegistry, kind: &FieldKind, value: &DynValue) -> Result<(), PackError> {
    let mark = buf.size();
    let res = pack_into(buf, registry, kind, value);
    if res.is_err() {
        buf.bytes.truncate(mark);
    }
    res
}

fn pack_into(buf: &mut Buffer, reg: &TypeRegistry, kind: &FieldKind, value: &DynValue) -> Result<(), PackError> {
    match (kind, value) {
        (FieldKind::Primitive(PrimTag::String), DynValue::Str(s)) => buf.put_str(s),
        (FieldKind::Primitive(tag), DynValue::Prim(p)) if *tag == p.tag() => {
            match *p {
                Prim::I32(v) => buf.put_i32(v),
                Prim::U32(v) => buf.put_u32(v),
                Prim::I64(v) => buf.put_i64(v),
                Prim::U64(v) => buf.put_u64(v),
                Prim::F32(v) => buf.put_f32(v),
                Prim::F64(v) => buf.put_f64(v),
                Prim::Bool(v) => buf.put_bool(v),
                Prim::U8(v) => buf.put_u8(v),
            }
            Ok(())
        }
        (FieldKind::Sequence(elem), DynValue::Seq(items)) => {
            buf.put_len(items.len())?;
            pack_elements(buf, reg, elem, items)
        }
        (FieldKind::FixedArray(elem, n), DynValue::Seq(items)) => {
            if items.len() != *n as usize {
                return Err(mismatch(format!("{n} elements"), value));
            }
            pack_elements(buf, reg, elem, items)
        }
        (FieldKind::Named(name), DynValue::Rec(vname, fields)) if name == vname => {
            let desc = reg.get(name).ok_or_else(|| PackError::UnknownType(name.clone()))?;
            let Shape::Record(layout) = &desc.shape else {
                return Err(mismatch(format!("variant {name}"), value));
            };
            if layout.len() != fields.len() {
                return Err(mismatch(format!("record {name} with {} fields", layout.len()), value));
            }
            for (fd, v) in layout.iter().zip(fields) {
                pack_into(buf, reg, &fd.kind, v).map_err(|e| e.within(&fd.name))?;
            }
            Ok(())
        }
        (FieldKind::Named(name), DynValue::Var(vname, arm, payload)) if name == vname => {
            let desc = reg.get(name).ok_or_else(|| PackError::UnknownType(name.clone()))?;
            let Shape::Variant(arms) = &desc.shape else {
                return Err(mismatch(format!("record {name}"), value));
            };
            let Some(index) = arms.iter().position(|a| &a.name == arm) else {
                return Err(mismatch(format!("an arm of {name}"), value));
            };
            buf.put_u32(index as u32);
            match (&arms[index].payload, payload) {
                (None, None) => Ok(()),
                (Some(k), Some(p)) => pack_into(buf, reg, k, p).map_err(|e| e.within(arm)),
                (None, Some(p)) => Err(mismatch("no payload", p).within(arm)),
                (Some(k), None) => Err(PackError::SchemaMismatch {
                    path: arm.clone(),
                    expected: k.to_string(),
                    found: "no payload".into(),
                }),
            }
        }
        (FieldKind::Named(name), _) if reg.get(name).is_none() => Err(PackError::UnknownType(name.clone())),
        _ => Err(mismatch(kind, value)),
    }
}

fn pack_elements(buf: &mut Buffer, reg: &TypeRegistry, elem: &FieldKind, items: &[DynValue]) -> Result<(), PackError> {
    // Byte sequences are the hot path; skip the generic dispatch for them.
    if let (FieldKind::Primitive(PrimTag::U8), Encoding::Native) = (elem, buf.encoding) {
        buf.bytes.reserve(items.len());
        for (i, v) in items.iter().enumerate() {
            match v {
                DynValue::Prim(Prim::U8(b)) => buf.bytes.push(*b),
                other => return Err(mismatch("u8", other).within(&format!("[{i}]"))),
            }
        }
        return Ok(());
    }
    for (i, v) in items.iter().enumerate() {
        pack_into(buf, reg, elem, v).map_err(|e| e.within(&format!("[{i}]")))?;
    }
    Ok(())
}

/// Reads one value of `kind` from the buffer's cursor.
///
/// On failure the cursor is left where it was.
pub fn unpack(buf: &mut Buffer, registry: &TypeRegistry, kind: &FieldKind) -> Result<DynValue, PackError> {
    let mark = buf.cursor;
    let res = unpack_from(buf, registry, kind);
    if res.is_err() {
        buf.cursor = mark;
    }
    res
}

fn unpack_from(buf: &mut Buffer, reg: &TypeRegistry, kind: &FieldKind) -> Result<DynValue, PackError> {
    Ok(match kind {
        FieldKind::Primitive(tag) => match tag {
            PrimTag::I32 => buf.take_i32()?.into(),
            PrimTag::U32 => buf.take_u32()?.into(),
            PrimTag::I64 => buf.take_i64()?.into(),
            PrimTag::U64 => buf.take_u64()?.into(),
            PrimTag::F32 => buf.take_f32()?.into(),
            PrimTag::F64 => buf.take_f64()?.into(),
            PrimTag::Bool => buf.take_bool()?.into(),
            PrimTag::U8 => buf.take_u8()?.into(),
            PrimTag::String => buf.take_string()?.into(),
        },
        FieldKind::Sequence(elem) => {
            let len = buf.take_len()?;
            let min = min_size(reg, elem, buf.encoding)?;
            let needed = len.saturating_mul(min);
            if needed > buf.remaining() {
                return Err(PackError::Truncated { needed, available: buf.remaining() });
            }
            DynValue::Seq(unpack_elements(buf, reg, elem, len)?)
        }
        FieldKind::FixedArray(elem, n) => DynValue::Seq(unpack_elements(buf, reg, elem, *n as usize)?),
        FieldKind::Named(name) => {
            let desc = reg.get(name).ok_or_else(|| PackError::UnknownType(name.clone()))?;
            match &desc.shape {
                Shape::Record(fields) => {
                    let mut values = Vec::with_capacity(fields.len());
                    for f in fields {
                        values.push(unpack_from(buf, reg, &f.kind)?);
                    }
                    DynValue::Rec(name.clone(), values)
                }
                Shape::Variant(arms) => {
                    let tag = buf.take_u32()?;
                    let arm = arms.get(tag as usize).ok_or(PackError::MalformedVariantTag(tag))?;
                    let payload = match &arm.payload {
                        Some(k) => Some(Box::new(unpack_from(buf, reg, k)?)),
                        None => None,
                    };
                    DynValue::Var(name.clone(), arm.name.clone(), payload)
                }
            }
        }
    })
}

fn unpack_elements(buf: &mut Buffer, reg: &TypeRegistry, elem: &FieldKind, len: usize) -> Result<Vec<DynValue>, PackError> {
    let mut items = Vec::with_capacity(len.min(buf.remaining().max(16)));
    for _ in 0..len {
        items.push(unpack_from(buf, reg, elem)?);
    }
    Ok(items)
}

/// Smallest possible encoding of `kind`, used to reject impossible lengths early.
fn min_size(reg: &TypeRegistry, kind: &FieldKind, enc: Encoding) -> Result<usize, PackError> {
    let word = |native: usize| match enc {
        Encoding::Native => native,
        Encoding::Portable => native.max(4),
    };
    Ok(match kind {
        FieldKind::Primitive(p) => match p {
            PrimTag::I32 | PrimTag::U32 | PrimTag::F32 | PrimTag::String => 4,
            PrimTag::I64 | PrimTag::U64 | PrimTag::F64 => 8,
            PrimTag::Bool | PrimTag::U8 => word(1),
        },
        FieldKind::Sequence(_) => 4,
        FieldKind::FixedArray(e, n) => min_size(reg, e, enc)?.saturating_mul(*n as usize),
        FieldKind::Named(name) => {
            let desc = reg.get(name).ok_or_else(|| PackError::UnknownType(name.clone()))?;
            match &desc.shape {
                Shape::Record(fields) => {
                    let mut total = 0usize;
                    for f in fields {
                        total = total.saturating_add(min_size(reg, &f.kind, enc)?);
                    }
                    total
                }
                Shape::Variant(_) => 4,
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::typedesc::TypeRegistry;

    fn reg() -> TypeRegistry {
        TypeRegistry::from_idl(
            "record foo { x: i32; y: f64; }
             record list { head: i32; tail: seq<list>; }
             variant opt { none; some(foo); }
             record empty { }",
        )
        .unwrap()
    }

    fn i32k() -> FieldKind {
        PrimTag::I32.into()
    }

    #[test]
    fn portable_i32_and_string() {
        let r = reg();
        let mut b = Buffer::new(Encoding::Portable);
        pack(&mut b, &r, &i32k(), &1i32.into()).unwrap();
        assert_eq!(b.data(), &[0, 0, 0, 1]);
        let mut b = Buffer::new(Encoding::Portable);
        pack(&mut b, &r, &PrimTag::String.into(), &"ab".into()).unwrap();
        assert_eq!(b.data(), &[0, 0, 0, 2, 0x61, 0x62, 0, 0]);
    }

    #[test]
    fn record_round_trip_both_encodings() {
        let r = reg();
        let v = DynValue::rec("foo", vec![1i32.into(), 2.0f64.into()]);
        for enc in [Encoding::Native, Encoding::Portable] {
            let mut b = Buffer::new(enc);
            pack(&mut b, &r, &FieldKind::named("foo"), &v).unwrap();
            assert_eq!(b.size(), 12);
            assert_eq!(unpack(&mut b, &r, &FieldKind::named("foo")).unwrap(), v);
            assert_eq!(b.remaining(), 0);
        }
    }

    #[test]
    fn recursive_list_round_trip() {
        let r = reg();
        let leaf = |h: i32| DynValue::rec("list", vec![h.into(), DynValue::Seq(vec![])]);
        let v = DynValue::rec("list", vec![0i32.into(), DynValue::Seq(vec![leaf(1), leaf(2)])]);
        let mut b = Buffer::new(Encoding::Portable);
        pack(&mut b, &r, &FieldKind::named("list"), &v).unwrap();
        assert_eq!(unpack(&mut b, &r, &FieldKind::named("list")).unwrap(), v);
    }

    #[test]
    fn mismatch_reports_path_and_writes_nothing() {
        let r = reg();
        let mut b = Buffer::new(Encoding::Portable);
        b.put_i32(9);
        let bad = DynValue::var("opt", "some", Some(DynValue::rec("foo", vec![1i32.into(), 2i32.into()])));
        let err = pack(&mut b, &r, &FieldKind::named("opt"), &bad).unwrap_err();
        assert_eq!(
            err,
            PackError::SchemaMismatch { path: "some.y".into(), expected: "f64".into(), found: "i32".into() }
        );
        assert_eq!(b.size(), 4);

        let seq = FieldKind::seq(i32k());
        let err = pack(&mut b, &r, &seq, &DynValue::Seq(vec![1i32.into(), 2u32.into()])).unwrap_err();
        assert!(matches!(err, PackError::SchemaMismatch { ref path, .. } if path == "[1]"));

        let err = pack(&mut b, &r, &FieldKind::named("nope"), &1i32.into()).unwrap_err();
        assert_eq!(err, PackError::UnknownType("nope".into()));

        let arr = FieldKind::array(i32k(), 3);
        assert!(pack(&mut b, &r, &arr, &DynValue::Seq(vec![1i32.into()])).is_err());
        let err = pack(&mut b, &r, &FieldKind::named("opt"), &DynValue::var("opt", "maybe", None)).unwrap_err();
        assert!(matches!(err, PackError::SchemaMismatch { .. }));
    }

    #[test]
    fn packing_nothing_leaves_buffer_empty() {
        let b = Buffer::new(Encoding::Portable);
        assert_eq!(b.size(), 0);
    }

    #[test]
    fn unpack_errors_leave_cursor() {
        let r = reg();
        let mut b = Buffer::from_bytes(Encoding::Portable, vec![0, 1]);
        assert_eq!(unpack(&mut b, &r, &i32k()), Err(PackError::Truncated { needed: 4, available: 2 }));
        let mut b = Buffer::from_bytes(Encoding::Portable, vec![0, 0, 0, 5]);
        assert_eq!(unpack(&mut b, &r, &PrimTag::Bool.into()), Err(PackError::MalformedBool(5)));
        let mut b = Buffer::from_bytes(Encoding::Portable, vec![0, 0, 0, 7]);
        assert_eq!(unpack(&mut b, &r, &FieldKind::named("opt")), Err(PackError::MalformedVariantTag(7)));
        assert_eq!(b.cursor(), 0);
    }

    #[test]
    fn hostile_sequence_length() {
        let r = reg();
        let mut b = Buffer::from_bytes(Encoding::Portable, vec![0, 0x10, 0, 0, 0, 0, 0, 1]);
        assert_eq!(
            unpack(&mut b, &r, &FieldKind::seq(i32k())),
            Err(PackError::Truncated { needed: 0x10_0000 * 4, available: 4 })
        );
        // zero-sized elements are allowed
        let mut b = Buffer::from_bytes(Encoding::Native, 3u32.to_ne_bytes().to_vec());
        let v = unpack(&mut b, &r, &FieldKind::seq(FieldKind::named("empty"))).unwrap();
        assert_eq!(v, DynValue::Seq(vec![DynValue::rec("empty", vec![]); 3]));
    }

    #[test]
    fn nan_compares_by_bits() {
        let a: DynValue = f64::NAN.into();
        assert_eq!(a, f64::NAN.into());
        assert_ne!(DynValue::from(0.0f64), DynValue::from(-0.0f64));
    }
}
