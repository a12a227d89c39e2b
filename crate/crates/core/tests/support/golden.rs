//! Portable golden vectors from `tests/fixtures/portable.txt`.

use std::path::Path;

use packmp::pack::{pack, unpack, Prim};
use packmp::typedesc::FieldKind;
use packmp::{Buffer, DynValue, Encoding, TypeRegistry};

pub const TYPES: &str = "
record point { x: i32; y: f64; }
record labelled { name: string; at: point; tags: seq<bool>; }
variant shape { circle(f64); at(point); empty; }
";

pub struct Vector {
    pub name: String,
    pub kind: FieldKind,
    pub hex: String,
}

pub fn fixture_path() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/portable.txt")
}

pub fn load() -> Vec<Vector> {
    let text = std::fs::read_to_string(fixture_path()).expect("fixture file");
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            let cols: Vec<&str> = l.split(" | ").collect();
            assert_eq!(cols.len(), 4, "bad fixture line: {l}");
            Vector {
                name: cols[0].to_string(),
                kind: FieldKind::parse(cols[1]).expect("fixture type"),
                hex: cols[3].trim().to_string(),
            }
        })
        .collect()
}

fn point(x: i32, y: f64) -> DynValue {
    DynValue::rec("point", vec![x.into(), y.into()])
}

/// The value each fixture line encodes.
pub fn value(name: &str) -> Option<DynValue> {
    let seq = |v: Vec<DynValue>| DynValue::Seq(v);
    Some(match name {
        "i32_one" => 1i32.into(),
        "i32_negative" => (-2i32).into(),
        "u32_max" => u32::MAX.into(),
        "i64_negative" => (-1_234_567_890_123i64).into(),
        "u64_large" => ((1u64 << 40) + 5).into(),
        "f32_one_and_half" => 1.5f32.into(),
        "f64_pi" => std::f64::consts::PI.into(),
        "f64_negative_zero" => DynValue::Prim(Prim::F64(-0.0)),
        "bool_true" => true.into(),
        "bool_false" => false.into(),
        "u8_max" => 255u8.into(),
        "string_hello" => "hello".into(),
        "string_empty" => "".into(),
        "string_four" => "abcd".into(),
        "seq_i32" => seq(vec![1i32.into(), 2i32.into(), 3i32.into()]),
        "seq_u8" => seq(vec![1u8.into(), 2u8.into(), 3u8.into()]),
        "seq_empty" => seq(vec![]),
        "array_i32" => seq(vec![7i32.into(), 8i32.into(), 9i32.into()]),
        "array_string" => seq(vec!["a".into(), "bc".into()]),
        "record_point" => point(1, -1.0),
        "record_nested" => DynValue::rec("labelled", vec!["ab".into(), point(2, 0.5), seq(vec![true.into()])]),
        "variant_payload" => DynValue::var("shape", "circle", Some(2.0f64.into())),
        "variant_unit" => DynValue::var("shape", "empty", None),
        "variant_record" => DynValue::var("shape", "at", Some(point(3, 4.0))),
        _ => return None,
    })
}

fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Packs every vector and decodes every fixture; returns the number
/// checked or a description of each mismatch.
pub fn check_all() -> Result<usize, Vec<String>> {
    let reg = TypeRegistry::from_idl(TYPES).expect("golden types");
    let vectors = load();
    let mut failures = Vec::new();
    for v in &vectors {
        let Some(val) = value(&v.name) else {
            failures.push(format!("{}: no value defined", v.name));
            continue;
        };
        let mut buf = Buffer::new(Encoding::Portable);
        if let Err(e) = pack(&mut buf, &reg, &v.kind, &val) {
            failures.push(format!("{}: pack failed: {e}", v.name));
            continue;
        }
        let got = to_hex(buf.data());
        if got != v.hex {
            failures.push(format!("{}: packed {got}, fixture {}", v.name, v.hex));
        }
        match unpack(&mut buf, &reg, &v.kind) {
            Ok(back) if back == val && buf.remaining() == 0 => {}
            Ok(back) => failures.push(format!("{}: decoded {back}", v.name)),
            Err(e) => failures.push(format!("{}: unpack failed: {e}", v.name)),
        }
    }
    if failures.is_empty() {
        Ok(vectors.len())
    } else {
        Err(failures)
    }
}
