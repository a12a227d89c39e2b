//! The descriptor listing printed by `packrun idlc`.

use std::fmt::Write as _;

use packmp::typedesc::{parse_idl, Shape, TypeDescriptor};
use packmp::TypeRegistry;

/// One block per type, in source order, separated by blank lines.
pub fn listing(descriptors: &[TypeDescriptor]) -> String {
    let mut out = String::new();
    for (i, d) in descriptors.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        match &d.shape {
            Shape::Record(fields) => {
                let _ = writeln!(out, "record {} ({} fields)", d.name, fields.len());
                for (j, f) in fields.iter().enumerate() {
                    let _ = writeln!(out, "  {j} {}: {}", f.name, f.kind);
                }
            }
            Shape::Variant(arms) => {
                let _ = writeln!(out, "variant {} ({} arms)", d.name, arms.len());
                for (j, a) in arms.iter().enumerate() {
                    match &a.payload {
                        Some(k) => writeln!(out, "  {j} {}({k})", a.name),
                        None => writeln!(out, "  {j} {}", a.name),
                    }
                    .expect("writing to a string");
                }
            }
        }
    }
    out
}

/// Parses and validates `source`; diagnostics are prefixed with `origin`.
pub fn compile(origin: &str, source: &str) -> Result<String, Vec<String>> {
    let descriptors = parse_idl(source).map_err(|e| vec![format!("{origin}:{e}")])?;
    let mut registry = TypeRegistry::new();
    for d in &descriptors {
        registry.register(d.clone()).map_err(|e| vec![format!("{origin}: {e}")])?;
    }
    registry
        .validate()
        .map_err(|errors| errors.iter().map(|e| format!("{origin}: {e}")).collect::<Vec<_>>())?;
    Ok(listing(&descriptors))
}
