//! Random registries with conforming values, nested at most `MAX_DEPTH` deep.

use packmp::pack::Prim;
use packmp::typedesc::{FieldKind, PrimTag, Shape, TypeDescriptor};
use packmp::{DynValue, TypeRegistry};
use rand::seq::SliceRandom;
use rand::Rng;

pub const MAX_DEPTH: usize = 5;

pub struct Case {
    pub registry: TypeRegistry,
    pub kind: FieldKind,
    pub value: DynValue,
}

struct Gen {
    types: Vec<TypeDescriptor>,
    /// Smallest nesting a value of each type can have.
    min_depth: Vec<usize>,
}

impl Gen {
    fn index(&self, name: &str) -> usize {
        name[1..].parse().unwrap()
    }

    fn min_depth(&self, kind: &FieldKind) -> usize {
        match kind {
            FieldKind::Primitive(_) => 0,
            FieldKind::Sequence(_) => 1,
            FieldKind::FixedArray(e, n) => 1 + if *n > 0 { self.min_depth(e) } else { 0 },
            FieldKind::Named(n) => self.min_depth[self.index(n)],
        }
    }
}

fn random_prim_tag<R: Rng>(rng: &mut R) -> PrimTag {
    *PrimTag::ALL.choose(rng).unwrap()
}

/// A field kind for type `owner` among `ntypes`; direct references only
/// point at later (already generated) types, sequences may point anywhere.
fn random_kind<R: Rng>(rng: &mut R, g: &Gen, owner: usize, ntypes: usize, wrap: usize) -> FieldKind {
    let roll = rng.gen_range(0..10);
    if roll < 4 || (roll >= 8 && owner + 1 >= ntypes) {
        return FieldKind::Primitive(random_prim_tag(rng));
    }
    if roll < 6 && wrap < 2 {
        let elem = if rng.gen_bool(0.4) {
            FieldKind::named(format!("t{}", rng.gen_range(0..ntypes)))
        } else {
            random_kind(rng, g, owner, ntypes, wrap + 1)
        };
        return FieldKind::seq(elem);
    }
    if roll < 8 && wrap < 2 {
        let elem = random_kind(rng, g, owner, ntypes, wrap + 1);
        let k = FieldKind::array(elem, rng.gen_range(1..4));
        if g.min_depth(&k) < MAX_DEPTH {
            return k;
        }
        return FieldKind::Primitive(random_prim_tag(rng));
    }
    if owner + 1 < ntypes {
        let target = rng.gen_range(owner + 1..ntypes);
        let k = FieldKind::named(format!("t{target}"));
        if g.min_depth(&k) < MAX_DEPTH {
            return k;
        }
    }
    FieldKind::Primitive(random_prim_tag(rng))
}

pub fn random_registry<R: Rng>(rng: &mut R) -> (TypeRegistry, Vec<usize>) {
    let ntypes = rng.gen_range(1..=5);
    let mut g = Gen { types: Vec::new(), min_depth: vec![0; ntypes] };
    let mut made: Vec<Option<TypeDescriptor>> = vec![None; ntypes];
    for i in (0..ntypes).rev() {
        g.types = made.iter().flatten().cloned().collect();
        let name = format!("t{i}");
        let d = if rng.gen_bool(0.7) {
            let n = rng.gen_range(0..5);
            let fields: Vec<_> = (0..n).map(|_| random_kind(rng, &g, i, ntypes, 0)).collect();
            let depth = 1 + fields.iter().map(|k| g.min_depth(k)).max().unwrap_or(0);
            g.min_depth[i] = depth;
            let mut d = TypeDescriptor::record(name, Vec::<(&'static str, FieldKind)>::new());
            if let Shape::Record(fs) = &mut d.shape {
                for (j, k) in fields.into_iter().enumerate() {
                    fs.push(packmp::typedesc::FieldDescriptor { name: format!("f{j}"), kind: k });
                }
            }
            d
        } else {
            let n = rng.gen_range(1..5);
            let mut arms = Vec::new();
            for j in 0..n {
                let payload = if rng.gen_bool(0.3) { None } else { Some(random_kind(rng, &g, i, ntypes, 0)) };
                arms.push(packmp::typedesc::ArmDescriptor { name: format!("a{j}"), payload });
            }
            let depth = 1 + arms.iter().map(|a| a.payload.as_ref().map_or(0, |k| g.min_depth(k))).min().unwrap();
            g.min_depth[i] = depth;
            TypeDescriptor { name, shape: Shape::Variant(arms) }
        };
        made[i] = Some(d);
    }
    let mut reg = TypeRegistry::new();
    for d in made.into_iter().flatten() {
        reg.register(d).unwrap();
    }
    (reg, g.min_depth)
}

fn random_prim<R: Rng>(rng: &mut R, tag: PrimTag) -> DynValue {
    match tag {
        PrimTag::I32 => rng.gen::<i32>().into(),
        PrimTag::U32 => rng.gen::<u32>().into(),
        PrimTag::I64 => rng.gen::<i64>().into(),
        PrimTag::U64 => rng.gen::<u64>().into(),
        PrimTag::F32 => DynValue::Prim(Prim::F32(f32::from_bits(rng.gen()))),
        PrimTag::F64 => DynValue::Prim(Prim::F64(f64::from_bits(rng.gen()))),
        PrimTag::Bool => rng.gen::<bool>().into(),
        PrimTag::U8 => rng.gen::<u8>().into(),
        PrimTag::String => {
            let n = rng.gen_range(0..9);
            (0..n).map(|_| rng.gen::<char>()).collect::<String>().into()
        }
    }
}

pub struct ValueGen<'a> {
    pub registry: &'a TypeRegistry,
    pub min_depth: &'a [usize],
}

impl ValueGen<'_> {
    fn min_depth(&self, kind: &FieldKind) -> usize {
        match kind {
            FieldKind::Primitive(_) => 0,
            FieldKind::Sequence(_) => 1,
            FieldKind::FixedArray(e, n) => 1 + if *n > 0 { self.min_depth(e) } else { 0 },
            FieldKind::Named(n) => self.min_depth[n[1..].parse::<usize>().unwrap()],
        }
    }

    /// A value of `kind` nested at most `budget` deep.
    pub fn value<R: Rng>(&self, rng: &mut R, kind: &FieldKind, budget: usize) -> DynValue {
        match kind {
            FieldKind::Primitive(t) => random_prim(rng, *t),
            FieldKind::Sequence(e) => {
                let n = if budget >= 1 && self.min_depth(e) < budget { rng.gen_range(0..4) } else { 0 };
                DynValue::Seq((0..n).map(|_| self.value(rng, e, budget - 1)).collect())
            }
            FieldKind::FixedArray(e, n) => DynValue::Seq((0..*n).map(|_| self.value(rng, e, budget - 1)).collect()),
            FieldKind::Named(name) => {
                let d = self.registry.get(name).unwrap();
                match &d.shape {
                    Shape::Record(fs) => {
                        DynValue::rec(name.clone(), fs.iter().map(|f| self.value(rng, &f.kind, budget - 1)).collect())
                    }
                    Shape::Variant(arms) => {
                        let fits: Vec<_> = arms
                            .iter()
                            .filter(|a| a.payload.as_ref().map_or(0, |k| self.min_depth(k)) < budget)
                            .collect();
                        let arm = fits.choose(rng).unwrap();
                        let payload = arm.payload.as_ref().map(|k| self.value(rng, k, budget - 1));
                        DynValue::var(name.clone(), arm.name.clone(), payload)
                    }
                }
            }
        }
    }
}

/// Nesting depth of a value: scalars are 0, each container adds one.
pub fn depth(v: &DynValue) -> usize {
    match v {
        DynValue::Prim(_) | DynValue::Str(_) => 0,
        DynValue::Seq(items) | DynValue::Rec(_, items) => 1 + items.iter().map(depth).max().unwrap_or(0),
        DynValue::Var(_, _, p) => 1 + p.as_deref().map_or(0, depth),
    }
}

pub fn random_case<R: Rng>(rng: &mut R) -> Case {
    let (registry, min_depth) = random_registry(rng);
    let kind = if rng.gen_bool(0.8) {
        FieldKind::named("t0")
    } else {
        FieldKind::seq(FieldKind::named(format!("t{}", rng.gen_range(0..registry.len()))))
    };
    let value = ValueGen { registry: &registry, min_depth: &min_depth }.value(rng, &kind, MAX_DEPTH);
    Case { registry, kind, value }
}
