//! Type descriptors parsed from a small interface definition language.
//!
//! A descriptor lists the members of a compound type in declaration order;
//! the [`pack`](crate::pack) module walks descriptors to serialize values of
//! any registered type.
//!
//! ```text
//! // comments run to end of line
//! record point { x: f64; y: f64; }
//! record path  { name: string; points: seq<point>; bbox: [f64; 4]; }
//! variant shape { empty; circle(f64); poly(seq<point>); }
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

/// Maximum nesting depth of `seq<...>` / `[...; n]` kinds accepted by the parser.
pub const MAX_NESTING: usize = 64;

/// Scalar types understood by the IDL.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PrimTag {
    I32,
    U32,
    I64,
    U64,
    F32,
    F64,
    Bool,
    U8,
    String,
}

impl PrimTag {
    pub const ALL: [PrimTag; 9] = [
        PrimTag::I32,
        PrimTag::U32,
        PrimTag::I64,
        PrimTag::U64,
        PrimTag::F32,
        PrimTag::F64,
        PrimTag::Bool,
        PrimTag::U8,
        PrimTag::String,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PrimTag::I32 => "i32",
            PrimTag::U32 => "u32",
            PrimTag::I64 => "i64",
            PrimTag::U64 => "u64",
            PrimTag::F32 => "f32",
            PrimTag::F64 => "f64",
            PrimTag::Bool => "bool",
            PrimTag::U8 => "u8",
            PrimTag::String => "string",
        }
    }

    pub fn from_name(name: &str) -> Option<PrimTag> {
        PrimTag::ALL.into_iter().find(|p| p.name() == name)
    }
}

impl fmt::Display for PrimTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The kind of a field or variant payload.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum FieldKind {
    Primitive(PrimTag),
    /// Dynamically sized; the only route through which a type may refer to itself.
    Sequence(Box<FieldKind>),
    FixedArray(Box<FieldKind>, u32),
    Named(String),
}

impl FieldKind {
    pub fn seq(element: FieldKind) -> FieldKind {
        FieldKind::Sequence(Box::new(element))
    }

    pub fn array(element: FieldKind, length: u32) -> FieldKind {
        FieldKind::FixedArray(Box::new(element), length)
    }

    pub fn named(name: impl Into<String>) -> FieldKind {
        FieldKind::Named(name.into())
    }

    /// Parses a standalone kind expression such as `seq<[i32; 3]>`.
    pub fn parse(source: &str) -> Result<FieldKind, IdlError> {
        let mut p = Parser::new(source)?;
        let kind = p.kind(0)?;
        p.expect_eof()?;
        Ok(kind)
    }
}

impl From<PrimTag> for FieldKind {
    fn from(tag: PrimTag) -> Self {
        FieldKind::Primitive(tag)
    }
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldKind::Primitive(p) => write!(f, "{p}"),
            FieldKind::Sequence(e) => write!(f, "seq<{e}>"),
            FieldKind::FixedArray(e, n) => write!(f, "[{e}; {n}]"),
            FieldKind::Named(n) => f.write_str(n),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldDescriptor {
    pub name: String,
    pub kind: FieldKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArmDescriptor {
    pub name: String,
    pub payload: Option<FieldKind>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Shape {
    Record(Vec<FieldDescriptor>),
    Variant(Vec<ArmDescriptor>),
}

/// Ordered member layout of a named compound type.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TypeDescriptor {
    pub name: String,
    pub shape: Shape,
}

impl TypeDescriptor {
    pub fn record<N, F>(name: N, fields: F) -> TypeDescriptor
    where
        N: Into<String>,
        F: IntoIterator<Item = (&'static str, FieldKind)>,
    {
        TypeDescriptor {
            name: name.into(),
            shape: Shape::Record(
                fields
                    .into_iter()
                    .map(|(n, kind)| FieldDescriptor { name: n.to_string(), kind })
                    .collect(),
            ),
        }
    }

    pub fn variant<N, A>(name: N, arms: A) -> TypeDescriptor
    where
        N: Into<String>,
        A: IntoIterator<Item = (&'static str, Option<FieldKind>)>,
    {
        TypeDescriptor {
            name: name.into(),
            shape: Shape::Variant(
                arms.into_iter()
                    .map(|(n, payload)| ArmDescriptor { name: n.to_string(), payload })
                    .collect(),
            ),
        }
    }

    /// Position of a variant arm, which is also its tag on the wire.
    pub fn arm_index(&self, arm: &str) -> Option<usize> {
        match &self.shape {
            Shape::Variant(arms) => arms.iter().position(|a| a.name == arm),
            Shape::Record(_) => None,
        }
    }

    /// Every kind mentioned by the descriptor, in member order.
    fn kinds(&self) -> Box<dyn Iterator<Item = &FieldKind> + '_> {
        match &self.shape {
            Shape::Record(fields) => Box::new(fields.iter().map(|f| &f.kind)),
            Shape::Variant(arms) => Box::new(arms.iter().filter_map(|a| a.payload.as_ref())),
        }
    }
}

/// Prints the descriptor back as IDL source.
impl fmt::Display for TypeDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.shape {
            Shape::Record(fields) => {
                writeln!(f, "record {} {{", self.name)?;
                for field in fields {
                    writeln!(f, "    {}: {};", field.name, field.kind)?;
                }
                write!(f, "}}")
            }
            Shape::Variant(arms) => {
                writeln!(f, "variant {} {{", self.name)?;
                for arm in arms {
                    match &arm.payload {
                        Some(kind) => writeln!(f, "    {}({kind});", arm.name)?,
                        None => writeln!(f, "    {};", arm.name)?,
                    }
                }
                write!(f, "}}")
            }
        }
    }
}

/// Renders a list of descriptors as an IDL document that parses back to the same list.
pub fn to_idl(descriptors: &[TypeDescriptor]) -> String {
    let mut out = String::new();
    for d in descriptors {
        out.push_str(&d.to_string());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdlError {
    #[error("{line}:{column}: syntax error: expected {expected}, found {found}")]
    Syntax {
        line: usize,
        column: usize,
        expected: String,
        found: String,
    },
    #[error("duplicate field `{field}` in type `{type_name}`")]
    DuplicateField { type_name: String, field: String },
    #[error("duplicate type `{0}`")]
    DuplicateType(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("unresolved type `{name}` referenced from `{from}`")]
    UnresolvedType { name: String, from: String },
    #[error("illegal recursion without a sequence: {}", .0.join(" -> "))]
    IllegalRecursion(Vec<String>),
    #[error("fixed array of length 0 in `{type_name}`")]
    EmptyArray { type_name: String },
}

// ---------------------------------------------------------------------------
// Lexer

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(String),
    Punct(char),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Int(s) => write!(f, "integer `{s}`"),
            Tok::Punct(c) => write!(f, "`{c}`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Clone, Debug)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(source: &str) -> Result<Vec<Spanned>, IdlError> {
    let mut out = Vec::new();
    let mut chars = source.chars().peekable();
    let (mut line, mut column) = (1usize, 1usize);

    while let Some(&c) = chars.peek() {
        let (start_line, start_col) = (line, column);
        let mut bump = |chars: &mut std::iter::Peekable<std::str::Chars>| {
            let c = chars.next();
            if c == Some('\n') {
                line += 1;
                column = 1;
            } else {
                column += 1;
            }
            c
        };
        if c.is_whitespace() {
            bump(&mut chars);
        } else if c == '/' {
            bump(&mut chars);
            if chars.peek() == Some(&'/') {
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    bump(&mut chars);
                }
            } else {
                return Err(IdlError::Syntax {
                    line: start_line,
                    column: start_col,
                    expected: "`//` comment".into(),
                    found: "`/`".into(),
                });
            }
        } else if c.is_ascii_alphabetic() || c == '_' {
            let mut s = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_ascii_alphanumeric() || c == '_' {
                    s.push(c);
                    bump(&mut chars);
                } else {
                    break;
                }
            }
            out.push(Spanned { tok: Tok::Ident(s), line: start_line, column: start_col });
        } else if c.is_ascii_digit() {
            let mut s = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_ascii_digit() {
                    s.push(c);
                    bump(&mut chars);
                } else {
                    break;
                }
            }
            out.push(Spanned { tok: Tok::Int(s), line: start_line, column: start_col });
        } else if "{}:;<>[]()".contains(c) {
            bump(&mut chars);
            out.push(Spanned { tok: Tok::Punct(c), line: start_line, column: start_col });
        } else {
            return Err(IdlError::Syntax {
                line: start_line,
                column: start_col,
                expected: "a token".into(),
                found: format!("`{c}`"),
            });
        }
    }
    out.push(Spanned { tok: Tok::Eof, line, column });
    Ok(out)
}

// ---------------------------------------------------------------------------
// Parser

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn new(source: &str) -> Result<Parser, IdlError> {
        Ok(Parser { toks: lex(source)?, pos: 0 })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn error(&self, expected: &str) -> IdlError {
        let t = &self.toks[self.pos];
        IdlError::Syntax {
            line: t.line,
            column: t.column,
            expected: expected.to_string(),
            found: t.tok.to_string(),
        }
    }

    fn advance(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if t != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn punct(&mut self, c: char) -> Result<(), IdlError> {
        if *self.peek() == Tok::Punct(c) {
            self.advance();
            Ok(())
        } else {
            Err(self.error(&format!("`{c}`")))
        }
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if *self.peek() == Tok::Punct(c) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, IdlError> {
        match self.peek() {
            Tok::Ident(s) => {
                let s = s.clone();
                self.advance();
                Ok(s)
            }
            _ => Err(self.error(what)),
        }
    }

    fn expect_eof(&self) -> Result<(), IdlError> {
        if *self.peek() == Tok::Eof {
            Ok(())
        } else {
            Err(self.error("end of input"))
        }
    }

    fn file(&mut self) -> Result<Vec<TypeDescriptor>, IdlError> {
        let mut out: Vec<TypeDescriptor> = Vec::new();
        let mut seen = BTreeSet::new();
        while *self.peek() != Tok::Eof {
            let d = match self.peek() {
                Tok::Ident(k) if k == "record" => self.record()?,
                Tok::Ident(k) if k == "variant" => self.variant()?,
                _ => return Err(self.error("`record` or `variant`")),
            };
            if !seen.insert(d.name.clone()) {
                return Err(IdlError::DuplicateType(d.name));
            }
            out.push(d);
        }
        Ok(out)
    }

    fn record(&mut self) -> Result<TypeDescriptor, IdlError> {
        self.advance();
        let name = self.ident("type name")?;
        self.punct('{')?;
        let mut fields: Vec<FieldDescriptor> = Vec::new();
        while !self.eat_punct('}') {
            let field = self.ident("field name or `}`")?;
            self.punct(':')?;
            let kind = self.kind(0)?;
            self.punct(';')?;
            if fields.iter().any(|f| f.name == field) {
                return Err(IdlError::DuplicateField { type_name: name, field });
            }
            fields.push(FieldDescriptor { name: field, kind });
        }
        Ok(TypeDescriptor { name, shape: Shape::Record(fields) })
    }

    fn variant(&mut self) -> Result<TypeDescriptor, IdlError> {
        self.advance();
        let name = self.ident("type name")?;
        self.punct('{')?;
        let mut arms: Vec<ArmDescriptor> = Vec::new();
        loop {
            let arm = self.ident(if arms.is_empty() { "arm name" } else { "arm name or `}`" })?;
            let payload = if self.eat_punct('(') {
                let k = self.kind(0)?;
                self.punct(')')?;
                Some(k)
            } else {
                None
            };
            self.punct(';')?;
            if arms.iter().any(|a| a.name == arm) {
                return Err(IdlError::DuplicateField { type_name: name, field: arm });
            }
            arms.push(ArmDescriptor { name: arm, payload });
            if self.eat_punct('}') {
                break;
            }
        }
        Ok(TypeDescriptor { name, shape: Shape::Variant(arms) })
    }

    fn kind(&mut self, depth: usize) -> Result<FieldKind, IdlError> {
        if depth >= MAX_NESTING {
            return Err(self.error(&format!("kind nested at most {MAX_NESTING} deep")));
        }
        match self.peek().clone() {
            Tok::Punct('[') => {
                self.advance();
                let element = self.kind(depth + 1)?;
                self.punct(';')?;
                let length = match self.peek() {
                    Tok::Int(s) => match s.parse::<u32>() {
                        Ok(n) if n >= 1 => n,
                        _ => return Err(self.error("array length in 1..=4294967295")),
                    },
                    _ => return Err(self.error("array length")),
                };
                self.advance();
                self.punct(']')?;
                Ok(FieldKind::array(element, length))
            }
            Tok::Ident(id) if id == "seq" => {
                self.advance();
                self.punct('<')?;
                let element = self.kind(depth + 1)?;
                self.punct('>')?;
                Ok(FieldKind::seq(element))
            }
            Tok::Ident(id) => {
                self.advance();
                Ok(match PrimTag::from_name(&id) {
                    Some(p) => FieldKind::Primitive(p),
                    None => FieldKind::Named(id),
                })
            }
            _ => Err(self.error("a kind")),
        }
    }
}

/// Parses IDL source into descriptors, in declaration order.
pub fn parse_idl(source: &str) -> Result<Vec<TypeDescriptor>, IdlError> {
    Parser::new(source)?.file()
}

/// Whether `s` is a lexically valid identifier.
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

// ---------------------------------------------------------------------------
// Registry

/// Descriptors by name. Built once, then shared read-only.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TypeRegistry {
    entries: BTreeMap<String, TypeDescriptor>,
}

impl TypeRegistry {
    pub fn new() -> TypeRegistry {
        TypeRegistry::default()
    }

    /// Parses, registers and validates every type in `source`.
    pub fn from_idl(source: &str) -> Result<TypeRegistry, crate::Error> {
        let mut reg = TypeRegistry::new();
        for d in parse_idl(source)? {
            reg.register(d)?;
        }
        reg.validate().map_err(crate::Error::Validation)?;
        Ok(reg)
    }

    pub fn register(&mut self, descriptor: TypeDescriptor) -> Result<&mut Self, IdlError> {
        if self.entries.contains_key(&descriptor.name) {
            return Err(IdlError::DuplicateType(descriptor.name));
        }
        self.entries.insert(descriptor.name.clone(), descriptor);
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Option<&TypeDescriptor> {
        self.entries.get(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TypeDescriptor> {
        self.entries.values()
    }

    /// Checks that every named reference resolves and that any recursion
    /// passes through a sequence.
    pub fn validate(&self) -> Result<(), Vec<ValidationError>> {
        let mut errors = Vec::new();

        let mut direct: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for d in self.entries.values() {
            let edges = direct.entry(d.name.as_str()).or_default();
            for kind in d.kinds() {
                if has_empty_array(kind) {
                    errors.push(ValidationError::EmptyArray { type_name: d.name.clone() });
                }
                let mut refs = Vec::new();
                collect_refs(kind, false, &mut refs);
                for (name, through_seq) in refs {
                    if !self.entries.contains_key(name) {
                        errors.push(ValidationError::UnresolvedType {
                            name: name.to_string(),
                            from: d.name.clone(),
                        });
                    } else if !through_seq {
                        edges.insert(name);
                    }
                }
            }
        }
        errors.dedup();

        // Depth-first search for cycles over non-sequence edges.
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Active,
            Done,
        }
        let mut marks: BTreeMap<&str, Mark> = direct.keys().map(|k| (*k, Mark::New)).collect();
        let names: Vec<&str> = direct.keys().copied().collect();
        for root in names {
            if marks[root] != Mark::New {
                continue;
            }
            let mut path: Vec<&str> = vec![root];
            let mut stack: Vec<std::collections::btree_set::Iter<&str>> = vec![direct[root].iter()];
            marks.insert(root, Mark::Active);
            while let Some(it) = stack.last_mut() {
                match it.next() {
                    Some(&next) => match marks[next] {
                        Mark::New => {
                            marks.insert(next, Mark::Active);
                            path.push(next);
                            stack.push(direct[next].iter());
                        }
                        Mark::Active => {
                            let start = path.iter().position(|p| *p == next).unwrap_or(0);
                            let mut cycle: Vec<String> =
                                path[start..].iter().map(|s| s.to_string()).collect();
                            cycle.push(next.to_string());
                            errors.push(ValidationError::IllegalRecursion(cycle));
                        }
                        Mark::Done => {}
                    },
                    None => {
                        stack.pop();
                        if let Some(done) = path.pop() {
                            marks.insert(done, Mark::Done);
                        }
                    }
                }
            }
        }

        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }
}

fn collect_refs<'a>(kind: &'a FieldKind, through_seq: bool, out: &mut Vec<(&'a str, bool)>) {
    match kind {
        FieldKind::Primitive(_) => {}
        FieldKind::Sequence(e) => collect_refs(e, true, out),
        FieldKind::FixedArray(e, _) => collect_refs(e, through_seq, out),
        FieldKind::Named(n) => out.push((n.as_str(), through_seq)),
    }
}

fn has_empty_array(kind: &FieldKind) -> bool {
    match kind {
        FieldKind::Primitive(_) | FieldKind::Named(_) => false,
        FieldKind::Sequence(e) => has_empty_array(e),
        FieldKind::FixedArray(e, n) => *n == 0 || has_empty_array(e),
    }
}
