//! Type trees: the schema every piece of data carries with it.
//!
//! A [`TypeNode`] is one of six shapes (numeric matrix, byte string,
//! struct/union, array, reference to a named type, or `any`). Named types
//! live in a [`TypeEnv`] together with the root type of a unit. Nodes are
//! immutable and shared through [`Arc`], so data objects can point at their
//! type without copying it.

use std::collections::{HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::sync::Arc;

use indexmap::IndexMap;

use crate::error::{Error, Pos, Result};

/// Base numeric kinds. `F16` is a 16-byte IEEE binary128 value; it is carried
/// as raw bytes and converted to `f64` only on request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NumKind {
    I1,
    U1,
    I2,
    U2,
    I4,
    U4,
    I8,
    U8,
    F4,
    F8,
    F16,
}

impl NumKind {
    pub const ALL: [NumKind; 11] = [
        NumKind::I1,
        NumKind::U1,
        NumKind::I2,
        NumKind::U2,
        NumKind::I4,
        NumKind::U4,
        NumKind::I8,
        NumKind::U8,
        NumKind::F4,
        NumKind::F8,
        NumKind::F16,
    ];

    /// Width of one cell in bytes.
    pub fn width(self) -> usize {
        match self {
            NumKind::I1 | NumKind::U1 => 1,
            NumKind::I2 | NumKind::U2 => 2,
            NumKind::I4 | NumKind::U4 | NumKind::F4 => 4,
            NumKind::I8 | NumKind::U8 | NumKind::F8 => 8,
            NumKind::F16 => 16,
        }
    }

    pub fn is_float(self) -> bool {
        matches!(self, NumKind::F4 | NumKind::F8 | NumKind::F16)
    }

    /// Signedness; `None` for floating-point kinds.
    pub fn is_signed(self) -> Option<bool> {
        match self {
            NumKind::I1 | NumKind::I2 | NumKind::I4 | NumKind::I8 => Some(true),
            NumKind::U1 | NumKind::U2 | NumKind::U4 | NumKind::U8 => Some(false),
            _ => None,
        }
    }

    pub fn signed_int(width: usize) -> Option<NumKind> {
        Some(match width {
            1 => NumKind::I1,
            2 => NumKind::I2,
            4 => NumKind::I4,
            8 => NumKind::I8,
            _ => return None,
        })
    }

    pub fn unsigned_int(width: usize) -> Option<NumKind> {
        Some(match width {
            1 => NumKind::U1,
            2 => NumKind::U2,
            4 => NumKind::U4,
            8 => NumKind::U8,
            _ => return None,
        })
    }

    pub fn float(width: usize) -> Option<NumKind> {
        Some(match width {
            4 => NumKind::F4,
            8 => NumKind::F8,
            16 => NumKind::F16,
            _ => return None,
        })
    }

    /// Inclusive integer range representable by this kind (`None` for floats).
    pub fn int_range(self) -> Option<(i128, i128)> {
        let w = self.width() as u32 * 8;
        match self.is_signed()? {
            true => Some((-(1i128 << (w - 1)), (1i128 << (w - 1)) - 1)),
            false => Some((0, (1i128 << w) - 1)),
        }
    }

    /// Short name such as `i4` or `f8`.
    pub fn short_name(self) -> &'static str {
        match self {
            NumKind::I1 => "i1",
            NumKind::U1 => "u1",
            NumKind::I2 => "i2",
            NumKind::U2 => "u2",
            NumKind::I4 => "i4",
            NumKind::U4 => "u4",
            NumKind::I8 => "i8",
            NumKind::U8 => "u8",
            NumKind::F4 => "f4",
            NumKind::F8 => "f8",
            NumKind::F16 => "f16",
        }
    }

    /// Keyword used by the type language for this kind.
    pub fn keyword(self) -> &'static str {
        match self.is_signed() {
            Some(true) => "integer",
            Some(false) => "unsigned",
            None => "real",
        }
    }
}

impl fmt::Display for NumKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}*{}", self.keyword(), self.width())
    }
}

/// A dimension, array size or string size: either a fixed count or free
/// (given in the data stream).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dim {
    Fixed(u32),
    Free,
}

impl Dim {
    pub fn fixed(self) -> Option<u32> {
        match self {
            Dim::Fixed(n) => Some(n),
            Dim::Free => None,
        }
    }

    pub fn is_free(self) -> bool {
        self == Dim::Free
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dim::Fixed(n) => write!(f, "{n}"),
            Dim::Free => f.write_str("."),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub name: String,
    pub typ: Arc<TypeNode>,
    pub optional: bool,
}

impl Field {
    pub fn new(name: impl Into<String>, typ: TypeNode) -> Self {
        Field {
            name: name.into(),
            typ: Arc::new(typ),
            optional: false,
        }
    }

    pub fn optional(name: impl Into<String>, typ: TypeNode) -> Self {
        Field {
            optional: true,
            ..Field::new(name, typ)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TypeNode {
    /// Numeric scalar (no dims) or matrix.
    Num {
        kind: NumKind,
        dims: Vec<Dim>,
    },
    /// Character (`opaque == false`) or opaque byte string.
    Str {
        opaque: bool,
        size: Dim,
    },
    Struct {
        is_union: bool,
        fields: Vec<Field>,
    },
    Array {
        size: Dim,
        elem: Arc<TypeNode>,
    },
    NamedRef(String),
    Any,
}

impl TypeNode {
    pub fn scalar(kind: NumKind) -> Self {
        TypeNode::Num { kind, dims: vec![] }
    }

    pub fn matrix(kind: NumKind, dims: Vec<Dim>) -> Self {
        TypeNode::Num { kind, dims }
    }

    pub fn string(size: Dim) -> Self {
        TypeNode::Str { opaque: false, size }
    }

    pub fn opaque(size: Dim) -> Self {
        TypeNode::Str { opaque: true, size }
    }

    pub fn structure(fields: Vec<Field>) -> Self {
        TypeNode::Struct {
            is_union: false,
            fields,
        }
    }

    pub fn union(fields: Vec<Field>) -> Self {
        TypeNode::Struct { is_union: true, fields }
    }

    pub fn array(size: Dim, elem: TypeNode) -> Self {
        TypeNode::Array {
            size,
            elem: Arc::new(elem),
        }
    }

    pub fn named(name: impl Into<String>) -> Self {
        TypeNode::NamedRef(name.into())
    }

    /// Short description used in error messages.
    pub fn class_name(&self) -> &'static str {
        match self {
            TypeNode::Num { dims, .. } if dims.is_empty() => "number",
            TypeNode::Num { .. } => "matrix",
            TypeNode::Str { opaque: false, .. } => "string",
            TypeNode::Str { opaque: true, .. } => "opaque",
            TypeNode::Struct { is_union: false, .. } => "struct",
            TypeNode::Struct { is_union: true, .. } => "union",
            TypeNode::Array { .. } => "array",
            TypeNode::NamedRef(_) => "named type",
            TypeNode::Any => "any",
        }
    }

    pub fn fields(&self) -> Option<&[Field]> {
        match self {
            TypeNode::Struct { fields, .. } => Some(fields),
            _ => None,
        }
    }

    pub fn is_union(&self) -> bool {
        matches!(self, TypeNode::Struct { is_union: true, .. })
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.fields()?.iter().position(|f| f.name == name)
    }
}

impl fmt::Display for TypeNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_type(self))
    }
}

/// Typedef table, in declaration order.
pub type TypeDefs = IndexMap<String, Arc<TypeNode>>;

/// A validated unit: named types plus the root type.
#[derive(Debug, Clone)]
pub struct TypeEnv {
    pub defs: Arc<TypeDefs>,
    pub root: Arc<TypeNode>,
}

pub const KEYWORDS: &[&str] = &[
    "struct", "union", "array", "of", "optional", "typedef", "type", "any", "string", "opaque", "integer", "real",
    "unsigned",
];

pub fn is_keyword(word: &str) -> bool {
    KEYWORDS.contains(&word)
}

pub fn is_identifier(word: &str) -> bool {
    let mut chars = word.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn invalid(message: impl Into<String>) -> Error {
    Error::Validation {
        message: message.into(),
        pos: Pos::default(),
    }
}

impl TypeEnv {
    /// Builds and validates a unit.
    pub fn new(defs: TypeDefs, root: TypeNode) -> Result<Self> {
        Self::from_arcs(Arc::new(defs), Arc::new(root))
    }

    /// A unit without typedefs.
    pub fn simple(root: TypeNode) -> Result<Self> {
        Self::new(TypeDefs::new(), root)
    }

    pub fn from_arcs(defs: Arc<TypeDefs>, root: Arc<TypeNode>) -> Result<Self> {
        for (name, body) in defs.iter() {
            if !is_identifier(name) || is_keyword(name) {
                return Err(invalid(format!("`{name}` is not a valid type name")));
            }
            check_node(body, &defs)?;
        }
        check_node(&root, &defs)?;
        check_recursion(&defs)?;
        Ok(TypeEnv { defs, root })
    }

    pub fn resolve(&self, name: &str) -> Result<Arc<TypeNode>> {
        resolve(name, &self.defs)
    }

    /// The root with named references followed until a concrete node.
    pub fn root_resolved(&self) -> Result<Arc<TypeNode>> {
        resolve_deep(&self.root, &self.defs)
    }

    /// A unit with the same typedefs and a different root.
    pub fn with_root(&self, root: Arc<TypeNode>) -> TypeEnv {
        TypeEnv {
            defs: self.defs.clone(),
            root,
        }
    }
}

impl PartialEq for TypeEnv {
    /// Structural equality of the units as written: same typedef names and
    /// bodies in the same order, same root.
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root
            && self.defs.len() == other.defs.len()
            && self
                .defs
                .iter()
                .zip(other.defs.iter())
                .all(|((an, ab), (bn, bb))| an == bn && ab == bb)
    }
}

impl fmt::Display for TypeEnv {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_env(self))
    }
}

fn check_node(t: &TypeNode, defs: &TypeDefs) -> Result<()> {
    match t {
        TypeNode::Num { dims, .. } => {
            if dims.contains(&Dim::Fixed(0)) {
                return Err(invalid("matrix dimensions must be at least 1"));
            }
        }
        TypeNode::Str { size, .. } => {
            if *size == Dim::Fixed(0) {
                return Err(invalid("string size must be at least 1"));
            }
        }
        TypeNode::Struct { is_union, fields } => {
            if *is_union && fields.is_empty() {
                return Err(invalid("a union needs at least one field"));
            }
            let mut seen = HashSet::new();
            for field in fields {
                if !is_identifier(&field.name) {
                    return Err(invalid(format!("`{}` is not a valid field name", field.name)));
                }
                if !seen.insert(field.name.as_str()) {
                    return Err(invalid(format!("duplicate field `{}`", field.name)));
                }
                if *is_union && field.optional {
                    return Err(invalid(format!("union field `{}` cannot be optional", field.name)));
                }
                check_node(&field.typ, defs)?;
            }
        }
        TypeNode::Array { size, elem } => {
            if *size == Dim::Fixed(0) {
                return Err(invalid("array size must be at least 1"));
            }
            check_node(elem, defs)?;
        }
        TypeNode::NamedRef(name) => {
            if !defs.contains_key(name) {
                return Err(Error::UnknownTypeName(name.clone()));
            }
        }
        TypeNode::Any => {}
    }
    Ok(())
}

/// Rejects typedef cycles that would force infinite data.
///
/// A reference is guarded when the path to it crosses an optional field, a
/// free-size array, or a union variant other than the first one.
fn check_recursion(defs: &TypeDefs) -> Result<()> {
    fn unguarded_refs<'a>(t: &'a TypeNode, out: &mut Vec<&'a str>) {
        match t {
            TypeNode::NamedRef(name) => out.push(name),
            TypeNode::Struct { is_union, fields } => {
                for (i, field) in fields.iter().enumerate() {
                    if field.optional || (*is_union && i > 0) {
                        continue;
                    }
                    unguarded_refs(&field.typ, out);
                }
            }
            TypeNode::Array { size, elem } if !size.is_free() => {
                unguarded_refs(elem, out);
            }
            _ => {}
        }
    }

    let edges: HashMap<&str, Vec<&str>> = defs
        .iter()
        .map(|(name, body)| {
            let mut out = Vec::new();
            unguarded_refs(body, &mut out);
            (name.as_str(), out)
        })
        .collect();

    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Active,
        Done,
    }
    fn visit<'a>(
        name: &'a str,
        edges: &HashMap<&'a str, Vec<&'a str>>,
        marks: &mut HashMap<&'a str, Mark>,
    ) -> Result<()> {
        match marks.get(name) {
            Some(Mark::Done) => return Ok(()),
            Some(Mark::Active) => {
                return Err(invalid(format!(
                    "recursive type `{name}` has no terminating alternative"
                )))
            }
            None => {}
        }
        marks.insert(name, Mark::Active);
        for next in edges.get(name).into_iter().flatten() {
            visit(next, edges, marks)?;
        }
        marks.insert(name, Mark::Done);
        Ok(())
    }

    let mut marks = HashMap::new();
    for name in defs.keys() {
        visit(name, &edges, &mut marks)?;
    }
    Ok(())
}

/// Looks up a typedef body. Named references inside it stay unresolved.
pub fn resolve(name: &str, defs: &TypeDefs) -> Result<Arc<TypeNode>> {
    defs.get(name)
        .cloned()
        .ok_or_else(|| Error::UnknownTypeName(name.to_string()))
}

/// Follows a chain of named references until a concrete node.
pub fn resolve_deep(t: &Arc<TypeNode>, defs: &TypeDefs) -> Result<Arc<TypeNode>> {
    let mut cur = t.clone();
    let mut hops = 0;
    while let TypeNode::NamedRef(name) = &*cur {
        if hops >= defs.len() {
            return Err(invalid(format!("type `{name}` is defined in terms of itself")));
        }
        let next = resolve(name, defs)?;
        cur = next;
        hops += 1;
    }
    Ok(cur)
}

/// Structural equality after resolving named references. Each side is
/// resolved in its own typedef table; cycles are compared coinductively.
pub fn type_equals(a: &Arc<TypeNode>, a_defs: &TypeDefs, b: &Arc<TypeNode>, b_defs: &TypeDefs) -> Result<bool> {
    let mut assumed = HashSet::new();
    eq_rec(a, a_defs, b, b_defs, &mut assumed)
}

/// [`type_equals`] for two types sharing one environment.
pub fn type_equals_in(a: &Arc<TypeNode>, b: &Arc<TypeNode>, env: &TypeEnv) -> Result<bool> {
    type_equals(a, &env.defs, b, &env.defs)
}

fn eq_rec(
    a: &Arc<TypeNode>,
    a_defs: &TypeDefs,
    b: &Arc<TypeNode>,
    b_defs: &TypeDefs,
    assumed: &mut HashSet<(usize, usize)>,
) -> Result<bool> {
    let named = matches!(**a, TypeNode::NamedRef(_)) || matches!(**b, TypeNode::NamedRef(_));
    let a = resolve_deep(a, a_defs)?;
    let b = resolve_deep(b, b_defs)?;
    if named {
        let key = (Arc::as_ptr(&a) as usize, Arc::as_ptr(&b) as usize);
        if !assumed.insert(key) {
            return Ok(true);
        }
    }
    Ok(match (&*a, &*b) {
        (TypeNode::Num { kind: ka, dims: da }, TypeNode::Num { kind: kb, dims: db }) => ka == kb && da == db,
        (TypeNode::Str { opaque: oa, size: sa }, TypeNode::Str { opaque: ob, size: sb }) => oa == ob && sa == sb,
        (
            TypeNode::Struct {
                is_union: ua,
                fields: fa,
            },
            TypeNode::Struct {
                is_union: ub,
                fields: fb,
            },
        ) => {
            if ua != ub || fa.len() != fb.len() {
                return Ok(false);
            }
            for (x, y) in fa.iter().zip(fb) {
                if x.name != y.name || x.optional != y.optional {
                    return Ok(false);
                }
                if !eq_rec(&x.typ, a_defs, &y.typ, b_defs, assumed)? {
                    return Ok(false);
                }
            }
            true
        }
        (TypeNode::Array { size: sa, elem: ea }, TypeNode::Array { size: sb, elem: eb }) => {
            sa == sb && eq_rec(ea, a_defs, eb, b_defs, assumed)?
        }
        (TypeNode::Any, TypeNode::Any) => true,
        _ => false,
    })
}

/// Whether values of `t` can differ in encoded size.
pub fn is_variable_size(t: &TypeNode, defs: &TypeDefs) -> Result<bool> {
    let mut active = HashSet::new();
    variable_rec(t, defs, &mut active)
}

fn variable_rec<'a>(t: &'a TypeNode, defs: &'a TypeDefs, active: &mut HashSet<&'a str>) -> Result<bool> {
    Ok(match t {
        TypeNode::Num { dims, .. } => dims.iter().any(|d| d.is_free()),
        TypeNode::Str { size, .. } => size.is_free(),
        TypeNode::Struct {
            is_union: false,
            fields,
        } => {
            for field in fields {
                if field.optional || variable_rec(&field.typ, defs, active)? {
                    return Ok(true);
                }
            }
            false
        }
        TypeNode::Struct { is_union: true, fields } => {
            let mut size = None;
            for field in fields {
                if variable_rec(&field.typ, defs, active)? {
                    return Ok(true);
                }
                let s = fixed_size_rec(&field.typ, defs)?;
                match size {
                    None => size = Some(s),
                    Some(prev) if prev != s => return Ok(true),
                    _ => {}
                }
            }
            false
        }
        TypeNode::Array { size, elem } => size.is_free() || variable_rec(elem, defs, active)?,
        TypeNode::NamedRef(name) => {
            let (key, body) = defs
                .get_key_value(name.as_str())
                .ok_or_else(|| Error::UnknownTypeName(name.clone()))?;
            if !active.insert(key.as_str()) {
                return Ok(true);
            }
            let r = variable_rec(body, defs, active)?;
            active.remove(key.as_str());
            r
        }
        TypeNode::Any => true,
    })
}

/// Exact encoded size of every value of a fixed-size type.
pub fn fixed_byte_size(t: &TypeNode, defs: &TypeDefs) -> Result<u64> {
    if is_variable_size(t, defs)? {
        return Err(Error::VariableSize);
    }
    fixed_size_rec(t, defs)
}

// Size assuming the type is fixed; called only on fixed types or from the
// union check above, where a variable variant has already returned.
fn fixed_size_rec(t: &TypeNode, defs: &TypeDefs) -> Result<u64> {
    let overflow = || invalid("type size overflows 64 bits");
    Ok(match t {
        TypeNode::Num { kind, dims } => {
            let mut n = kind.width() as u64;
            for d in dims {
                n = n
                    .checked_mul(d.fixed().ok_or(Error::VariableSize)? as u64)
                    .ok_or_else(overflow)?;
            }
            n
        }
        TypeNode::Str { size, .. } => size.fixed().ok_or(Error::VariableSize)? as u64,
        TypeNode::Struct {
            is_union: false,
            fields,
        } => {
            let mut n = 0u64;
            for field in fields {
                if field.optional {
                    return Err(Error::VariableSize);
                }
                n = n.checked_add(fixed_size_rec(&field.typ, defs)?).ok_or_else(overflow)?;
            }
            n
        }
        TypeNode::Struct { is_union: true, fields } => 2 + fixed_size_rec(&fields[0].typ, defs)?,
        TypeNode::Array { size, elem } => (size.fixed().ok_or(Error::VariableSize)? as u64)
            .checked_mul(fixed_size_rec(elem, defs)?)
            .ok_or_else(overflow)?,
        TypeNode::NamedRef(name) => fixed_size_rec(&*resolve(name, defs)?, defs)?,
        TypeNode::Any => return Err(Error::VariableSize),
    })
}

/// A lower bound on the encoded size of any value of `t`. Used to reject
/// counts that cannot possibly fit in the remaining input.
pub fn min_encoded_size(t: &TypeNode, defs: &TypeDefs) -> u64 {
    let mut active = HashSet::new();
    min_rec(t, defs, &mut active)
}

fn min_rec<'a>(t: &'a TypeNode, defs: &'a TypeDefs, active: &mut HashSet<&'a str>) -> u64 {
    match t {
        TypeNode::Num { kind, dims } => {
            let mut cells = 1u64;
            let mut free = 0u64;
            for d in dims {
                match d {
                    Dim::Fixed(n) => cells = cells.saturating_mul(*n as u64),
                    Dim::Free => free += 1,
                }
            }
            if free > 0 {
                4 * free
            } else {
                cells.saturating_mul(kind.width() as u64)
            }
        }
        TypeNode::Str { size, .. } => match size {
            Dim::Fixed(n) => *n as u64,
            Dim::Free => 4,
        },
        TypeNode::Struct {
            is_union: false,
            fields,
        } => fields.iter().fold(0u64, |acc, f| {
            acc.saturating_add(if f.optional { 1 } else { min_rec(&f.typ, defs, active) })
        }),
        TypeNode::Struct { is_union: true, fields } => {
            2 + fields.iter().map(|f| min_rec(&f.typ, defs, active)).min().unwrap_or(0)
        }
        TypeNode::Array { size, elem } => match size {
            Dim::Free => 4,
            Dim::Fixed(n) => (*n as u64).saturating_mul(min_rec(elem, defs, active)),
        },
        TypeNode::NamedRef(name) => match defs.get_key_value(name.as_str()) {
            Some((key, body)) if active.insert(key.as_str()) => {
                let r = min_rec(body, defs, active);
                active.remove(key.as_str());
                r
            }
            _ => 0,
        },
        TypeNode::Any => 4,
    }
}

/// Canonical text of a single type, without a trailing semicolon.
pub fn print_type(t: &TypeNode) -> String {
    let mut out = String::new();
    write_type(&mut out, t, 0, false);
    out
}

/// Single-line form of a type.
pub fn print_type_compact(t: &TypeNode) -> String {
    let mut out = String::new();
    write_type(&mut out, t, 0, true);
    out
}

/// Canonical text of a unit: typedefs in order, then the root type; every
/// declaration is terminated by `;` and a newline.
pub fn print_env(env: &TypeEnv) -> String {
    print_unit(env.defs.iter(), &env.root, false)
}

/// Single-line form of a unit.
pub fn print_env_compact(env: &TypeEnv) -> String {
    print_unit(env.defs.iter(), &env.root, true)
}

/// Prints `root` together with only those typedefs reachable from it.
pub fn print_reachable(root: &TypeNode, defs: &TypeDefs, compact: bool) -> String {
    let names = reachable_names(root, defs);
    print_unit(
        defs.iter().filter(|(name, _)| names.contains(name.as_str())),
        root,
        compact,
    )
}

/// Names of the typedefs reachable from `root`.
pub fn reachable_names<'a>(root: &'a TypeNode, defs: &'a TypeDefs) -> HashSet<&'a str> {
    fn walk<'a>(t: &'a TypeNode, defs: &'a TypeDefs, seen: &mut HashSet<&'a str>) {
        match t {
            TypeNode::NamedRef(name) => {
                if let Some((key, body)) = defs.get_key_value(name.as_str()) {
                    if seen.insert(key.as_str()) {
                        walk(body, defs, seen);
                    }
                }
            }
            TypeNode::Struct { fields, .. } => {
                for f in fields {
                    walk(&f.typ, defs, seen);
                }
            }
            TypeNode::Array { elem, .. } => walk(elem, defs, seen),
            _ => {}
        }
    }
    let mut seen = HashSet::new();
    walk(root, defs, &mut seen);
    seen
}

fn print_unit<'a>(
    defs: impl Iterator<Item = (&'a String, &'a Arc<TypeNode>)>,
    root: &TypeNode,
    compact: bool,
) -> String {
    let mut out = String::new();
    let sep = if compact { " " } else { "\n" };
    for (name, body) in defs {
        let _ = write!(out, "typedef {name} = ");
        write_type(&mut out, body, 0, compact);
        out.push(';');
        out.push_str(sep);
    }
    write_type(&mut out, root, 0, compact);
    out.push(';');
    if !compact {
        out.push('\n');
    }
    out
}

const INDENT: &str = "    ";

fn write_type(out: &mut String, t: &TypeNode, level: usize, compact: bool) {
    match t {
        TypeNode::Num { kind, dims } => {
            let _ = write!(out, "{kind}");
            if !dims.is_empty() {
                out.push('[');
                for (i, d) in dims.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    let _ = write!(out, "{d}");
                }
                out.push(']');
            }
        }
        TypeNode::Str { opaque, size } => {
            out.push_str(if *opaque { "opaque" } else { "string" });
            if let Dim::Fixed(n) = size {
                let _ = write!(out, "*{n}");
            }
        }
        TypeNode::Struct { is_union, fields } => {
            out.push_str(if *is_union { "union {" } else { "struct {" });
            for field in fields {
                if compact {
                    out.push(' ');
                } else {
                    out.push('\n');
                    for _ in 0..=level {
                        out.push_str(INDENT);
                    }
                }
                if field.optional {
                    out.push_str("optional ");
                }
                let _ = write!(out, "{} : ", field.name);
                write_type(out, &field.typ, level + 1, compact);
                out.push(';');
            }
            if compact {
                out.push_str(" }");
            } else {
                out.push('\n');
                for _ in 0..level {
                    out.push_str(INDENT);
                }
                out.push('}');
            }
        }
        TypeNode::Array { size, elem } => {
            let _ = write!(out, "array[{size}] of ");
            write_type(out, elem, level, compact);
        }
        TypeNode::NamedRef(name) => {
            let _ = write!(out, "type {name}");
        }
        TypeNode::Any => out.push_str("any"),
    }
}
