#![allow(dead_code)]

use std::sync::Arc;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use structfile::datamodel::{new_direct, DataHandle, MatrixShape, MatrixValue};
use structfile::error::Result;
use structfile::typesys::{Dim, Field, NumKind, TypeDefs, TypeEnv, TypeNode};

pub const KINDS: [NumKind; 11] = [
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

const NAMES: [&str; 12] = [
    "a", "b", "x", "y_2", "value", "count", "name", "data", "string", "array", "num", "Node",
];

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

#[derive(Clone, Copy)]
pub struct TypeGen {
    pub max_depth: usize,
    pub allow_any: bool,
    pub allow_named: bool,
}

impl Default for TypeGen {
    fn default() -> Self {
        TypeGen {
            max_depth: 6,
            allow_any: true,
            allow_named: true,
        }
    }
}

fn dim(r: &mut StdRng, max: u32) -> Dim {
    if r.gen_bool(0.4) {
        Dim::Free
    } else {
        Dim::Fixed(r.gen_range(1..=max))
    }
}

fn fields(r: &mut StdRng, n: usize, optional: bool, mut typ: impl FnMut(&mut StdRng) -> TypeNode) -> Vec<Field> {
    let mut names: Vec<&str> = NAMES.to_vec();
    names.shuffle(r);
    names[..n]
        .iter()
        .map(|name| Field {
            name: name.to_string(),
            typ: Arc::new(typ(r)),
            optional: optional && r.gen_bool(0.3),
        })
        .collect()
}

impl TypeGen {
    pub fn leaf(&self, r: &mut StdRng, defs: &[String]) -> TypeNode {
        match r.gen_range(0..10) {
            0..=5 => {
                let rank = [0, 0, 1, 1, 2, 3][r.gen_range(0..6)];
                TypeNode::matrix(*KINDS.choose(r).unwrap(), (0..rank).map(|_| dim(r, 3)).collect())
            }
            6 | 7 => {
                let size = dim(r, 6);
                if r.gen_bool(0.3) {
                    TypeNode::opaque(size)
                } else {
                    TypeNode::string(size)
                }
            }
            8 if self.allow_named && !defs.is_empty() => TypeNode::named(defs.choose(r).unwrap().clone()),
            8 | 9 if self.allow_any => TypeNode::Any,
            _ => TypeNode::scalar(NumKind::I4),
        }
    }

    /// A type tree of nesting depth at most `depth`.
    pub fn node(&self, r: &mut StdRng, depth: usize, defs: &[String]) -> TypeNode {
        if depth <= 1 || (depth < self.max_depth && r.gen_bool(0.25)) {
            return self.leaf(r, defs);
        }
        match r.gen_range(0..3) {
            0 => {
                let n = r.gen_range(0..=4);
                TypeNode::Struct {
                    is_union: false,
                    fields: fields(r, n, true, |r| self.node(r, depth - 1, defs)),
                }
            }
            1 => {
                let n = r.gen_range(1..=3);
                TypeNode::Struct {
                    is_union: true,
                    fields: fields(r, n, false, |r| self.node(r, depth - 1, defs)),
                }
            }
            _ => TypeNode::Array {
                size: dim(r, 3),
                elem: Arc::new(self.node(r, depth - 1, defs)),
            },
        }
    }

    /// A type unit with a few named types, each referring only to earlier
    /// ones, and an occasional self-referential list type.
    pub fn env(&self, r: &mut StdRng) -> TypeEnv {
        let mut defs = TypeDefs::new();
        let mut names = Vec::new();
        if self.allow_named {
            for i in 0..r.gen_range(0..=2) {
                let name = format!("T{i}");
                let t = self.node(r, self.max_depth.saturating_sub(1).max(1), &names);
                defs.insert(name.clone(), Arc::new(t));
                names.push(name);
            }
            if r.gen_bool(0.2) {
                let list = TypeNode::structure(vec![
                    Field::new("head", self.leaf(r, &[])),
                    Field::optional("next", TypeNode::named("List")),
                ]);
                defs.insert("List".into(), Arc::new(list));
                names.push("List".into());
            }
        }
        let root = self.node(r, self.max_depth, &names);
        TypeEnv::new(defs, root).expect("generated type is valid")
    }
}

/// Fills data handles with random content, keeping the total size bounded.
pub struct ValueGen {
    pub budget: usize,
    pub max_recursion: usize,
}

impl Default for ValueGen {
    fn default() -> Self {
        ValueGen {
            budget: 400,
            max_recursion: 4,
        }
    }
}

fn random_cells(r: &mut StdRng, kind: NumKind, n: usize) -> Vec<u8> {
    let mut m = MatrixValue::zeros(kind, MatrixShape::from_counts(&[n])).unwrap();
    for i in 0..n {
        if let Some((lo, hi)) = kind.int_range() {
            let v = if r.gen_bool(0.2) {
                *[lo, hi, 0].choose(r).unwrap()
            } else {
                r.gen_range(lo.max(-1000)..=hi.min(1000))
            };
            m.set_int(i, v).unwrap();
        } else {
            let v = match r.gen_range(0..4) {
                0 => 0.0,
                1 => r.gen_range(-100i32..100) as f64 / 4.0,
                _ => r.gen_range(-1e6f64..1e6),
            };
            m.set_float(i, v).unwrap();
        }
    }
    m.data
}

impl ValueGen {
    pub fn value(&mut self, r: &mut StdRng, env: &TypeEnv) -> Result<DataHandle> {
        let d = new_direct(env)?;
        self.fill(r, &d, 0)?;
        Ok(d)
    }

    fn take(&mut self, n: usize) -> bool {
        if self.budget >= n {
            self.budget -= n;
            true
        } else {
            false
        }
    }

    fn count(&mut self, r: &mut StdRng, max: usize) -> usize {
        let n = r.gen_range(0..=max);
        if self.take(n) {
            n
        } else {
            0
        }
    }

    pub fn fill(&mut self, r: &mut StdRng, d: &DataHandle, depth: usize) -> Result<()> {
        let d = d.clone().transparent();
        if d.is_unbound_any() {
            let g = TypeGen {
                max_depth: 3,
                allow_any: depth < 2,
                allow_named: false,
            };
            let env = g.env(r);
            let target = d.actualize_type(&env)?;
            return self.fill(r, &target, depth + 1);
        }
        let t = d.typ()?;
        let defs = d.defs()?;
        let t = match &*t {
            TypeNode::NamedRef(n) => defs[n.as_str()].clone(),
            _ => t,
        };
        let deep = depth >= self.max_recursion * 4;
        match &*t {
            TypeNode::Num { kind, dims } => {
                let counts: Vec<usize> = dims
                    .iter()
                    .map(|dm| match dm {
                        Dim::Fixed(n) => *n as usize,
                        Dim::Free if deep => 0,
                        Dim::Free => self.count(r, 4),
                    })
                    .collect();
                let shape = MatrixShape::from_counts(&counts);
                let n = shape.len().unwrap_or(1);
                let m = MatrixValue::from_raw(*kind, shape, random_cells(r, *kind, n))?;
                d.assign_matrix(&m)?;
            }
            TypeNode::Str { opaque, size } => {
                let max = match size {
                    Dim::Fixed(n) => *n as usize,
                    Dim::Free => 8,
                };
                let len = r.gen_range(0..=max);
                let bytes: Vec<u8> = if *opaque {
                    (0..len).map(|_| r.gen()).collect()
                } else {
                    (0..len).map(|_| *b"abcXYZ 09_\"\\".choose(r).unwrap()).collect()
                };
                d.assign_string(bytes)?;
            }
            TypeNode::Struct {
                is_union: false,
                fields,
            } => {
                for (i, f) in fields.iter().enumerate() {
                    if f.optional {
                        if deep || !r.gen_bool(0.6) || !self.take(1) {
                            continue;
                        }
                        d.set_field_present_at(i)?;
                    }
                    self.fill(r, &d.get_field_by_index(i)?, depth + 1)?;
                }
            }
            TypeNode::Struct { is_union: true, fields } => {
                let i = r.gen_range(0..fields.len());
                d.set_active_field(i)?;
                self.fill(r, &d.get_field_by_index(i)?, depth + 1)?;
            }
            TypeNode::Array { size, .. } => {
                if size.is_free() {
                    let n = if deep { 0 } else { self.count(r, 4) };
                    d.resize(n)?;
                }
                for i in 0..d.n_elements()? {
                    self.fill(r, &d.get_elem(i)?, depth + 1)?;
                }
            }
            TypeNode::NamedRef(_) | TypeNode::Any => unreachable!(),
        }
        Ok(())
    }
}

/// A random type unit and a value of it.
pub fn sample(seed: u64, gen: TypeGen) -> (TypeEnv, DataHandle) {
    let mut r = rng(seed);
    let env = gen.env(&mut r);
    let v = ValueGen::default().value(&mut r, &env).expect("value generation");
    (env, v)
}

/// Every path below `d` that names a node, in preorder, with the node.
pub fn paths(d: &DataHandle) -> Result<Vec<(String, DataHandle)>> {
    let mut out = Vec::new();
    walk(d.clone().transparent(), String::new(), &mut out)?;
    Ok(out)
}

fn walk(d: DataHandle, path: String, out: &mut Vec<(String, DataHandle)>) -> Result<()> {
    out.push((path.clone(), d.clone()));
    let t = d.typ()?;
    let defs = d.defs()?;
    let t = match &*t {
        TypeNode::NamedRef(n) => defs[n.as_str()].clone(),
        _ => t,
    };
    let join = |name: &str| {
        if path.is_empty() {
            name.to_string()
        } else {
            format!("{path}.{name}")
        }
    };
    match &*t {
        TypeNode::Struct {
            is_union: false,
            fields,
        } => {
            for (i, f) in fields.iter().enumerate() {
                if d.field_present_at(i)? {
                    walk(d.get_field_by_index(i)?.transparent(), join(&f.name), out)?;
                }
            }
        }
        TypeNode::Struct { is_union: true, fields } => {
            let i = d.active_field()?;
            walk(d.get_field_by_index(i)?.transparent(), join(&fields[i].name), out)?;
        }
        TypeNode::Array { .. } => {
            for i in 0..d.n_elements()? {
                walk(d.get_elem(i)?.transparent(), format!("{path}[{i}]"), out)?;
            }
        }
        _ => {}
    }
    Ok(())
}
