//! Decoding binary values into in-memory trees.

use std::sync::Arc;

use super::wire::{SizeCache, WireReader, MAX_DECODE_DEPTH};
use super::{ByteOrder, ByteSource};
use crate::datamodel::{build_direct, AnyNode, Contents, DataHandle, MatrixShape, MatrixValue};
use crate::error::{Error, Result};
use crate::typesys::{resolve_deep, TypeDefs, TypeEnv, TypeNode};

/// Decodes one value of `env.root` starting at `offset`. Returns the value
/// and the offset just past it.
pub fn decode_value_at(
    env: &TypeEnv,
    order: ByteOrder,
    src: &dyn ByteSource,
    offset: u64,
) -> Result<(DataHandle, u64)> {
    let mut r = WireReader::new(src, offset, order);
    let mut sizes = SizeCache::default();
    let v = decode_rec(&mut r, &env.root, &env.defs, &mut sizes, 0)?;
    Ok((v, r.pos))
}

/// Decodes a value that must occupy all of `bytes`.
pub fn decode_value(env: &TypeEnv, order: ByteOrder, bytes: &[u8]) -> Result<DataHandle> {
    let (v, end) = decode_value_at(env, order, &bytes, 0)?;
    if end != bytes.len() as u64 {
        return Err(Error::TrailingBytes {
            count: bytes.len() as u64 - end,
            offset: end,
        });
    }
    Ok(v)
}

pub(crate) fn decode_rec(
    r: &mut WireReader,
    declared: &Arc<TypeNode>,
    defs: &Arc<TypeDefs>,
    sizes: &mut SizeCache,
    depth: usize,
) -> Result<DataHandle> {
    if depth > MAX_DECODE_DEPTH {
        return Err(Error::TooDeep {
            limit: MAX_DECODE_DEPTH,
            offset: r.pos,
        });
    }
    let t = resolve_deep(declared, defs)?;
    let contents = match &*t {
        TypeNode::Num { kind, dims } => {
            let (counts, total) = r.matrix_counts(*kind, dims)?;
            let data = r.cells(*kind, total)?;
            let shape = if dims.is_empty() {
                MatrixShape::scalar()
            } else {
                MatrixShape::from_counts(&counts)
            };
            Contents::Num(MatrixValue::from_raw(*kind, shape, data)?)
        }
        TypeNode::Str { size, .. } => {
            let n = match size.fixed() {
                Some(n) => n as u64,
                None => r.count(1)?,
            };
            Contents::Bytes(r.take(n)?)
        }
        TypeNode::Struct {
            is_union: false,
            fields,
        } => {
            let mut values = Vec::with_capacity(fields.len());
            for f in fields {
                if f.optional && !r.tag()? {
                    values.push(None);
                    continue;
                }
                values.push(Some(decode_rec(r, &f.typ, defs, sizes, depth + 1)?));
            }
            Contents::Struct(values)
        }
        TypeNode::Struct { is_union: true, fields } => {
            let sel = r.selector(fields.len())?;
            Contents::Union(sel, decode_rec(r, &fields[sel].typ, defs, sizes, depth + 1)?)
        }
        TypeNode::Array { size, elem } => {
            let min = sizes.min(elem, defs)?;
            let n = match size.fixed() {
                Some(n) => {
                    r.check_items(n as u64, min)?;
                    n as u64
                }
                None => r.count(min)?,
            };
            let mut elems = Vec::with_capacity(n as usize);
            for _ in 0..n {
                elems.push(decode_rec(r, elem, defs, sizes, depth + 1)?);
            }
            Contents::Array(elems)
        }
        TypeNode::Any => {
            let env = r.any_type()?;
            let mut inner = SizeCache::default();
            let target = decode_rec(r, &env.root, &env.defs, &mut inner, depth + 1)?;
            return Ok(DataHandle::new(Arc::new(AnyNode::bound(defs.clone(), target))));
        }
        TypeNode::NamedRef(_) => unreachable!(),
    };
    Ok(build_direct(t, defs.clone(), contents))
}
