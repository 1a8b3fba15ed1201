//! Encoding data objects in the binary format.

use std::io::Write;
use std::sync::Arc;

use super::ByteOrder;
use crate::datamodel::DataHandle;
use crate::error::{Error, Result};
use crate::textcodec::declared_type;
use crate::typesys::{print_reachable, resolve_deep, TypeDefs, TypeNode};

/// Encodes `d` (without a header).
pub fn encode_value(d: &DataHandle, order: ByteOrder, out: &mut dyn Write) -> Result<()> {
    encode_node(&declared_type(d)?, &d.defs()?, d, order, out)
}

pub fn encode_to_vec(d: &DataHandle, order: ByteOrder) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    encode_value(d, order, &mut out)?;
    Ok(out)
}

pub(crate) fn put_count(out: &mut dyn Write, n: usize, order: ByteOrder) -> Result<()> {
    let n = i32::try_from(n).map_err(|_| Error::CountOverflow {
        count: n as u64,
        offset: 0,
    })?;
    out.write_all(&match order {
        ByteOrder::Big => n.to_be_bytes(),
        ByteOrder::Little => n.to_le_bytes(),
    })?;
    Ok(())
}

pub(crate) fn put_selector(out: &mut dyn Write, sel: usize, order: ByteOrder) -> Result<()> {
    let s = sel as u16;
    out.write_all(&match order {
        ByteOrder::Big => s.to_be_bytes(),
        ByteOrder::Little => s.to_le_bytes(),
    })?;
    Ok(())
}

/// Type text written in front of an `any` value.
pub(crate) fn any_type_text(target: &DataHandle) -> Result<String> {
    let text = print_reachable(&*target.typ()?, &*target.defs()?, true);
    Ok(text.trim_end().to_string())
}

/// The bound target of a node declared `any`.
pub(crate) fn any_target(d: &DataHandle) -> Result<DataHandle> {
    match d.imp()?.any_target() {
        Some(t) => Ok(t),
        None if d.is_unbound_any() => Err(Error::UnboundAny),
        None => Ok(d.clone()),
    }
}

/// Encodes the framing that precedes the children of a node: counts for
/// free arrays, the selector of a union, the type text of an `any`.
/// Leaves are encoded completely. Returns false for composite nodes, whose
/// children the caller must still emit.
pub(crate) fn encode_leaf_or_prefix(
    declared: &TypeNode,
    d: &DataHandle,
    order: ByteOrder,
    out: &mut dyn Write,
) -> Result<bool> {
    match declared {
        TypeNode::Num { kind, dims } => {
            let m = d.get_matrix()?;
            for (i, dim) in dims.iter().enumerate() {
                if dim.is_free() {
                    put_count(out, m.shape.count(i), order)?;
                }
            }
            let w = kind.width();
            if order == ByteOrder::Big && w > 1 {
                let mut data = m.data.clone();
                for c in data.chunks_exact_mut(w) {
                    c.reverse();
                }
                out.write_all(&data)?;
            } else {
                out.write_all(&m.data)?;
            }
            Ok(true)
        }
        TypeNode::Str { size, .. } => {
            let s = d.get_string()?;
            if size.is_free() {
                put_count(out, s.len(), order)?;
            }
            out.write_all(&s)?;
            Ok(true)
        }
        TypeNode::Struct { is_union: false, .. } => Ok(false),
        TypeNode::Struct { is_union: true, .. } => {
            put_selector(out, d.active_field()?, order)?;
            Ok(false)
        }
        TypeNode::Array { size, .. } => {
            if size.is_free() {
                put_count(out, d.n_elements()?, order)?;
            }
            Ok(false)
        }
        TypeNode::Any => {
            let text = any_type_text(&any_target(d)?)?;
            put_count(out, text.len(), order)?;
            out.write_all(text.as_bytes())?;
            Ok(false)
        }
        TypeNode::NamedRef(_) => unreachable!(),
    }
}

pub(crate) fn encode_node(
    declared: &Arc<TypeNode>,
    defs: &Arc<TypeDefs>,
    d: &DataHandle,
    order: ByteOrder,
    out: &mut dyn Write,
) -> Result<()> {
    let t = resolve_deep(declared, defs)?;
    if encode_leaf_or_prefix(&t, d, order, out)? {
        return Ok(());
    }
    match &*t {
        TypeNode::Struct {
            is_union: false,
            fields,
        } => {
            for (i, f) in fields.iter().enumerate() {
                if f.optional {
                    let present = d.field_present_at(i)?;
                    out.write_all(&[present as u8])?;
                    if !present {
                        continue;
                    }
                }
                encode_node(&f.typ, defs, &d.get_field_by_index(i)?, order, out)?;
            }
        }
        TypeNode::Struct { is_union: true, fields } => {
            let a = d.active_field()?;
            encode_node(&fields[a].typ, defs, &d.get_field_by_index(a)?, order, out)?;
        }
        TypeNode::Array { elem, .. } => {
            for i in 0..d.n_elements()? {
                encode_node(elem, defs, &d.get_elem(i)?, order, out)?;
            }
        }
        TypeNode::Any => {
            let target = any_target(d)?;
            encode_node(&target.typ()?, &target.defs()?, &target, order, out)?;
        }
        _ => unreachable!(),
    }
    Ok(())
}
