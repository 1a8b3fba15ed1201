//! Deep copy and structural comparison of data objects.

use std::sync::Arc;

use super::DataHandle;
use crate::error::{Error, Result};
use crate::typesys::{resolve_deep, type_equals, TypeDefs, TypeNode};

fn same_type(a: &DataHandle, b: &DataHandle) -> Result<bool> {
    type_equals(&a.typ()?, &*a.defs()?, &b.typ()?, &*b.defs()?)
}

fn declared_any(child: &Arc<TypeNode>, defs: &TypeDefs) -> Result<bool> {
    Ok(matches!(*resolve_deep(child, defs)?, TypeNode::Any))
}

/// Deep-copies `src` into `dst`: values, optional presence, union
/// selection, array lengths and `any` bindings.
pub fn copy_into(dst: &DataHandle, src: &DataHandle) -> Result<()> {
    if dst.ptr_eq(src) {
        dst.imp()?;
        return Ok(());
    }
    let dst = dst.clone().transparent();
    let src = src.clone().transparent();
    if dst.is_unbound_any() || src.is_unbound_any() {
        return copy_any(&dst, &src);
    }
    if !same_type(&dst, &src)? {
        return Err(Error::TypeMismatch);
    }
    copy_rec(&dst, &src)
}

fn copy_any(dst: &DataHandle, src: &DataHandle) -> Result<()> {
    match (dst.is_unbound_any(), src.is_unbound_any()) {
        (true, true) => Ok(()),
        (true, false) => {
            let target = dst.actualize_type(&src.type_env()?)?;
            copy_rec(&target, src)
        }
        (false, true) => Err(Error::TypeMismatch),
        (false, false) => {
            if !same_type(dst, src)? {
                return Err(Error::TypeMismatch);
            }
            copy_rec(dst, src)
        }
    }
}

fn copy_child(declared: &Arc<TypeNode>, defs: &TypeDefs, dst: &DataHandle, src: &DataHandle) -> Result<()> {
    if declared_any(declared, defs)? {
        copy_any(dst, src)
    } else {
        copy_rec(dst, src)
    }
}

fn copy_rec(dst: &DataHandle, src: &DataHandle) -> Result<()> {
    let t = src.typ()?;
    let defs = src.defs()?;
    match &*t {
        TypeNode::Num { .. } => dst.imp()?.write_num(src.imp()?.read_num()?),
        TypeNode::Str { .. } => dst.imp()?.write_bytes(src.get_string()?),
        TypeNode::Struct {
            is_union: false,
            fields,
        } => {
            for (i, f) in fields.iter().enumerate() {
                if f.optional {
                    if !src.field_present_at(i)? {
                        dst.unset_field_at(i)?;
                        continue;
                    }
                    dst.set_field_present_at(i)?;
                }
                copy_child(&f.typ, &defs, &dst.get_field_by_index(i)?, &src.get_field_by_index(i)?)?;
            }
            Ok(())
        }
        TypeNode::Struct { is_union: true, fields } => {
            let a = src.active_field()?;
            dst.set_active_field(a)?;
            copy_child(
                &fields[a].typ,
                &defs,
                &dst.get_field_by_index(a)?,
                &src.get_field_by_index(a)?,
            )
        }
        TypeNode::Array { size, elem } => {
            let n = src.n_elements()?;
            if size.is_free() {
                dst.resize(n)?;
            }
            for i in 0..n {
                copy_child(elem, &defs, &dst.get_elem(i)?, &src.get_elem(i)?)?;
            }
            Ok(())
        }
        TypeNode::NamedRef(_) | TypeNode::Any => Err(Error::UnboundAny),
    }
}

/// Structural equality of two data objects: equal types and equal
/// contents. Matrix index bases are ignored; only counts matter.
pub fn deep_eq(a: &DataHandle, b: &DataHandle) -> Result<bool> {
    let a = a.clone().transparent();
    let b = b.clone().transparent();
    match (a.is_unbound_any(), b.is_unbound_any()) {
        (true, true) => return Ok(true),
        (false, false) => {}
        _ => return Ok(false),
    }
    if !same_type(&a, &b)? {
        return Ok(false);
    }
    eq_rec(&a, &b)
}

fn eq_rec(a: &DataHandle, b: &DataHandle) -> Result<bool> {
    let t = a.typ()?;
    let defs = a.defs()?;
    Ok(match &*t {
        TypeNode::Num { .. } => {
            let (x, y) = (a.get_matrix()?, b.get_matrix()?);
            x.kind == y.kind && x.shape.counts() == y.shape.counts() && x.data == y.data
        }
        TypeNode::Str { .. } => a.get_string()? == b.get_string()?,
        TypeNode::Struct {
            is_union: false,
            fields,
        } => {
            for (i, f) in fields.iter().enumerate() {
                let present = a.field_present_at(i)?;
                if present != b.field_present_at(i)? {
                    return Ok(false);
                }
                if present && !child_eq(&f.typ, &defs, &a.get_field_by_index(i)?, &b.get_field_by_index(i)?)? {
                    return Ok(false);
                }
            }
            true
        }
        TypeNode::Struct { is_union: true, fields } => {
            let i = a.active_field()?;
            i == b.active_field()?
                && child_eq(
                    &fields[i].typ,
                    &defs,
                    &a.get_field_by_index(i)?,
                    &b.get_field_by_index(i)?,
                )?
        }
        TypeNode::Array { elem, .. } => {
            let n = a.n_elements()?;
            if n != b.n_elements()? {
                return Ok(false);
            }
            for i in 0..n {
                if !child_eq(elem, &defs, &a.get_elem(i)?, &b.get_elem(i)?)? {
                    return Ok(false);
                }
            }
            true
        }
        TypeNode::NamedRef(_) | TypeNode::Any => false,
    })
}

fn child_eq(declared: &Arc<TypeNode>, defs: &TypeDefs, a: &DataHandle, b: &DataHandle) -> Result<bool> {
    if declared_any(declared, defs)? {
        deep_eq(a, b)
    } else {
        eq_rec(a, b)
    }
}
