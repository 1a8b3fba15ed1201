//! Structured data laid out on blocks.
//!
//! Every value has a byte layout; composite members follow each other in
//! declaration order. A member of fixed-size type is stored inline; a
//! member of variable-size type is an 8-byte block address (0 while unset).
//!
//! | type           | layout                                            |
//! |----------------|---------------------------------------------------|
//! | number/matrix  | 4-byte count per free dim, then big-endian cells  |
//! | string         | 4-byte count if free, then the bytes              |
//! | struct         | per field: tag byte if optional, then the member  |
//! | union          | 2-byte selector, then room for the largest member |
//! | array          | 4-byte count if free, then the members            |
//! | any            | 4-byte type text length, text, then the member    |

use std::sync::{Arc, Weak};

use parking_lot::Mutex;

use super::heap::{Cell, Heap, BLOCK_HEADER_SIZE};
use crate::bincodec::wire::SizeCache;
use crate::datamodel::{DataHandle, DataImpl, MatrixShape, MatrixValue};
use crate::ddlparse::parse_type_text;
use crate::error::{Error, Result};
use crate::typesys::{print_reachable, resolve_deep, TypeDefs, TypeEnv, TypeNode};

pub(crate) struct Layout {
    heap: Arc<Heap>,
    sizes: Mutex<SizeCache>,
}

impl Layout {
    pub fn new(heap: Arc<Heap>) -> Arc<Layout> {
        Arc::new(Layout {
            heap,
            sizes: Mutex::new(SizeCache::default()),
        })
    }

    pub fn heap(&self) -> &Heap {
        &self.heap
    }

    pub fn fixed(&self, t: &Arc<TypeNode>, defs: &TypeDefs) -> Result<Option<u64>> {
        self.sizes.lock().fixed(t, defs)
    }

    /// Bytes a member of type `t` occupies inside its parent.
    pub fn slot(&self, t: &Arc<TypeNode>, defs: &TypeDefs) -> Result<u64> {
        Ok(self.fixed(t, defs)?.unwrap_or(8))
    }

    /// Size of a fresh, all-zero value of the resolved type `t`.
    pub fn initial_size(&self, t: &TypeNode, defs: &TypeDefs) -> Result<u64> {
        Ok(match t {
            TypeNode::Num { dims, .. } => {
                let free = dims.iter().filter(|d| d.is_free()).count() as u64;
                if free == 0 {
                    return Err(Error::VariableSize);
                }
                4 * free
            }
            TypeNode::Str { size, .. } => match size.fixed() {
                Some(n) => n as u64,
                None => 4,
            },
            TypeNode::Struct {
                is_union: false,
                fields,
            } => {
                let mut n = 0;
                for f in fields {
                    n += f.optional as u64 + self.slot(&f.typ, defs)?;
                }
                n
            }
            TypeNode::Struct { is_union: true, .. } => 2 + self.union_room(t, defs)?,
            TypeNode::Array { size, elem } => match size.fixed() {
                Some(n) => n as u64 * self.slot(elem, defs)?,
                None => 4,
            },
            TypeNode::Any => 4,
            TypeNode::NamedRef(_) => unreachable!(),
        })
    }

    fn union_room(&self, t: &TypeNode, defs: &TypeDefs) -> Result<u64> {
        let mut room = 0;
        for f in t.fields().unwrap() {
            room = room.max(self.slot(&f.typ, defs)?);
        }
        Ok(room)
    }

    /// Offset of struct field `i` (its tag byte when optional).
    fn field_offset(&self, fields: &[crate::typesys::Field], i: usize, defs: &TypeDefs) -> Result<u64> {
        let mut off = 0;
        for f in &fields[..i] {
            off += f.optional as u64 + self.slot(&f.typ, defs)?;
        }
        Ok(off)
    }

    /// Frees the block at `a` holding a value of type `t` and every block
    /// reachable from it.
    pub fn free_tree(&self, t: &Arc<TypeNode>, defs: &Arc<TypeDefs>, a: u64) -> Result<()> {
        let mut stack = vec![(t.clone(), defs.clone(), a)];
        while let Some((t, defs, a)) = stack.pop() {
            let base = a + BLOCK_HEADER_SIZE;
            let mut refs = Vec::new();
            self.refs_in(&t, &defs, base, &mut refs)?;
            for (ct, cd, off) in refs {
                let child = self.heap.read_u64(off)?;
                if child != 0 {
                    stack.push((ct, cd, child));
                }
            }
            self.heap.free_unchecked(a)?;
        }
        Ok(())
    }

    /// Block references directly inside the value at absolute offset `base`.
    pub fn refs_in(
        &self,
        t: &Arc<TypeNode>,
        defs: &Arc<TypeDefs>,
        base: u64,
        out: &mut Vec<(Arc<TypeNode>, Arc<TypeDefs>, u64)>,
    ) -> Result<()> {
        if let TypeNode::Array { elem, .. } = &*resolve_deep(t, defs)? {
            if self.fixed(elem, defs)?.is_some() {
                return Ok(());
            }
        }
        for (ct, cd, off) in self.members(t, defs, base)? {
            if self.fixed(&ct, &cd)?.is_none() {
                out.push((ct, cd, off));
            }
        }
        Ok(())
    }

    /// Present members of the value at `base` with their absolute offsets.
    pub fn members(
        &self,
        t: &Arc<TypeNode>,
        defs: &Arc<TypeDefs>,
        base: u64,
    ) -> Result<Vec<(Arc<TypeNode>, Arc<TypeDefs>, u64)>> {
        let t = resolve_deep(t, defs)?;
        let mut out = Vec::new();
        match &*t {
            TypeNode::Struct {
                is_union: false,
                fields,
            } => {
                let mut off = base;
                for f in fields {
                    let slot = self.slot(&f.typ, defs)?;
                    let present = !f.optional || self.heap.read_at(off, 1)?[0] != 0;
                    off += f.optional as u64;
                    if present {
                        out.push((f.typ.clone(), defs.clone(), off));
                    }
                    off += slot;
                }
            }
            TypeNode::Struct { is_union: true, fields } => {
                let sel = self.selector(base, fields.len())?;
                out.push((fields[sel].typ.clone(), defs.clone(), base + 2));
            }
            TypeNode::Array { size, elem } => {
                let slot = self.slot(elem, defs)?;
                let (n, start) = match size.fixed() {
                    Some(n) => (n as u64, base),
                    None => (self.heap.read_u32(base)? as u64, base + 4),
                };
                for k in 0..n {
                    out.push((elem.clone(), defs.clone(), start + slot * k));
                }
            }
            TypeNode::Any => {
                if let Some((env, at)) = self.any_env(base)? {
                    out.push((env.root.clone(), env.defs.clone(), at));
                }
            }
            _ => {}
        }
        Ok(out)
    }

    /// Bytes the variable-size value at `base` should occupy.
    fn value_size(&self, t: &Arc<TypeNode>, defs: &Arc<TypeDefs>, base: u64) -> Result<u64> {
        let t = resolve_deep(t, defs)?;
        Ok(match &*t {
            TypeNode::Num { kind, dims } => {
                let mut at = base;
                let mut cells = 1u64;
                for d in dims {
                    cells *= match d.fixed() {
                        Some(n) => n as u64,
                        None => {
                            let c = self.heap.read_u32(at)? as u64;
                            at += 4;
                            c
                        }
                    };
                }
                (at - base) + cells * kind.width() as u64
            }
            TypeNode::Str { size, .. } => match size.fixed() {
                Some(n) => n as u64,
                None => 4 + self.heap.read_u32(base)? as u64,
            },
            TypeNode::Array { size, elem } if size.is_free() => {
                4 + self.heap.read_u32(base)? as u64 * self.slot(elem, defs)?
            }
            TypeNode::Any => match self.any_env(base)? {
                Some((env, at)) => (at - base) + self.slot(&env.root, &env.defs)?,
                None => 4,
            },
            other => self.initial_size(other, defs)?,
        })
    }

    /// Walks the stored value from the root block and checks that every
    /// fixed-size member is stored inline, every variable-size member in a
    /// block of its own whose size matches its contents, and that no block
    /// is referenced twice.
    pub fn audit(&self, env: &TypeEnv) -> Result<LayoutReport> {
        let (root, types) = self.heap.roots();
        let mut report = LayoutReport::default();
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![(env.root.clone(), env.defs.clone(), root)];
        while let Some((t, defs, a)) = stack.pop() {
            if !self.heap.is_live(a) {
                return Err(Error::StoreCorrupt(format!(
                    "reference to {a:#x}, which is not a live block"
                )));
            }
            if !seen.insert(a) {
                return Err(Error::StoreCorrupt(format!("block {a:#x} is referenced twice")));
            }
            let base = a + BLOCK_HEADER_SIZE;
            let used = self.heap.used(a)?;
            let fixed = self.fixed(&t, &defs)?;
            if fixed.is_some() && a != root {
                return Err(Error::StoreCorrupt(format!(
                    "fixed-size value stored in its own block {a:#x}"
                )));
            }
            let expect = match fixed {
                Some(n) => n,
                None => self.value_size(&t, &defs, base)?,
            };
            if used != expect {
                return Err(Error::StoreCorrupt(format!(
                    "block {a:#x} holds {used} bytes, its value needs {expect}"
                )));
            }
            report.block_values += 1;
            let mut inline = vec![(t, defs, base)];
            while let Some((t, defs, at)) = inline.pop() {
                for (ct, cd, off) in self.members(&t, &defs, at)? {
                    if self.fixed(&ct, &cd)?.is_some() {
                        report.inline_values += 1;
                        if matches!(
                            *resolve_deep(&ct, &cd)?,
                            TypeNode::Struct { .. } | TypeNode::Array { .. }
                        ) {
                            inline.push((ct, cd, off));
                        }
                    } else {
                        let child = self.heap.read_u64(off)?;
                        if child == 0 {
                            report.unset_refs += 1;
                        } else {
                            stack.push((ct, cd, child));
                        }
                    }
                }
            }
        }
        let live = self.heap.lock().live.len() as u64;
        report.unreachable_blocks = live - seen.len() as u64 - (types != 0) as u64;
        Ok(report)
    }

    pub fn selector(&self, at: u64, variants: usize) -> Result<usize> {
        let b = self.heap.read_at(at, 2)?;
        let sel = u16::from_be_bytes([b[0], b[1]]) as usize;
        if sel >= variants {
            return Err(Error::StoreCorrupt(format!(
                "union selector {sel} at {at:#x} out of range"
            )));
        }
        Ok(sel)
    }

    /// Type and member offset of the `any` value at `base`; `None` if unbound.
    pub fn any_env(&self, base: u64) -> Result<Option<(TypeEnv, u64)>> {
        let len = self.heap.read_u32(base)? as u64;
        if len == 0 {
            return Ok(None);
        }
        let text = self.heap.read_at(base + 4, len as usize)?;
        let text =
            String::from_utf8(text).map_err(|_| Error::StoreCorrupt(format!("type text at {base:#x} is not UTF-8")))?;
        let env = parse_type_text(&text).map_err(|e| Error::StoreCorrupt(format!("type text at {base:#x}: {e}")))?;
        Ok(Some((env, base + 4 + len)))
    }
}

/// Result of a layout audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LayoutReport {
    /// Values stored in a block of their own.
    pub block_values: u64,
    /// Fixed-size values stored inside their parent.
    pub inline_values: u64,
    /// Variable-size members whose reference is still unset.
    pub unset_refs: u64,
    /// Live blocks not reachable from the root or the type block.
    pub unreachable_blocks: u64,
}

enum Place {
    /// Stored inside the value of `owner` at `off`.
    Inline { owner: Arc<StoreNode>, off: u64 },
    /// Stored in its own block, whose address lives in `holder`.
    Ref {
        holder: Holder,
        cell: Mutex<Option<Arc<Cell>>>,
    },
}

enum Holder {
    Root,
    Slot { owner: Arc<StoreNode>, off: u64 },
}

/// A data object stored in a block store.
pub(crate) struct StoreNode {
    layout: Arc<Layout>,
    ty: Arc<TypeNode>,
    defs: Arc<TypeDefs>,
    place: Place,
    me: Weak<StoreNode>,
    /// Type and member offset of a bound `any` value.
    target: Mutex<Option<(TypeEnv, u64)>>,
}

pub(crate) fn root_node(layout: Arc<Layout>, env: &TypeEnv) -> Result<DataHandle> {
    let ty = resolve_deep(&env.root, &env.defs)?;
    Ok(StoreNode::make(
        layout,
        ty,
        env.defs.clone(),
        Place::Ref {
            holder: Holder::Root,
            cell: Mutex::new(None),
        },
    ))
}

impl StoreNode {
    fn make(layout: Arc<Layout>, ty: Arc<TypeNode>, defs: Arc<TypeDefs>, place: Place) -> DataHandle {
        DataHandle::new(Arc::new_cyclic(|me| StoreNode {
            layout,
            ty,
            defs,
            place,
            me: me.clone(),
            target: Mutex::new(None),
        }))
    }

    fn heap(&self) -> &Heap {
        self.layout.heap()
    }

    fn this(&self) -> Arc<StoreNode> {
        self.me.upgrade().expect("node alive while in use")
    }

    /// The node whose block holds this value, and the value's offset in it.
    fn anchor(&self) -> (Arc<StoreNode>, u64) {
        match &self.place {
            Place::Inline { owner, off } => (owner.clone(), *off),
            Place::Ref { .. } => (self.this(), 0),
        }
    }

    fn holder_address(&self, holder: &Holder, ensure: bool) -> Result<Option<u64>> {
        match holder {
            Holder::Root => Ok(Some(self.heap().roots().0)),
            Holder::Slot { owner, off } => match owner.base(ensure)? {
                Some(p) => Ok(Some(self.heap().read_u64(p + off)?)),
                None => Ok(None),
            },
        }
    }

    fn write_holder(&self, holder: &Holder, a: u64) -> Result<()> {
        match holder {
            Holder::Root => self.heap().set_root(a, None),
            Holder::Slot { owner, off } => {
                let p = owner.base(true)?.unwrap();
                self.heap().write_at(p + off, &a.to_be_bytes())
            }
        }
    }

    /// Address of this node's own block, allocating it when `ensure`.
    fn block(&self, ensure: bool) -> Result<Option<u64>> {
        let Place::Ref { holder, cell } = &self.place else {
            unreachable!()
        };
        if let Some(c) = &*cell.lock() {
            let a = c.get();
            if a != 0 {
                return Ok(Some(a));
            }
        }
        let a = self.holder_address(holder, ensure)?.unwrap_or(0);
        if a != 0 {
            *cell.lock() = Some(self.heap().cell(a));
            return Ok(Some(a));
        }
        if !ensure {
            return Ok(None);
        }
        let size = match self.layout.fixed(&self.ty, &self.defs)? {
            Some(n) => n,
            None => self.layout.initial_size(&self.ty, &self.defs)?,
        };
        let a = self.heap().alloc(size)?;
        self.write_holder(holder, a)?;
        *cell.lock() = Some(self.heap().cell(a));
        Ok(Some(a))
    }

    /// Absolute file offset of the value's first byte.
    fn base(&self, ensure: bool) -> Result<Option<u64>> {
        match &self.place {
            Place::Inline { owner, off } => Ok(owner.base(ensure)?.map(|p| p + off)),
            Place::Ref { .. } => Ok(self.block(ensure)?.map(|a| a + BLOCK_HEADER_SIZE)),
        }
    }

    fn read_base(&self) -> Result<u64> {
        self.base(false)?.ok_or(Error::UnsetReference)
    }

    fn write_base(&self) -> Result<u64> {
        Ok(self.base(true)?.unwrap())
    }

    /// Resizes this node's own block, following a move.
    fn resize_value(&self, size: u64) -> Result<u64> {
        let Place::Ref { holder, .. } = &self.place else {
            unreachable!()
        };
        let a = self.block(true)?.unwrap();
        let b = self.heap().resize(a, size)?;
        if b != a {
            self.write_holder(holder, b)?;
        }
        Ok(b + BLOCK_HEADER_SIZE)
    }

    fn child(&self, t: &Arc<TypeNode>, off: u64) -> Result<DataHandle> {
        let ty = resolve_deep(t, &self.defs)?;
        let (anchor, at) = self.anchor();
        let place = if self.layout.fixed(&ty, &self.defs)?.is_some() {
            Place::Inline {
                owner: anchor,
                off: at + off,
            }
        } else {
            Place::Ref {
                holder: Holder::Slot {
                    owner: anchor,
                    off: at + off,
                },
                cell: Mutex::new(None),
            }
        };
        Ok(StoreNode::make(self.layout.clone(), ty, self.defs.clone(), place))
    }

    /// Frees whatever block the member at `off` references and zeroes its slot.
    fn clear_slot(&self, t: &Arc<TypeNode>, off: u64) -> Result<()> {
        let base = self.write_base()?;
        let slot = self.layout.slot(t, &self.defs)?;
        if self.layout.fixed(t, &self.defs)?.is_none() {
            let a = self.heap().read_u64(base + off)?;
            if a != 0 {
                self.layout.free_tree(t, &self.defs, a)?;
            }
        }
        self.heap().write_at(base + off, &vec![0; slot as usize])
    }

    fn is_any(&self) -> bool {
        matches!(*self.ty, TypeNode::Any)
    }

    fn bound(&self) -> Result<Option<DataHandle>> {
        let cached = self.target.lock().clone();
        let (env, rel) = match cached {
            Some(c) => c,
            None => {
                let Some(base) = self.base(false)? else {
                    return Ok(None);
                };
                let Some((env, at)) = self.layout.any_env(base)? else {
                    return Ok(None);
                };
                let entry = (env, at - base);
                *self.target.lock() = Some(entry.clone());
                entry
            }
        };
        let ty = resolve_deep(&env.root, &env.defs)?;
        let (anchor, off) = self.anchor();
        let off = off + rel;
        let place = if self.layout.fixed(&ty, &env.defs)?.is_some() {
            Place::Inline { owner: anchor, off }
        } else {
            Place::Ref {
                holder: Holder::Slot { owner: anchor, off },
                cell: Mutex::new(None),
            }
        };
        Ok(Some(StoreNode::make(self.layout.clone(), ty, env.defs.clone(), place)))
    }

    fn fwd(&self) -> Result<DataHandle> {
        self.bound()?.ok_or(Error::UnboundAny)
    }

    fn num_parts(&self) -> (crate::typesys::NumKind, usize) {
        match &*self.ty {
            TypeNode::Num { kind, dims } => (*kind, dims.iter().filter(|d| d.is_free()).count()),
            _ => unreachable!(),
        }
    }
}

macro_rules! forward_any {
    ($self:ident, $call:ident ( $($arg:expr),* )) => {
        if $self.is_any() {
            return $self.fwd()?.imp()?.$call($($arg),*);
        }
    };
}

impl DataImpl for StoreNode {
    fn typ(&self) -> Arc<TypeNode> {
        if self.is_any() {
            if let Ok(Some(t)) = self.bound() {
                if let Ok(ty) = t.typ() {
                    return ty;
                }
            }
        }
        self.ty.clone()
    }

    fn defs(&self) -> Arc<TypeDefs> {
        if self.is_any() {
            if let Ok(Some(t)) = self.bound() {
                if let Ok(d) = t.defs() {
                    return d;
                }
            }
        }
        self.defs.clone()
    }

    fn declared_defs(&self) -> Arc<TypeDefs> {
        self.defs.clone()
    }

    fn field(&self, i: usize) -> Result<DataHandle> {
        forward_any!(self, field(i));
        match &*self.ty {
            TypeNode::Struct {
                is_union: false,
                fields,
            } => {
                let off = self.layout.field_offset(fields, i, &self.defs)?;
                let f = &fields[i];
                if f.optional {
                    let base = self.read_base()?;
                    if self.heap().read_at(base + off, 1)?[0] == 0 {
                        return Err(Error::FieldNotPresent(f.name.clone()));
                    }
                    return self.child(&f.typ, off + 1);
                }
                self.child(&f.typ, off)
            }
            TypeNode::Struct { is_union: true, fields } => {
                let active = self.active_field()?;
                if i != active {
                    return Err(Error::InactiveUnionField { requested: i, active });
                }
                self.child(&fields[i].typ, 2)
            }
            _ => Err(self.wrong_type()),
        }
    }

    fn field_present(&self, i: usize) -> Result<bool> {
        forward_any!(self, field_present(i));
        match &*self.ty {
            TypeNode::Struct {
                is_union: false,
                fields,
            } => {
                if !fields[i].optional {
                    return Ok(true);
                }
                let off = self.layout.field_offset(fields, i, &self.defs)?;
                Ok(self.heap().read_at(self.read_base()? + off, 1)?[0] != 0)
            }
            TypeNode::Struct { is_union: true, .. } => Ok(self.active_field()? == i),
            _ => Err(self.wrong_type()),
        }
    }

    fn set_field_present(&self, i: usize) -> Result<()> {
        forward_any!(self, set_field_present(i));
        let TypeNode::Struct {
            is_union: false,
            fields,
        } = &*self.ty
        else {
            return Err(self.wrong_type());
        };
        let off = self.layout.field_offset(fields, i, &self.defs)?;
        let base = self.write_base()?;
        if self.heap().read_at(base + off, 1)?[0] == 0 {
            self.heap().write_at(base + off, &[1])?;
        }
        Ok(())
    }

    fn unset_field(&self, i: usize) -> Result<()> {
        forward_any!(self, unset_field(i));
        let TypeNode::Struct {
            is_union: false,
            fields,
        } = &*self.ty
        else {
            return Err(self.wrong_type());
        };
        let off = self.layout.field_offset(fields, i, &self.defs)?;
        let base = self.write_base()?;
        if self.heap().read_at(base + off, 1)?[0] != 0 {
            self.clear_slot(&fields[i].typ, off + 1)?;
            self.heap().write_at(base + off, &[0])?;
        }
        Ok(())
    }

    fn active_field(&self) -> Result<usize> {
        forward_any!(self, active_field());
        match &*self.ty {
            TypeNode::Struct { is_union: true, fields } => self.layout.selector(self.read_base()?, fields.len()),
            _ => Err(self.wrong_type()),
        }
    }

    fn set_active_field(&self, i: usize) -> Result<()> {
        forward_any!(self, set_active_field(i));
        let TypeNode::Struct { is_union: true, fields } = &*self.ty else {
            return Err(self.wrong_type());
        };
        let base = self.write_base()?;
        let cur = self.layout.selector(base, fields.len())?;
        if cur == i {
            return Ok(());
        }
        self.clear_slot(&fields[cur].typ, 2)?;
        let room = self.layout.union_room(&self.ty, &self.defs)?;
        self.heap().write_at(base + 2, &vec![0; room as usize])?;
        self.heap().write_at(base, &(i as u16).to_be_bytes())
    }

    fn n_elements(&self) -> Result<usize> {
        forward_any!(self, n_elements());
        match &*self.ty {
            TypeNode::Array { size, .. } => match size.fixed() {
                Some(n) => Ok(n as usize),
                None => Ok(self.heap().read_u32(self.read_base()?)? as usize),
            },
            _ => Err(self.wrong_type()),
        }
    }

    fn elem(&self, i: usize) -> Result<DataHandle> {
        forward_any!(self, elem(i));
        let TypeNode::Array { size, elem } = &*self.ty else {
            return Err(self.wrong_type());
        };
        let len = self.n_elements()?;
        if i >= len {
            return Err(Error::IndexOutOfRange { index: i, len });
        }
        let prefix = if size.is_free() { 4 } else { 0 };
        let slot = self.layout.slot(elem, &self.defs)?;
        self.child(elem, prefix + slot * i as u64)
    }

    fn resize(&self, n: usize) -> Result<()> {
        forward_any!(self, resize(n));
        let TypeNode::Array { size, elem } = &*self.ty else {
            return Err(self.wrong_type());
        };
        if !size.is_free() {
            return Err(Error::FixedSize);
        }
        let slot = self.layout.slot(elem, &self.defs)?;
        let base = self.write_base()?;
        let cur = self.heap().read_u32(base)? as usize;
        if n < cur && self.layout.fixed(elem, &self.defs)?.is_none() {
            for k in n..cur {
                let a = self.heap().read_u64(base + 4 + 8 * k as u64)?;
                if a != 0 {
                    self.layout.free_tree(elem, &self.defs, a)?;
                }
            }
        }
        let count = u32::try_from(n).map_err(|_| Error::BlockTooLarge(n as u64))?;
        let bytes = (n as u64)
            .checked_mul(slot)
            .and_then(|b| b.checked_add(4))
            .ok_or(Error::BlockTooLarge(u64::MAX))?;
        if n < cur {
            self.heap()
                .write_at(base + 4 + slot * n as u64, &vec![0; (slot * (cur - n) as u64) as usize])?;
        }
        let base = self.resize_value(bytes)?;
        self.heap().write_at(base, &count.to_be_bytes())
    }

    fn read_num(&self) -> Result<MatrixValue> {
        forward_any!(self, read_num());
        let TypeNode::Num { dims, .. } = &*self.ty else {
            return Err(self.wrong_type());
        };
        let (kind, free) = self.num_parts();
        let base = self.read_base()?;
        let mut counts = Vec::with_capacity(dims.len());
        let mut at = base;
        for d in dims {
            match d.fixed() {
                Some(n) => counts.push(n as usize),
                None => {
                    counts.push(self.heap().read_u32(at)? as usize);
                    at += 4;
                }
            }
        }
        debug_assert_eq!(at, base + 4 * free as u64);
        let shape = if dims.is_empty() {
            MatrixShape::scalar()
        } else {
            MatrixShape::from_counts(&counts)
        };
        let w = kind.width();
        let cells = shape
            .len()
            .ok_or_else(|| Error::StoreCorrupt(format!("matrix at {base:#x} is too large")))?;
        let mut data = self.heap().read_at(at, cells * w)?;
        if w > 1 {
            for c in data.chunks_exact_mut(w) {
                c.reverse();
            }
        }
        MatrixValue::from_raw(kind, shape, data)
    }

    fn write_num(&self, m: MatrixValue) -> Result<()> {
        forward_any!(self, write_num(m));
        let TypeNode::Num { dims, .. } = &*self.ty else {
            return Err(self.wrong_type());
        };
        let (kind, free) = self.num_parts();
        let w = kind.width();
        let mut bytes = Vec::with_capacity(4 * free + m.data.len());
        for (d, c) in dims.iter().zip(m.shape.counts()) {
            if d.is_free() {
                bytes.extend_from_slice(&(c as u32).to_be_bytes());
            }
        }
        let mut cells = m.data;
        if w > 1 {
            for c in cells.chunks_exact_mut(w) {
                c.reverse();
            }
        }
        bytes.extend_from_slice(&cells);
        let base = if free > 0 {
            self.resize_value(bytes.len() as u64)?
        } else {
            self.write_base()?
        };
        self.heap().write_at(base, &bytes)
    }

    fn read_bytes(&self) -> Result<Vec<u8>> {
        forward_any!(self, read_bytes());
        let TypeNode::Str { size, .. } = &*self.ty else {
            return Err(self.wrong_type());
        };
        let base = self.read_base()?;
        match size.fixed() {
            Some(n) => self.heap().read_at(base, n as usize),
            None => {
                let n = self.heap().read_u32(base)?;
                self.heap().read_at(base + 4, n as usize)
            }
        }
    }

    fn write_bytes(&self, bytes: Vec<u8>) -> Result<()> {
        forward_any!(self, write_bytes(bytes));
        let TypeNode::Str { size, .. } = &*self.ty else {
            return Err(self.wrong_type());
        };
        match size.fixed() {
            Some(_) => {
                let base = self.write_base()?;
                self.heap().write_at(base, &bytes)
            }
            None => {
                let n = u32::try_from(bytes.len()).map_err(|_| Error::BlockTooLarge(bytes.len() as u64))?;
                let base = self.resize_value(4 + bytes.len() as u64)?;
                let mut out = n.to_be_bytes().to_vec();
                out.extend_from_slice(&bytes);
                self.heap().write_at(base, &out)
            }
        }
    }

    fn actualize(&self, env: &TypeEnv) -> Result<DataHandle> {
        if !self.is_any() {
            return Err(Error::NotAnyType);
        }
        if self.bound()?.is_some() {
            return Err(Error::AlreadyBound);
        }
        let text = print_reachable(&env.root, &env.defs, true).trim_end().to_string();
        let parsed = parse_type_text(&text)?;
        let slot = self.layout.slot(&parsed.root, &parsed.defs)?;
        let len = text.len() as u64;
        let base = self.resize_value(4 + len + slot)?;
        let mut out = (len as u32).to_be_bytes().to_vec();
        out.extend_from_slice(text.as_bytes());
        out.extend(std::iter::repeat_n(0, slot as usize));
        self.heap().write_at(base, &out)?;
        self.fwd()
    }

    fn any_target(&self) -> Option<DataHandle> {
        if self.is_any() {
            self.bound().ok().flatten()
        } else {
            None
        }
    }

    fn is_unbound_any(&self) -> bool {
        self.is_any() && !matches!(self.bound(), Ok(Some(_)))
    }

    fn as_any(&self) -> &dyn std::any::Any {
        self
    }
}
