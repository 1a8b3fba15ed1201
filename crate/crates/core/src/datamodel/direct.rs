//! In-memory linked-tree representation.

use std::sync::Arc;

use parking_lot::Mutex;

use super::{AnyNode, DataHandle, DataImpl, MatrixShape, MatrixValue};
use crate::error::{Error, Result};
use crate::typesys::{resolve_deep, Dim, TypeDefs, TypeEnv, TypeNode};

/// Creates a zero-initialized in-memory object for the root of `env`.
///
/// Structs get all non-optional fields, optional fields start absent,
/// unions select variant 0, free arrays are empty, fixed arrays are filled,
/// numbers are zero, free strings empty and fixed strings zero bytes, `any`
/// nodes unbound.
pub fn new_direct(env: &TypeEnv) -> Result<DataHandle> {
    new_direct_type(&env.root, &env.defs)
}

pub fn new_direct_type(ty: &Arc<TypeNode>, defs: &Arc<TypeDefs>) -> Result<DataHandle> {
    let ty = resolve_deep(ty, defs)?;
    if let TypeNode::Any = *ty {
        return Ok(DataHandle::new(Arc::new(AnyNode::unbound(defs.clone()))));
    }
    let state = initial_state(&ty, defs)?;
    Ok(DataHandle::new(Arc::new(DirectNode {
        ty,
        defs: defs.clone(),
        state: Mutex::new(state),
    })))
}

/// Pre-built contents for [`build_direct`].
pub(crate) enum Contents {
    Num(MatrixValue),
    Bytes(Vec<u8>),
    /// One entry per field; `None` for an absent optional field.
    Struct(Vec<Option<DataHandle>>),
    Union(usize, DataHandle),
    Array(Vec<DataHandle>),
}

/// Assembles a node of the concrete type `ty` from already-decoded parts.
pub(crate) fn build_direct(ty: Arc<TypeNode>, defs: Arc<TypeDefs>, contents: Contents) -> DataHandle {
    let state = match contents {
        Contents::Num(m) => State::Num(m),
        Contents::Bytes(b) => State::Bytes(b),
        Contents::Struct(fields) => State::Struct {
            slots: fields
                .into_iter()
                .map(|f| f.map_or(Slot::Absent, Slot::Present))
                .collect(),
            sealed: 0,
        },
        Contents::Union(active, value) => State::Union {
            active,
            value: Slot::Present(value),
            sealed: false,
        },
        Contents::Array(elems) => State::Array {
            committed: 0,
            elems,
            sealed: 0,
        },
    };
    DataHandle::new(Arc::new(DirectNode {
        ty,
        defs,
        state: Mutex::new(state),
    }))
}

fn initial_state(ty: &Arc<TypeNode>, defs: &Arc<TypeDefs>) -> Result<State> {
    Ok(match &**ty {
        TypeNode::Num { kind, dims } => State::Num(MatrixValue::zeros(*kind, MatrixShape::initial(dims))?),
        TypeNode::Str { size, .. } => State::Bytes(vec![0; size.fixed().unwrap_or(0) as usize]),
        TypeNode::Struct {
            is_union: false,
            fields,
        } => {
            let mut slots = Vec::with_capacity(fields.len());
            for f in fields {
                slots.push(if f.optional {
                    Slot::Absent
                } else {
                    Slot::Present(new_direct_type(&f.typ, defs)?)
                });
            }
            State::Struct { slots, sealed: 0 }
        }
        TypeNode::Struct { is_union: true, fields } => State::Union {
            active: 0,
            value: Slot::Present(new_direct_type(&fields[0].typ, defs)?),
            sealed: false,
        },
        TypeNode::Array { size, elem } => {
            let n = size.fixed().unwrap_or(0) as usize;
            let mut elems = Vec::with_capacity(n);
            for _ in 0..n {
                elems.push(new_direct_type(elem, defs)?);
            }
            State::Array {
                committed: 0,
                elems,
                sealed: 0,
            }
        }
        TypeNode::NamedRef(_) | TypeNode::Any => unreachable!("resolved before construction"),
    })
}

enum Slot {
    Absent,
    Present(DataHandle),
    /// Already streamed to the output file and released.
    Committed,
}

enum State {
    Num(MatrixValue),
    Bytes(Vec<u8>),
    Struct {
        slots: Vec<Slot>,
        /// Fields below this index can no longer change presence.
        sealed: usize,
    },
    Union {
        active: usize,
        value: Slot,
        sealed: bool,
    },
    Array {
        /// Leading elements already streamed out and dropped.
        committed: usize,
        elems: Vec<DataHandle>,
        /// The array cannot shrink below this length.
        sealed: usize,
    },
}

pub(crate) struct DirectNode {
    ty: Arc<TypeNode>,
    defs: Arc<TypeDefs>,
    state: Mutex<State>,
}

impl DirectNode {
    fn field_name(&self, i: usize) -> String {
        self.ty.fields().map(|f| f[i].name.clone()).unwrap_or_default()
    }

    fn new_child(&self, ty: &Arc<TypeNode>) -> Result<DataHandle> {
        new_direct_type(ty, &self.defs)
    }

    pub(crate) fn node_count(&self) -> usize {
        let children: Vec<DataHandle> = match &*self.state.lock() {
            State::Num(_) | State::Bytes(_) => vec![],
            State::Struct { slots, .. } => slots
                .iter()
                .filter_map(|s| match s {
                    Slot::Present(h) => Some(h.clone()),
                    _ => None,
                })
                .collect(),
            State::Union { value, .. } => match value {
                Slot::Present(h) => vec![h.clone()],
                _ => vec![],
            },
            State::Array { elems, .. } => elems.clone(),
        };
        1 + children.iter().map(DataHandle::node_count).sum::<usize>()
    }

    /// Prevents children `0..k` from being removed or switched. Called once
    /// the stream writer has emitted their framing bytes.
    pub(crate) fn seal(&self, k: usize) {
        match &mut *self.state.lock() {
            State::Struct { sealed, .. } => *sealed = (*sealed).max(k),
            State::Union { sealed, .. } => *sealed |= k > 0,
            State::Array { sealed, .. } => *sealed = (*sealed).max(k),
            _ => {}
        }
    }

    /// Drops children `0..k` after they have been written out.
    pub(crate) fn release_prefix(&self, k: usize) {
        match &mut *self.state.lock() {
            State::Struct { slots, sealed } => {
                for slot in slots.iter_mut().take(k) {
                    *slot = Slot::Committed;
                }
                *sealed = (*sealed).max(k);
            }
            State::Union { value, sealed, .. } => {
                if k > 0 {
                    *value = Slot::Committed;
                    *sealed = true;
                }
            }
            State::Array {
                committed,
                elems,
                sealed,
            } => {
                if k > *committed {
                    let drop = (k - *committed).min(elems.len());
                    elems.drain(..drop);
                    *committed += drop;
                }
                *sealed = (*sealed).max(k);
            }
            _ => {}
        }
    }
}

impl DataImpl for DirectNode {
    fn typ(&self) -> Arc<TypeNode> {
        self.ty.clone()
    }

    fn defs(&self) -> Arc<TypeDefs> {
        self.defs.clone()
    }

    fn field(&self, i: usize) -> Result<DataHandle> {
        match &*self.state.lock() {
            State::Struct { slots, .. } => match &slots[i] {
                Slot::Present(h) => Ok(h.clone()),
                Slot::Absent => Err(Error::FieldNotPresent(self.field_name(i))),
                Slot::Committed => Err(Error::WriteOnlySession),
            },
            State::Union { active, value, .. } => {
                if i != *active {
                    return Err(Error::InactiveUnionField {
                        requested: i,
                        active: *active,
                    });
                }
                match value {
                    Slot::Present(h) => Ok(h.clone()),
                    _ => Err(Error::WriteOnlySession),
                }
            }
            _ => Err(self.wrong_type()),
        }
    }

    fn field_present(&self, i: usize) -> Result<bool> {
        match &*self.state.lock() {
            State::Struct { slots, .. } => match slots[i] {
                Slot::Present(_) => Ok(true),
                Slot::Absent => Ok(false),
                Slot::Committed => Err(Error::WriteOnlySession),
            },
            _ => Err(self.wrong_type()),
        }
    }

    fn set_field_present(&self, i: usize) -> Result<()> {
        let mut state = self.state.lock();
        let State::Struct { slots, sealed } = &mut *state else {
            return Err(self.wrong_type());
        };
        match slots[i] {
            Slot::Present(_) => Ok(()),
            Slot::Committed => Err(Error::WriteOnlySession),
            Slot::Absent if i < *sealed => Err(Error::WriteOnlySession),
            Slot::Absent => {
                let ty = self.ty.fields().unwrap()[i].typ.clone();
                slots[i] = Slot::Present(self.new_child(&ty)?);
                Ok(())
            }
        }
    }

    fn unset_field(&self, i: usize) -> Result<()> {
        let mut state = self.state.lock();
        let State::Struct { slots, sealed } = &mut *state else {
            return Err(self.wrong_type());
        };
        match slots[i] {
            Slot::Absent => Ok(()),
            Slot::Committed => Err(Error::WriteOnlySession),
            Slot::Present(_) if i < *sealed => Err(Error::WriteOnlySession),
            Slot::Present(_) => {
                slots[i] = Slot::Absent;
                Ok(())
            }
        }
    }

    fn active_field(&self) -> Result<usize> {
        match &*self.state.lock() {
            State::Union { active, .. } => Ok(*active),
            _ => Err(self.wrong_type()),
        }
    }

    fn set_active_field(&self, i: usize) -> Result<()> {
        let mut state = self.state.lock();
        let State::Union { active, value, sealed } = &mut *state else {
            return Err(self.wrong_type());
        };
        if *active == i {
            return Ok(());
        }
        if *sealed {
            return Err(Error::WriteOnlySession);
        }
        let ty = self.ty.fields().unwrap()[i].typ.clone();
        *value = Slot::Present(self.new_child(&ty)?);
        *active = i;
        Ok(())
    }

    fn n_elements(&self) -> Result<usize> {
        match &*self.state.lock() {
            State::Array { committed, elems, .. } => Ok(committed + elems.len()),
            _ => Err(self.wrong_type()),
        }
    }

    fn elem(&self, i: usize) -> Result<DataHandle> {
        match &*self.state.lock() {
            State::Array { committed, elems, .. } => {
                if i < *committed {
                    return Err(Error::WriteOnlySession);
                }
                elems.get(i - committed).cloned().ok_or(Error::IndexOutOfRange {
                    index: i,
                    len: committed + elems.len(),
                })
            }
            _ => Err(self.wrong_type()),
        }
    }

    fn resize(&self, n: usize) -> Result<()> {
        let TypeNode::Array { size, elem } = &*self.ty else {
            return Err(self.wrong_type());
        };
        if *size != Dim::Free {
            return Err(Error::FixedSize);
        }
        let mut state = self.state.lock();
        let State::Array {
            committed,
            elems,
            sealed,
        } = &mut *state
        else {
            return Err(self.wrong_type());
        };
        if n < (*committed).max(*sealed) {
            return Err(Error::WriteOnlySession);
        }
        let local = n - *committed;
        if local <= elems.len() {
            elems.truncate(local);
        } else {
            elems.reserve(local - elems.len());
            while elems.len() < local {
                elems.push(self.new_child(elem)?);
            }
        }
        Ok(())
    }

    fn read_num(&self) -> Result<MatrixValue> {
        match &*self.state.lock() {
            State::Num(m) => Ok(m.clone()),
            _ => Err(self.wrong_type()),
        }
    }

    fn write_num(&self, m: MatrixValue) -> Result<()> {
        match &mut *self.state.lock() {
            State::Num(cur) => {
                *cur = m;
                Ok(())
            }
            _ => Err(self.wrong_type()),
        }
    }

    fn read_bytes(&self) -> Result<Vec<u8>> {
        match &*self.state.lock() {
            State::Bytes(b) => Ok(b.clone()),
            _ => Err(self.wrong_type()),
        }
    }

    fn write_bytes(&self, bytes: Vec<u8>) -> Result<()> {
        match &mut *self.state.lock() {
            State::Bytes(b) => {
                *b = bytes;
                Ok(())
            }
            _ => Err(self.wrong_type()),
        }
    }

    fn as_any(&self) -> &dyn std::any::Any {
        self
    }
}
