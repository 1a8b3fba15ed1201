//! Late-bound `any` nodes that forward every operation to their target.

use std::sync::Arc;

use parking_lot::Mutex;

use super::{new_direct, DataHandle, DataImpl, MatrixValue};
use crate::error::{Error, Result};
use crate::typesys::{TypeDefs, TypeEnv, TypeNode};

pub struct AnyNode {
    defs: Arc<TypeDefs>,
    target: Mutex<Option<DataHandle>>,
}

impl AnyNode {
    pub fn unbound(defs: Arc<TypeDefs>) -> Self {
        AnyNode {
            defs,
            target: Mutex::new(None),
        }
    }

    /// A forwarder already bound to `target`.
    pub fn bound(defs: Arc<TypeDefs>, target: DataHandle) -> Self {
        AnyNode {
            defs,
            target: Mutex::new(Some(target)),
        }
    }

    pub fn target(&self) -> Option<DataHandle> {
        self.target.lock().clone()
    }

    fn fwd(&self) -> Result<DataHandle> {
        self.target().ok_or(Error::UnboundAny)
    }
}

impl DataImpl for AnyNode {
    fn typ(&self) -> Arc<TypeNode> {
        match self.target() {
            Some(t) => t.typ().unwrap_or_else(|_| Arc::new(TypeNode::Any)),
            None => Arc::new(TypeNode::Any),
        }
    }

    fn defs(&self) -> Arc<TypeDefs> {
        match self.target() {
            Some(t) => t.defs().unwrap_or_else(|_| self.defs.clone()),
            None => self.defs.clone(),
        }
    }

    fn declared_defs(&self) -> Arc<TypeDefs> {
        self.defs.clone()
    }

    fn field(&self, i: usize) -> Result<DataHandle> {
        self.fwd()?.imp()?.field(i)
    }

    fn field_present(&self, i: usize) -> Result<bool> {
        self.fwd()?.imp()?.field_present(i)
    }

    fn set_field_present(&self, i: usize) -> Result<()> {
        self.fwd()?.imp()?.set_field_present(i)
    }

    fn unset_field(&self, i: usize) -> Result<()> {
        self.fwd()?.imp()?.unset_field(i)
    }

    fn active_field(&self) -> Result<usize> {
        self.fwd()?.imp()?.active_field()
    }

    fn set_active_field(&self, i: usize) -> Result<()> {
        self.fwd()?.imp()?.set_active_field(i)
    }

    fn n_elements(&self) -> Result<usize> {
        self.fwd()?.imp()?.n_elements()
    }

    fn elem(&self, i: usize) -> Result<DataHandle> {
        self.fwd()?.imp()?.elem(i)
    }

    fn resize(&self, n: usize) -> Result<()> {
        self.fwd()?.imp()?.resize(n)
    }

    fn read_num(&self) -> Result<MatrixValue> {
        self.fwd()?.imp()?.read_num()
    }

    fn write_num(&self, m: MatrixValue) -> Result<()> {
        self.fwd()?.imp()?.write_num(m)
    }

    fn read_bytes(&self) -> Result<Vec<u8>> {
        self.fwd()?.imp()?.read_bytes()
    }

    fn write_bytes(&self, bytes: Vec<u8>) -> Result<()> {
        self.fwd()?.imp()?.write_bytes(bytes)
    }

    fn actualize(&self, env: &TypeEnv) -> Result<DataHandle> {
        let mut target = self.target.lock();
        if target.is_some() {
            return Err(Error::AlreadyBound);
        }
        let t = new_direct(env)?;
        *target = Some(t.clone());
        Ok(t)
    }

    fn any_target(&self) -> Option<DataHandle> {
        self.target()
    }

    fn is_unbound_any(&self) -> bool {
        self.target.lock().is_none()
    }

    fn as_any(&self) -> &dyn std::any::Any {
        self
    }
}
