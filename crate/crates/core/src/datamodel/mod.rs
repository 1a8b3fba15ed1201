//! The uniform data layer.
//!
//! Applications see every data object through a [`DataHandle`], a
//! reference-counted pointer to some [`DataImpl`]. Representations (the
//! in-memory tree, lazy stream readers, block stores, `any` forwarders)
//! implement `DataImpl` at a raw level; value conversion, range checks and
//! shape checks live here in the handle so every representation behaves the
//! same.

mod any;
mod cursor;
mod direct;
mod matrix;
mod ops;
mod path;

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::typesys::{Dim, TypeDefs, TypeEnv, TypeNode};

pub use any::AnyNode;
pub use cursor::{CursorPos, TreeCursor, END as CURSOR_END};
pub(crate) use direct::{build_direct, Contents, DirectNode};
pub use direct::{new_direct, new_direct_type};
pub use matrix::{f64_to_quad, quad_to_f64, MatrixShape, MatrixValue};
pub use ops::{copy_into, deep_eq};
pub use path::{parse_path, path_get, PathStep};

/// Operations every data representation provides.
///
/// Indices are 0-based. The defaults reject the operation with
/// [`Error::WrongType`], so a representation only implements what applies to
/// its node kinds. Callers go through [`DataHandle`], which has already
/// validated arguments against the type by the time these are called.
pub trait DataImpl: Send + Sync {
    /// Concrete type of this node (never a named reference). An unbound
    /// `any` node reports [`TypeNode::Any`].
    fn typ(&self) -> Arc<TypeNode>;

    /// Typedefs that named references inside [`DataImpl::typ`] resolve in.
    fn defs(&self) -> Arc<TypeDefs>;

    /// Member `i` of a struct or the active member of a union.
    fn field(&self, i: usize) -> Result<DataHandle> {
        let _ = i;
        Err(self.wrong_type())
    }

    fn field_present(&self, i: usize) -> Result<bool> {
        let _ = i;
        Err(self.wrong_type())
    }

    fn set_field_present(&self, i: usize) -> Result<()> {
        let _ = i;
        Err(self.wrong_type())
    }

    fn unset_field(&self, i: usize) -> Result<()> {
        let _ = i;
        Err(self.wrong_type())
    }

    fn active_field(&self) -> Result<usize> {
        Err(self.wrong_type())
    }

    fn set_active_field(&self, i: usize) -> Result<()> {
        let _ = i;
        Err(self.wrong_type())
    }

    fn n_elements(&self) -> Result<usize> {
        Err(self.wrong_type())
    }

    fn elem(&self, i: usize) -> Result<DataHandle> {
        let _ = i;
        Err(self.wrong_type())
    }

    fn resize(&self, n: usize) -> Result<()> {
        let _ = n;
        Err(self.wrong_type())
    }

    /// Numeric payload in canonical (first-index-fastest) order.
    fn read_num(&self) -> Result<MatrixValue> {
        Err(self.wrong_type())
    }

    /// Stores a payload that already matches the node's kind and dims.
    fn write_num(&self, m: MatrixValue) -> Result<()> {
        let _ = m;
        Err(self.wrong_type())
    }

    fn read_bytes(&self) -> Result<Vec<u8>> {
        Err(self.wrong_type())
    }

    /// Stores string bytes; fixed-size strings arrive already padded.
    fn write_bytes(&self, bytes: Vec<u8>) -> Result<()> {
        let _ = bytes;
        Err(self.wrong_type())
    }

    /// Binds an unbound `any` node to a fresh target of the given type and
    /// returns the target.
    fn actualize(&self, env: &TypeEnv) -> Result<DataHandle> {
        let _ = env;
        Err(Error::NotAnyType)
    }

    /// Named types of the node's declared type; differs from
    /// [`DataImpl::defs`] only for `any` forwarders.
    fn declared_defs(&self) -> Arc<TypeDefs> {
        self.defs()
    }

    /// The bound target when this node is an `any` forwarder.
    fn any_target(&self) -> Option<DataHandle> {
        None
    }

    fn is_unbound_any(&self) -> bool {
        false
    }

    /// Concrete node for downcasting by representations that need it.
    fn as_any(&self) -> &dyn std::any::Any;

    fn wrong_type(&self) -> Error {
        Error::WrongType(self.typ().class_name().to_string())
    }
}

/// Reference-counted handle to a data object. Cloning a handle aliases the
/// same object; use [`copy_into`] for a deep copy.
#[derive(Clone, Default)]
pub struct DataHandle(Option<Arc<dyn DataImpl>>);

impl fmt::Debug for DataHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.0 {
            None => f.write_str("DataHandle(null)"),
            Some(imp) => write!(f, "DataHandle({})", imp.typ().class_name()),
        }
    }
}

impl DataHandle {
    pub fn new(imp: Arc<dyn DataImpl>) -> Self {
        DataHandle(Some(imp))
    }

    pub fn null() -> Self {
        DataHandle(None)
    }

    pub fn is_null(&self) -> bool {
        self.0.is_none()
    }

    pub fn imp(&self) -> Result<&Arc<dyn DataImpl>> {
        self.0.as_ref().ok_or(Error::NullHandle)
    }

    /// Whether two handles point at the same object.
    pub fn ptr_eq(&self, other: &DataHandle) -> bool {
        match (&self.0, &other.0) {
            (Some(a), Some(b)) => std::ptr::addr_eq(Arc::as_ptr(a), Arc::as_ptr(b)),
            (None, None) => true,
            _ => false,
        }
    }

    pub fn typ(&self) -> Result<Arc<TypeNode>> {
        Ok(self.imp()?.typ())
    }

    pub fn defs(&self) -> Result<Arc<TypeDefs>> {
        Ok(self.imp()?.defs())
    }

    /// The type of this object as a standalone unit.
    pub fn type_env(&self) -> Result<TypeEnv> {
        let imp = self.imp()?;
        Ok(TypeEnv {
            defs: imp.defs(),
            root: imp.typ(),
        })
    }

    fn struct_fields(&self) -> Result<(Arc<TypeNode>, bool)> {
        let t = self.typ()?;
        match &*t {
            TypeNode::Struct { is_union, .. } => {
                let u = *is_union;
                Ok((t, u))
            }
            TypeNode::Any => Err(Error::UnboundAny),
            other => Err(Error::WrongType(other.class_name().to_string())),
        }
    }

    pub fn n_fields(&self) -> Result<usize> {
        let (t, _) = self.struct_fields()?;
        Ok(t.fields().unwrap().len())
    }

    pub fn field_name(&self, i: usize) -> Result<String> {
        let (t, _) = self.struct_fields()?;
        let fields = t.fields().unwrap();
        fields.get(i).map(|f| f.name.clone()).ok_or(Error::IndexOutOfRange {
            index: i,
            len: fields.len(),
        })
    }

    pub fn field_index(&self, name: &str) -> Result<usize> {
        let (t, _) = self.struct_fields()?;
        t.field_index(name).ok_or_else(|| Error::NoSuchField(name.to_string()))
    }

    fn check_field_index(&self, i: usize) -> Result<Arc<TypeNode>> {
        let (t, _) = self.struct_fields()?;
        let len = t.fields().unwrap().len();
        if i >= len {
            return Err(Error::IndexOutOfRange { index: i, len });
        }
        Ok(t)
    }

    /// Member by name. A bound `any` member is returned as its target.
    pub fn get_field(&self, name: &str) -> Result<DataHandle> {
        let i = self.field_index(name)?;
        self.get_field_by_index(i)
    }

    pub fn get_field_by_index(&self, i: usize) -> Result<DataHandle> {
        self.check_field_index(i)?;
        Ok(self.imp()?.field(i)?.transparent())
    }

    /// Replaces a bound `any` forwarder by its target.
    pub fn transparent(self) -> DataHandle {
        match self.0.as_ref().and_then(|imp| imp.any_target()) {
            Some(target) => target,
            None => self,
        }
    }

    fn optional_index(&self, name: &str) -> Result<usize> {
        let i = self.field_index(name)?;
        let t = self.typ()?;
        let field = &t.fields().unwrap()[i];
        if !field.optional {
            return Err(Error::NotOptional(field.name.clone()));
        }
        Ok(i)
    }

    pub fn field_present(&self, name: &str) -> Result<bool> {
        let i = self.field_index(name)?;
        self.field_present_at(i)
    }

    pub fn field_present_at(&self, i: usize) -> Result<bool> {
        let t = self.check_field_index(i)?;
        if t.is_union() {
            return Ok(self.active_field()? == i);
        }
        if !t.fields().unwrap()[i].optional {
            return Ok(true);
        }
        self.imp()?.field_present(i)
    }

    /// Makes an optional field present with its initial value (no-op if it
    /// already is).
    pub fn set_field_present(&self, name: &str) -> Result<()> {
        let i = self.optional_index(name)?;
        self.imp()?.set_field_present(i)
    }

    pub fn set_field_present_at(&self, i: usize) -> Result<()> {
        let name = self.field_name(i)?;
        self.set_field_present(&name)
    }

    pub fn unset_field(&self, name: &str) -> Result<()> {
        let i = self.optional_index(name)?;
        self.imp()?.unset_field(i)
    }

    pub fn unset_field_at(&self, i: usize) -> Result<()> {
        let name = self.field_name(i)?;
        self.unset_field(&name)
    }

    pub fn active_field(&self) -> Result<usize> {
        let (_, is_union) = self.struct_fields()?;
        if !is_union {
            return Err(Error::WrongType("struct".into()));
        }
        self.imp()?.active_field()
    }

    /// Selects a union variant; switching resets the new variant to its
    /// initial value.
    pub fn set_active_field(&self, i: usize) -> Result<()> {
        let (t, is_union) = self.struct_fields()?;
        if !is_union {
            return Err(Error::WrongType("struct".into()));
        }
        let len = t.fields().unwrap().len();
        if i >= len {
            return Err(Error::IndexOutOfRange { index: i, len });
        }
        self.imp()?.set_active_field(i)
    }

    fn array_size(&self) -> Result<Dim> {
        match &*self.typ()? {
            TypeNode::Array { size, .. } => Ok(*size),
            TypeNode::Any => Err(Error::UnboundAny),
            other => Err(Error::WrongType(other.class_name().to_string())),
        }
    }

    pub fn n_elements(&self) -> Result<usize> {
        self.array_size()?;
        self.imp()?.n_elements()
    }

    pub fn get_elem(&self, i: usize) -> Result<DataHandle> {
        let len = self.n_elements()?;
        if i >= len {
            return Err(Error::IndexOutOfRange { index: i, len });
        }
        Ok(self.imp()?.elem(i)?.transparent())
    }

    pub fn resize(&self, n: usize) -> Result<()> {
        if !self.array_size()?.is_free() {
            return Err(Error::FixedSize);
        }
        self.imp()?.resize(n)
    }

    fn num_kind(&self) -> Result<(crate::typesys::NumKind, Vec<Dim>)> {
        match &*self.typ()? {
            TypeNode::Num { kind, dims } => Ok((*kind, dims.clone())),
            TypeNode::Any => Err(Error::UnboundAny),
            other => Err(Error::WrongType(other.class_name().to_string())),
        }
    }

    fn scalar_kind(&self) -> Result<crate::typesys::NumKind> {
        let (kind, dims) = self.num_kind()?;
        if !dims.is_empty() {
            return Err(Error::WrongType("matrix".into()));
        }
        Ok(kind)
    }

    /// Integer value of an integer scalar.
    pub fn get_int(&self) -> Result<i64> {
        let kind = self.scalar_kind()?;
        if kind.is_float() {
            return Err(Error::WrongType(kind.to_string()));
        }
        let v = self.imp()?.read_num()?.int(0).unwrap();
        i64::try_from(v).map_err(|_| Error::LossyRead(v.to_string()))
    }

    /// Unsigned value of an integer scalar (negative values are an error).
    pub fn get_uint(&self) -> Result<u64> {
        let kind = self.scalar_kind()?;
        if kind.is_float() {
            return Err(Error::WrongType(kind.to_string()));
        }
        let v = self.imp()?.read_num()?.int(0).unwrap();
        u64::try_from(v).map_err(|_| Error::LossyRead(v.to_string()))
    }

    /// Floating-point value of a numeric scalar; integers widen.
    pub fn get_double(&self) -> Result<f64> {
        self.scalar_kind()?;
        Ok(self.imp()?.read_num()?.float(0))
    }

    pub fn get_string(&self) -> Result<Vec<u8>> {
        match &*self.typ()? {
            TypeNode::Str { .. } => self.imp()?.read_bytes(),
            TypeNode::Any => Err(Error::UnboundAny),
            other => Err(Error::WrongType(other.class_name().to_string())),
        }
    }

    /// String contents decoded as UTF-8 (lossy).
    pub fn get_text(&self) -> Result<String> {
        Ok(String::from_utf8_lossy(&self.get_string()?).into_owned())
    }

    pub fn get_matrix(&self) -> Result<MatrixValue> {
        self.num_kind()?;
        self.imp()?.read_num()
    }

    pub fn assign_int(&self, v: i64) -> Result<()> {
        self.assign_scalar_int(v as i128)
    }

    pub fn assign_uint(&self, v: u64) -> Result<()> {
        self.assign_scalar_int(v as i128)
    }

    fn assign_scalar_int(&self, v: i128) -> Result<()> {
        let kind = self.scalar_kind()?;
        let mut m = MatrixValue::scalar_zero(kind);
        m.set_int(0, v)?;
        self.imp()?.write_num(m)
    }

    /// Stores a float; integer targets accept only integral values in range.
    pub fn assign_double(&self, v: f64) -> Result<()> {
        let kind = self.scalar_kind()?;
        let mut m = MatrixValue::scalar_zero(kind);
        if kind.is_float() {
            m.set_float(0, v)?;
        } else {
            if v.fract() != 0.0 || !v.is_finite() {
                return Err(Error::WrongType(format!("cannot store {v} in {kind}")));
            }
            m.set_int(0, v as i128)?;
        }
        self.imp()?.write_num(m)
    }

    /// Stores string bytes; fixed-size strings are zero-padded.
    pub fn assign_string(&self, v: impl AsRef<[u8]>) -> Result<()> {
        let v = v.as_ref();
        let size = match &*self.typ()? {
            TypeNode::Str { size, .. } => *size,
            TypeNode::Any => return Err(Error::UnboundAny),
            other => return Err(Error::WrongType(other.class_name().to_string())),
        };
        let mut bytes = v.to_vec();
        if let Dim::Fixed(n) = size {
            let n = n as usize;
            if bytes.len() > n {
                return Err(Error::StringTooLong {
                    len: bytes.len(),
                    max: n,
                });
            }
            bytes.resize(n, 0);
        }
        self.imp()?.write_bytes(bytes)
    }

    /// Stores a matrix. The kind must match; fixed dims must match and free
    /// dims take the shape's count. Cells are reordered to canonical order.
    pub fn assign_matrix(&self, m: &MatrixValue) -> Result<()> {
        let (kind, dims) = self.num_kind()?;
        if m.kind != kind {
            return Err(Error::WrongType(format!("matrix of {} assigned to {kind}", m.kind)));
        }
        if !m.shape.conforms_to(&dims) {
            return Err(Error::ShapeMismatch(format!(
                "shape {:?} does not fit dims [{}]",
                m.shape.counts(),
                dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
            )));
        }
        self.imp()?.write_num(m.to_canonical())
    }

    /// Binds an unbound `any` node; afterwards the handle behaves as data of
    /// type `env.root`. Returns the new target.
    pub fn actualize_type(&self, env: &TypeEnv) -> Result<DataHandle> {
        self.imp()?.actualize(env)
    }

    pub fn is_unbound_any(&self) -> bool {
        self.0.as_ref().is_some_and(|imp| imp.is_unbound_any())
    }

    /// Copies the contents of `src` into this object.
    pub fn copy_from(&self, src: &DataHandle) -> Result<()> {
        copy_into(self, src)
    }

    /// Number of in-memory tree nodes reachable from this handle (other
    /// representations count as one node).
    pub fn node_count(&self) -> usize {
        match self.0.as_ref() {
            None => 0,
            Some(imp) => {
                if let Some(node) = imp.as_any().downcast_ref::<DirectNode>() {
                    node.node_count()
                } else if let Some(any) = imp.as_any().downcast_ref::<AnyNode>() {
                    1 + any.target().map_or(0, |t| t.node_count())
                } else {
                    1
                }
            }
        }
    }
}

impl From<Arc<dyn DataImpl>> for DataHandle {
    fn from(imp: Arc<dyn DataImpl>) -> Self {
        DataHandle::new(imp)
    }
}
