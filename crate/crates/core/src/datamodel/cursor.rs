//! Depth traversal of a data tree in serialization order.

use super::DataHandle;
use crate::error::{Error, Result};
use crate::typesys::TypeNode;

/// Key marking "past the last sibling" in a [`CursorPos`].
pub const END: usize = usize::MAX;

/// A cursor position: one key per level, from the root level down.
///
/// Struct children are keyed by field index, the active union member by 0,
/// array elements by index, and the position after the last sibling by
/// [`END`]. Ordering positions lexicographically gives serialization order,
/// with a node ordered before everything inside it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CursorPos(pub Vec<usize>);

impl CursorPos {
    pub fn root() -> Self {
        CursorPos(vec![0])
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn is_end(&self) -> bool {
        self.0.last() == Some(&END)
    }

    /// Whether `self` names an ancestor of (or the same node as) `other`.
    pub fn is_prefix_of(&self, other: &CursorPos) -> bool {
        other.0.starts_with(&self.0)
    }
}

struct Level {
    parent: DataHandle,
    key: usize,
}

/// A walking position in a data tree.
pub struct TreeCursor {
    root: DataHandle,
    /// Enclosing composites with the key of the current child in each.
    stack: Vec<Level>,
    key: usize,
    current: DataHandle,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    Leaf,
    Struct,
    Union,
    Array,
}

fn kind_of(h: &DataHandle) -> Result<Kind> {
    Ok(match &*h.typ()? {
        TypeNode::Struct { is_union: false, .. } => Kind::Struct,
        TypeNode::Struct { is_union: true, .. } => Kind::Union,
        TypeNode::Array { .. } => Kind::Array,
        _ => Kind::Leaf,
    })
}

/// First child key of `parent` at or after `from`, if any.
pub(crate) fn child_key_from(parent: &DataHandle, from: usize) -> Result<Option<usize>> {
    match kind_of(parent)? {
        Kind::Leaf => Err(Error::NoChildren),
        Kind::Struct => {
            let n = parent.n_fields()?;
            for i in from..n {
                if parent.field_present_at(i)? {
                    return Ok(Some(i));
                }
            }
            Ok(None)
        }
        Kind::Union => Ok((from == 0).then_some(0)),
        Kind::Array => Ok((from < parent.n_elements()?).then_some(from)),
    }
}

/// The child of `parent` under `key`.
pub(crate) fn child_at(parent: &DataHandle, key: usize) -> Result<DataHandle> {
    match kind_of(parent)? {
        Kind::Leaf => Err(Error::NoChildren),
        Kind::Struct => parent.get_field_by_index(key),
        Kind::Union => {
            if key != 0 {
                return Err(Error::IndexOutOfRange { index: key, len: 1 });
            }
            parent.get_field_by_index(parent.active_field()?)
        }
        Kind::Array => parent.get_elem(key),
    }
}

impl TreeCursor {
    /// A cursor on `root`, which is the only item of the top level.
    pub fn new(root: &DataHandle) -> Self {
        let root = root.clone().transparent();
        TreeCursor {
            current: root.clone(),
            root,
            stack: Vec::new(),
            key: 0,
        }
    }

    /// A cursor moved to `pos`, if that position exists.
    pub fn at(root: &DataHandle, pos: &CursorPos) -> Result<Self> {
        let mut c = TreeCursor::new(root);
        let keys = &pos.0;
        if keys.is_empty() {
            return Ok(c);
        }
        match keys[0] {
            0 => {}
            END => c.next()?,
            k => return Err(Error::IndexOutOfRange { index: k, len: 1 }),
        }
        for &k in &keys[1..] {
            c.down()?;
            while !c.at_end() && c.key < k {
                c.next()?;
            }
            if c.key != k {
                return Err(Error::IndexOutOfRange { index: k, len: c.key });
            }
        }
        Ok(c)
    }

    pub fn root(&self) -> &DataHandle {
        &self.root
    }

    pub fn at_end(&self) -> bool {
        self.key == END
    }

    pub fn depth(&self) -> usize {
        self.stack.len()
    }

    pub fn is_root_level(&self) -> bool {
        self.stack.is_empty()
    }

    /// The item under the cursor.
    pub fn current(&self) -> Result<DataHandle> {
        if self.at_end() {
            return Err(Error::AtEnd);
        }
        Ok(self.current.clone())
    }

    /// The composite whose children are being walked (root level: none).
    pub fn parent(&self) -> Option<&DataHandle> {
        self.stack.last().map(|l| &l.parent)
    }

    /// Key of the current item within its parent.
    pub fn key(&self) -> usize {
        self.key
    }

    pub fn position(&self) -> CursorPos {
        let mut keys: Vec<usize> = self.stack.iter().map(|l| l.key).collect();
        keys.push(self.key);
        CursorPos(keys)
    }

    /// Moves to the next sibling, or past the last one.
    pub fn next(&mut self) -> Result<()> {
        if self.at_end() {
            return Err(Error::AtEnd);
        }
        let next = match self.stack.last() {
            None => None,
            Some(lvl) => child_key_from(&lvl.parent, self.key + 1)?,
        };
        self.set(next)
    }

    fn set(&mut self, key: Option<usize>) -> Result<()> {
        match key {
            Some(k) => {
                let parent = &self.stack.last().unwrap().parent;
                self.current = child_at(parent, k)?;
                self.key = k;
            }
            None => {
                self.current = DataHandle::null();
                self.key = END;
            }
        }
        Ok(())
    }

    /// Whether the current item is a struct, union or array. Empty
    /// composites have subs too; descending into one lands at the end.
    pub fn has_subs(&self) -> bool {
        !self.at_end() && matches!(kind_of(&self.current), Ok(k) if k != Kind::Leaf)
    }

    /// Descends to the first child of the current item.
    pub fn down(&mut self) -> Result<()> {
        if self.at_end() {
            return Err(Error::AtEnd);
        }
        if !self.has_subs() {
            return Err(Error::NoChildren);
        }
        let parent = self.current.clone();
        let first = child_key_from(&parent, 0)?;
        let parent_key = self.key;
        self.stack.push(Level {
            parent,
            key: parent_key,
        });
        self.set(first)
    }

    /// Returns to the enclosing composite, which becomes the current item.
    pub fn up(&mut self) -> Result<()> {
        let lvl = self.stack.pop().ok_or(Error::AtRoot)?;
        self.current = lvl.parent;
        self.key = lvl.key;
        Ok(())
    }

    /// Advances one step in preorder: into the current composite, else to
    /// the next item, climbing out of finished levels. Returns false once
    /// the whole tree has been walked.
    pub fn advance(&mut self) -> Result<bool> {
        if self.has_subs() {
            self.down()?;
        } else if !self.at_end() {
            self.next()?;
        }
        while self.at_end() {
            if self.is_root_level() {
                return Ok(false);
            }
            self.up()?;
            self.next()?;
        }
        Ok(true)
    }
}
