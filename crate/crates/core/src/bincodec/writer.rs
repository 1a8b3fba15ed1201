//! Streaming writer: emits a data tree in serialization order while it is
//! being built, back-patching the counts of free arrays.

use std::fs::File;
use std::io::{Seek, SeekFrom, Write};
use std::path::Path;
use std::sync::Arc;

use super::encode::{any_target, any_type_text, encode_leaf_or_prefix, encode_node, put_count};
use super::header::{write_header, FileHeader, Mode};
use super::ByteOrder;
use crate::datamodel::{new_direct, CursorPos, DataHandle, DirectNode, TreeCursor, CURSOR_END};
use crate::error::{Error, Result};
use crate::typesys::{resolve_deep, TypeDefs, TypeEnv, TypeNode};

#[derive(Clone)]
struct Frame {
    /// The open composite; `None` for the level holding the root.
    node: Option<DataHandle>,
    ty: Arc<TypeNode>,
    defs: Arc<TypeDefs>,
    /// Key of the next child to emit.
    key: usize,
    /// Offset of the pending count cell of a free array.
    count_cell: Option<u64>,
}

/// A pending count cell: where it is and how many elements it will hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub offset: u64,
    pub written: usize,
}

enum Action {
    Seal(DataHandle, usize),
    Release(DataHandle, usize),
}

/// Writes values to a seekable sink as a tree cursor advances.
pub struct StreamWriter<W: Write + Seek> {
    sink: W,
    order: ByteOrder,
    root_ty: Arc<TypeNode>,
    frames: Vec<Frame>,
    /// Bytes already in the sink.
    written: u64,
}

fn is_composite(t: &TypeNode) -> bool {
    matches!(t, TypeNode::Struct { .. } | TypeNode::Array { .. })
}

fn direct(h: &DataHandle) -> Option<&DirectNode> {
    h.imp().ok()?.as_any().downcast_ref::<DirectNode>()
}

impl<W: Write + Seek> StreamWriter<W> {
    /// Writes the header and prepares to stream a value of `header.env`.
    pub fn begin(header: &FileHeader, mut sink: W) -> Result<Self> {
        let Mode::Binary(order) = header.mode else {
            return Err(Error::WrongMode {
                found: header.mode.keyword().into(),
                expected: "BINARY_BE or BINARY_LE".into(),
            });
        };
        let start = sink.stream_position().map_err(|_| Error::NotSeekable)?;
        let n = write_header(header, &mut sink)?;
        Ok(StreamWriter {
            sink,
            order,
            root_ty: header.env.root.clone(),
            frames: vec![Frame {
                node: None,
                ty: header.env.root.clone(),
                defs: header.env.defs.clone(),
                key: 0,
                count_cell: None,
            }],
            written: start + n,
        })
    }

    /// Position of the next item to be written.
    pub fn position(&self) -> CursorPos {
        if self.frames.is_empty() {
            return CursorPos(vec![CURSOR_END]);
        }
        CursorPos(self.frames.iter().map(|f| f.key).collect())
    }

    /// Pending count cells, outermost first.
    pub fn regions(&self) -> Vec<Region> {
        self.frames
            .iter()
            .filter_map(|f| f.count_cell.map(|offset| Region { offset, written: f.key }))
            .collect()
    }

    pub fn is_finished(&self) -> bool {
        self.frames.is_empty()
    }

    /// Emits everything in `root` that precedes `up_to` in serialization
    /// order. Composites containing `up_to` stay open. On error nothing is
    /// written and the writer is unchanged.
    pub fn write_until(&mut self, root: &DataHandle, up_to: &CursorPos) -> Result<()> {
        if *up_to < self.position() {
            return Err(Error::CursorOrderViolation);
        }
        let saved = self.frames.clone();
        let mut buf = Vec::new();
        let mut patches = Vec::new();
        let mut actions = Vec::new();
        match self.advance(root, up_to, &mut buf, &mut patches, &mut actions) {
            Ok(()) => {}
            Err(e) => {
                self.frames = saved;
                return Err(match e {
                    Error::Io(_) | Error::CursorOrderViolation => e,
                    other => Error::IncompletePrefix(Box::new(other)),
                });
            }
        }
        let buf_start = self.written;
        let mut late = Vec::new();
        for (offset, count) in patches {
            if offset >= buf_start {
                let o = (offset - buf_start) as usize;
                let mut cell = Vec::with_capacity(4);
                put_count(&mut cell, count, self.order)?;
                buf[o..o + 4].copy_from_slice(&cell);
            } else {
                late.push((offset, count));
            }
        }
        self.sink.write_all(&buf)?;
        self.written += buf.len() as u64;
        if !late.is_empty() {
            for (offset, count) in late {
                self.sink
                    .seek(SeekFrom::Start(offset))
                    .map_err(|_| Error::NotSeekable)?;
                put_count(&mut self.sink, count, self.order)?;
            }
            self.sink
                .seek(SeekFrom::Start(self.written))
                .map_err(|_| Error::NotSeekable)?;
        }
        for a in actions {
            match a {
                Action::Seal(h, k) => {
                    if let Some(d) = direct(&h) {
                        d.seal(k)
                    }
                }
                Action::Release(h, k) => {
                    if let Some(d) = direct(&h) {
                        d.release_prefix(k)
                    }
                }
            }
        }
        Ok(())
    }

    fn child_of(&self, f: &Frame, root: &DataHandle) -> Result<Option<(DataHandle, Arc<TypeNode>, bool)>> {
        let Some(node) = &f.node else {
            if f.key > 0 {
                return Ok(None);
            }
            return Ok(Some((root.clone(), self.root_ty.clone(), false)));
        };
        Ok(match &*f.ty {
            TypeNode::Struct {
                is_union: false,
                fields,
            } => match fields.get(f.key) {
                None => None,
                Some(field) => {
                    if field.optional && !node.field_present_at(f.key)? {
                        Some((DataHandle::null(), field.typ.clone(), true))
                    } else {
                        Some((node.get_field_by_index(f.key)?, field.typ.clone(), field.optional))
                    }
                }
            },
            TypeNode::Struct { is_union: true, fields } => {
                if f.key > 0 {
                    None
                } else {
                    let a = node.active_field()?;
                    Some((node.get_field_by_index(a)?, fields[a].typ.clone(), false))
                }
            }
            TypeNode::Array { elem, .. } => {
                if f.key >= node.n_elements()? {
                    None
                } else {
                    Some((node.get_elem(f.key)?, elem.clone(), false))
                }
            }
            _ => None,
        })
    }

    fn advance(
        &mut self,
        root: &DataHandle,
        up_to: &CursorPos,
        buf: &mut Vec<u8>,
        patches: &mut Vec<(u64, usize)>,
        actions: &mut Vec<Action>,
    ) -> Result<()> {
        let order = self.order;
        loop {
            let Some(top) = self.frames.last().cloned() else {
                return Ok(());
            };
            let child_pos = self.position();
            let child = self.child_of(&top, root)?;
            let Some((child, declared, optional)) = child else {
                let frame_path = CursorPos(child_pos.0[..child_pos.0.len() - 1].to_vec());
                if !frame_path.0.is_empty() && frame_path.is_prefix_of(up_to) {
                    return Ok(());
                }
                self.frames.pop();
                if let Some(cell) = top.count_cell {
                    patches.push((cell, top.key));
                }
                if let Some(parent) = self.frames.last_mut() {
                    parent.key += 1;
                    if let Some(p) = &parent.node {
                        actions.push(Action::Release(p.clone(), parent.key));
                    }
                }
                continue;
            };
            if child_pos >= *up_to {
                return Ok(());
            }
            let inside = child_pos.is_prefix_of(up_to);
            if optional {
                let present = !child.is_null();
                buf.push(present as u8);
                if let Some(p) = &top.node {
                    actions.push(Action::Seal(p.clone(), top.key + 1));
                }
                if !present {
                    self.frames.last_mut().unwrap().key += 1;
                    continue;
                }
            }
            let mut resolved = resolve_deep(&declared, &top.defs)?;
            let mut target = child.clone();
            let mut defs = top.defs.clone();
            if inside && matches!(*resolved, TypeNode::Any) {
                target = any_target(&child)?;
                let ty = target.typ()?;
                if is_composite(&ty) {
                    let text = any_type_text(&target)?;
                    put_count(buf, text.len(), order)?;
                    buf.extend_from_slice(text.as_bytes());
                    resolved = ty;
                    defs = target.defs()?;
                }
            }
            if inside && is_composite(&resolved) {
                let cell = match &*resolved {
                    TypeNode::Array { size, .. } if size.is_free() => Some(self.written + buf.len() as u64),
                    _ => None,
                };
                encode_leaf_or_prefix(&resolved, &target, order, buf)?;
                if resolved.is_union() {
                    actions.push(Action::Seal(target.clone(), 1));
                }
                self.frames.push(Frame {
                    node: Some(target),
                    ty: resolved,
                    defs,
                    key: 0,
                    count_cell: cell,
                });
                continue;
            }
            encode_node(&declared, &top.defs, &child, order, buf)?;
            let f = self.frames.last_mut().unwrap();
            f.key += 1;
            if let Some(p) = &f.node {
                actions.push(Action::Release(p.clone(), f.key));
            }
        }
    }

    /// Writes whatever remains, patches all counts and returns the sink.
    pub fn finish(mut self, root: &DataHandle) -> Result<W> {
        self.write_until(root, &CursorPos(vec![CURSOR_END]))?;
        self.sink.flush()?;
        Ok(self.sink)
    }
}

/// An output file being populated in memory and streamed out in pieces.
pub struct DataFile<W: Write + Seek> {
    root: DataHandle,
    writer: StreamWriter<W>,
}

impl DataFile<File> {
    pub fn create(path: impl AsRef<Path>, env: &TypeEnv, order: ByteOrder) -> Result<Self> {
        DataFile::new(File::create(path)?, FileHeader::new(env.clone(), Mode::Binary(order)))
    }
}

impl<W: Write + Seek> DataFile<W> {
    pub fn new(sink: W, header: FileHeader) -> Result<Self> {
        let root = new_direct(&header.env)?;
        let writer = StreamWriter::begin(&header, sink)?;
        Ok(DataFile { root, writer })
    }

    /// The root object to populate.
    pub fn root(&self) -> DataHandle {
        self.root.clone()
    }

    /// Writes all data before `up_to` and releases it from memory.
    /// Committed data can no longer be read or changed through handles.
    pub fn commit(&mut self, up_to: &CursorPos) -> Result<()> {
        self.writer.write_until(&self.root, up_to)
    }

    /// Commits everything before the cursor's current item.
    pub fn commit_cursor(&mut self, c: &TreeCursor) -> Result<()> {
        self.commit(&c.position())
    }

    pub fn writer(&self) -> &StreamWriter<W> {
        &self.writer
    }

    /// Writes the remaining data and returns the sink.
    pub fn close(self) -> Result<W> {
        self.writer.finish(&self.root)
    }
}
