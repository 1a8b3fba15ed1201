//! Lazy, read-only access to binary data files.
//!
//! A [`FileSession`] scans only the header on open. Every data item is a
//! byte offset into the file; the offsets of members are computed on demand
//! by skipping over their predecessors, reading only the counts, tags,
//! selectors and `any` type texts that determine their lengths. Computed
//! offsets go into a bounded LRU cache shared by all handles of a session.

use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::path::Path;
use std::sync::Arc;

use lru::LruCache;
use parking_lot::Mutex;

use crate::bincodec::wire::{skip_value, SizeCache, WireReader, MAX_DECODE_DEPTH};
use crate::bincodec::{scan_header, ByteOrder, ByteSource, CountingSource, FileHeader, FileSource, Mode, SourceReader};
use crate::datamodel::{AnyNode, DataHandle, DataImpl, MatrixShape, MatrixValue};
use crate::error::{Error, Result};
use crate::typesys::{resolve_deep, TypeDefs, TypeEnv, TypeNode};

/// Offset cache capacity used when `STRUCTFILE_CACHE` is not set.
pub const DEFAULT_CACHE_ENTRIES: usize = 64 * 1024;

/// Environment variable overriding the offset cache capacity.
pub const CACHE_ENV: &str = "STRUCTFILE_CACHE";

fn cache_capacity_from_env() -> usize {
    std::env::var(CACHE_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_CACHE_ENTRIES)
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Key {
    /// Start of member `k` (including an optional tag) of the node at `offset`.
    Member { offset: u64, ty: usize, k: usize },
    /// Offset just past the value at `offset`.
    End { offset: u64, ty: usize },
}

fn type_id(t: &Arc<TypeNode>) -> usize {
    Arc::as_ptr(t) as usize
}

/// Read statistics of a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadStats {
    pub bytes_read: u64,
    pub read_calls: u64,
    pub file_len: u64,
}

struct Session {
    src: CountingSource<Arc<dyn ByteSource>>,
    header: FileHeader,
    order: ByteOrder,
    cache: Option<Mutex<LruCache<Key, u64>>>,
    sizes: Mutex<SizeCache>,
    anys: Mutex<HashMap<u64, TypeEnv>>,
}

impl Session {
    fn reader(&self, pos: u64) -> WireReader<'_> {
        WireReader::new(&self.src, pos, self.order)
    }

    fn cached(&self, key: Key) -> Option<u64> {
        self.cache.as_ref().and_then(|c| c.lock().get(&key).copied())
    }

    fn remember(&self, key: Key, v: u64) {
        if let Some(c) = &self.cache {
            c.lock().put(key, v);
        }
    }

    fn skip(&self, pos: u64, t: &Arc<TypeNode>, defs: &Arc<TypeDefs>, depth: usize) -> Result<u64> {
        let mut r = self.reader(pos);
        skip_value(&mut r, t, defs, &mut self.sizes.lock(), depth)?;
        Ok(r.pos)
    }

    fn fixed_size(&self, t: &Arc<TypeNode>, defs: &TypeDefs) -> Result<Option<u64>> {
        self.sizes.lock().fixed(t, defs)
    }

    /// Type text of the `any` value at `offset` and the offset of its payload.
    fn any_env(&self, offset: u64) -> Result<(TypeEnv, u64)> {
        if let Some(env) = self.anys.lock().get(&offset) {
            let mut r = self.reader(offset);
            let n = r.raw_count()?;
            return Ok((env.clone(), offset + 4 + n));
        }
        let mut r = self.reader(offset);
        let env = r.any_type()?;
        self.anys.lock().insert(offset, env.clone());
        Ok((env, r.pos))
    }
}

/// An open binary data file.
#[derive(Clone)]
pub struct FileSession {
    inner: Arc<Session>,
}

impl FileSession {
    /// Opens a binary file by path.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::open_source(Arc::new(FileSource::open(path)?))
    }

    /// Opens a binary file held by any positioned byte source.
    pub fn open_source(src: Arc<dyn ByteSource>) -> Result<Self> {
        Self::with_cache(src, cache_capacity_from_env())
    }

    /// As [`FileSession::open_source`] with an explicit cache capacity
    /// (0 disables the cache).
    pub fn with_cache(src: Arc<dyn ByteSource>, entries: usize) -> Result<Self> {
        let src = CountingSource::new(src);
        let header = scan_header(&mut std::io::BufReader::new(SourceReader::new(&src, 0)))?;
        let order = match header.mode {
            Mode::Binary(order) => order,
            Mode::Text => {
                return Err(Error::WrongMode {
                    found: Mode::Text.keyword().into(),
                    expected: "BINARY_BE or BINARY_LE".into(),
                })
            }
        };
        Ok(FileSession {
            inner: Arc::new(Session {
                src,
                header,
                order,
                cache: NonZeroUsize::new(entries).map(|n| Mutex::new(LruCache::new(n))),
                sizes: Mutex::new(SizeCache::default()),
                anys: Mutex::new(HashMap::new()),
            }),
        })
    }

    pub fn header(&self) -> &FileHeader {
        &self.inner.header
    }

    /// Lazy handle on the root value.
    pub fn root(&self) -> Result<DataHandle> {
        let env = &self.inner.header.env;
        make_node(&self.inner, &env.root, &env.defs, self.inner.header.data_start, 0)
    }

    pub fn stats(&self) -> ReadStats {
        ReadStats {
            bytes_read: self.inner.src.bytes_read(),
            read_calls: self.inner.src.read_calls(),
            file_len: self.inner.src.len(),
        }
    }

    pub fn reset_stats(&self) {
        self.inner.src.reset();
    }

    /// Byte offset of a lazy node's first byte.
    pub fn offset_of(node: &DataHandle) -> Option<u64> {
        stream_node(node).map(|n| n.offset)
    }

    /// Offset of member `k` of a lazy composite node. For optional struct
    /// members this is the offset of the presence tag.
    pub fn child_offset(node: &DataHandle, k: usize) -> Result<u64> {
        let n = stream_node(node).ok_or_else(|| Error::WrongType("in-memory data".into()))?;
        match &*n.ty {
            TypeNode::Struct { is_union: true, .. } => {
                let active = n.active_field()?;
                if k != active {
                    return Err(Error::InactiveUnionField { requested: k, active });
                }
                Ok(n.offset + 2)
            }
            TypeNode::Struct { fields, .. } => {
                if k >= fields.len() {
                    return Err(Error::IndexOutOfRange {
                        index: k,
                        len: fields.len(),
                    });
                }
                n.member_offset(k)
            }
            TypeNode::Array { .. } => {
                let len = n.n_elements()?;
                if k >= len {
                    return Err(Error::IndexOutOfRange { index: k, len });
                }
                n.member_offset(k)
            }
            _ => Err(Error::NoChildren),
        }
    }

    /// Encoded length of the value behind a lazy node.
    pub fn encoded_len(node: &DataHandle) -> Result<u64> {
        let n = stream_node(node).ok_or_else(|| Error::WrongType("in-memory data".into()))?;
        Ok(n.end()? - n.offset)
    }
}

fn stream_node(d: &DataHandle) -> Option<&StreamNode> {
    d.imp().ok()?.as_any().downcast_ref::<StreamNode>()
}

fn make_node(
    sess: &Arc<Session>,
    declared: &Arc<TypeNode>,
    defs: &Arc<TypeDefs>,
    offset: u64,
    depth: usize,
) -> Result<DataHandle> {
    if depth > MAX_DECODE_DEPTH {
        return Err(Error::TooDeep {
            limit: MAX_DECODE_DEPTH,
            offset,
        });
    }
    let ty = resolve_deep(declared, defs)?;
    if let TypeNode::Any = *ty {
        let (env, payload) = sess.any_env(offset)?;
        let target = make_node(sess, &env.root, &env.defs, payload, depth + 1)?;
        return Ok(DataHandle::new(Arc::new(AnyNode::bound(defs.clone(), target))));
    }
    Ok(DataHandle::new(Arc::new(StreamNode {
        sess: sess.clone(),
        ty,
        defs: defs.clone(),
        offset,
        depth,
    })))
}

/// A data item represented by its position in the file.
pub struct StreamNode {
    sess: Arc<Session>,
    ty: Arc<TypeNode>,
    defs: Arc<TypeDefs>,
    offset: u64,
    depth: usize,
}

impl StreamNode {
    fn key_member(&self, k: usize) -> Key {
        Key::Member {
            offset: self.offset,
            ty: type_id(&self.ty),
            k,
        }
    }

    fn end(&self) -> Result<u64> {
        let key = Key::End {
            offset: self.offset,
            ty: type_id(&self.ty),
        };
        if let Some(e) = self.sess.cached(key) {
            return Ok(e);
        }
        let e = self.sess.skip(self.offset, &self.ty, &self.defs, self.depth)?;
        self.sess.remember(key, e);
        Ok(e)
    }

    /// Offset of the first member, past any count prefix.
    fn body_start(&self) -> Result<u64> {
        match &*self.ty {
            TypeNode::Array { size, .. } if size.is_free() => Ok(self.offset + 4),
            _ => Ok(self.offset),
        }
    }

    fn member_type(&self, k: usize) -> (&Arc<TypeNode>, bool) {
        match &*self.ty {
            TypeNode::Struct { fields, .. } => (&fields[k].typ, fields[k].optional),
            TypeNode::Array { elem, .. } => (elem, false),
            _ => unreachable!(),
        }
    }

    /// End of member `k` given its start.
    fn member_end(&self, k: usize, start: u64) -> Result<u64> {
        let (t, optional) = self.member_type(k);
        let mut pos = start;
        if optional {
            if !self.sess.reader(pos).tag()? {
                return Ok(pos + 1);
            }
            pos += 1;
        }
        self.sess.skip(pos, t, &self.defs, self.depth + 1)
    }

    fn member_offset(&self, k: usize) -> Result<u64> {
        let base = self.body_start()?;
        if k == 0 {
            return Ok(base);
        }
        if let TypeNode::Array { elem, .. } = &*self.ty {
            if let Some(w) = self.sess.fixed_size(elem, &self.defs)? {
                return Ok(base + w * k as u64);
            }
        }
        if let Some(o) = self.sess.cached(self.key_member(k)) {
            return Ok(o);
        }
        let mut j = k - 1;
        let mut pos = base;
        while j > 0 {
            if let Some(o) = self.sess.cached(self.key_member(j)) {
                pos = o;
                break;
            }
            j -= 1;
        }
        for m in j..k {
            pos = self.member_end(m, pos)?;
            self.sess.remember(self.key_member(m + 1), pos);
        }
        Ok(pos)
    }

    fn child(&self, k: usize) -> Result<DataHandle> {
        let (t, optional) = self.member_type(k);
        let mut pos = self.member_offset(k)?;
        if optional {
            pos += 1;
        }
        make_node(&self.sess, t, &self.defs, pos, self.depth + 1)
    }
}

impl DataImpl for StreamNode {
    fn typ(&self) -> Arc<TypeNode> {
        self.ty.clone()
    }

    fn defs(&self) -> Arc<TypeDefs> {
        self.defs.clone()
    }

    fn field(&self, i: usize) -> Result<DataHandle> {
        match &*self.ty {
            TypeNode::Struct {
                is_union: false,
                fields,
            } => {
                if fields[i].optional && !self.field_present(i)? {
                    return Err(Error::FieldNotPresent(fields[i].name.clone()));
                }
                self.child(i)
            }
            TypeNode::Struct { is_union: true, fields } => {
                let active = self.active_field()?;
                if i != active {
                    return Err(Error::InactiveUnionField { requested: i, active });
                }
                make_node(&self.sess, &fields[i].typ, &self.defs, self.offset + 2, self.depth + 1)
            }
            _ => Err(self.wrong_type()),
        }
    }

    fn field_present(&self, i: usize) -> Result<bool> {
        match &*self.ty {
            TypeNode::Struct {
                is_union: false,
                fields,
            } => {
                if !fields[i].optional {
                    return Ok(true);
                }
                let at = self.member_offset(i)?;
                self.sess.reader(at).tag()
            }
            TypeNode::Struct { is_union: true, .. } => Ok(self.active_field()? == i),
            _ => Err(self.wrong_type()),
        }
    }

    fn active_field(&self) -> Result<usize> {
        match &*self.ty {
            TypeNode::Struct { is_union: true, fields } => self.sess.reader(self.offset).selector(fields.len()),
            _ => Err(self.wrong_type()),
        }
    }

    fn n_elements(&self) -> Result<usize> {
        match &*self.ty {
            TypeNode::Array { size, elem } => match size.fixed() {
                Some(n) => Ok(n as usize),
                None => {
                    let min = self.sess.sizes.lock().min(elem, &self.defs)?;
                    Ok(self.sess.reader(self.offset).count(min)? as usize)
                }
            },
            _ => Err(self.wrong_type()),
        }
    }

    fn elem(&self, i: usize) -> Result<DataHandle> {
        let len = self.n_elements()?;
        if i >= len {
            return Err(Error::IndexOutOfRange { index: i, len });
        }
        self.child(i)
    }

    fn read_num(&self) -> Result<MatrixValue> {
        match &*self.ty {
            TypeNode::Num { kind, dims } => {
                let mut r = self.sess.reader(self.offset);
                let (counts, total) = r.matrix_counts(*kind, dims)?;
                let data = r.cells(*kind, total)?;
                let shape = if dims.is_empty() {
                    MatrixShape::scalar()
                } else {
                    MatrixShape::from_counts(&counts)
                };
                MatrixValue::from_raw(*kind, shape, data)
            }
            _ => Err(self.wrong_type()),
        }
    }

    fn read_bytes(&self) -> Result<Vec<u8>> {
        match &*self.ty {
            TypeNode::Str { size, .. } => {
                let mut r = self.sess.reader(self.offset);
                let n = match size.fixed() {
                    Some(n) => n as u64,
                    None => r.count(1)?,
                };
                r.take(n)
            }
            _ => Err(self.wrong_type()),
        }
    }

    fn set_field_present(&self, _: usize) -> Result<()> {
        Err(Error::ReadOnly)
    }

    fn unset_field(&self, _: usize) -> Result<()> {
        Err(Error::ReadOnly)
    }

    fn set_active_field(&self, _: usize) -> Result<()> {
        Err(Error::ReadOnly)
    }

    fn resize(&self, _: usize) -> Result<()> {
        Err(Error::ReadOnly)
    }

    fn write_num(&self, _: MatrixValue) -> Result<()> {
        Err(Error::ReadOnly)
    }

    fn write_bytes(&self, _: Vec<u8>) -> Result<()> {
        Err(Error::ReadOnly)
    }

    fn actualize(&self, _: &TypeEnv) -> Result<DataHandle> {
        Err(Error::ReadOnly)
    }

    fn as_any(&self) -> &dyn std::any::Any {
        self
    }
}
