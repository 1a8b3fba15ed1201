//! A block-structured random-access file managed like a heap, and the
//! mapping of structured data onto its blocks.
//!
//! The file starts with a 64-byte superblock:
//!
//! | bytes  | contents                                   |
//! |--------|--------------------------------------------|
//! | 0..8   | magic `SFSTORE\0`                          |
//! | 8..12  | store format version (1)                   |
//! | 16..24 | address of the root value block            |
//! | 24..32 | address of the block holding the type text |
//! | 32..40 | first block of the free list               |
//! | 40..48 | length of the block area                   |
//!
//! Blocks follow back to back. Each has a 16-byte header (capacity in
//! 16-byte units, flags with bit 0 = free, used payload size, block magic)
//! and a payload whose capacity is a power of two of at least 16 bytes when
//! first allocated. Free blocks are chained in address order through the
//! first 8 payload bytes. All integers are big-endian. An address is the
//! file offset of a block header; 0 is the null address.
//!
//! Data written through [`BlockStore::root`] is laid out as described in
//! the `data` module: fixed-size members inline, variable-size members in
//! blocks of their own.

mod data;
mod heap;

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::os::fd::AsRawFd;
use std::path::Path;
use std::sync::Arc;

pub use data::LayoutReport;
pub use heap::{
    capacity_for, LockPolicy, VerifyReport, BLOCK_HEADER_SIZE, MAX_BLOCK_SIZE, MIN_CAPACITY, SUPERBLOCK_SIZE,
};

use crate::bincodec::{write_file, ByteOrder, Mode};
use crate::datamodel::DataHandle;
use crate::ddlparse::parse_type_text;
use crate::error::{Error, Result};
use crate::typesys::{print_env, TypeEnv};
use data::{root_node, Layout};
use heap::Heap;

fn lock_file(file: &File, exclusive: bool) -> Result<()> {
    let op = if exclusive { libc::LOCK_EX } else { libc::LOCK_SH } | libc::LOCK_NB;
    // SAFETY: the descriptor is owned by `file` and stays open for the call.
    let rc = unsafe { libc::flock(file.as_raw_fd(), op) };
    if rc != 0 {
        let err = std::io::Error::last_os_error();
        if err.raw_os_error() == Some(libc::EWOULDBLOCK) {
            return Err(Error::StoreBusy);
        }
        return Err(err.into());
    }
    Ok(())
}

/// An open block store.
pub struct BlockStore {
    heap: Arc<Heap>,
    layout: Arc<Layout>,
    env: TypeEnv,
}

impl BlockStore {
    /// Creates (or truncates) a store holding one value of `env.root`.
    pub fn create(path: impl AsRef<Path>, env: &TypeEnv) -> Result<BlockStore> {
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(path)?;
        lock_file(&file, true)?;
        let heap = Arc::new(Heap::create(file)?);
        let text = print_env(env);
        let types = heap.alloc(text.len() as u64)?;
        heap.write_at(types + BLOCK_HEADER_SIZE, text.as_bytes())?;
        heap.set_root(0, Some(types))?;
        let env = parse_type_text(&text)?;
        let store = BlockStore::assemble(heap, env);
        store.root()?.imp()?;
        store.materialize_root()?;
        Ok(store)
    }

    /// Opens an existing store for reading and writing.
    pub fn open(path: impl AsRef<Path>) -> Result<BlockStore> {
        BlockStore::open_with(path, true)
    }

    /// Opens an existing store for reading; any number of readers may share it.
    pub fn open_read_only(path: impl AsRef<Path>) -> Result<BlockStore> {
        BlockStore::open_with(path, false)
    }

    fn open_with(path: impl AsRef<Path>, writable: bool) -> Result<BlockStore> {
        let file = OpenOptions::new().read(true).write(writable).open(path)?;
        lock_file(&file, writable)?;
        let heap = Arc::new(Heap::open(file, writable)?);
        let (_, types) = heap.roots();
        if types == 0 {
            return Err(Error::StoreCorrupt("store has no type block".into()));
        }
        let used = heap.used(types)?;
        let text = heap.read_at(types + BLOCK_HEADER_SIZE, used as usize)?;
        let text = String::from_utf8(text).map_err(|_| Error::StoreCorrupt("type text is not UTF-8".into()))?;
        let env = parse_type_text(&text).map_err(|e| Error::StoreCorrupt(format!("type text: {e}")))?;
        Ok(BlockStore::assemble(heap, env))
    }

    fn assemble(heap: Arc<Heap>, env: TypeEnv) -> BlockStore {
        BlockStore {
            layout: Layout::new(heap.clone()),
            heap,
            env,
        }
    }

    fn materialize_root(&self) -> Result<()> {
        if self.heap.roots().0 == 0 {
            let size = match self.layout.fixed(&self.env.root, &self.env.defs)? {
                Some(n) => n,
                None => {
                    let t = crate::typesys::resolve_deep(&self.env.root, &self.env.defs)?;
                    self.layout.initial_size(&t, &self.env.defs)?
                }
            };
            let a = self.heap.alloc(size)?;
            self.heap.set_root(a, None)?;
        }
        Ok(())
    }

    /// The type of the stored value.
    pub fn env(&self) -> &TypeEnv {
        &self.env
    }

    pub fn set_lock_policy(&self, policy: LockPolicy) {
        *self.heap.policy.lock() = policy;
    }

    /// A mutable handle on the stored root value. Variable-size members
    /// start unset; reading one before it is written is
    /// [`Error::UnsetReference`], and writing allocates its block.
    pub fn root(&self) -> Result<DataHandle> {
        root_node(self.layout.clone(), &self.env)
    }

    pub fn root_address(&self) -> u64 {
        self.heap.roots().0
    }

    pub fn alloc(&self, size: u64) -> Result<u64> {
        self.heap.alloc(size)
    }

    pub fn free(&self, a: u64) -> Result<()> {
        self.heap.free(a)
    }

    pub fn resize_block(&self, a: u64, size: u64) -> Result<u64> {
        self.heap.resize(a, size)
    }

    /// Payload size of a live block.
    pub fn block_size(&self, a: u64) -> Result<u64> {
        self.heap.used(a)
    }

    pub fn block_capacity(&self, a: u64) -> Result<u64> {
        self.heap.capacity(a)
    }

    /// Free blocks as (address, capacity), in address order.
    pub fn free_blocks(&self) -> Vec<(u64, u64)> {
        self.heap.lock().free.iter().map(|(&a, &c)| (a, c)).collect()
    }

    pub fn file_len(&self) -> u64 {
        self.heap.lock().len
    }

    /// Number of write calls issued to the file so far.
    pub fn write_count(&self) -> u64 {
        self.heap.write_count()
    }

    /// Locks block `a` and returns a handle on a copy of its payload.
    pub fn open_block(&self, a: u64) -> Result<BlockHandle> {
        let data = self.heap.lock_block(a)?;
        Ok(BlockHandle {
            heap: self.heap.clone(),
            addr: a,
            data,
            dirty: false,
            released: false,
        })
    }

    /// Checks the allocator invariants over the whole file.
    pub fn verify(&self) -> Result<VerifyReport> {
        self.heap.verify()
    }

    /// Checks the data layout invariants of the stored value.
    pub fn audit_layout(&self) -> Result<LayoutReport> {
        self.layout.audit(&self.env)
    }

    /// Writes the stored value as a binary data file.
    pub fn export(&self, order: ByteOrder, out: &mut dyn Write) -> Result<()> {
        write_file(&self.root()?, Mode::Binary(order), &[], out)
    }

    /// Flushes file contents to stable storage.
    pub fn sync(&self) -> Result<()> {
        self.heap.file().sync_all()?;
        Ok(())
    }
}

/// A locked, in-memory copy of one block's payload. Changes are written
/// back when the handle is released; unchanged handles write nothing.
pub struct BlockHandle {
    heap: Arc<Heap>,
    addr: u64,
    data: Vec<u8>,
    dirty: bool,
    released: bool,
}

impl BlockHandle {
    pub fn address(&self) -> u64 {
        self.addr
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        self.dirty = true;
        &mut self.data
    }

    pub fn is_dirty(&self) -> bool {
        self.dirty
    }

    /// Writes back the payload if it was modified and unlocks the block.
    pub fn release(&mut self) -> Result<()> {
        if self.released {
            return Err(Error::DoubleRelease);
        }
        self.released = true;
        let data = self.dirty.then_some(&self.data[..]);
        self.heap.unlock_block(self.addr, data)
    }
}

impl Drop for BlockHandle {
    fn drop(&mut self) {
        if !self.released {
            let _ = self.release();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bincodec::encode_to_vec;
    use crate::datamodel::{copy_into, deep_eq, new_direct, path_get};
    use crate::textcodec::read_data;

    fn store(ty: &str) -> (tempfile::TempDir, std::path::PathBuf, BlockStore) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.sfs");
        let s = BlockStore::create(&path, &parse_type_text(ty).unwrap()).unwrap();
        (dir, path, s)
    }

    #[test]
    fn first_fit_reuse_and_coalescing() {
        let (_d, _p, s) = store("integer");
        let a = s.alloc(10).unwrap();
        s.free(a).unwrap();
        assert_eq!(s.alloc(10).unwrap(), a);
        let b = s.alloc(100).unwrap();
        let c = s.alloc(5).unwrap();
        s.free(a).unwrap();
        s.free(b).unwrap();
        assert_eq!(s.free_blocks().len(), 1);
        s.verify().unwrap();
        assert!(matches!(s.free(0), Err(Error::BadAddress(0))));
        assert!(matches!(s.free(a + 1), Err(Error::BadAddress(_))));
        assert_eq!(s.resize_block(c, 12).unwrap(), c);
        assert_eq!(s.block_capacity(c).unwrap(), 16);
        let moved = s.resize_block(c, 1000).unwrap();
        assert_eq!(s.block_size(moved).unwrap(), 1000);
        s.verify().unwrap();
    }

    #[test]
    fn handles() {
        let (_d, path, s) = store("integer");
        let a = s.alloc(8).unwrap();
        let mut h = s.open_block(a).unwrap();
        assert!(matches!(s.open_block(a), Err(Error::BlockLocked(_))));
        assert!(matches!(s.free(a), Err(Error::BlockLocked(_))));
        h.data_mut().copy_from_slice(b"abcdefgh");
        h.release().unwrap();
        assert!(matches!(h.release(), Err(Error::DoubleRelease)));
        drop(h);
        let before = s.write_count();
        let mut h = s.open_block(a).unwrap();
        assert_eq!(h.data(), b"abcdefgh");
        h.release().unwrap();
        assert_eq!(s.write_count(), before);
        drop(h);
        drop(s);
        let s = BlockStore::open(&path).unwrap();
        assert_eq!(s.open_block(a).unwrap().data(), b"abcdefgh");
        assert!(matches!(BlockStore::open(&path), Err(Error::StoreBusy)));
    }

    #[test]
    fn wait_policy() {
        let (_d, _p, s) = store("integer");
        let s = Arc::new(s);
        s.set_lock_policy(LockPolicy::Wait);
        let a = s.alloc(4).unwrap();
        let mut h = s.open_block(a).unwrap();
        let s2 = s.clone();
        let t = std::thread::spawn(move || s2.open_block(a).unwrap().data().to_vec());
        std::thread::sleep(std::time::Duration::from_millis(20));
        h.data_mut().copy_from_slice(&[1, 2, 3, 4]);
        h.release().unwrap();
        assert_eq!(t.join().unwrap(), vec![1, 2, 3, 4]);
    }

    const MOL: &str = "struct {
        name : string; count : integer*4;
        atoms : array of struct { sym : string*2; xyz : real*8[3]; optional note : string; };
        grid : real*4[.,2];
        pick : union { none : integer*1; label : string; };
        extra : any;
    };";

    const VAL: &str = "{name = \"water\", count = 3,
        atoms = [{sym = \"O\", xyz = [0, 0, 0]}, {sym = \"H\", xyz = [1, 0, 0], note = \"light\"}, {sym = \"H\", xyz = [0, 1, 0]}],
        grid = 2 [1, 2, 3, 4], pick = label: \"x\", extra = (array of string) [\"a\", \"bc\"]}";

    #[test]
    fn data_round_trip() {
        let (_d, path, s) = store(MOL);
        let env = parse_type_text(MOL).unwrap();
        let v = read_data(&env, VAL).unwrap();
        let root = s.root().unwrap();
        assert!(matches!(
            root.get_field("name").unwrap().get_string(),
            Err(Error::UnsetReference)
        ));
        copy_into(&root, &v).unwrap();
        assert!(deep_eq(&root, &v).unwrap());
        let mut out = Vec::new();
        s.export(ByteOrder::Big, &mut out).unwrap();
        assert_eq!(
            out,
            crate::bincodec::file_bytes(&v, Mode::Binary(ByteOrder::Big), &[]).unwrap()
        );
        s.verify().unwrap();
        let report = s.audit_layout().unwrap();
        assert_eq!(report.unset_refs, 0);
        assert_eq!(report.unreachable_blocks, 0);
        drop(root);
        drop(s);

        let s = BlockStore::open(&path).unwrap();
        let root = s.root().unwrap();
        assert!(deep_eq(&root, &v).unwrap());
        assert_eq!(path_get(&root, "atoms[1].note").unwrap().get_text().unwrap(), "light");
        assert!(matches!(
            path_get(&root, "atoms[0].note"),
            Err(Error::FieldNotPresent(_))
        ));
        assert_eq!(path_get(&root, "extra[1]").unwrap().get_text().unwrap(), "bc");
    }

    #[test]
    fn mutation_frees_blocks() {
        let (_d, _p, s) = store(MOL);
        let root = s.root().unwrap();
        copy_into(&root, &read_data(&parse_type_text(MOL).unwrap(), VAL).unwrap()).unwrap();
        let live = s.verify().unwrap().live_blocks;
        let atoms = root.get_field("atoms").unwrap();
        atoms.resize(1).unwrap();
        root.get_field("pick").unwrap().set_active_field(0).unwrap();
        s.verify().unwrap();
        assert!(s.verify().unwrap().live_blocks < live);
        assert_eq!(s.audit_layout().unwrap().unreachable_blocks, 0);
        let name = root.get_field("name").unwrap();
        name.assign_string("x".repeat(5000)).unwrap();
        assert_eq!(name.get_text().unwrap().len(), 5000);
        assert_eq!(root.get_field("count").unwrap().get_int().unwrap(), 3);
        s.verify().unwrap();
        assert_eq!(s.audit_layout().unwrap().unreachable_blocks, 0);
    }

    #[test]
    fn fixed_array_block() {
        let (_d, _p, s) = store("struct { v : array of integer*4; }");
        let v = s.root().unwrap().get_field("v").unwrap();
        v.resize(1000).unwrap();
        v.get_elem(999).unwrap().assign_int(-1).unwrap();
        let report = s.audit_layout().unwrap();
        assert_eq!(report.block_values, 2);
        assert_eq!(report.inline_values, 1000);
        let a = u64::from_be_bytes(s.open_block(s.root_address()).unwrap().data()[..8].try_into().unwrap());
        assert_eq!(s.block_size(a).unwrap(), 4 + 4 * 1000);
        let d = new_direct(s.env()).unwrap();
        copy_into(&d, &s.root().unwrap()).unwrap();
        assert_eq!(
            encode_to_vec(&d, ByteOrder::Little).unwrap(),
            encode_to_vec(&s.root().unwrap(), ByteOrder::Little).unwrap()
        );
    }

    #[test]
    fn any_binding() {
        let (_d, _p, s) = store("struct { x : any; }");
        let x = s.root().unwrap().get_field("x").unwrap();
        assert!(x.is_unbound_any());
        assert!(matches!(x.get_int(), Err(Error::UnboundAny)));
        x.actualize_type(&parse_type_text("integer*2").unwrap()).unwrap();
        x.assign_int(-3).unwrap();
        let again = s.root().unwrap().get_field("x").unwrap();
        assert_eq!(again.typ().unwrap().class_name(), "number");
        assert_eq!(again.get_int().unwrap(), -3);
        assert!(matches!(
            x.actualize_type(&parse_type_text("integer*2").unwrap()),
            Err(Error::AlreadyBound)
        ));
    }

    #[test]
    fn corruption_is_detected() {
        let (_d, path, s) = store("string");
        let a = s.alloc(40).unwrap();
        let _b = s.alloc(40).unwrap();
        s.free(a).unwrap();
        drop(s);
        let file = OpenOptions::new().write(true).open(&path).unwrap();
        use std::os::unix::fs::FileExt;
        // point the free list at a live block
        file.write_all_at(&(a + 64).to_be_bytes(), 32).unwrap();
        drop(file);
        assert!(matches!(BlockStore::open(&path), Err(Error::StoreCorrupt(_))));
    }
}
