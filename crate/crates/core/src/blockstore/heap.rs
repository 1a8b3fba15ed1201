//! Block allocation inside the store file.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::os::unix::fs::FileExt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Weak};

use parking_lot::{Condvar, Mutex, MutexGuard};

use crate::error::{Error, Result};

pub const STORE_MAGIC: &[u8; 8] = b"SFSTORE\0";
pub const STORE_VERSION: u32 = 1;
pub const SUPERBLOCK_SIZE: u64 = 64;
pub const BLOCK_HEADER_SIZE: u64 = 16;
pub const MIN_CAPACITY: u64 = 16;
pub const MAX_BLOCK_SIZE: u64 = 1 << 31;

const BLOCK_MAGIC: u32 = 0x5346_424b;
const FLAG_FREE: u32 = 1;
const H: u64 = BLOCK_HEADER_SIZE;

/// Payload capacity reserved for a request of `size` bytes.
pub fn capacity_for(size: u64) -> u64 {
    size.max(MIN_CAPACITY).next_power_of_two()
}

/// What to do when a block is already locked by another handle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LockPolicy {
    #[default]
    Error,
    Wait,
}

/// Shared, relocatable view of a block address.
pub(crate) struct Cell(AtomicU64);

impl Cell {
    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Acquire)
    }

    fn set(&self, a: u64) {
        self.0.store(a, Ordering::Release)
    }
}

#[derive(Debug, Clone, Copy)]
struct BlockHeader {
    capacity: u64,
    free: bool,
    used: u64,
}

pub(crate) struct State {
    pub free: BTreeMap<u64, u64>,
    pub live: HashSet<u64>,
    pub len: u64,
    pub root: u64,
    pub types: u64,
    locked: HashSet<u64>,
    cells: HashMap<u64, Weak<Cell>>,
}

/// Summary returned by a successful verification walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct VerifyReport {
    pub live_blocks: u64,
    pub free_blocks: u64,
    pub live_bytes: u64,
    pub free_bytes: u64,
    pub file_len: u64,
}

pub(crate) struct Heap {
    file: File,
    pub writable: bool,
    state: Mutex<State>,
    released: Condvar,
    pub policy: Mutex<LockPolicy>,
    writes: AtomicU64,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::StoreCorrupt(msg.into())
}

fn be_u32(b: &[u8]) -> u32 {
    u32::from_be_bytes(b.try_into().unwrap())
}

fn be_u64(b: &[u8]) -> u64 {
    u64::from_be_bytes(b.try_into().unwrap())
}

impl Heap {
    /// Formats an empty store into `file`.
    pub fn create(file: File) -> Result<Heap> {
        file.set_len(0)?;
        let heap = Heap::with_state(
            file,
            true,
            State {
                free: BTreeMap::new(),
                live: HashSet::new(),
                len: SUPERBLOCK_SIZE,
                root: 0,
                types: 0,
                locked: HashSet::new(),
                cells: HashMap::new(),
            },
        );
        heap.write_super(&heap.state.lock())?;
        Ok(heap)
    }

    /// Opens an existing store, rebuilding the in-memory block tables with
    /// a full verification walk.
    pub fn open(file: File, writable: bool) -> Result<Heap> {
        let mut sb = [0u8; SUPERBLOCK_SIZE as usize];
        file.read_exact_at(&mut sb, 0)
            .map_err(|_| corrupt("file is shorter than the superblock"))?;
        if &sb[0..8] != STORE_MAGIC {
            return Err(corrupt("bad superblock magic"));
        }
        let version = be_u32(&sb[8..12]);
        if version != STORE_VERSION {
            return Err(corrupt(format!("unsupported store version {version}")));
        }
        let heap = Heap::with_state(
            file,
            writable,
            State {
                free: BTreeMap::new(),
                live: HashSet::new(),
                len: be_u64(&sb[40..48]),
                root: be_u64(&sb[16..24]),
                types: be_u64(&sb[24..32]),
                locked: HashSet::new(),
                cells: HashMap::new(),
            },
        );
        let head = be_u64(&sb[32..40]);
        let (live, free) = heap.walk(heap.state.lock().len, head)?;
        {
            let mut st = heap.state.lock();
            st.live = live.into_iter().collect();
            st.free = free.into_iter().collect();
        }
        heap.check_roots(&heap.state.lock())?;
        Ok(heap)
    }

    fn with_state(file: File, writable: bool, state: State) -> Heap {
        Heap {
            file,
            writable,
            state: Mutex::new(state),
            released: Condvar::new(),
            policy: Mutex::new(LockPolicy::Error),
            writes: AtomicU64::new(0),
        }
    }

    pub fn file(&self) -> &File {
        &self.file
    }

    pub fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock()
    }

    pub fn write_count(&self) -> u64 {
        self.writes.load(Ordering::Relaxed)
    }

    pub fn read_at(&self, off: u64, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0; n];
        self.file.read_exact_at(&mut buf, off)?;
        Ok(buf)
    }

    pub fn read_u32(&self, off: u64) -> Result<u32> {
        Ok(be_u32(&self.read_at(off, 4)?))
    }

    pub fn read_u64(&self, off: u64) -> Result<u64> {
        Ok(be_u64(&self.read_at(off, 8)?))
    }

    pub fn write_at(&self, off: u64, bytes: &[u8]) -> Result<()> {
        if !self.writable {
            return Err(Error::ReadOnly);
        }
        self.writes.fetch_add(1, Ordering::Relaxed);
        self.file.write_all_at(bytes, off)?;
        Ok(())
    }

    fn zero(&self, off: u64, n: u64) -> Result<()> {
        const CHUNK: u64 = 64 * 1024;
        let buf = vec![0u8; n.min(CHUNK) as usize];
        let mut done = 0;
        while done < n {
            let k = (n - done).min(CHUNK);
            self.write_at(off + done, &buf[..k as usize])?;
            done += k;
        }
        Ok(())
    }

    fn read_header(&self, a: u64) -> Result<BlockHeader> {
        let b = self.read_at(a, H as usize)?;
        if be_u32(&b[12..16]) != BLOCK_MAGIC {
            return Err(corrupt(format!("bad block header at {a:#x}")));
        }
        Ok(BlockHeader {
            capacity: be_u32(&b[0..4]) as u64 * MIN_CAPACITY,
            free: be_u32(&b[4..8]) & FLAG_FREE != 0,
            used: be_u32(&b[8..12]) as u64,
        })
    }

    fn write_header(&self, a: u64, h: BlockHeader) -> Result<()> {
        let mut b = [0u8; H as usize];
        b[0..4].copy_from_slice(&((h.capacity / MIN_CAPACITY) as u32).to_be_bytes());
        b[4..8].copy_from_slice(&(if h.free { FLAG_FREE } else { 0 }).to_be_bytes());
        b[8..12].copy_from_slice(&(h.used as u32).to_be_bytes());
        b[12..16].copy_from_slice(&BLOCK_MAGIC.to_be_bytes());
        self.write_at(a, &b)
    }

    pub fn write_super(&self, st: &State) -> Result<()> {
        let mut sb = [0u8; SUPERBLOCK_SIZE as usize];
        sb[0..8].copy_from_slice(STORE_MAGIC);
        sb[8..12].copy_from_slice(&STORE_VERSION.to_be_bytes());
        sb[16..24].copy_from_slice(&st.root.to_be_bytes());
        sb[24..32].copy_from_slice(&st.types.to_be_bytes());
        let head = st.free.keys().next().copied().unwrap_or(0);
        sb[32..40].copy_from_slice(&head.to_be_bytes());
        sb[40..48].copy_from_slice(&st.len.to_be_bytes());
        self.write_at(0, &sb)
    }

    /// Rewrites the free-list links touching `a`: its own successor pointer
    /// when it is free, and that of its predecessor.
    fn relink(&self, st: &State, a: u64) -> Result<()> {
        let succ = |k: u64| st.free.range(k + 1..).next().map_or(0, |(&n, _)| n);
        if st.free.contains_key(&a) {
            self.write_at(a + H, &succ(a).to_be_bytes())?;
        }
        if let Some((&p, _)) = st.free.range(..a).next_back() {
            self.write_at(p + H, &succ(p).to_be_bytes())?;
        }
        Ok(())
    }

    fn check_live(&self, st: &State, a: u64) -> Result<()> {
        if a == 0 || !st.live.contains(&a) {
            return Err(Error::BadAddress(a));
        }
        Ok(())
    }

    fn check_unlocked(&self, st: &State, a: u64) -> Result<()> {
        if st.locked.contains(&a) {
            return Err(Error::BlockLocked(a));
        }
        Ok(())
    }

    pub fn used(&self, a: u64) -> Result<u64> {
        let st = self.lock();
        self.check_live(&st, a)?;
        Ok(self.read_header(a)?.used)
    }

    pub fn capacity(&self, a: u64) -> Result<u64> {
        let st = self.lock();
        self.check_live(&st, a)?;
        Ok(self.read_header(a)?.capacity)
    }

    pub fn is_live(&self, a: u64) -> bool {
        self.lock().live.contains(&a)
    }

    /// Allocates a zero-filled block of `size` payload bytes.
    pub fn alloc(&self, size: u64) -> Result<u64> {
        let mut st = self.lock();
        let a = self.alloc_in(&mut st, size)?;
        self.write_super(&st)?;
        Ok(a)
    }

    fn alloc_in(&self, st: &mut State, size: u64) -> Result<u64> {
        if !self.writable {
            return Err(Error::ReadOnly);
        }
        if size > MAX_BLOCK_SIZE {
            return Err(Error::BlockTooLarge(size));
        }
        let need = capacity_for(size);
        let found = st.free.iter().find(|(_, &c)| c >= need).map(|(&a, &c)| (a, c));
        let a = match found {
            Some((a, cap)) => {
                st.free.remove(&a);
                let mut capacity = cap;
                if cap >= need + H + MIN_CAPACITY {
                    let rest = a + H + need;
                    let rest_cap = cap - need - H;
                    self.write_header(
                        rest,
                        BlockHeader {
                            capacity: rest_cap,
                            free: true,
                            used: 0,
                        },
                    )?;
                    st.free.insert(rest, rest_cap);
                    self.relink(st, rest)?;
                    capacity = need;
                }
                self.write_header(
                    a,
                    BlockHeader {
                        capacity,
                        free: false,
                        used: size,
                    },
                )?;
                self.relink(st, a)?;
                a
            }
            None => {
                let a = st.len;
                self.write_header(
                    a,
                    BlockHeader {
                        capacity: need,
                        free: false,
                        used: size,
                    },
                )?;
                self.zero(a + H + size, need - size)?;
                st.len = a + H + need;
                a
            }
        };
        self.zero(a + H, size)?;
        st.live.insert(a);
        Ok(a)
    }

    /// Returns a block to the free list, coalescing with free neighbours.
    pub fn free(&self, a: u64) -> Result<()> {
        let mut st = self.lock();
        self.check_live(&st, a)?;
        self.check_unlocked(&st, a)?;
        if a == st.root || a == st.types {
            return Err(Error::BadAddress(a));
        }
        self.free_in(&mut st, a)?;
        self.write_super(&st)
    }

    pub(crate) fn free_unchecked(&self, a: u64) -> Result<()> {
        let mut st = self.lock();
        self.check_live(&st, a)?;
        self.check_unlocked(&st, a)?;
        self.free_in(&mut st, a)?;
        self.write_super(&st)
    }

    fn free_in(&self, st: &mut State, a: u64) -> Result<()> {
        if !self.writable {
            return Err(Error::ReadOnly);
        }
        let mut start = a;
        let mut cap = self.read_header(a)?.capacity;
        st.live.remove(&a);
        if let Some(cell) = st.cells.remove(&a).and_then(|w| w.upgrade()) {
            cell.set(0);
        }
        let next = a + H + cap;
        if let Some(ncap) = st.free.remove(&next) {
            cap += H + ncap;
        }
        if let Some((&p, &pcap)) = st.free.range(..a).next_back() {
            if p + H + pcap == a {
                st.free.remove(&p);
                start = p;
                cap += H + pcap;
            }
        }
        self.write_header(
            start,
            BlockHeader {
                capacity: cap,
                free: true,
                used: 0,
            },
        )?;
        st.free.insert(start, cap);
        self.relink(st, start)
    }

    /// Changes the payload size of a block. Grows in place when the
    /// capacity or a free right neighbour allows it; otherwise moves the
    /// block and returns its new address.
    pub fn resize(&self, a: u64, size: u64) -> Result<u64> {
        let mut st = self.lock();
        self.check_live(&st, a)?;
        self.check_unlocked(&st, a)?;
        if !self.writable {
            return Err(Error::ReadOnly);
        }
        if size > MAX_BLOCK_SIZE {
            return Err(Error::BlockTooLarge(size));
        }
        let h = self.read_header(a)?;
        if size <= h.capacity {
            if size > h.used {
                self.zero(a + H + h.used, size - h.used)?;
            }
            self.write_header(a, BlockHeader { used: size, ..h })?;
            return Ok(a);
        }
        let next = a + H + h.capacity;
        if let Some(&ncap) = st.free.get(&next) {
            let total = h.capacity + H + ncap;
            if total >= size {
                st.free.remove(&next);
                let need = capacity_for(size);
                let mut capacity = total;
                if total >= need + H + MIN_CAPACITY {
                    let rest = a + H + need;
                    let rest_cap = total - need - H;
                    self.write_header(
                        rest,
                        BlockHeader {
                            capacity: rest_cap,
                            free: true,
                            used: 0,
                        },
                    )?;
                    st.free.insert(rest, rest_cap);
                    capacity = need;
                }
                self.zero(a + H + h.used, size - h.used)?;
                self.write_header(
                    a,
                    BlockHeader {
                        capacity,
                        free: false,
                        used: size,
                    },
                )?;
                self.relink(&st, next)?;
                if let Some(rest) = st.free.range(a..).next().map(|(&k, _)| k) {
                    self.relink(&st, rest)?;
                }
                self.write_super(&st)?;
                return Ok(a);
            }
        }
        let b = self.alloc_in(&mut st, size)?;
        self.copy(a + H, b + H, h.used)?;
        if let Some(w) = st.cells.remove(&a) {
            if let Some(cell) = w.upgrade() {
                cell.set(b);
                st.cells.insert(b, Arc::downgrade(&cell));
            }
        }
        if st.root == a {
            st.root = b;
        }
        self.free_in(&mut st, a)?;
        self.write_super(&st)?;
        Ok(b)
    }

    fn copy(&self, from: u64, to: u64, n: u64) -> Result<()> {
        const CHUNK: u64 = 64 * 1024;
        let mut done = 0;
        while done < n {
            let k = (n - done).min(CHUNK);
            let buf = self.read_at(from + done, k as usize)?;
            self.write_at(to + done, &buf)?;
            done += k;
        }
        Ok(())
    }

    /// The shared address cell of a live block.
    pub fn cell(&self, a: u64) -> Arc<Cell> {
        let mut st = self.lock();
        if let Some(c) = st.cells.get(&a).and_then(|w| w.upgrade()) {
            return c;
        }
        let c = Arc::new(Cell(AtomicU64::new(a)));
        st.cells.insert(a, Arc::downgrade(&c));
        c
    }

    pub fn set_root(&self, root: u64, types: Option<u64>) -> Result<()> {
        let mut st = self.lock();
        st.root = root;
        if let Some(t) = types {
            st.types = t;
        }
        self.write_super(&st)
    }

    pub fn roots(&self) -> (u64, u64) {
        let st = self.lock();
        (st.root, st.types)
    }

    pub fn lock_block(&self, a: u64) -> Result<Vec<u8>> {
        let mut st = self.lock();
        self.check_live(&st, a)?;
        while st.locked.contains(&a) {
            if *self.policy.lock() == LockPolicy::Error {
                return Err(Error::BlockLocked(a));
            }
            self.released.wait(&mut st);
            self.check_live(&st, a)?;
        }
        st.locked.insert(a);
        let used = self.read_header(a)?.used;
        self.read_at(a + H, used as usize)
    }

    pub fn unlock_block(&self, a: u64, data: Option<&[u8]>) -> Result<()> {
        let mut st = self.lock();
        let written = match data {
            Some(d) => self.write_at(a + H, d),
            None => Ok(()),
        };
        st.locked.remove(&a);
        self.released.notify_all();
        written
    }

    fn check_roots(&self, st: &State) -> Result<()> {
        for (what, a) in [("root", st.root), ("type", st.types)] {
            if a != 0 && !st.live.contains(&a) {
                return Err(corrupt(format!("{what} block {a:#x} is not a live block")));
            }
        }
        Ok(())
    }

    /// Walks every block between the superblock and `len`, then the free
    /// list from `head`; returns the live and free blocks found.
    fn walk(&self, len: u64, head: u64) -> Result<(Vec<u64>, Vec<(u64, u64)>)> {
        let physical = self.file.metadata()?.len();
        if physical < len {
            return Err(corrupt(format!(
                "file is {physical} bytes but the superblock records {len}"
            )));
        }
        let mut live = Vec::new();
        let mut free = Vec::new();
        let mut pos = SUPERBLOCK_SIZE;
        let mut prev_free: Option<u64> = None;
        while pos < len {
            if pos + H > len {
                return Err(corrupt(format!("partial block header at {pos:#x}")));
            }
            let h = self.read_header(pos)?;
            if h.capacity < MIN_CAPACITY || pos + H + h.capacity > len {
                return Err(corrupt(format!("block at {pos:#x} has bad capacity {}", h.capacity)));
            }
            if h.free {
                if let Some(p) = prev_free {
                    return Err(corrupt(format!(
                        "adjacent free blocks at {p:#x} and {pos:#x} are not coalesced"
                    )));
                }
                prev_free = Some(pos);
                free.push((pos, h.capacity));
            } else {
                if h.used > h.capacity {
                    return Err(corrupt(format!("block at {pos:#x} uses more than its capacity")));
                }
                prev_free = None;
                live.push(pos);
            }
            pos += H + h.capacity;
        }
        if pos != len {
            return Err(corrupt("blocks overrun the recorded file length"));
        }
        let mut cur = head;
        let mut i = 0;
        while cur != 0 {
            match free.get(i) {
                Some(&(a, _)) if a == cur => {}
                _ => {
                    return Err(corrupt(format!(
                        "free list entry {cur:#x} is not the next free block in address order"
                    )))
                }
            }
            cur = self.read_u64(cur + H)?;
            i += 1;
        }
        if i != free.len() {
            return Err(corrupt(format!("free list reaches {i} of {} free blocks", free.len())));
        }
        Ok((live, free))
    }

    /// Checks that live and free blocks partition the file body, the free
    /// list is sorted, complete and coalesced, and the in-memory tables
    /// agree with the file.
    pub fn verify(&self) -> Result<VerifyReport> {
        let st = self.lock();
        let mut sb = [0u8; SUPERBLOCK_SIZE as usize];
        self.file.read_exact_at(&mut sb, 0)?;
        let head = be_u64(&sb[32..40]);
        if be_u64(&sb[40..48]) != st.len {
            return Err(corrupt("superblock length is stale"));
        }
        let (live, free) = self.walk(st.len, head)?;
        if live.len() != st.live.len() || live.iter().any(|a| !st.live.contains(a)) {
            return Err(corrupt("live block table disagrees with the file"));
        }
        if free.len() != st.free.len() || free.iter().any(|(a, c)| st.free.get(a) != Some(c)) {
            return Err(corrupt("free block table disagrees with the file"));
        }
        self.check_roots(&st)?;
        let mut report = VerifyReport {
            live_blocks: live.len() as u64,
            free_blocks: free.len() as u64,
            file_len: st.len,
            ..Default::default()
        };
        for a in &live {
            report.live_bytes += H + self.read_header(*a)?.capacity;
        }
        for (_, c) in &free {
            report.free_bytes += H + c;
        }
        Ok(report)
    }
}
