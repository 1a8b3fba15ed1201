//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;
use std::io::Cursor;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use structfile::bincodec::{
    decode_value, encode_to_vec, file_bytes, header_bytes, read_bytes, scan_header_bytes, ByteOrder, DataFile,
    FileHeader, Mode,
};
use structfile::blockstore::BlockStore;
use structfile::datamodel::{copy_into, deep_eq, new_direct, path_get, CursorPos, DataHandle, TreeCursor};
use structfile::ddlparse::parse_type_text;
use structfile::error::Error;
use structfile::streamaccess::FileSession;
use structfile::textcodec::{print_data, read_data};
use structfile::typedesc::{data_to_type, descriptor_env, type_to_data};
use structfile::typesys::{fixed_byte_size, is_variable_size, print_env, Dim, Field, NumKind, TypeEnv, TypeNode};

use common::{paths, rng, sample, TypeGen};

const DDL_CASES: u64 = 1000;
const DDL_MAX_DEPTH: usize = 6;
const DDL_TIME_LIMIT: Duration = Duration::from_secs(10);
const BIN_CASES: u64 = 1000;
const BIN_TIME_LIMIT: Duration = Duration::from_secs(30);
const LAZY_FILES: u64 = 100;
const LAZY_MIN_FILE: u64 = 1 << 20;
const LAZY_MAX_READ_FRACTION: f64 = 0.10;
const STREAM_CASES: u64 = 200;
const STREAM_CHUNKS: usize = 100;
/// Retained nodes allowed beyond the largest chunk.
const STREAM_SLACK: usize = 16;
const STORE_OPS: usize = 10_000;
const STORE_AUDIT_TYPES: u64 = 100;
const DESCRIPTOR_CASES: u64 = 1000;
const FUZZ_ITERATIONS: u64 = 1_000_000;
const FUZZ_TIME_CAP: Duration = Duration::from_millis(100);
/// Peak heap growth allowed while handling one fuzz input.
const FUZZ_ALLOC_CAP: usize = 64 << 20;
const ANY_CASES: u64 = 200;

const FIXTURE_DIR: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");

struct Counting;

thread_local! {
    static CURRENT: Cell<isize> = const { Cell::new(0) };
    static PEAK: Cell<isize> = const { Cell::new(0) };
}

fn note_alloc(n: usize) {
    let _ = CURRENT.try_with(|c| {
        let v = c.get().wrapping_add(n as isize);
        c.set(v);
        let _ = PEAK.try_with(|p| p.set(p.get().max(v)));
    });
}

fn note_free(n: usize) {
    let _ = CURRENT.try_with(|c| c.set(c.get().wrapping_sub(n as isize)));
}

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, l: Layout) -> *mut u8 {
        note_alloc(l.size());
        System.alloc(l)
    }
    unsafe fn dealloc(&self, p: *mut u8, l: Layout) {
        note_free(l.size());
        System.dealloc(p, l)
    }
    unsafe fn realloc(&self, p: *mut u8, l: Layout, n: usize) -> *mut u8 {
        note_alloc(n);
        note_free(l.size());
        System.realloc(p, l, n)
    }
}

#[global_allocator]
static GLOBAL: Counting = Counting;

/// Heap growth on this thread while running `f`.
fn measure<T>(f: impl FnOnce() -> T) -> (T, usize) {
    let base = CURRENT.with(|c| c.get());
    PEAK.with(|p| p.set(base));
    let out = f();
    (out, PEAK.with(|p| p.get()).wrapping_sub(base).max(0) as usize)
}

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s(e: Error) -> String {
    e.to_string()
}

fn fixture(name: &str) -> Vec<u8> {
    std::fs::read(format!("{FIXTURE_DIR}/{name}")).expect("fixture present")
}

fn fixture_text(name: &str) -> String {
    String::from_utf8(fixture(name)).unwrap()
}

fn ddl_round_trip() -> Outcome {
    let start = Instant::now();
    let gen = TypeGen {
        max_depth: DDL_MAX_DEPTH,
        ..TypeGen::default()
    };
    for seed in 0..DDL_CASES {
        let env = gen.env(&mut rng(seed));
        let text = print_env(&env);
        let back = parse_type_text(&text).map_err(|e| format!("seed {seed}: {e}\n{text}"))?;
        check(back == env, || format!("seed {seed}: reparsed type differs\n{text}"))?;
    }
    for (name, canonical) in [
        ("atoms_bonds_type.txt", "atoms_bonds_type.canonical"),
        ("molecule_header.txt", "molecule_type.canonical"),
    ] {
        let src = fixture_text(name);
        let env = match scan_header_bytes(src.as_bytes()) {
            Ok(h) => h.env,
            Err(_) => parse_type_text(&src).map_err(|e| format!("{name}: {e}"))?,
        };
        let printed = print_env(&env);
        check(printed == fixture_text(canonical), || {
            format!("{name}: canonical form changed")
        })?;
        check(parse_type_text(&printed).ok().as_ref() == Some(&env), || {
            format!("{name}: canonical form does not reparse")
        })?;
    }
    let built = TypeNode::structure(vec![
        Field::new("comment", TypeNode::string(Dim::Free)),
        Field::new(
            "atoms",
            TypeNode::array(
                Dim::Free,
                TypeNode::structure(vec![
                    Field::new("name", TypeNode::string(Dim::Free)),
                    Field::new("z", TypeNode::scalar(NumKind::I2)),
                    Field::new("partial_charge", TypeNode::scalar(NumKind::F4)),
                ]),
            ),
        ),
        Field::new(
            "bonds",
            TypeNode::array(
                Dim::Free,
                TypeNode::structure(vec![
                    Field::new("from_atom", TypeNode::scalar(NumKind::I2)),
                    Field::new("to_atom", TypeNode::scalar(NumKind::I2)),
                    Field::new("type", TypeNode::scalar(NumKind::I2)),
                ]),
            ),
        ),
    ]);
    let parsed = parse_type_text(&fixture_text("atoms_bonds_type.txt")).map_err(e2s)?;
    check(*parsed.root == built, || {
        "constructed and parsed atom types differ".into()
    })?;
    let took = start.elapsed();
    check(took < DDL_TIME_LIMIT, || format!("took {took:?}"))?;
    Ok(format!(
        "{DDL_CASES} random types and 2 reference type texts in {took:.2?}"
    ))
}

fn binary_round_trip() -> Outcome {
    let start = Instant::now();
    let mut fixed_checked = 0;
    for seed in 0..BIN_CASES {
        let (env, v) = sample(1_000_000 + seed, TypeGen::default());
        let fixed = if is_variable_size(&env.root, &env.defs).map_err(e2s)? {
            None
        } else {
            Some(fixed_byte_size(&env.root, &env.defs).map_err(e2s)?)
        };
        for order in [ByteOrder::Big, ByteOrder::Little] {
            let bytes = encode_to_vec(&v, order).map_err(|e| format!("seed {seed}: {e}"))?;
            let back = decode_value(&env, order, &bytes).map_err(|e| format!("seed {seed} {order:?}: {e}"))?;
            check(deep_eq(&back, &v).map_err(e2s)?, || {
                format!("seed {seed} {order:?}: value differs")
            })?;
            if let Some(n) = fixed {
                check(bytes.len() as u64 == n, || {
                    format!("seed {seed}: {} bytes, fixed size {n}", bytes.len())
                })?;
                fixed_checked += 1;
            }
            let file = file_bytes(&v, Mode::Binary(order), &[]).map_err(e2s)?;
            let (_, back) = read_bytes(&file).map_err(|e| format!("seed {seed} file: {e}"))?;
            check(deep_eq(&back, &v).map_err(e2s)?, || {
                format!("seed {seed}: file value differs")
            })?;
        }
    }
    let took = start.elapsed();
    check(took < BIN_TIME_LIMIT, || format!("took {took:?}"))?;
    Ok(format!(
        "{BIN_CASES} values x 2 byte orders, {fixed_checked} fixed-size length checks, in {took:.2?}"
    ))
}

fn hex(s: &str) -> Vec<u8> {
    s.split_whitespace()
        .map(|b| u8::from_str_radix(b, 16).unwrap())
        .collect()
}

fn golden_bytes() -> Outcome {
    let cases: [(&str, &str, &str); 7] = [
        ("array of integer*2", "[1, -2]", "00 00 00 02  00 01  ff fe"),
        ("string", "\"ab\"", "00 00 00 02  61 62"),
        (
            "integer*1[.,2]",
            "3 [1, 2, 3, 4, 5, 6]",
            "00 00 00 03  01 02 03 04 05 06",
        ),
        ("struct { optional a : integer*4; b : integer*1; }", "{b = 7}", "00  07"),
        (
            "struct { optional a : integer*4; b : integer*1; }",
            "{a = 1, b = 7}",
            "01  00 00 00 01  07",
        ),
        (
            "union { a : integer*1; b : real*4; c : string; }",
            "c: \"\"",
            "00 02  00 00 00 00",
        ),
        (
            "array[2] of union { a : integer*1; b : integer*2; }",
            "[a: 5, b: 6]",
            "00 00 05  00 01 00 06",
        ),
    ];
    for (ty, val, be) in cases {
        let env = parse_type_text(ty).map_err(e2s)?;
        let v = read_data(&env, val).map_err(e2s)?;
        let got = encode_to_vec(&v, ByteOrder::Big).map_err(e2s)?;
        check(got == hex(be), || format!("{ty} = {val}: got {got:02x?}"))?;
    }
    let le = read_data(&parse_type_text("array of integer*2").unwrap(), "[1, -2]").unwrap();
    check(
        encode_to_vec(&le, ByteOrder::Little).map_err(e2s)? == hex("02 00 00 00  01 00  fe ff"),
        || "little-endian counts and cells".into(),
    )?;

    // 2x3 matrix, cell (i,j) = 10*i + j; first index runs fastest, so the
    // cell at byte k is (k % 2, k / 2).
    let env = parse_type_text("integer*1[2,3]").unwrap();
    let v = new_direct(&env).unwrap();
    let mut m = v.get_matrix().map_err(e2s)?;
    for j in 0..3 {
        for i in 0..2 {
            let at = m.shape.offset_of(&[i as i64, j as i64]).unwrap();
            m.set_int(at, 10 * i + j).unwrap();
        }
    }
    v.assign_matrix(&m).map_err(e2s)?;
    let got = encode_to_vec(&v, ByteOrder::Big).map_err(e2s)?;
    let want: Vec<u8> = (0..6).map(|k| (10 * (k % 2) + k / 2) as u8).collect();
    check(got == want, || format!("2x3 matrix order: got {got:?}, want {want:?}"))?;
    check(got == [0, 10, 1, 11, 2, 12], || "2x3 matrix hand computation".into())?;

    let bin = fixture("molecule.bin");
    let h = scan_header_bytes(&bin).map_err(e2s)?;
    let data = &bin[h.data_start as usize..];
    check(data[..9] == hex("00 00 00 05 77 61 74 65 72"), || {
        "molecule name prefix".into()
    })?;
    let (_, v) = read_bytes(&bin).map_err(e2s)?;
    let step0 = path_get(&v, "timesteps[0]").map_err(e2s)?;
    check(
        !step0.field_present("velocity").map_err(e2s)? && !step0.field_present("potential").map_err(e2s)?,
        || "step 0 optionals".into(),
    )?;
    let step1 = path_get(&v, "timesteps[1]").map_err(e2s)?;
    check(step1.field_present("velocity").map_err(e2s)?, || {
        "step 1 velocity".into()
    })?;
    check(encode_to_vec(&v, ByteOrder::Big).map_err(e2s)? == data, || {
        "molecule re-encode".into()
    })?;
    Ok("counts, tags, selectors, 2x3 matrix order and molecule fixture match byte for byte".into())
}

fn compare_paths(decoded: &DataHandle, lazy: &DataHandle, label: &str) -> Result<usize, String> {
    let all = paths(decoded).map_err(e2s)?;
    for (p, node) in &all {
        let l = path_get(lazy, p).map_err(|e| format!("{label} `{p}`: {e}"))?;
        check(deep_eq(&l, node).map_err(e2s)?, || {
            format!("{label} `{p}`: lazy value differs")
        })?;
    }
    Ok(all.len())
}

fn lazy_reader() -> Outcome {
    let mut checked = 0;
    for seed in 0..LAZY_FILES {
        let (_, v) = sample(2_000_000 + seed, TypeGen::default());
        let order = if seed % 2 == 0 {
            ByteOrder::Big
        } else {
            ByteOrder::Little
        };
        let bytes = file_bytes(&v, Mode::Binary(order), &[]).map_err(e2s)?;
        let (_, decoded) = read_bytes(&bytes).map_err(e2s)?;
        let sess = FileSession::open_source(Arc::new(bytes)).map_err(e2s)?;
        checked += compare_paths(&decoded, &sess.root().map_err(e2s)?, &format!("seed {seed}"))?;
    }
    let bin = fixture("molecule.bin");
    let (_, decoded) = read_bytes(&bin).map_err(e2s)?;
    let sess = FileSession::open_source(Arc::new(bin)).map_err(e2s)?;
    checked += compare_paths(&decoded, &sess.root().map_err(e2s)?, "molecule")?;

    let env = parse_type_text(
        "struct { label : string; steps : array of struct { t : integer*4; optional note : string; xyz : real*8[3,.]; }; }",
    )
    .unwrap();
    let v = new_direct(&env).unwrap();
    v.get_field("label").unwrap().assign_string("big").unwrap();
    let steps = v.get_field("steps").unwrap();
    let n = 3000;
    steps.resize(n).unwrap();
    let mut r = rng(7);
    for i in 0..n {
        let e = steps.get_elem(i).unwrap();
        e.get_field("t").unwrap().assign_int(i as i64).unwrap();
        if r.gen_bool(0.3) {
            e.set_field_present("note").unwrap();
            e.get_field("note")
                .unwrap()
                .assign_string("x".repeat(r.gen_range(0..20)))
                .unwrap();
        }
        let cols = r.gen_range(1..40);
        let text = format!("{cols} [{}]", vec!["1.5"; 3 * cols].join(", "));
        copy_into(
            &e.get_field("xyz").unwrap(),
            &read_data(
                &env.with_root(Arc::new(TypeNode::matrix(NumKind::F8, vec![Dim::Fixed(3), Dim::Free]))),
                &text,
            )
            .unwrap(),
        )
        .map_err(e2s)?;
    }
    let bytes = file_bytes(&v, Mode::Binary(ByteOrder::Big), &[]).map_err(e2s)?;
    let len = bytes.len() as u64;
    check(len >= LAZY_MIN_FILE, || format!("large file is only {len} bytes"))?;
    let sess = FileSession::open_source(Arc::new(bytes)).map_err(e2s)?;
    let deep = path_get(&sess.root().map_err(e2s)?, "steps[1500].xyz").map_err(e2s)?;
    check(
        deep_eq(&deep, &path_get(&v, "steps[1500].xyz").unwrap()).map_err(e2s)?,
        || "deep value differs".into(),
    )?;
    let read = sess.stats().bytes_read;
    let frac = read as f64 / len as f64;
    check(frac < LAZY_MAX_READ_FRACTION, || {
        format!("deep read touched {read} of {len} bytes")
    })?;
    Ok(format!(
        "{checked} paths equal across {LAZY_FILES} files + molecule; deep read touched {read} of {len} bytes ({:.2}%)",
        frac * 100.0
    ))
}

/// Positions of every item of `v` in serialization order.
fn positions(v: &DataHandle) -> Result<Vec<CursorPos>, String> {
    let mut c = TreeCursor::new(v);
    let mut out = vec![c.position()];
    while c.advance().map_err(e2s)? {
        out.push(c.position());
    }
    Ok(out)
}

fn streaming_writer() -> Outcome {
    let mut commits = 0;
    for seed in 0..STREAM_CASES {
        let (env, v) = sample(3_000_000 + seed, TypeGen::default());
        let order = if seed % 2 == 0 {
            ByteOrder::Big
        } else {
            ByteOrder::Little
        };
        let mut r = rng(seed);
        let mut all = positions(&v)?;
        all.retain(|_| r.gen_bool(0.3));
        let header = FileHeader::new(env.clone(), Mode::Binary(order));
        let mut one_shot = header_bytes(&header).map_err(e2s)?;
        one_shot.extend(encode_to_vec(&v, order).map_err(e2s)?);
        let mut file = DataFile::new(Cursor::new(Vec::new()), header).map_err(e2s)?;
        copy_into(&file.root(), &v).map_err(e2s)?;
        for p in &all {
            file.commit(p).map_err(|e| format!("seed {seed} commit {p:?}: {e}"))?;
            commits += 1;
        }
        let streamed = file.close().map_err(e2s)?.into_inner();
        check(streamed == one_shot, || format!("seed {seed}: streamed bytes differ"))?;
    }

    let env = parse_type_text(
        "struct { head : string; chunks : array of struct { id : integer*4; data : real*8[.]; tags : array of string; }; tail : integer*4; }",
    )
    .unwrap();
    let header = FileHeader::new(env.clone(), Mode::Binary(ByteOrder::Big));
    let mut file = DataFile::new(Cursor::new(Vec::new()), header).map_err(e2s)?;
    let reference = new_direct(&env).unwrap();
    let mut r = rng(99);
    let (mut peak, mut largest) = (0, 0);
    for root in [file.root(), reference.clone()] {
        root.get_field("head").unwrap().assign_string("chunks").unwrap();
    }
    let chunks = file.root().get_field("chunks").unwrap();
    let ref_chunks = reference.get_field("chunks").unwrap();
    for i in 0..STREAM_CHUNKS {
        let tags = r.gen_range(0..8);
        let cells = r.gen_range(0..50);
        for list in [&chunks, &ref_chunks] {
            list.resize(i + 1).map_err(e2s)?;
            let e = list.get_elem(i).map_err(e2s)?;
            e.get_field("id").unwrap().assign_int(i as i64).unwrap();
            let text = format!("{cells} [{}]", vec!["0.5"; cells].join(", "));
            let m = read_data(
                &env.with_root(Arc::new(TypeNode::matrix(NumKind::F8, vec![Dim::Free]))),
                &text,
            )
            .unwrap();
            copy_into(&e.get_field("data").unwrap(), &m).map_err(e2s)?;
            let t = e.get_field("tags").unwrap();
            t.resize(tags).unwrap();
            for k in 0..tags {
                t.get_elem(k).unwrap().assign_string(format!("t{k}")).unwrap();
            }
        }
        largest = largest.max(ref_chunks.get_elem(i).unwrap().node_count());
        peak = peak.max(file.root().node_count());
        file.commit(&CursorPos(vec![0, 1, i + 1])).map_err(e2s)?;
    }
    file.root().get_field("tail").unwrap().assign_int(-1).unwrap();
    reference.get_field("tail").unwrap().assign_int(-1).unwrap();
    let streamed = file.close().map_err(e2s)?.into_inner();
    check(
        streamed == file_bytes(&reference, Mode::Binary(ByteOrder::Big), &[]).map_err(e2s)?,
        || "chunked stream differs".into(),
    )?;
    check(peak <= largest + STREAM_SLACK, || {
        format!("peak {peak} nodes, largest chunk {largest}")
    })?;
    Ok(format!(
        "{STREAM_CASES} values, {commits} random commits byte-identical; peak {peak} nodes vs largest chunk {largest} (+{STREAM_SLACK})"
    ))
}

fn blockstore() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let raw_env = parse_type_text("integer*4").unwrap();
    let store = BlockStore::create(dir.path().join("raw.sfs"), &raw_env).map_err(e2s)?;
    let mut r = rng(5);
    let mut live: Vec<(u64, Vec<u8>)> = Vec::new();
    for op in 0..STORE_OPS {
        match r.gen_range(0..10) {
            0..=3 => {
                let n = r.gen_range(0..3000);
                let a = store.alloc(n).map_err(e2s)?;
                let fill: Vec<u8> = (0..n).map(|_| r.gen()).collect();
                let mut h = store.open_block(a).map_err(e2s)?;
                h.data_mut().copy_from_slice(&fill);
                h.release().map_err(e2s)?;
                live.push((a, fill));
            }
            4..=6 if !live.is_empty() => {
                let i = r.gen_range(0..live.len());
                let (a, fill) = live.swap_remove(i);
                let h = store.open_block(a).map_err(e2s)?;
                check(h.data() == &fill[..], || {
                    format!("op {op}: block {a:#x} contents changed")
                })?;
                drop(h);
                store.free(a).map_err(e2s)?;
            }
            _ if !live.is_empty() => {
                let i = r.gen_range(0..live.len());
                let n = r.gen_range(0..5000) as u64;
                let (a, mut fill) = live[i].clone();
                let b = store.resize_block(a, n).map_err(e2s)?;
                fill.resize(n as usize, 0);
                let h = store.open_block(b).map_err(e2s)?;
                let keep = fill.len().min(h.data().len());
                check(h.data()[..keep] == fill[..keep], || {
                    format!("op {op}: resize lost data")
                })?;
                fill = h.data().to_vec();
                drop(h);
                live[i] = (b, fill);
            }
            _ => {}
        }
        if op % 1000 == 999 {
            store.verify().map_err(|e| format!("op {op}: {e}"))?;
        }
    }
    let report = store.verify().map_err(e2s)?;
    drop(store);
    let store = BlockStore::open(dir.path().join("raw.sfs")).map_err(e2s)?;
    store.verify().map_err(e2s)?;
    drop(store);

    let gen = TypeGen {
        allow_any: false,
        ..TypeGen::default()
    };
    for seed in 0..STORE_AUDIT_TYPES {
        let (env, v) = sample(4_000_000 + seed, gen);
        let path = dir.path().join(format!("t{seed}.sfs"));
        let store = BlockStore::create(&path, &env).map_err(e2s)?;
        copy_into(&store.root().map_err(e2s)?, &v).map_err(|e| format!("seed {seed}: {e}"))?;
        let audit = store.audit_layout().map_err(|e| format!("seed {seed}: {e}"))?;
        let nodes = paths(&v).map_err(e2s)?;
        let mut variable = 0;
        for (_, n) in &nodes[1..] {
            if is_variable_size(&*n.typ().map_err(e2s)?, &env.defs).map_err(e2s)? {
                variable += 1;
            }
        }
        let fixed = nodes.len() as u64 - 1 - variable;
        check(audit.block_values == variable + 1, || {
            format!(
                "seed {seed}: {} blocks for {} variable-size values",
                audit.block_values, variable
            )
        })?;
        check(audit.inline_values == fixed, || {
            format!(
                "seed {seed}: {} inline values for {fixed} fixed-size values",
                audit.inline_values
            )
        })?;
        check(audit.unset_refs == 0 && audit.unreachable_blocks == 0, || {
            format!("seed {seed}: {audit:?}")
        })?;
        let mut out = Vec::new();
        store.export(ByteOrder::Big, &mut out).map_err(e2s)?;
        check(
            out == file_bytes(&v, Mode::Binary(ByteOrder::Big), &[]).map_err(e2s)?,
            || format!("seed {seed}: export differs"),
        )?;
        store.verify().map_err(e2s)?;
    }

    let bin = fixture("molecule.bin");
    let (h, mol) = read_bytes(&bin).map_err(e2s)?;
    let path = dir.path().join("molecule.sfs");
    {
        let store = BlockStore::create(&path, &h.env).map_err(e2s)?;
        copy_into(&store.root().map_err(e2s)?, &mol).map_err(e2s)?;
        store.sync().map_err(e2s)?;
    }
    let store = BlockStore::open_read_only(&path).map_err(e2s)?;
    let mut out = Vec::new();
    store.export(ByteOrder::Big, &mut out).map_err(e2s)?;
    check(
        out == file_bytes(&mol, Mode::Binary(ByteOrder::Big), &[]).map_err(e2s)?,
        || "molecule export differs".into(),
    )?;
    check(
        out[scan_header_bytes(&out).unwrap().data_start as usize..] == bin[h.data_start as usize..],
        || "molecule data bytes differ".into(),
    )?;
    Ok(format!(
        "{STORE_OPS} ops verified ({} live / {} free blocks); {STORE_AUDIT_TYPES} layouts audited; exports byte-identical",
        report.live_blocks, report.free_blocks
    ))
}

fn unsigned_to_signed(t: &TypeNode) -> TypeNode {
    match t {
        TypeNode::Num { kind, dims } => TypeNode::Num {
            kind: if kind.is_float() {
                *kind
            } else {
                NumKind::signed_int(kind.width()).unwrap()
            },
            dims: dims.clone(),
        },
        TypeNode::Struct { is_union, fields } => TypeNode::Struct {
            is_union: *is_union,
            fields: fields
                .iter()
                .map(|f| Field {
                    name: f.name.clone(),
                    typ: Arc::new(unsigned_to_signed(&f.typ)),
                    optional: f.optional,
                })
                .collect(),
        },
        TypeNode::Array { size, elem } => TypeNode::Array {
            size: *size,
            elem: Arc::new(unsigned_to_signed(elem)),
        },
        other => other.clone(),
    }
}

fn descriptor() -> Outcome {
    for seed in 0..DESCRIPTOR_CASES {
        let env = TypeGen::default().env(&mut rng(5_000_000 + seed));
        for t in std::iter::once(&env.root).chain(env.defs.values()) {
            let d = type_to_data(t, &env.defs).map_err(|e| format!("seed {seed}: {e}"))?;
            let back = data_to_type(&d).map_err(|e| format!("seed {seed}: {e}"))?;
            check(back == unsigned_to_signed(t), || {
                format!("seed {seed}: descriptor round trip differs")
            })?;
        }
    }
    let env = descriptor_env();
    let body = env.resolve("TypeDescriptor").map_err(e2s)?;
    let d = type_to_data(&body, &env.defs).map_err(e2s)?;
    check(data_to_type(&d).map_err(e2s)? == *body, || {
        "descriptor does not describe itself".into()
    })?;
    let bytes = file_bytes(&d, Mode::Binary(ByteOrder::Big), &[]).map_err(e2s)?;
    let (_, back) = read_bytes(&bytes).map_err(e2s)?;
    check(data_to_type(&back).map_err(e2s)? == *body, || {
        "descriptor lost in a file round trip".into()
    })?;
    Ok(format!(
        "{DESCRIPTOR_CASES} random type units and the descriptor type itself"
    ))
}

fn mutate(r: &mut impl Rng, src: &[u8], alphabet: &[u8]) -> Vec<u8> {
    let mut b = src.to_vec();
    for _ in 0..r.gen_range(1..=4) {
        match r.gen_range(0..5) {
            0 if !b.is_empty() => {
                let i = r.gen_range(0..b.len());
                b[i] = *alphabet.choose(r).unwrap();
            }
            1 if !b.is_empty() => {
                let i = r.gen_range(0..b.len());
                b[i] ^= 1 << r.gen_range(0..8);
            }
            2 => {
                let i = r.gen_range(0..=b.len());
                b.truncate(i);
            }
            3 => {
                let i = r.gen_range(0..=b.len());
                let n = r.gen_range(1..6);
                let ins: Vec<u8> = (0..n).map(|_| *alphabet.choose(r).unwrap()).collect();
                b.splice(i..i, ins);
            }
            _ if b.len() > 1 => {
                let i = r.gen_range(0..b.len());
                let j = r.gen_range(i..b.len());
                b.drain(i..j);
            }
            _ => {}
        }
    }
    b
}

struct Corpus {
    envs: Vec<TypeEnv>,
    encodings: Vec<(Vec<u8>, ByteOrder)>,
    files: Vec<Vec<u8>>,
    type_texts: Vec<String>,
    data_texts: Vec<String>,
}

fn corpus() -> Corpus {
    let mut c = Corpus {
        envs: Vec::new(),
        encodings: Vec::new(),
        files: vec![fixture("molecule.bin"), fixture("any_fields.bin")],
        type_texts: vec![
            fixture_text("molecule_header.txt"),
            fixture_text("atoms_bonds_type.txt"),
        ],
        data_texts: Vec::new(),
    };
    for seed in 0..300 {
        let (env, v) = sample(6_000_000 + seed, TypeGen::default());
        let order = if seed % 2 == 0 {
            ByteOrder::Big
        } else {
            ByteOrder::Little
        };
        c.encodings.push((encode_to_vec(&v, order).unwrap(), order));
        if seed % 10 == 0 {
            c.files.push(file_bytes(&v, Mode::Binary(order), &[]).unwrap());
        }
        c.type_texts.push(print_env(&env));
        c.data_texts.push(print_data(&v, seed % 3 == 0).unwrap());
        c.envs.push(env);
    }
    c
}

const TEXT_ALPHABET: &[u8] = b"{}[]();:*.,=-+ \n\"\\#09abstructunionarrayofintegerrealstringopaqueanytypedef_";

fn fuzz_one(c: &Corpus, r: &mut impl Rng, worst: &mut (Duration, usize)) -> Result<(), String> {
    let bytes_alpha: Vec<u8> = (0..=255).collect();
    let k = r.gen_range(0..c.envs.len());
    let (enc, order) = &c.encodings[k];
    let data = if r.gen_bool(0.1) {
        (0..r.gen_range(0..64)).map(|_| r.gen()).collect()
    } else {
        mutate(r, enc, &bytes_alpha)
    };
    let env = &c.envs[k];
    let text_src = if r.gen_bool(0.5) {
        &c.type_texts[r.gen_range(0..c.type_texts.len())]
    } else {
        &c.data_texts[k]
    };
    let text = String::from_utf8_lossy(&mutate(r, text_src.as_bytes(), TEXT_ALPHABET)).into_owned();
    let is_type_text = !c.data_texts.iter().any(|t| std::ptr::eq(t, text_src));
    let file = if r.gen_bool(0.05) {
        let f = r.gen_range(0..c.files.len());
        Some(mutate(r, &c.files[f], &bytes_alpha))
    } else {
        None
    };

    let mut run = |f: &mut dyn FnMut()| -> Result<(), String> {
        let start = Instant::now();
        let (res, peak) = measure(|| catch_unwind(AssertUnwindSafe(&mut *f)));
        let took = start.elapsed();
        worst.0 = worst.0.max(took);
        worst.1 = worst.1.max(peak);
        check(res.is_ok(), || "panic".into())?;
        check(took <= FUZZ_TIME_CAP, || format!("input took {took:?}"))?;
        check(peak <= FUZZ_ALLOC_CAP, || format!("input allocated {peak} bytes"))
    };
    run(&mut || {
        let _ = decode_value(env, *order, &data);
    })
    .map_err(|e| format!("decode: {e} on {data:02x?}"))?;
    run(&mut || {
        if is_type_text {
            let _ = parse_type_text(&text);
        } else {
            let _ = read_data(env, &text);
        }
    })
    .map_err(|e| format!("parse: {e} on {text:?}"))?;
    if let Some(f) = file {
        run(&mut || {
            if let Ok(sess) = FileSession::open_source(Arc::new(f.clone())) {
                if let Ok(root) = sess.root() {
                    let _ = print_data(&root, false);
                }
            }
            let _ = read_bytes(&f);
        })
        .map_err(|e| format!("file: {e}"))?;
    }
    Ok(())
}

fn fuzz() -> Outcome {
    let c = corpus();
    std::panic::set_hook(Box::new(|_| {}));
    let threads = std::thread::available_parallelism().map_or(4, |n| n.get()) as u64;
    let next = AtomicU64::new(0);
    let failures = AtomicUsize::new(0);
    let start = Instant::now();
    let results: Vec<Result<(Duration, usize), String>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|_| {
                std::thread::Builder::new()
                    .stack_size(256 << 20)
                    .spawn_scoped(s, || {
                        let mut worst = (Duration::ZERO, 0);
                        loop {
                            let i = next.fetch_add(1, Ordering::Relaxed);
                            if i >= FUZZ_ITERATIONS || failures.load(Ordering::Relaxed) > 0 {
                                return Ok(worst);
                            }
                            let mut r = rng(7_000_000 + i);
                            if let Err(e) = fuzz_one(&c, &mut r, &mut worst) {
                                failures.fetch_add(1, Ordering::Relaxed);
                                return Err(format!("iteration {i}: {e}"));
                            }
                        }
                    })
                    .unwrap()
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let _ = std::panic::take_hook();
    let mut worst = (Duration::ZERO, 0);
    for r in results {
        let w = r?;
        worst.0 = worst.0.max(w.0);
        worst.1 = worst.1.max(w.1);
    }
    Ok(format!(
        "{FUZZ_ITERATIONS} iterations in {:.1?}; slowest input {:.2?}, largest allocation {} KiB",
        start.elapsed(),
        worst.0,
        worst.1 >> 10
    ))
}

fn has_any_handle(d: &DataHandle) -> Result<bool, String> {
    let t = d.typ().map_err(e2s)?;
    if matches!(*t, TypeNode::Any) || d.is_unbound_any() {
        return Ok(true);
    }
    let defs = d.defs().map_err(e2s)?;
    let t = structfile::typesys::resolve_deep(&t, &defs).map_err(e2s)?;
    match &*t {
        TypeNode::Struct {
            is_union: false,
            fields,
        } => {
            for i in 0..fields.len() {
                if d.field_present_at(i).map_err(e2s)? && has_any_handle(&d.get_field_by_index(i).map_err(e2s)?)? {
                    return Ok(true);
                }
            }
        }
        TypeNode::Struct { is_union: true, .. } => {
            let i = d.active_field().map_err(e2s)?;
            return has_any_handle(&d.get_field_by_index(i).map_err(e2s)?);
        }
        TypeNode::Array { .. } => {
            for i in 0..d.n_elements().map_err(e2s)? {
                if has_any_handle(&d.get_elem(i).map_err(e2s)?)? {
                    return Ok(true);
                }
            }
        }
        _ => {}
    }
    Ok(false)
}

fn any_transparency() -> Outcome {
    let bin = fixture("any_fields.bin");
    let (h, v) = read_bytes(&bin).map_err(e2s)?;
    check(!has_any_handle(&v)?, || "decoded fixture exposes an any handle".into())?;
    let sess = FileSession::open_source(Arc::new(bin.clone())).map_err(e2s)?;
    check(!has_any_handle(&sess.root().map_err(e2s)?)?, || {
        "lazy fixture exposes an any handle".into()
    })?;
    let mut files = 1;
    for seed in 0..ANY_CASES {
        let (_, v) = sample(8_000_000 + seed, TypeGen::default());
        let bytes = file_bytes(&v, Mode::Binary(ByteOrder::Little), &[]).map_err(e2s)?;
        let (_, back) = read_bytes(&bytes).map_err(e2s)?;
        check(!has_any_handle(&back)?, || {
            format!("seed {seed}: decoded value exposes an any handle")
        })?;
        let sess = FileSession::open_source(Arc::new(bytes)).map_err(e2s)?;
        check(!has_any_handle(&sess.root().map_err(e2s)?)?, || {
            format!("seed {seed}: lazy value exposes an any handle")
        })?;
        files += 1;
    }

    let fresh = new_direct(&h.env).map_err(e2s)?;
    let slot = fresh.get_field("payload").map_err(e2s)?;
    check(slot.is_unbound_any(), || "fresh any field is bound".into())?;
    check(matches!(slot.get_int(), Err(Error::UnboundAny)), || {
        "read of unbound any allowed".into()
    })?;
    check(matches!(slot.assign_int(1), Err(Error::UnboundAny)), || {
        "write of unbound any allowed".into()
    })?;
    check(matches!(print_data(&fresh, false), Err(Error::UnboundAny)), || {
        "printing unbound any allowed".into()
    })?;
    check(
        matches!(encode_to_vec(&fresh, ByteOrder::Big), Err(Error::UnboundAny)),
        || "encoding unbound any allowed".into(),
    )?;
    let header = FileHeader::new(h.env.clone(), Mode::Binary(ByteOrder::Big));
    let mut file = DataFile::new(Cursor::new(Vec::new()), header).map_err(e2s)?;
    check(
        matches!(file.commit(&CursorPos(vec![1])), Err(Error::IncompletePrefix(_))),
        || "streaming past an unbound any allowed".into(),
    )?;
    let target = slot.actualize_type(&parse_type_text("real*8").unwrap()).map_err(e2s)?;
    target.assign_double(2.5).map_err(e2s)?;
    check(slot.get_double().map_err(e2s)? == 2.5, || {
        "bound any does not forward".into()
    })?;
    check(
        matches!(
            slot.actualize_type(&parse_type_text("real*8").unwrap()),
            Err(Error::AlreadyBound)
        ),
        || "rebinding allowed".into(),
    )?;
    check(!slot.typ().map(|t| matches!(*t, TypeNode::Any)).unwrap_or(true), || {
        "bound any reports any".into()
    })?;
    Ok(format!(
        "{files} decoded files expose no any handle; unbound reads, writes and commits rejected"
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("ddl round trip", ddl_round_trip),
        ("binary round trip", binary_round_trip),
        ("wire-format golden bytes", golden_bytes),
        ("lazy reader equivalence", lazy_reader),
        ("streaming writer equivalence", streaming_writer),
        ("block store", blockstore),
        ("type descriptor self-description", descriptor),
        ("fuzz robustness", fuzz),
        ("any transparency", any_transparency),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let start = Instant::now();
        let res = catch_unwind(f).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let took = start.elapsed();
        match res {
            Ok(detail) => println!("PASS [{}] {name}: {detail} ({took:.1?})", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL [{}] {name}: {why} ({took:.1?})", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
