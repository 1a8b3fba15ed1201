//! Textual data representation.
//!
//! Numbers print naturally, strings are quoted, opaque strings and NaN or
//! `real*16` cells print as `x"HEX"`, matrices print their free dimension
//! counts followed by the cells in storage order, arrays and structs are
//! bracketed, unions print as `variant: value`, and bound `any` values carry
//! their type in parentheses. Commas between items are optional on input.

use std::fmt::Write as _;
use std::io;
use std::sync::Arc;

use crate::datamodel::{build_direct, AnyNode, Contents, DataHandle, MatrixShape, MatrixValue};
use crate::ddlparse::parse_type_text;
use crate::error::{Error, Pos, Result};
use crate::typesys::{print_reachable, resolve_deep, Dim, NumKind, TypeDefs, TypeEnv, TypeNode};

/// Maximum nesting depth accepted by [`read_data`].
pub const MAX_TEXT_DEPTH: usize = 512;

/// Renders `d` as text. Pretty output puts struct fields and composite
/// array elements on their own indented lines.
pub fn print_data(d: &DataHandle, pretty: bool) -> Result<String> {
    let mut p = Printer {
        out: String::new(),
        pretty,
    };
    let declared = declared_type(d)?;
    p.value(d, &declared, &d.defs()?, 0)?;
    Ok(p.out)
}

/// Writes [`print_data`] output to `out`.
pub fn write_data(d: &DataHandle, out: &mut dyn io::Write, pretty: bool) -> Result<()> {
    out.write_all(print_data(d, pretty)?.as_bytes())?;
    Ok(())
}

/// Declared type of a handle as seen by its parent: `any` for forwarders.
pub(crate) fn declared_type(d: &DataHandle) -> Result<Arc<TypeNode>> {
    let imp = d.imp()?;
    if imp.is_unbound_any() || imp.any_target().is_some() {
        Ok(Arc::new(TypeNode::Any))
    } else {
        Ok(imp.typ())
    }
}

struct Printer {
    out: String,
    pretty: bool,
}

fn is_composite(t: &TypeNode) -> bool {
    matches!(t, TypeNode::Struct { .. } | TypeNode::Array { .. } | TypeNode::Any)
}

impl Printer {
    fn newline(&mut self, indent: usize) {
        self.out.push('\n');
        for _ in 0..indent {
            self.out.push_str("  ");
        }
    }

    fn value(&mut self, d: &DataHandle, declared: &Arc<TypeNode>, defs: &Arc<TypeDefs>, indent: usize) -> Result<()> {
        let declared = resolve_deep(declared, defs)?;
        if let TypeNode::Any = *declared {
            let target = match d.imp()?.any_target() {
                Some(t) => t,
                None if d.is_unbound_any() => return Err(Error::UnboundAny),
                None => d.clone(),
            };
            let t = target.typ()?;
            let tdefs = target.defs()?;
            self.out.push('(');
            let text = print_reachable(&t, &tdefs, true);
            self.out.push_str(text.trim_end().trim_end_matches(';'));
            self.out.push_str(") ");
            return self.value(&target, &t, &tdefs, indent);
        }
        match &*declared {
            TypeNode::Num { kind, dims } => self.matrix(&d.get_matrix()?, *kind, dims),
            TypeNode::Str { opaque: true, .. } => hex(&mut self.out, &d.get_string()?),
            TypeNode::Str { opaque: false, .. } => quote(&mut self.out, &d.get_string()?),
            TypeNode::Struct {
                is_union: false,
                fields,
            } => {
                self.out.push('{');
                let mut first = true;
                for (i, f) in fields.iter().enumerate() {
                    if f.optional && !d.field_present_at(i)? {
                        continue;
                    }
                    if !first {
                        self.out.push(',');
                        if !self.pretty {
                            self.out.push(' ');
                        }
                    }
                    first = false;
                    if self.pretty {
                        self.newline(indent + 1);
                    }
                    self.out.push_str(&f.name);
                    self.out.push_str(" = ");
                    self.value(&d.get_field_by_index(i)?, &f.typ, defs, indent + 1)?;
                }
                if self.pretty && !first {
                    self.newline(indent);
                }
                self.out.push('}');
            }
            TypeNode::Struct { is_union: true, fields } => {
                let a = d.active_field()?;
                self.out.push_str(&fields[a].name);
                self.out.push_str(": ");
                self.value(&d.get_field_by_index(a)?, &fields[a].typ, defs, indent)?;
            }
            TypeNode::Array { elem, .. } => {
                let n = d.n_elements()?;
                let multi = self.pretty && n > 0 && is_composite(&*resolve_deep(elem, defs)?);
                self.out.push('[');
                for i in 0..n {
                    if i > 0 {
                        self.out.push(',');
                        if !multi {
                            self.out.push(' ');
                        }
                    }
                    if multi {
                        self.newline(indent + 1);
                    }
                    self.value(&d.get_elem(i)?, elem, defs, indent + 1)?;
                }
                if multi {
                    self.newline(indent);
                }
                self.out.push(']');
            }
            TypeNode::NamedRef(_) | TypeNode::Any => unreachable!(),
        }
        Ok(())
    }

    fn matrix(&mut self, m: &MatrixValue, kind: NumKind, dims: &[Dim]) {
        if dims.is_empty() {
            cell(&mut self.out, m, 0, kind);
            return;
        }
        for (d, dim) in dims.iter().enumerate() {
            if dim.is_free() {
                let _ = write!(self.out, "{} ", m.shape.count(d));
            }
        }
        self.out.push('[');
        for i in 0..m.len() {
            if i > 0 {
                self.out.push_str(", ");
            }
            cell(&mut self.out, m, i, kind);
        }
        self.out.push(']');
    }
}

fn cell(out: &mut String, m: &MatrixValue, i: usize, kind: NumKind) {
    let bytes = m.cell_bytes(i);
    match kind {
        NumKind::F16 => hex_be(out, bytes),
        NumKind::F4 => {
            let v = f32::from_le_bytes(bytes.try_into().unwrap());
            if v.is_nan() {
                hex_be(out, bytes);
            } else {
                float_text(
                    out,
                    v as f64,
                    v.abs() >= 1e16 || (v != 0.0 && v.abs() < 1e-4),
                    || v.to_string(),
                    || format!("{v:e}"),
                );
            }
        }
        NumKind::F8 => {
            let v = f64::from_le_bytes(bytes.try_into().unwrap());
            if v.is_nan() {
                hex_be(out, bytes);
            } else {
                float_text(
                    out,
                    v,
                    v.abs() >= 1e16 || (v != 0.0 && v.abs() < 1e-4),
                    || v.to_string(),
                    || format!("{v:e}"),
                );
            }
        }
        _ => {
            let _ = write!(out, "{}", m.int(i).unwrap());
        }
    }
}

fn float_text(out: &mut String, v: f64, exp: bool, plain: impl Fn() -> String, sci: impl Fn() -> String) {
    if v.is_infinite() {
        out.push_str(if v > 0.0 { "inf" } else { "-inf" });
    } else if exp {
        out.push_str(&sci());
    } else {
        out.push_str(&plain());
    }
}

fn hex(out: &mut String, bytes: &[u8]) {
    out.push_str("x\"");
    for b in bytes {
        let _ = write!(out, "{b:02X}");
    }
    out.push('"');
}

/// Hex of a little-endian cell, most significant byte first.
fn hex_be(out: &mut String, le: &[u8]) {
    let mut be = le.to_vec();
    be.reverse();
    hex(out, &be);
}

fn quote(out: &mut String, bytes: &[u8]) {
    out.push('"');
    for &b in bytes {
        match b {
            b'"' => out.push_str("\\\""),
            b'\\' => out.push_str("\\\\"),
            b'\n' => out.push_str("\\n"),
            0x20..=0x7e => out.push(b as char),
            _ => {
                let _ = write!(out, "\\x{b:02X}");
            }
        }
    }
    out.push('"');
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Number(String),
    Str(Vec<u8>),
    Hex(Vec<u8>),
    /// Raw text between parentheses.
    Paren(String),
    Punct(u8),
    End,
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Word(w) => format!("`{w}`"),
        Tok::Number(n) => format!("number {n}"),
        Tok::Str(_) => "string".into(),
        Tok::Hex(_) => "hex string".into(),
        Tok::Paren(_) => "type annotation".into(),
        Tok::Punct(c) => format!("`{}`", *c as char),
        Tok::End => "end of input".into(),
    }
}

struct Lexer<'a> {
    src: &'a [u8],
    i: usize,
    line: u32,
    col: u32,
    peeked: Option<(Tok, Pos)>,
    depth: usize,
}

fn syntax(message: impl Into<String>, pos: Pos) -> Error {
    Error::TextSyntax {
        message: message.into(),
        pos,
    }
}

fn mismatch(message: impl Into<String>, pos: Pos) -> Error {
    Error::TypeMismatchInData {
        message: message.into(),
        pos,
    }
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            i: 0,
            line: 1,
            col: 1,
            peeked: None,
            depth: 0,
        }
    }

    fn pos(&self) -> Pos {
        Pos {
            line: self.line,
            column: self.col,
        }
    }

    fn bump(&mut self) -> Option<u8> {
        let c = *self.src.get(self.i)?;
        self.i += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else if c & 0xC0 != 0x80 {
            self.col += 1;
        }
        Some(c)
    }

    fn peek_byte(&self) -> Option<u8> {
        self.src.get(self.i).copied()
    }

    fn lex(&mut self) -> Result<(Tok, Pos)> {
        while self.peek_byte().is_some_and(|c| c.is_ascii_whitespace()) {
            self.bump();
        }
        let pos = self.pos();
        let Some(c) = self.peek_byte() else {
            return Ok((Tok::End, pos));
        };
        let tok = match c {
            b'"' => {
                self.bump();
                Tok::Str(self.string_body(pos)?)
            }
            b'x' if self.src.get(self.i + 1) == Some(&b'"') => {
                self.bump();
                self.bump();
                Tok::Hex(self.hex_body(pos)?)
            }
            b'(' => {
                self.bump();
                let start = self.i;
                loop {
                    match self.bump() {
                        Some(b')') => break,
                        Some(_) => {}
                        None => return Err(syntax("unterminated type annotation", pos)),
                    }
                }
                let text = std::str::from_utf8(&self.src[start..self.i - 1])
                    .map_err(|_| syntax("type annotation is not UTF-8", pos))?;
                Tok::Paren(text.to_string())
            }
            b'{' | b'}' | b'[' | b']' | b',' | b'=' | b':' => {
                self.bump();
                Tok::Punct(c)
            }
            b'0'..=b'9' | b'-' | b'+' | b'.' => {
                let start = self.i;
                self.bump();
                while let Some(c) = self.peek_byte() {
                    let after_exp = matches!(self.src[self.i - 1], b'e' | b'E')
                        && self.src[start..self.i].iter().any(u8::is_ascii_digit);
                    if c.is_ascii_alphanumeric() || c == b'.' || c == b'_' || (after_exp && (c == b'-' || c == b'+')) {
                        self.bump();
                    } else {
                        break;
                    }
                }
                Tok::Number(String::from_utf8_lossy(&self.src[start..self.i]).into_owned())
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.i;
                while self.peek_byte().is_some_and(|c| c.is_ascii_alphanumeric() || c == b'_') {
                    self.bump();
                }
                Tok::Word(String::from_utf8_lossy(&self.src[start..self.i]).into_owned())
            }
            _ => {
                let ch = std::str::from_utf8(&self.src[self.i..])
                    .ok()
                    .and_then(|s| s.chars().next())
                    .unwrap_or('\u{fffd}');
                return Err(syntax(format!("unexpected character {ch:?}"), pos));
            }
        };
        Ok((tok, pos))
    }

    fn string_body(&mut self, pos: Pos) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        loop {
            let here = self.pos();
            match self.bump() {
                None => return Err(syntax("unterminated string", pos)),
                Some(b'"') => return Ok(out),
                Some(b'\\') => match self.bump() {
                    Some(b'"') => out.push(b'"'),
                    Some(b'\\') => out.push(b'\\'),
                    Some(b'n') => out.push(b'\n'),
                    Some(b'x') => {
                        let hi = self.bump().and_then(hex_digit);
                        let lo = self.bump().and_then(hex_digit);
                        match (hi, lo) {
                            (Some(h), Some(l)) => out.push(h << 4 | l),
                            _ => return Err(syntax("bad \\x escape", here)),
                        }
                    }
                    _ => return Err(syntax("unknown escape", here)),
                },
                Some(c) => out.push(c),
            }
        }
    }

    fn hex_body(&mut self, pos: Pos) -> Result<Vec<u8>> {
        let mut digits = Vec::new();
        loop {
            match self.bump() {
                None => return Err(syntax("unterminated hex string", pos)),
                Some(b'"') => break,
                Some(c) if c.is_ascii_whitespace() => {}
                Some(c) => digits.push(hex_digit(c).ok_or_else(|| syntax("bad hex digit", pos))?),
            }
        }
        if digits.len() % 2 != 0 {
            return Err(syntax("odd number of hex digits", pos));
        }
        Ok(digits.chunks(2).map(|p| p[0] << 4 | p[1]).collect())
    }

    fn peek(&mut self) -> Result<&(Tok, Pos)> {
        if self.peeked.is_none() {
            self.peeked = Some(self.lex()?);
        }
        Ok(self.peeked.as_ref().unwrap())
    }

    fn next(&mut self) -> Result<(Tok, Pos)> {
        match self.peeked.take() {
            Some(t) => Ok(t),
            None => self.lex(),
        }
    }

    fn expect(&mut self, c: u8) -> Result<Pos> {
        let (t, pos) = self.next()?;
        if t != Tok::Punct(c) {
            return Err(syntax(format!("expected `{}`, found {}", c as char, describe(&t)), pos));
        }
        Ok(pos)
    }

    fn skip_comma(&mut self) -> Result<()> {
        if self.peek()?.0 == Tok::Punct(b',') {
            self.next()?;
        }
        Ok(())
    }
}

fn hex_digit(c: u8) -> Option<u8> {
    (c as char).to_digit(16).map(|d| d as u8)
}

/// Reads the textual form of a value of `env.root`.
pub fn read_data(env: &TypeEnv, src: &str) -> Result<DataHandle> {
    let mut lx = Lexer::new(src);
    let v = read_value(&mut lx, &env.root, &env.defs)?;
    let (t, pos) = lx.next()?;
    if t != Tok::End {
        return Err(syntax(format!("unexpected {} after value", describe(&t)), pos));
    }
    Ok(v)
}

fn read_value(lx: &mut Lexer, declared: &Arc<TypeNode>, defs: &Arc<TypeDefs>) -> Result<DataHandle> {
    lx.depth += 1;
    if lx.depth > MAX_TEXT_DEPTH {
        let pos = lx.peek()?.1;
        return Err(syntax("nesting too deep", pos));
    }
    let r = read_value_inner(lx, declared, defs);
    lx.depth -= 1;
    r
}

fn at_end_check(lx: &mut Lexer) -> Result<()> {
    let (t, pos) = lx.peek()?;
    if *t == Tok::End {
        return Err(syntax("unexpected end of input", *pos));
    }
    Ok(())
}

fn read_value_inner(lx: &mut Lexer, declared: &Arc<TypeNode>, defs: &Arc<TypeDefs>) -> Result<DataHandle> {
    at_end_check(lx)?;
    let ty = resolve_deep(declared, defs)?;
    Ok(match &*ty {
        TypeNode::Any => {
            let (t, pos) = lx.next()?;
            let Tok::Paren(text) = t else {
                return Err(mismatch(
                    format!("expected `(type)` for any value, found {}", describe(&t)),
                    pos,
                ));
            };
            let env = parse_type_text(&text).map_err(|e| mismatch(format!("bad type annotation: {e}"), pos))?;
            let target = read_value(lx, &env.root, &env.defs)?;
            DataHandle::new(Arc::new(AnyNode::bound(defs.clone(), target)))
        }
        TypeNode::Num { kind, dims } => {
            let m = read_matrix(lx, *kind, dims)?;
            build_direct(ty.clone(), defs.clone(), Contents::Num(m))
        }
        TypeNode::Str { opaque, size } => {
            let (t, pos) = lx.next()?;
            let mut bytes = match t {
                Tok::Str(b) if !opaque => b,
                Tok::Hex(b) => b,
                other => {
                    let want = if *opaque { "hex string" } else { "string" };
                    return Err(mismatch(format!("expected {want}, found {}", describe(&other)), pos));
                }
            };
            if let Dim::Fixed(n) = size {
                if bytes.len() > *n as usize {
                    return Err(mismatch(format!("string longer than {n} bytes"), pos));
                }
                bytes.resize(*n as usize, 0);
            }
            build_direct(ty.clone(), defs.clone(), Contents::Bytes(bytes))
        }
        TypeNode::Struct {
            is_union: false,
            fields,
        } => {
            let open = lx.expect(b'{')?;
            let mut values: Vec<Option<DataHandle>> = vec![None; fields.len()];
            loop {
                let (t, pos) = lx.next()?;
                let name = match t {
                    Tok::Punct(b'}') => break,
                    Tok::Word(w) => w,
                    other => {
                        return Err(syntax(
                            format!("expected field name or `}}`, found {}", describe(&other)),
                            pos,
                        ))
                    }
                };
                let i = ty
                    .field_index(&name)
                    .ok_or_else(|| mismatch(format!("no field `{name}`"), pos))?;
                if values[i].is_some() {
                    return Err(mismatch(format!("field `{name}` given twice"), pos));
                }
                lx.expect(b'=')?;
                values[i] = Some(read_value(lx, &fields[i].typ, defs)?);
                lx.skip_comma()?;
            }
            for (f, v) in fields.iter().zip(&values) {
                if v.is_none() && !f.optional {
                    return Err(mismatch(format!("missing field `{}`", f.name), open));
                }
            }
            build_direct(ty.clone(), defs.clone(), Contents::Struct(values))
        }
        TypeNode::Struct { is_union: true, fields } => {
            let (t, pos) = lx.next()?;
            let Tok::Word(name) = t else {
                return Err(syntax(format!("expected variant name, found {}", describe(&t)), pos));
            };
            let i = ty
                .field_index(&name)
                .ok_or_else(|| mismatch(format!("no variant `{name}`"), pos))?;
            lx.expect(b':')?;
            let v = read_value(lx, &fields[i].typ, defs)?;
            build_direct(ty.clone(), defs.clone(), Contents::Union(i, v))
        }
        TypeNode::Array { size, elem } => {
            let open = lx.expect(b'[')?;
            let mut elems = Vec::new();
            loop {
                if lx.peek()?.0 == Tok::Punct(b']') {
                    lx.next()?;
                    break;
                }
                elems.push(read_value(lx, elem, defs)?);
                lx.skip_comma()?;
            }
            if let Dim::Fixed(n) = size {
                if elems.len() != *n as usize {
                    return Err(mismatch(format!("expected {n} elements, found {}", elems.len()), open));
                }
            }
            build_direct(ty.clone(), defs.clone(), Contents::Array(elems))
        }
        TypeNode::NamedRef(_) => unreachable!(),
    })
}

fn read_matrix(lx: &mut Lexer, kind: NumKind, dims: &[Dim]) -> Result<MatrixValue> {
    if dims.is_empty() {
        let mut m = MatrixValue::scalar_zero(kind);
        read_cell(lx, &mut m, 0)?;
        return Ok(m);
    }
    let mut counts = Vec::with_capacity(dims.len());
    for d in dims {
        counts.push(match d {
            Dim::Fixed(n) => *n as usize,
            Dim::Free => {
                let (t, pos) = lx.next()?;
                match t {
                    Tok::Number(n) => n
                        .parse::<u32>()
                        .map_err(|_| mismatch(format!("bad dimension count {n}"), pos))?
                        as usize,
                    other => {
                        return Err(mismatch(
                            format!("expected dimension count, found {}", describe(&other)),
                            pos,
                        ))
                    }
                }
            }
        });
    }
    let open = lx.expect(b'[')?;
    let shape = MatrixShape::from_counts(&counts);
    let total = shape
        .len()
        .filter(|&n| n <= lx.src.len())
        .ok_or_else(|| mismatch("matrix too large for input", open))?;
    let mut m = MatrixValue::zeros(kind, shape)?;
    for i in 0..total {
        if lx.peek()?.0 == Tok::Punct(b']') {
            return Err(mismatch(format!("expected {total} cells, found {i}"), open));
        }
        read_cell(lx, &mut m, i)?;
        lx.skip_comma()?;
    }
    let (t, pos) = lx.next()?;
    if t != Tok::Punct(b']') {
        return Err(mismatch(format!("expected {total} cells"), pos));
    }
    Ok(m)
}

fn read_cell(lx: &mut Lexer, m: &mut MatrixValue, i: usize) -> Result<()> {
    let kind = m.kind;
    at_end_check(lx)?;
    let (t, pos) = lx.next()?;
    match t {
        Tok::Hex(mut be) if kind.is_float() => {
            if be.len() != kind.width() {
                return Err(mismatch(format!("expected {} hex bytes", kind.width()), pos));
            }
            be.reverse();
            let w = kind.width();
            m.data[i * w..(i + 1) * w].copy_from_slice(&be);
            Ok(())
        }
        Tok::Number(text) | Tok::Word(text) if kind.is_float() => {
            let bad = || mismatch(format!("bad number {text}"), pos);
            match kind {
                NumKind::F4 => {
                    let v: f32 = text.parse().map_err(|_| bad())?;
                    m.data[i * 4..i * 4 + 4].copy_from_slice(&v.to_le_bytes());
                    Ok(())
                }
                _ => {
                    let v: f64 = text.parse().map_err(|_| bad())?;
                    m.set_float(i, v)
                }
            }
        }
        Tok::Number(text) => {
            let v: i128 = text
                .parse()
                .map_err(|_| mismatch(format!("expected integer, found {text}"), pos))?;
            m.set_int(i, v).map_err(|e| mismatch(e.to_string(), pos))
        }
        other => Err(mismatch(format!("expected number, found {}", describe(&other)), pos)),
    }
}
