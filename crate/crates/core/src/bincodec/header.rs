//! File header: identification line, comments and embedded type text.

use std::io::{BufRead, Write};

use crate::ddlparse::parse_type_text;
use crate::error::{Error, Pos, Result};
use crate::typesys::{print_env, TypeEnv};

pub const MAGIC: &str = "STRUCTURED FILE";
pub const VERSION: &str = "V0.1";

/// Longest header line accepted, to bound memory on hostile input.
const MAX_LINE: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ByteOrder {
    Big,
    Little,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Binary(ByteOrder),
    Text,
}

impl Mode {
    pub fn keyword(self) -> &'static str {
        match self {
            Mode::Binary(ByteOrder::Big) => "BINARY_BE",
            Mode::Binary(ByteOrder::Little) => "BINARY_LE",
            Mode::Text => "TEXT",
        }
    }

    pub fn from_keyword(word: &str) -> Result<Self> {
        Ok(match word {
            "BINARY_BE" => Mode::Binary(ByteOrder::Big),
            "BINARY_LE" => Mode::Binary(ByteOrder::Little),
            "TEXT" => Mode::Text,
            other => return Err(Error::UnknownFlag(other.to_string())),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FileHeader {
    pub version: String,
    pub mode: Mode,
    /// Comment lines without the leading `#`.
    pub comments: Vec<String>,
    pub env: TypeEnv,
    /// Offset of the first data byte, just past the `DATA` line.
    pub data_start: u64,
}

impl FileHeader {
    pub fn new(env: TypeEnv, mode: Mode) -> Self {
        FileHeader {
            version: VERSION.to_string(),
            mode,
            comments: Vec::new(),
            env,
            data_start: 0,
        }
    }

    pub fn with_comments(mut self, comments: Vec<String>) -> Self {
        self.comments = comments;
        self
    }

    pub fn byte_order(&self) -> Option<ByteOrder> {
        match self.mode {
            Mode::Binary(o) => Some(o),
            Mode::Text => None,
        }
    }
}

fn read_line<R: BufRead>(r: &mut R, offset: &mut u64) -> Result<Option<String>> {
    let mut buf = Vec::new();
    let n = std::io::Read::take(&mut *r, MAX_LINE as u64 + 1).read_until(b'\n', &mut buf)?;
    if n == 0 {
        return Ok(None);
    }
    if buf.last() != Some(&b'\n') {
        return Err(Error::Truncated {
            offset: *offset + n as u64,
        });
    }
    *offset += n as u64;
    buf.pop();
    if buf.last() == Some(&b'\r') {
        buf.pop();
    }
    String::from_utf8(buf).map(Some).map_err(|_| Error::Parse {
        message: "header line is not UTF-8".into(),
        pos: Pos { line: 0, column: 1 },
        expected: vec![],
    })
}

/// Reads a header from the start of `r`.
pub fn scan_header<R: BufRead>(r: &mut R) -> Result<FileHeader> {
    let mut offset = 0u64;
    let first = read_line(r, &mut offset)?.ok_or(Error::Truncated { offset: 0 })?;
    let rest = first.strip_prefix(MAGIC).ok_or(Error::BadMagic)?;
    let mut words = rest.split_whitespace();
    if !rest.starts_with(' ') {
        return Err(Error::BadMagic);
    }
    let version = words.next().ok_or(Error::BadMagic)?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version.to_string()));
    }
    let mode = match words.next() {
        Some(w) => Mode::from_keyword(w)?,
        None => Mode::Binary(ByteOrder::Big),
    };
    if let Some(extra) = words.next() {
        return Err(Error::UnknownFlag(extra.to_string()));
    }
    let mut comments = Vec::new();
    let mut line_no = 1u32;
    loop {
        let line = read_line(r, &mut offset)?.ok_or(Error::Truncated { offset })?;
        line_no += 1;
        if let Some(c) = line.strip_prefix('#') {
            comments.push(c.to_string());
        } else if line.trim() == "TYPE" {
            break;
        } else if !line.trim().is_empty() {
            return Err(Error::Parse {
                message: "expected comment or TYPE line".into(),
                pos: Pos {
                    line: line_no,
                    column: 1,
                },
                expected: vec!["TYPE".into()],
            });
        }
    }
    let type_line = line_no + 1;
    let mut text = String::new();
    loop {
        let line = read_line(r, &mut offset)?.ok_or(Error::Truncated { offset })?;
        if line.trim_end() == "DATA" {
            break;
        }
        if text.len() > MAX_LINE {
            return Err(Error::Truncated { offset });
        }
        text.push_str(&line);
        text.push('\n');
    }
    let env = parse_type_text(&text).map_err(|e| shift_lines(e, type_line - 1))?;
    Ok(FileHeader {
        version: version.to_string(),
        mode,
        comments,
        env,
        data_start: offset,
    })
}

/// Makes type-text positions relative to the whole file.
fn shift_lines(e: Error, by: u32) -> Error {
    let shift = |pos: Pos| Pos {
        line: pos.line + by,
        column: pos.column,
    };
    match e {
        Error::Lex { ch, pos } => Error::Lex { ch, pos: shift(pos) },
        Error::Parse { message, pos, expected } => Error::Parse {
            message,
            pos: shift(pos),
            expected,
        },
        Error::Validation { message, pos } => Error::Validation {
            message,
            pos: shift(pos),
        },
        other => other,
    }
}

/// Scans a header held in memory.
pub fn scan_header_bytes(bytes: &[u8]) -> Result<FileHeader> {
    scan_header(&mut &bytes[..])
}

/// Writes the header; returns its length, which is where data starts.
pub fn write_header(h: &FileHeader, out: &mut dyn Write) -> Result<u64> {
    if h.version != VERSION {
        return Err(Error::UnsupportedVersion(h.version.clone()));
    }
    let mut text = format!("{MAGIC} {} {}\n", h.version, h.mode.keyword());
    for c in &h.comments {
        if c.contains('\n') {
            return Err(Error::Validation {
                message: "comment contains a newline".into(),
                pos: Pos { line: 0, column: 0 },
            });
        }
        text.push('#');
        text.push_str(c);
        text.push('\n');
    }
    text.push_str("TYPE\n");
    text.push_str(&print_env(&h.env));
    text.push_str("DATA\n");
    out.write_all(text.as_bytes())?;
    Ok(text.len() as u64)
}

pub fn header_bytes(h: &FileHeader) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_header(h, &mut out)?;
    Ok(out)
}
