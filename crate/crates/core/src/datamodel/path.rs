//! Path expressions such as `atoms[0].name`.

use super::DataHandle;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PathStep {
    Field(String),
    Index(usize),
}

fn syntax(message: impl Into<String>, at: usize) -> Error {
    Error::PathSyntax {
        message: message.into(),
        at,
    }
}

/// Parses `name { '.' name | '[' int ']' }`. The empty path names the root,
/// and a path may start with an index when the root is an array.
pub fn parse_path(src: &str) -> Result<Vec<PathStep>> {
    let bytes = src.as_bytes();
    let mut steps = Vec::new();
    let mut i = 0;
    let ident = |i: &mut usize| -> Result<String> {
        let start = *i;
        while *i < bytes.len() && (bytes[*i].is_ascii_alphanumeric() || bytes[*i] == b'_') {
            *i += 1;
        }
        if start == *i || bytes[start].is_ascii_digit() {
            return Err(syntax("expected field name", start));
        }
        Ok(src[start..*i].to_string())
    };
    if bytes.is_empty() {
        return Ok(steps);
    }
    if bytes[0] != b'[' {
        steps.push(PathStep::Field(ident(&mut i)?));
    }
    while i < bytes.len() {
        match bytes[i] {
            b'.' => {
                i += 1;
                steps.push(PathStep::Field(ident(&mut i)?));
            }
            b'[' => {
                i += 1;
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if start == i {
                    return Err(syntax("expected index", start));
                }
                let n = src[start..i]
                    .parse::<usize>()
                    .map_err(|_| syntax("index too large", start))?;
                if bytes.get(i) != Some(&b']') {
                    return Err(syntax("expected `]`", i));
                }
                i += 1;
                steps.push(PathStep::Index(n));
            }
            _ => return Err(syntax("expected `.` or `[`", i)),
        }
    }
    Ok(steps)
}

/// Follows `path` from `root` with successive field and element lookups.
pub fn path_get(root: &DataHandle, path: &str) -> Result<DataHandle> {
    let mut cur = root.clone().transparent();
    for step in parse_path(path)? {
        cur = match step {
            PathStep::Field(name) => cur.get_field(&name)?,
            PathStep::Index(i) => cur.get_elem(i)?,
        };
    }
    Ok(cur)
}
