//! Error type shared by every layer of the library.

use std::fmt;
use std::io;

/// Line/column position inside a text source (both 1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Pos {
    pub line: u32,
    pub column: u32,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // type system
    #[error("unknown type name `{0}`")]
    UnknownTypeName(String),
    #[error("type has variable size")]
    VariableSize,

    // type language
    #[error("illegal character {ch:?} at {pos}")]
    Lex { ch: char, pos: Pos },
    #[error("parse error at {pos}: {message}{}", expected_suffix(.expected))]
    Parse {
        message: String,
        pos: Pos,
        expected: Vec<String>,
    },
    #[error("invalid type at {pos}: {message}")]
    Validation { message: String, pos: Pos },

    // data access
    #[error("operation on a null handle")]
    NullHandle,
    #[error("operation not applicable to data of type {0}")]
    WrongType(String),
    #[error("no field named `{0}`")]
    NoSuchField(String),
    #[error("optional field `{0}` is not present")]
    FieldNotPresent(String),
    #[error("union field {requested} is not active (active field is {active})")]
    InactiveUnionField { requested: usize, active: usize },
    #[error("index {index} out of range (length {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("array has a fixed size")]
    FixedSize,
    #[error("value {0} cannot be returned without loss")]
    LossyRead(String),
    #[error("value {value} out of range for {kind}")]
    OutOfRange { value: String, kind: String },
    #[error("matrix shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("string of {len} bytes exceeds fixed size {max}")]
    StringTooLong { len: usize, max: usize },
    #[error("field `{0}` is not optional")]
    NotOptional(String),
    #[error("types are not identical")]
    TypeMismatch,
    #[error("cursor is past the last element of its level")]
    AtEnd,
    #[error("current element has no children")]
    NoChildren,
    #[error("cursor is at the root level")]
    AtRoot,
    #[error("bad path syntax at byte {at}: {message}")]
    PathSyntax { message: String, at: usize },
    #[error("any-typed data has no actual type yet")]
    UnboundAny,
    #[error("any-typed data is already bound")]
    AlreadyBound,
    #[error("data is not of type any")]
    NotAnyType,
    #[error("data is read-only")]
    ReadOnly,
    #[error("data has already been committed to the output file")]
    WriteOnlySession,

    // text data
    #[error("text data syntax error at {pos}: {message}")]
    TextSyntax { message: String, pos: Pos },
    #[error("text data does not match type at {pos}: {message}")]
    TypeMismatchInData { message: String, pos: Pos },

    // binary files
    #[error("not a structured file (bad identification line)")]
    BadMagic,
    #[error("unsupported format version `{0}`")]
    UnsupportedVersion(String),
    #[error("unknown format flag `{0}`")]
    UnknownFlag(String),
    #[error("file is in {found} mode, expected {expected}")]
    WrongMode { found: String, expected: String },
    #[error("input truncated at byte offset {offset}")]
    Truncated { offset: u64 },
    #[error("union selector {selector} out of range ({variants} variants) at byte offset {offset}")]
    BadUnionSelector {
        selector: u16,
        variants: usize,
        offset: u64,
    },
    #[error("negative count {count} at byte offset {offset}")]
    NegativeCount { count: i32, offset: u64 },
    #[error("count {count} exceeds the remaining input at byte offset {offset}")]
    CountOverflow { count: u64, offset: u64 },
    #[error("bad embedded type text at byte offset {offset}: {source}")]
    AnyTypeParse {
        offset: u64,
        #[source]
        source: Box<Error>,
    },
    #[error("nesting deeper than {limit} levels at byte offset {offset}")]
    TooDeep { limit: usize, offset: u64 },
    #[error("{count} trailing bytes after the root value at byte offset {offset}")]
    TrailingBytes { count: u64, offset: u64 },
    #[error("output is not seekable")]
    NotSeekable,
    #[error("cursor position precedes data already written")]
    CursorOrderViolation,
    #[error("data before the commit point is incomplete: {0}")]
    IncompletePrefix(Box<Error>),

    // block store
    #[error("block {0:#x} is locked by an open handle")]
    BlockLocked(u64),
    #[error("{0:#x} is not the address of a live block")]
    BadAddress(u64),
    #[error("block store is corrupt: {0}")]
    StoreCorrupt(String),
    #[error("block handle was already released")]
    DoubleRelease,
    #[error("reference is not set")]
    UnsetReference,
    #[error("block store is in use by another session")]
    StoreBusy,
    #[error("block of {0} bytes exceeds the maximum block size")]
    BlockTooLarge(u64),

    // type descriptors
    #[error("bad type descriptor: {0}")]
    BadDescriptor(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

fn expected_suffix(expected: &[String]) -> String {
    if expected.is_empty() {
        String::new()
    } else {
        format!(" (expected {})", expected.join(", "))
    }
}

impl Error {
    /// Byte offset associated with a binary decode error, if any.
    pub fn offset(&self) -> Option<u64> {
        match self {
            Error::Truncated { offset }
            | Error::BadUnionSelector { offset, .. }
            | Error::NegativeCount { offset, .. }
            | Error::CountOverflow { offset, .. }
            | Error::AnyTypeParse { offset, .. }
            | Error::TooDeep { offset, .. }
            | Error::TrailingBytes { offset, .. } => Some(*offset),
            Error::IncompletePrefix(inner) => inner.offset(),
            _ => None,
        }
    }

    /// True for errors raised while navigating to a member (bad index, field
    /// name, absent optional, inactive variant, or malformed path).
    pub fn is_access_error(&self) -> bool {
        matches!(
            self,
            Error::NoSuchField(_)
                | Error::FieldNotPresent(_)
                | Error::InactiveUnionField { .. }
                | Error::IndexOutOfRange { .. }
                | Error::PathSyntax { .. }
                | Error::WrongType(_)
                | Error::UnboundAny
                | Error::UnsetReference
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
