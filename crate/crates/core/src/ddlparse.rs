//! Lexer and recursive-descent parser for the type language.
//!
//! ```text
//! unit       := { typedef } type [';']
//! typedef    := 'typedef' ident '=' type ';'
//! type       := numtype | strtype | structtype | arraytype | 'type' ident | 'any'
//! numtype    := ('integer' | 'unsigned' | 'real') ['*' INT] [dims]
//! dims       := '[' dim {',' dim} ']'        dim := INT | '.'
//! strtype    := ('string' | 'opaque') ['*' INT]
//! structtype := ('struct' | 'union') '{' { field } '}'
//! field      := ['optional'] name ':' type ';'
//! arraytype  := 'array' ['[' dim ']'] 'of' type
//! ```
//!
//! Field names may be keywords (`struct : struct {...}` is legal); typedef
//! names may not. A bare `integer` is `integer*4`, a bare `real` is `real*8`.

use std::sync::Arc;

use crate::error::{Error, Pos, Result};
use crate::typesys::{is_keyword, Dim, Field, NumKind, TypeDefs, TypeEnv, TypeNode};

/// Nesting limit for the recursive-descent parser.
pub const MAX_DEPTH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Keyword,
    Ident,
    Int,
    Punct,
    Dot,
    End,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    pub pos: Pos,
}

impl Token {
    fn is(&self, kind: TokenKind, text: &str) -> bool {
        self.kind == kind && self.text == text
    }

    fn is_punct(&self, c: &str) -> bool {
        self.is(TokenKind::Punct, c)
    }

    fn is_keyword(&self, kw: &str) -> bool {
        self.is(TokenKind::Keyword, kw)
    }

    fn is_word(&self) -> bool {
        matches!(self.kind, TokenKind::Keyword | TokenKind::Ident)
    }

    fn describe(&self) -> String {
        match self.kind {
            TokenKind::End => "end of input".to_string(),
            _ => format!("`{}`", self.text),
        }
    }
}

pub fn tokenize(src: &str) -> Result<Vec<Token>> {
    let mut tokens = Vec::new();
    let mut line = 1u32;
    let mut column = 1u32;
    let mut chars = src.chars().peekable();
    while let Some(&c) = chars.peek() {
        let pos = Pos { line, column };
        if c == '\n' {
            chars.next();
            line += 1;
            column = 1;
            continue;
        }
        if c.is_whitespace() {
            chars.next();
            column += 1;
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let mut text = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_ascii_alphanumeric() || c == '_' {
                    text.push(c);
                    chars.next();
                    column += 1;
                } else {
                    break;
                }
            }
            let kind = if is_keyword(&text) {
                TokenKind::Keyword
            } else {
                TokenKind::Ident
            };
            tokens.push(Token { kind, text, pos });
            continue;
        }
        if c.is_ascii_digit() {
            let mut text = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_ascii_digit() {
                    text.push(c);
                    chars.next();
                    column += 1;
                } else {
                    break;
                }
            }
            tokens.push(Token {
                kind: TokenKind::Int,
                text,
                pos,
            });
            continue;
        }
        let kind = match c {
            '{' | '}' | '[' | ']' | '(' | ')' | '*' | ',' | ':' | ';' | '=' => TokenKind::Punct,
            '.' => TokenKind::Dot,
            _ => return Err(Error::Lex { ch: c, pos }),
        };
        chars.next();
        column += 1;
        tokens.push(Token {
            kind,
            text: c.to_string(),
            pos,
        });
    }
    tokens.push(Token {
        kind: TokenKind::End,
        text: String::new(),
        pos: Pos { line, column },
    });
    Ok(tokens)
}

/// Which sub-parser handles the construct starting at a token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subparser {
    Num,
    Str,
    Struct,
    Array,
    Named,
    Any,
}

/// Pure lookahead on the first word of a type.
pub fn dispatch(tok: &Token) -> Result<Subparser> {
    if tok.kind == TokenKind::Keyword {
        let which = match tok.text.as_str() {
            "integer" | "real" | "unsigned" => Some(Subparser::Num),
            "string" | "opaque" => Some(Subparser::Str),
            "struct" | "union" => Some(Subparser::Struct),
            "array" => Some(Subparser::Array),
            "type" => Some(Subparser::Named),
            "any" => Some(Subparser::Any),
            _ => None,
        };
        if let Some(which) = which {
            return Ok(which);
        }
    }
    Err(Error::Parse {
        message: format!("{} does not start a type", tok.describe()),
        pos: tok.pos,
        expected: TYPE_STARTS.iter().map(|s| s.to_string()).collect(),
    })
}

const TYPE_STARTS: &[&str] = &[
    "integer", "unsigned", "real", "string", "opaque", "struct", "union", "array", "type", "any",
];

/// Parses a complete unit and validates it.
pub fn parse_type_text(src: &str) -> Result<TypeEnv> {
    let tokens = tokenize(src)?;
    let mut p = Parser {
        tokens: &tokens,
        at: 0,
        depth: 0,
        refs: Vec::new(),
    };
    let (defs, root) = p.unit()?;
    for (name, pos) in &p.refs {
        if !defs.contains_key(name) {
            return Err(Error::Validation {
                message: format!("unknown type name `{name}`"),
                pos: *pos,
            });
        }
    }
    let start = tokens[0].pos;
    TypeEnv::new(defs, root).map_err(|e| match e {
        Error::Validation { message, .. } => Error::Validation { message, pos: start },
        other => Error::Validation {
            message: other.to_string(),
            pos: start,
        },
    })
}

/// Parses a single type with no typedefs.
pub fn parse_single_type(src: &str) -> Result<TypeNode> {
    let env = parse_type_text(src)?;
    if !env.defs.is_empty() {
        return Err(Error::Validation {
            message: "typedefs are not allowed here".into(),
            pos: Pos::default(),
        });
    }
    Ok(Arc::try_unwrap(env.root).unwrap_or_else(|arc| (*arc).clone()))
}

struct Parser<'a> {
    tokens: &'a [Token],
    at: usize,
    depth: usize,
    refs: Vec<(String, Pos)>,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &'a Token {
        &self.tokens[self.at]
    }

    fn peek2(&self) -> &'a Token {
        &self.tokens[(self.at + 1).min(self.tokens.len() - 1)]
    }

    fn bump(&mut self) -> &'a Token {
        let tok = &self.tokens[self.at];
        if tok.kind != TokenKind::End {
            self.at += 1;
        }
        tok
    }

    fn error(&self, expected: &[&str]) -> Error {
        let tok = self.peek();
        Error::Parse {
            message: format!("unexpected {}", tok.describe()),
            pos: tok.pos,
            expected: expected.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn expect_punct(&mut self, c: &str) -> Result<&'a Token> {
        if self.peek().is_punct(c) {
            Ok(self.bump())
        } else {
            Err(self.error(&[c]))
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<&'a Token> {
        if self.peek().is_keyword(kw) {
            Ok(self.bump())
        } else {
            Err(self.error(&[kw]))
        }
    }

    fn unit(&mut self) -> Result<(TypeDefs, TypeNode)> {
        let mut defs = TypeDefs::new();
        while self.peek().is_keyword("typedef") {
            self.bump();
            let name_tok = self.peek();
            if name_tok.kind != TokenKind::Ident {
                return Err(self.error(&["type name"]));
            }
            self.bump();
            self.expect_punct("=")?;
            let body = self.typ()?;
            self.expect_punct(";")?;
            if defs.contains_key(&name_tok.text) {
                return Err(Error::Validation {
                    message: format!("type `{}` defined twice", name_tok.text),
                    pos: name_tok.pos,
                });
            }
            defs.insert(name_tok.text.clone(), Arc::new(body));
        }
        let root = self.typ()?;
        if self.peek().is_punct(";") {
            self.bump();
        }
        if self.peek().kind != TokenKind::End {
            return Err(self.error(&[";", "end of input"]));
        }
        Ok((defs, root))
    }

    fn typ(&mut self) -> Result<TypeNode> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            let tok = self.peek();
            return Err(Error::Parse {
                message: format!("types nested deeper than {MAX_DEPTH} levels"),
                pos: tok.pos,
                expected: vec![],
            });
        }
        let r = self.typ_inner();
        self.depth -= 1;
        r
    }

    fn typ_inner(&mut self) -> Result<TypeNode> {
        match dispatch(self.peek())? {
            Subparser::Num => self.num_type(),
            Subparser::Str => self.str_type(),
            Subparser::Struct => self.struct_type(),
            Subparser::Array => self.array_type(),
            Subparser::Named => {
                self.bump();
                let tok = self.peek();
                if tok.kind != TokenKind::Ident {
                    return Err(self.error(&["type name"]));
                }
                self.bump();
                self.refs.push((tok.text.clone(), tok.pos));
                Ok(TypeNode::NamedRef(tok.text.clone()))
            }
            Subparser::Any => {
                self.bump();
                Ok(TypeNode::Any)
            }
        }
    }

    fn width(&mut self) -> Result<Option<(u64, Pos)>> {
        if !self.peek().is_punct("*") {
            return Ok(None);
        }
        self.bump();
        self.int().map(Some)
    }

    fn int(&mut self) -> Result<(u64, Pos)> {
        let tok = self.peek();
        if tok.kind != TokenKind::Int {
            return Err(self.error(&["integer"]));
        }
        self.bump();
        let value = tok.text.parse::<u64>().map_err(|_| Error::Validation {
            message: format!("number {} is too large", tok.text),
            pos: tok.pos,
        })?;
        Ok((value, tok.pos))
    }

    fn dim(&mut self) -> Result<Dim> {
        if self.peek().kind == TokenKind::Dot {
            self.bump();
            return Ok(Dim::Free);
        }
        let (n, pos) = self.int().map_err(|_| self.error(&["integer", "."]))?;
        if n == 0 || n > u32::MAX as u64 {
            return Err(Error::Validation {
                message: format!("size {n} must be between 1 and {}", u32::MAX),
                pos,
            });
        }
        Ok(Dim::Fixed(n as u32))
    }

    fn num_type(&mut self) -> Result<TypeNode> {
        let kw = self.bump();
        let width = self.width()?;
        let (w, pos) = width.unwrap_or((if kw.text == "real" { 8 } else { 4 }, kw.pos));
        let kind = match kw.text.as_str() {
            "integer" => NumKind::signed_int(w as usize),
            "unsigned" => NumKind::unsigned_int(w as usize),
            _ => NumKind::float(w as usize),
        };
        let kind = kind.ok_or_else(|| Error::Validation {
            message: format!("{} cannot have width {w}", kw.text),
            pos,
        })?;
        let mut dims = Vec::new();
        if self.peek().is_punct("[") {
            self.bump();
            dims.push(self.dim()?);
            while self.peek().is_punct(",") {
                self.bump();
                dims.push(self.dim()?);
            }
            self.expect_punct("]")?;
        }
        Ok(TypeNode::Num { kind, dims })
    }

    fn str_type(&mut self) -> Result<TypeNode> {
        let kw = self.bump();
        let size = match self.width()? {
            None => Dim::Free,
            Some((n, pos)) => {
                if n == 0 || n > u32::MAX as u64 {
                    return Err(Error::Validation {
                        message: format!("string size {n} must be between 1 and {}", u32::MAX),
                        pos,
                    });
                }
                Dim::Fixed(n as u32)
            }
        };
        Ok(TypeNode::Str {
            opaque: kw.text == "opaque",
            size,
        })
    }

    fn struct_type(&mut self) -> Result<TypeNode> {
        let kw = self.bump();
        let is_union = kw.text == "union";
        self.expect_punct("{")?;
        let mut fields: Vec<Field> = Vec::new();
        loop {
            let tok = self.peek();
            if tok.is_punct("}") {
                self.bump();
                break;
            }
            let mut optional = false;
            if tok.is_keyword("optional") && !self.peek2().is_punct(":") {
                if is_union {
                    return Err(Error::Validation {
                        message: "union fields cannot be optional".into(),
                        pos: tok.pos,
                    });
                }
                optional = true;
                self.bump();
            }
            let name = self.peek();
            if !name.is_word() {
                return Err(self.error(&["field name", "}"]));
            }
            self.bump();
            self.expect_punct(":")?;
            let typ = self.typ()?;
            if !self.peek().is_punct("}") {
                self.expect_punct(";")?;
            }
            if fields.iter().any(|f| f.name == name.text) {
                return Err(Error::Validation {
                    message: format!("duplicate field `{}`", name.text),
                    pos: name.pos,
                });
            }
            fields.push(Field {
                name: name.text.clone(),
                typ: Arc::new(typ),
                optional,
            });
        }
        if is_union && fields.is_empty() {
            return Err(Error::Validation {
                message: "a union needs at least one field".into(),
                pos: kw.pos,
            });
        }
        Ok(TypeNode::Struct { is_union, fields })
    }

    fn array_type(&mut self) -> Result<TypeNode> {
        self.bump();
        let mut size = Dim::Free;
        if self.peek().is_punct("[") {
            self.bump();
            size = self.dim()?;
            self.expect_punct("]")?;
        }
        self.expect_keyword("of")?;
        let elem = self.typ()?;
        Ok(TypeNode::Array {
            size,
            elem: Arc::new(elem),
        })
    }
}
