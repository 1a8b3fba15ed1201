//! Wire rules shared by the decoder and the length-only skipper.

use std::collections::HashMap;
use std::sync::Arc;

use super::{ByteOrder, ByteSource};
use crate::ddlparse::parse_type_text;
use crate::error::{Error, Result};
use crate::typesys::{
    fixed_byte_size, is_variable_size, min_encoded_size, resolve_deep, NumKind, TypeDefs, TypeEnv, TypeNode,
};

/// Maximum value nesting accepted while decoding.
pub const MAX_DECODE_DEPTH: usize = 512;

/// Cap on the total number of elements that may encode to zero bytes in
/// one decode.
pub const MAX_EMPTY_ELEMENTS: u64 = 1 << 16;

/// Positioned reader over a byte source with bounds checks.
pub(crate) struct WireReader<'a> {
    pub src: &'a dyn ByteSource,
    pub pos: u64,
    pub end: u64,
    pub order: ByteOrder,
    /// Zero-byte elements still allowed.
    empty_budget: u64,
}

impl<'a> WireReader<'a> {
    pub fn new(src: &'a dyn ByteSource, pos: u64, order: ByteOrder) -> Self {
        WireReader {
            src,
            pos,
            end: src.len(),
            order,
            empty_budget: MAX_EMPTY_ELEMENTS,
        }
    }

    pub fn remaining(&self) -> u64 {
        self.end.saturating_sub(self.pos)
    }

    fn need(&self, n: u64) -> Result<()> {
        if n > self.remaining() {
            return Err(Error::Truncated { offset: self.pos });
        }
        Ok(())
    }

    pub fn skip(&mut self, n: u64) -> Result<()> {
        self.need(n)?;
        self.pos += n;
        Ok(())
    }

    pub fn take(&mut self, n: u64) -> Result<Vec<u8>> {
        self.need(n)?;
        let mut buf = vec![0; n as usize];
        self.src.read_at(self.pos, &mut buf)?;
        self.pos += n;
        Ok(buf)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        self.need(N as u64)?;
        let mut buf = [0; N];
        self.src.read_at(self.pos, &mut buf)?;
        self.pos += N as u64;
        Ok(buf)
    }

    /// Optional-field tag: zero means absent, anything else present.
    pub fn tag(&mut self) -> Result<bool> {
        Ok(self.array::<1>()?[0] != 0)
    }

    /// Union selector, checked against the number of variants.
    pub fn selector(&mut self, variants: usize) -> Result<usize> {
        let at = self.pos;
        let b = self.array::<2>()?;
        let sel = match self.order {
            ByteOrder::Big => u16::from_be_bytes(b),
            ByteOrder::Little => u16::from_le_bytes(b),
        };
        if sel as usize >= variants {
            return Err(Error::BadUnionSelector {
                selector: sel,
                variants,
                offset: at,
            });
        }
        Ok(sel as usize)
    }

    /// Raw signed 4-byte count; negative values are rejected.
    pub fn raw_count(&mut self) -> Result<u64> {
        let at = self.pos;
        let b = self.array::<4>()?;
        let n = match self.order {
            ByteOrder::Big => i32::from_be_bytes(b),
            ByteOrder::Little => i32::from_le_bytes(b),
        };
        if n < 0 {
            return Err(Error::NegativeCount { count: n, offset: at });
        }
        Ok(n as u64)
    }

    /// A count of items each taking at least `min_item` bytes, checked
    /// against the remaining input before anything is allocated.
    pub fn count(&mut self, min_item: u64) -> Result<u64> {
        let at = self.pos;
        let n = self.raw_count()?;
        self.check_items(n, min_item)
            .map_err(|_| Error::CountOverflow { count: n, offset: at })?;
        Ok(n)
    }

    /// Checks that `n` items of at least `min_item` bytes can still follow.
    pub fn check_items(&mut self, n: u64, min_item: u64) -> Result<()> {
        let fits = if min_item == 0 {
            let ok = n <= self.empty_budget;
            self.empty_budget = self.empty_budget.saturating_sub(n);
            ok
        } else {
            n.checked_mul(min_item).is_some_and(|b| b <= self.remaining())
        };
        if fits {
            Ok(())
        } else {
            Err(Error::CountOverflow {
                count: n,
                offset: self.pos,
            })
        }
    }

    /// Counts for the free dimensions of a matrix and the total cell count.
    pub fn matrix_counts(&mut self, kind: NumKind, dims: &[crate::typesys::Dim]) -> Result<(Vec<usize>, u64)> {
        let at = self.pos;
        let mut counts = Vec::with_capacity(dims.len());
        let mut total: u64 = 1;
        for d in dims {
            let c = match d.fixed() {
                Some(n) => n as u64,
                None => self.raw_count()?,
            };
            total = total.saturating_mul(c);
            counts.push(c as usize);
        }
        match total.checked_mul(kind.width() as u64) {
            Some(b) if b <= self.remaining() => Ok((counts, total)),
            Some(_) if dims.iter().all(|d| d.fixed().is_some()) => Err(Error::Truncated { offset: self.end }),
            _ => Err(Error::CountOverflow {
                count: total,
                offset: at,
            }),
        }
    }

    /// `n` cells converted to little-endian order.
    pub fn cells(&mut self, kind: NumKind, n: u64) -> Result<Vec<u8>> {
        let w = kind.width();
        let mut data = self.take(n * w as u64)?;
        if self.order == ByteOrder::Big && w > 1 {
            for c in data.chunks_exact_mut(w) {
                c.reverse();
            }
        }
        Ok(data)
    }

    /// Length-prefixed type text of an `any` value.
    pub fn any_type(&mut self) -> Result<TypeEnv> {
        let at = self.pos;
        let n = self.count(1)?;
        let bytes = self.take(n)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::AnyTypeParse {
            offset: at,
            source: Box::new(Error::Validation {
                message: "type text is not UTF-8".into(),
                pos: Default::default(),
            }),
        })?;
        parse_type_text(&text).map_err(|e| Error::AnyTypeParse {
            offset: at,
            source: Box::new(e),
        })
    }
}

/// Memoized per-type size facts, keyed by node identity. The `Arc` in each
/// entry keeps the key's node alive.
#[derive(Default)]
pub(crate) struct SizeCache {
    map: HashMap<usize, (Arc<TypeNode>, Option<u64>, u64)>,
}

impl SizeCache {
    fn entry(&mut self, t: &Arc<TypeNode>, defs: &TypeDefs) -> Result<(Option<u64>, u64)> {
        let key = Arc::as_ptr(t) as usize;
        if let Some((_, fixed, min)) = self.map.get(&key) {
            return Ok((*fixed, *min));
        }
        let fixed = if is_variable_size(t, defs)? {
            None
        } else {
            Some(fixed_byte_size(t, defs)?)
        };
        let min = min_encoded_size(t, defs);
        self.map.insert(key, (t.clone(), fixed, min));
        Ok((fixed, min))
    }

    /// Encoded size when the type is fixed-size.
    pub fn fixed(&mut self, t: &Arc<TypeNode>, defs: &TypeDefs) -> Result<Option<u64>> {
        Ok(self.entry(t, defs)?.0)
    }

    /// Lower bound on the encoded size of any value of the type.
    pub fn min(&mut self, t: &Arc<TypeNode>, defs: &TypeDefs) -> Result<u64> {
        Ok(self.entry(t, defs)?.1)
    }
}

/// Advances `r` past one value of type `t`, reading only counts, tags,
/// selectors and `any` type texts.
pub(crate) fn skip_value(
    r: &mut WireReader,
    t: &Arc<TypeNode>,
    defs: &Arc<TypeDefs>,
    sizes: &mut SizeCache,
    depth: usize,
) -> Result<()> {
    if depth > MAX_DECODE_DEPTH {
        return Err(Error::TooDeep {
            limit: MAX_DECODE_DEPTH,
            offset: r.pos,
        });
    }
    if let Some(n) = sizes.fixed(t, defs)? {
        return r.skip(n);
    }
    let t = resolve_deep(t, defs)?;
    match &*t {
        TypeNode::Num { kind, dims } => {
            let (_, total) = r.matrix_counts(*kind, dims)?;
            r.skip(total * kind.width() as u64)
        }
        TypeNode::Str { size, .. } => match size.fixed() {
            Some(n) => r.skip(n as u64),
            None => {
                let n = r.count(1)?;
                r.skip(n)
            }
        },
        TypeNode::Struct {
            is_union: false,
            fields,
        } => {
            for f in fields {
                if f.optional && !r.tag()? {
                    continue;
                }
                skip_value(r, &f.typ, defs, sizes, depth + 1)?;
            }
            Ok(())
        }
        TypeNode::Struct { is_union: true, fields } => {
            let sel = r.selector(fields.len())?;
            skip_value(r, &fields[sel].typ, defs, sizes, depth + 1)
        }
        TypeNode::Array { size, elem } => {
            let min = sizes.min(elem, defs)?;
            let n = match size.fixed() {
                Some(n) => {
                    r.check_items(n as u64, min)?;
                    n as u64
                }
                None => r.count(min)?,
            };
            if let Some(w) = sizes.fixed(elem, defs)? {
                return r.skip(n.checked_mul(w).ok_or(Error::CountOverflow {
                    count: n,
                    offset: r.pos,
                })?);
            }
            for _ in 0..n {
                skip_value(r, elem, defs, sizes, depth + 1)?;
            }
            Ok(())
        }
        TypeNode::Any => {
            let env = r.any_type()?;
            let mut inner = SizeCache::default();
            skip_value(r, &env.root, &env.defs, &mut inner, depth + 1)
        }
        TypeNode::NamedRef(_) => unreachable!(),
    }
}
