//! Numeric payloads: scalars are rank-0 matrices.
//!
//! Cells are stored little-endian in a flat byte buffer, first index varying
//! fastest unless the shape says otherwise.

use crate::error::{Error, Result};
use crate::typesys::{Dim, NumKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatrixShape {
    /// Inclusive (min, max) index per dimension.
    pub bounds: Vec<(i64, i64)>,
    pub first_index_fastest: bool,
}

impl MatrixShape {
    pub fn scalar() -> Self {
        MatrixShape {
            bounds: vec![],
            first_index_fastest: true,
        }
    }

    /// Zero-based shape with the given element counts.
    pub fn from_counts(counts: &[usize]) -> Self {
        MatrixShape {
            bounds: counts.iter().map(|&c| (0, c as i64 - 1)).collect(),
            first_index_fastest: true,
        }
    }

    pub fn rank(&self) -> usize {
        self.bounds.len()
    }

    pub fn count(&self, d: usize) -> usize {
        let (lo, hi) = self.bounds[d];
        (hi - lo + 1).max(0) as usize
    }

    pub fn counts(&self) -> Vec<usize> {
        (0..self.rank()).map(|d| self.count(d)).collect()
    }

    /// Number of cells, or `None` on overflow.
    pub fn len(&self) -> Option<usize> {
        (0..self.rank()).try_fold(1usize, |acc, d| acc.checked_mul(self.count(d)))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == Some(0)
    }

    /// Flat cell index of a multi-index (using the stored bounds).
    pub fn offset_of(&self, index: &[i64]) -> Option<usize> {
        if index.len() != self.rank() {
            return None;
        }
        let mut flat = 0usize;
        let mut stride = 1usize;
        let dims: Vec<usize> = if self.first_index_fastest {
            (0..self.rank()).collect()
        } else {
            (0..self.rank()).rev().collect()
        };
        for d in dims {
            let (lo, hi) = self.bounds[d];
            let i = index[d];
            if i < lo || i > hi {
                return None;
            }
            flat += (i - lo) as usize * stride;
            stride *= self.count(d);
        }
        Some(flat)
    }

    /// Checks the counts against declared dims; fixed dims must match.
    pub fn conforms_to(&self, dims: &[Dim]) -> bool {
        self.rank() == dims.len()
            && dims.iter().enumerate().all(|(d, dim)| match dim {
                Dim::Fixed(n) => self.count(d) == *n as usize,
                Dim::Free => true,
            })
    }

    /// The zero-based shape a declared type starts out with: fixed dims at
    /// their size, free dims empty.
    pub fn initial(dims: &[Dim]) -> Self {
        let counts: Vec<usize> = dims.iter().map(|d| d.fixed().map_or(0, |n| n as usize)).collect();
        MatrixShape::from_counts(&counts)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatrixValue {
    pub kind: NumKind,
    pub shape: MatrixShape,
    /// `shape.len() * kind.width()` bytes, each cell little-endian.
    pub data: Vec<u8>,
}

impl MatrixValue {
    pub fn zeros(kind: NumKind, shape: MatrixShape) -> Result<Self> {
        let bytes = shape
            .len()
            .and_then(|n| n.checked_mul(kind.width()))
            .ok_or_else(|| Error::ShapeMismatch("matrix too large".into()))?;
        Ok(MatrixValue {
            kind,
            shape,
            data: vec![0; bytes],
        })
    }

    pub fn scalar_zero(kind: NumKind) -> Self {
        MatrixValue {
            kind,
            shape: MatrixShape::scalar(),
            data: vec![0; kind.width()],
        }
    }

    /// Builds a matrix from raw little-endian cell bytes.
    pub fn from_raw(kind: NumKind, shape: MatrixShape, data: Vec<u8>) -> Result<Self> {
        let expect = shape.len().and_then(|n| n.checked_mul(kind.width()));
        if expect != Some(data.len()) {
            return Err(Error::ShapeMismatch(format!(
                "{} payload bytes do not fit shape {:?}",
                data.len(),
                shape.counts()
            )));
        }
        Ok(MatrixValue { kind, shape, data })
    }

    pub fn from_ints(kind: NumKind, shape: MatrixShape, cells: &[i64]) -> Result<Self> {
        let mut m = MatrixValue::zeros(kind, shape)?;
        if cells.len() != m.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} cells",
                cells.len(),
                m.len()
            )));
        }
        for (i, &v) in cells.iter().enumerate() {
            m.set_int(i, v as i128)?;
        }
        Ok(m)
    }

    pub fn from_floats(kind: NumKind, shape: MatrixShape, cells: &[f64]) -> Result<Self> {
        let mut m = MatrixValue::zeros(kind, shape)?;
        if cells.len() != m.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} cells",
                cells.len(),
                m.len()
            )));
        }
        for (i, &v) in cells.iter().enumerate() {
            m.set_float(i, v)?;
        }
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.kind.width()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cell_bytes(&self, i: usize) -> &[u8] {
        let w = self.kind.width();
        &self.data[i * w..(i + 1) * w]
    }

    /// Integer cell value; `None` for float kinds.
    pub fn int(&self, i: usize) -> Option<i128> {
        let b = self.cell_bytes(i);
        Some(match self.kind {
            NumKind::I1 => b[0] as i8 as i128,
            NumKind::U1 => b[0] as i128,
            NumKind::I2 => i16::from_le_bytes([b[0], b[1]]) as i128,
            NumKind::U2 => u16::from_le_bytes([b[0], b[1]]) as i128,
            NumKind::I4 => i32::from_le_bytes(b.try_into().unwrap()) as i128,
            NumKind::U4 => u32::from_le_bytes(b.try_into().unwrap()) as i128,
            NumKind::I8 => i64::from_le_bytes(b.try_into().unwrap()) as i128,
            NumKind::U8 => u64::from_le_bytes(b.try_into().unwrap()) as i128,
            _ => return None,
        })
    }

    /// Cell as `f64`; integers widen, 16-byte floats are rounded.
    pub fn float(&self, i: usize) -> f64 {
        let b = self.cell_bytes(i);
        match self.kind {
            NumKind::F4 => f32::from_le_bytes(b.try_into().unwrap()) as f64,
            NumKind::F8 => f64::from_le_bytes(b.try_into().unwrap()),
            NumKind::F16 => quad_to_f64(b.try_into().unwrap()),
            _ => self.int(i).unwrap() as f64,
        }
    }

    pub fn set_int(&mut self, i: usize, v: i128) -> Result<()> {
        let kind = self.kind;
        if kind.is_float() {
            return self.set_float(i, v as f64);
        }
        let (lo, hi) = kind.int_range().unwrap();
        if v < lo || v > hi {
            return Err(Error::OutOfRange {
                value: v.to_string(),
                kind: kind.to_string(),
            });
        }
        let w = kind.width();
        let bytes = (v as u128).to_le_bytes();
        self.data[i * w..(i + 1) * w].copy_from_slice(&bytes[..w]);
        Ok(())
    }

    pub fn set_float(&mut self, i: usize, v: f64) -> Result<()> {
        let w = self.kind.width();
        let cell = &mut self.data[i * w..(i + 1) * w];
        match self.kind {
            NumKind::F4 => cell.copy_from_slice(&(v as f32).to_le_bytes()),
            NumKind::F8 => cell.copy_from_slice(&v.to_le_bytes()),
            NumKind::F16 => cell.copy_from_slice(&f64_to_quad(v)),
            kind => {
                return Err(Error::WrongType(format!(
                    "cannot store a floating-point value in {kind}"
                )))
            }
        }
        Ok(())
    }

    /// Reorders cells to first-index-fastest with zero-based bounds kept.
    pub fn to_canonical(&self) -> MatrixValue {
        if self.shape.first_index_fastest || self.shape.rank() < 2 {
            let mut m = self.clone();
            m.shape.first_index_fastest = true;
            return m;
        }
        let counts = self.shape.counts();
        let w = self.kind.width();
        let n = self.len();
        let mut out = vec![0u8; self.data.len()];
        let mut index = vec![0usize; counts.len()];
        for flat in 0..n {
            // flat enumerates destination order: first index fastest
            let mut src = 0usize;
            let mut stride = 1usize;
            for d in (0..counts.len()).rev() {
                src += index[d] * stride;
                stride *= counts[d];
            }
            out[flat * w..(flat + 1) * w].copy_from_slice(&self.data[src * w..(src + 1) * w]);
            for d in 0..counts.len() {
                index[d] += 1;
                if index[d] < counts[d] {
                    break;
                }
                index[d] = 0;
            }
        }
        MatrixValue {
            kind: self.kind,
            shape: MatrixShape {
                bounds: self.shape.bounds.clone(),
                first_index_fastest: true,
            },
            data: out,
        }
    }

    /// Converts cell values to another numeric kind (range-checked).
    pub fn convert(&self, kind: NumKind) -> Result<MatrixValue> {
        if kind == self.kind {
            return Ok(self.clone());
        }
        let mut out = MatrixValue::zeros(kind, self.shape.clone())?;
        for i in 0..self.len() {
            match self.int(i) {
                Some(v) if !kind.is_float() => out.set_int(i, v)?,
                _ if !kind.is_float() => {
                    return Err(Error::WrongType(format!(
                        "cannot convert {} cells to {kind}",
                        self.kind
                    )))
                }
                _ => out.set_float(i, self.float(i))?,
            }
        }
        Ok(out)
    }
}

const QUAD_BIAS: i32 = 16383;

/// Exact widening of an `f64` to IEEE binary128 (little-endian bytes).
pub fn f64_to_quad(v: f64) -> [u8; 16] {
    let bits = v.to_bits();
    let sign = (bits >> 63) as u128;
    let exp = ((bits >> 52) & 0x7ff) as i32;
    let frac = (bits & ((1u64 << 52) - 1)) as u128;
    let (qexp, qfrac): (u128, u128) = if exp == 0x7ff {
        (0x7fff, frac << 60)
    } else if exp == 0 {
        if frac == 0 {
            (0, 0)
        } else {
            // subnormal f64: normalize
            let shift = frac.leading_zeros() - (128 - 52) + 1;
            let f = (frac << shift) & ((1u128 << 52) - 1);
            ((1 - 1023 - shift as i32 + QUAD_BIAS) as u128, f << 60)
        }
    } else {
        ((exp - 1023 + QUAD_BIAS) as u128, frac << 60)
    };
    ((sign << 127) | (qexp << 112) | qfrac).to_le_bytes()
}

/// Rounds an IEEE binary128 value (little-endian bytes) to the nearest `f64`.
pub fn quad_to_f64(b: [u8; 16]) -> f64 {
    let bits = u128::from_le_bytes(b);
    let sign = ((bits >> 127) as u64) << 63;
    let exp = ((bits >> 112) & 0x7fff) as i32;
    let frac = bits & ((1u128 << 112) - 1);
    if exp == 0x7fff {
        let payload = (frac >> 60) as u64;
        let nan_bits = if frac != 0 { payload | 1 << 51 } else { 0 };
        return f64::from_bits(sign | (0x7ff << 52) | nan_bits);
    }
    if exp == 0 && frac == 0 {
        return f64::from_bits(sign);
    }
    let unbiased = exp - QUAD_BIAS;
    // significand with the implicit bit, 113 bits
    let sig = if exp == 0 { frac } else { frac | (1u128 << 112) };
    let e = if exp == 0 { 1 - QUAD_BIAS } else { unbiased };
    // value = sig * 2^(e - 112)
    let magnitude = if e > 1023 {
        f64::INFINITY
    } else {
        let target_exp = e.max(-1022);
        // number of low bits to drop so that the result has 52 fraction bits
        // relative to target_exp
        let drop = 112 - 52 + (target_exp - e);
        let drop = drop as u32;
        let kept = if drop >= 128 { 0 } else { sig >> drop };
        let rem_bits = if drop >= 128 { sig } else { sig & ((1u128 << drop) - 1) };
        let half = if drop == 0 || drop > 127 {
            0
        } else {
            1u128 << (drop - 1)
        };
        let mut kept = kept;
        if drop > 0 && drop <= 127 && (rem_bits > half || (rem_bits == half && kept & 1 == 1)) {
            kept += 1;
        }
        // kept is the significand scaled by 2^(target_exp - 52)
        (kept as f64) * 2f64.powi(-52) * 2f64.powi(target_exp)
    };
    if sign != 0 {
        -magnitude
    } else {
        magnitude
    }
}
