//! Arithmetic and dense linear algebra over GF(2^8).
//!
//! Elements are bytes; the field is built with the reduction polynomial
//! x^8 + x^4 + x^3 + x + 1 (0x11B). Multiplication goes through log/antilog
//! tables generated from the primitive element 0x03 (0x02 is not primitive
//! for this polynomial).

use std::fmt;
use std::ops::{Add, AddAssign, Mul, MulAssign};

use thiserror::Error;

/// Full reduction polynomial, including the x^8 term.
pub const POLY: u16 = 0x11B;

/// Generator of the multiplicative group under [`POLY`].
pub const GENERATOR: u8 = 0x03;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FieldError {
    #[error("zero has no multiplicative inverse")]
    ZeroInverse,
    #[error("matrix is singular (rank {rank} < {size})")]
    SingularMatrix { rank: usize, size: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

const fn xtime3(v: u16) -> u16 {
    // v * 0x03 = v * x + v
    let mut r = (v << 1) ^ v;
    if r & 0x100 != 0 {
        r ^= POLY;
    }
    r
}

const fn build_exp() -> [u8; 512] {
    let mut t = [0u8; 512];
    let mut v: u16 = 1;
    let mut i = 0;
    while i < 255 {
        t[i] = v as u8;
        t[i + 255] = v as u8;
        v = xtime3(v);
        i += 1;
    }
    t[510] = t[0];
    t[511] = t[1];
    t
}

const fn build_log() -> [u8; 256] {
    let mut t = [0u8; 256];
    let mut v: u16 = 1;
    let mut i = 0;
    while i < 255 {
        t[v as usize] = i as u8;
        v = xtime3(v);
        i += 1;
    }
    t
}

static EXP: [u8; 512] = build_exp();
static LOG: [u8; 256] = build_log();

/// Field addition (XOR).
#[inline]
pub fn add(a: u8, b: u8) -> u8 {
    a ^ b
}

/// Field multiplication via the log/antilog tables.
#[inline]
pub fn mul(a: u8, b: u8) -> u8 {
    if a == 0 || b == 0 {
        return 0;
    }
    EXP[LOG[a as usize] as usize + LOG[b as usize] as usize]
}

/// Multiplicative inverse.
pub fn inv(a: u8) -> Result<u8, FieldError> {
    if a == 0 {
        return Err(FieldError::ZeroInverse);
    }
    Ok(EXP[255 - LOG[a as usize] as usize])
}

/// `dst[i] ^= c * src[i]` for all i.
#[inline]
pub fn mul_add_slice(dst: &mut [u8], src: &[u8], c: u8) {
    debug_assert_eq!(dst.len(), src.len());
    match c {
        0 => {}
        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d ^= s),
        _ => {
            let lc = LOG[c as usize] as usize;
            for (d, &s) in dst.iter_mut().zip(src) {
                if s != 0 {
                    *d ^= EXP[lc + LOG[s as usize] as usize];
                }
            }
        }
    }
}

/// `buf[i] = c * buf[i]` for all i.
#[inline]
pub fn scale_slice(buf: &mut [u8], c: u8) {
    match c {
        0 => buf.fill(0),
        1 => {}
        _ => buf.iter_mut().for_each(|b| *b = mul(*b, c)),
    }
}

/// Typed wrapper for a single field element.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
#[repr(transparent)]
pub struct FieldElement(pub u8);

impl FieldElement {
    pub const ZERO: Self = Self(0);
    pub const ONE: Self = Self(1);

    pub fn inv(self) -> Result<Self, FieldError> {
        inv(self.0).map(Self)
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Debug for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#04x}", self.0)
    }
}

impl From<u8> for FieldElement {
    fn from(v: u8) -> Self {
        Self(v)
    }
}

impl Add for FieldElement {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self(add(self.0, rhs.0))
    }
}

impl AddAssign for FieldElement {
    fn add_assign(&mut self, rhs: Self) {
        self.0 ^= rhs.0;
    }
}

impl Mul for FieldElement {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Self(mul(self.0, rhs.0))
    }
}

impl MulAssign for FieldElement {
    fn mul_assign(&mut self, rhs: Self) {
        self.0 = mul(self.0, rhs.0);
    }
}

/// Dense row-major matrix over GF(256).
#[derive(Clone, PartialEq, Eq)]
pub struct FieldMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl fmt::Debug for FieldMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "FieldMatrix {}x{}", self.rows, self.cols)?;
        for r in 0..self.rows.min(16) {
            writeln!(f, "  {:02x?}", &self.row(r)[..self.cols.min(16)])?;
        }
        Ok(())
    }
}

impl FieldMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<u8>) -> Result<Self, FieldError> {
        if data.len() != rows * cols {
            return Err(FieldError::Shape(format!(
                "{} elements for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self, FieldError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(FieldError::Shape("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns<C: AsRef<[u8]>>(cols: &[C]) -> Result<Self, FieldError> {
        let rows = cols.first().map_or(0, |c| c.as_ref().len());
        let mut m = Self::zeros(rows, cols.len());
        for (j, c) in cols.iter().enumerate() {
            let c = c.as_ref();
            if c.len() != rows {
                return Err(FieldError::Shape("ragged columns".into()));
            }
            for (i, &v) in c.iter().enumerate() {
                m.data[i * m.cols + j] = v;
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> FieldElement {
        FieldElement(self.data[r * self.cols + c])
    }

    pub fn set(&mut self, r: usize, c: usize, v: FieldElement) {
        self.data[r * self.cols + c] = v.0;
    }

    pub fn row(&self, r: usize) -> &[u8] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [u8] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<u8> {
        (0..self.rows).map(|r| self.data[r * self.cols + c]).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        let (lo, hi) = (a.min(b), a.max(b));
        let (head, tail) = self.data.split_at_mut(hi * self.cols);
        head[lo * self.cols..(lo + 1) * self.cols].swap_with_slice(&mut tail[..self.cols]);
    }

    /// `row[dst] ^= c * row[src]`.
    fn row_mul_add(&mut self, dst: usize, src: usize, c: u8) {
        debug_assert_ne!(dst, src);
        let cols = self.cols;
        let (d, s) = if dst < src {
            let (head, tail) = self.data.split_at_mut(src * cols);
            (&mut head[dst * cols..(dst + 1) * cols], &tail[..cols])
        } else {
            let (head, tail) = self.data.split_at_mut(dst * cols);
            (&mut tail[..cols], &head[src * cols..(src + 1) * cols])
        };
        mul_add_slice(d, s, c);
    }

    /// Matrix product `self * rhs`.
    pub fn mul_matrix(&self, rhs: &FieldMatrix) -> Result<FieldMatrix, FieldError> {
        if self.cols != rhs.rows {
            return Err(FieldError::Shape(format!(
                "{}x{} * {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = FieldMatrix::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            let orow = &mut out.data[r * rhs.cols..(r + 1) * rhs.cols];
            for (i, &a) in self.row(r).iter().enumerate() {
                mul_add_slice(orow, rhs.row(i), a);
            }
        }
        Ok(out)
    }

    /// Reduces `self` in place to row echelon form and returns the rank.
    ///
    /// Pivot choice: first nonzero entry at or below the current row.
    fn eliminate(&mut self) -> usize {
        let mut rank = 0;
        for col in 0..self.cols {
            if rank == self.rows {
                break;
            }
            let Some(p) = (rank..self.rows).find(|&r| self.data[r * self.cols + col] != 0) else {
                continue;
            };
            self.swap_rows(rank, p);
            let pinv = inv(self.data[rank * self.cols + col]).expect("pivot is nonzero");
            scale_slice(self.row_mut(rank), pinv);
            for r in rank + 1..self.rows {
                let f = self.data[r * self.cols + col];
                if f != 0 {
                    self.row_mul_add(r, rank, f);
                }
            }
            rank += 1;
        }
        rank
    }

    /// Rank by Gaussian elimination; 0 for an empty matrix.
    pub fn rank(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            return 0;
        }
        self.clone().eliminate()
    }

    /// Inverse of a square matrix by Gauss-Jordan elimination.
    pub fn inverse(&self) -> Result<FieldMatrix, FieldError> {
        if self.rows != self.cols {
            return Err(FieldError::Shape("inverse of a non-square matrix".into()));
        }
        let n = self.rows;
        // Work on the augmented [A | I].
        let mut aug = FieldMatrix::zeros(n, 2 * n);
        for r in 0..n {
            aug.row_mut(r)[..n].copy_from_slice(self.row(r));
            aug.data[r * 2 * n + n + r] = 1;
        }
        for col in 0..n {
            let Some(p) = (col..n).find(|&r| aug.data[r * 2 * n + col] != 0) else {
                let rank = self.rank();
                return Err(FieldError::SingularMatrix { rank, size: n });
            };
            aug.swap_rows(col, p);
            let pinv = inv(aug.data[col * 2 * n + col])?;
            scale_slice(aug.row_mut(col), pinv);
            for r in 0..n {
                if r != col {
                    let f = aug.data[r * 2 * n + col];
                    if f != 0 {
                        aug.row_mul_add(r, col, f);
                    }
                }
            }
        }
        let mut out = FieldMatrix::zeros(n, n);
        for r in 0..n {
            out.row_mut(r).copy_from_slice(&aug.row(r)[n..]);
        }
        Ok(out)
    }
}

/// Rank of `m`.
pub fn rank(m: &FieldMatrix) -> usize {
    m.rank()
}

/// Solves `X * a = y` for `X`.
///
/// `a` is K x K, `y` is n x K; column j of `y` is the image of column j of `a`.
pub fn solve(a: &FieldMatrix, y: &FieldMatrix) -> Result<FieldMatrix, FieldError> {
    if a.rows() != a.cols() || y.cols() != a.cols() {
        return Err(FieldError::Shape(format!(
            "solve with a {}x{} system and {}x{} right-hand side",
            a.rows(),
            a.cols(),
            y.rows(),
            y.cols()
        )));
    }
    let a_inv = a.inverse()?;
    y.mul_matrix(&a_inv)
}

/// Incremental row-echelon basis; tracks which offered vectors were independent.
#[derive(Debug, Clone)]
pub struct EchelonBasis {
    width: usize,
    // Each stored row is normalized with a leading 1 at `pivots[i]`.
    rows: Vec<Vec<u8>>,
    pivots: Vec<usize>,
}

impl EchelonBasis {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            rows: Vec::new(),
            pivots: Vec::new(),
        }
    }

    pub fn rank(&self) -> usize {
        self.rows.len()
    }

    pub fn is_full(&self) -> bool {
        self.rows.len() == self.width
    }

    /// Reduces `v` against the basis and inserts it if independent.
    /// Returns `true` when the rank grew.
    pub fn insert(&mut self, v: &[u8]) -> bool {
        debug_assert_eq!(v.len(), self.width);
        let mut v = v.to_vec();
        for (row, &p) in self.rows.iter().zip(&self.pivots) {
            let f = v[p];
            if f != 0 {
                mul_add_slice(&mut v, row, f);
            }
        }
        let Some(p) = v.iter().position(|&x| x != 0) else {
            return false;
        };
        let pinv = inv(v[p]).expect("nonzero");
        scale_slice(&mut v, pinv);
        self.rows.push(v);
        self.pivots.push(p);
        true
    }
}
