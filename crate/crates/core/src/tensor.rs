//! Dense and bit-packed filter tensors.
//!
//! Every tensor is a `c × w × h` block stored flat in C order: the channel
//! index is outermost, then `w`, then `h`. So entry `(ci, wi, hi)` lives at
//! `(ci * w + wi) * h + hi`. The same order is used by the file formats and
//! by window extraction in [`crate::layer`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const WORD_BITS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    c: usize,
    w: usize,
    h: usize,
}

impl Shape {
    pub fn new(c: usize, w: usize, h: usize) -> Result<Self> {
        if c == 0 || w == 0 || h == 0 {
            return Err(Error::InvalidShape { c, w, h });
        }
        Ok(Shape { c, w, h })
    }

    /// A `1 × 1 × t` shape, convenient for flat vectors.
    pub fn flat(t: usize) -> Result<Self> {
        Shape::new(1, 1, t)
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn h(&self) -> usize {
        self.h
    }

    /// Number of scalar entries, `c·w·h`.
    pub fn t(&self) -> usize {
        self.c * self.w * self.h
    }

    pub fn index(&self, ci: usize, wi: usize, hi: usize) -> usize {
        debug_assert!(ci < self.c && wi < self.w && hi < self.h);
        (ci * self.w + wi) * self.h + hi
    }

    pub(crate) fn ensure_same(&self, other: &Shape) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                left: *self,
                right: *other,
            })
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.c, self.w, self.h)
    }
}

/// Dense real tensor with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct RealTensor {
    shape: Shape,
    data: Vec<f64>,
}

impl RealTensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.t() {
            return Err(Error::LengthMismatch {
                expected: shape.t(),
                actual: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(RealTensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        RealTensor {
            shape,
            data: vec![0.0; shape.t()],
        }
    }

    /// Flat `1 × 1 × t` tensor from a slice.
    pub fn from_slice(values: &[f64]) -> Result<Self> {
        RealTensor::new(Shape::flat(values.len().max(1))?, values.to_vec())
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn scaled(&self, factor: f64) -> RealTensor {
        RealTensor {
            shape: self.shape,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// `self - scale · b`, the residual update of one greedy step.
    pub fn minus_scaled(&self, scale: f64, b: &BinaryTensor) -> Result<RealTensor> {
        self.shape.ensure_same(&b.shape)?;
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(l, v)| v - scale * b.sign(l))
            .collect();
        Ok(RealTensor {
            shape: self.shape,
            data,
        })
    }

    pub fn sub(&self, other: &RealTensor) -> Result<RealTensor> {
        self.shape.ensure_same(&other.shape)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(RealTensor {
            shape: self.shape,
            data,
        })
    }

    pub fn abs_sum(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        frobenius_norm_sq(self)
    }

    /// Dense dot product.
    pub fn dot(&self, other: &RealTensor) -> Result<f64> {
        self.shape.ensure_same(&other.shape)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }
}

/// Sign tensor in `{+1, -1}^t`, packed into 64-bit words.
///
/// Bit `l` set means entry `l` is `+1`. Bits past `t` in the last word are
/// always zero, so word equality and XOR-popcount need no masking.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryTensor {
    shape: Shape,
    words: Vec<u64>,
}

impl BinaryTensor {
    fn word_count(t: usize) -> usize {
        t.div_ceil(WORD_BITS)
    }

    fn tail_mask(t: usize) -> u64 {
        match t % WORD_BITS {
            0 => u64::MAX,
            rem => (1u64 << rem) - 1,
        }
    }

    pub fn all_positive(shape: Shape) -> Self {
        let t = shape.t();
        let mut words = vec![u64::MAX; Self::word_count(t)];
        if let Some(last) = words.last_mut() {
            *last &= Self::tail_mask(t);
        }
        BinaryTensor { shape, words }
    }

    pub fn all_negative(shape: Shape) -> Self {
        BinaryTensor {
            shape,
            words: vec![0; Self::word_count(shape.t())],
        }
    }

    /// Builds from a predicate over flat indices: `true` maps to `+1`.
    pub fn from_fn(shape: Shape, mut positive: impl FnMut(usize) -> bool) -> Self {
        let t = shape.t();
        let mut words = vec![0u64; Self::word_count(t)];
        for l in 0..t {
            if positive(l) {
                words[l / WORD_BITS] |= 1 << (l % WORD_BITS);
            }
        }
        BinaryTensor { shape, words }
    }

    /// Builds from explicit `±1` values; anything positive counts as `+1`.
    pub fn from_signs(shape: Shape, signs: &[i8]) -> Result<Self> {
        if signs.len() != shape.t() {
            return Err(Error::LengthMismatch {
                expected: shape.t(),
                actual: signs.len(),
            });
        }
        Ok(BinaryTensor::from_fn(shape, |l| signs[l] > 0))
    }

    /// Takes raw words, zeroing any padding bits.
    pub fn from_words(shape: Shape, mut words: Vec<u64>) -> Result<Self> {
        let t = shape.t();
        if words.len() != Self::word_count(t) {
            return Err(Error::LengthMismatch {
                expected: Self::word_count(t),
                actual: words.len(),
            });
        }
        if let Some(last) = words.last_mut() {
            *last &= Self::tail_mask(t);
        }
        Ok(BinaryTensor { shape, words })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn t(&self) -> usize {
        self.shape.t()
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn is_positive(&self, l: usize) -> bool {
        (self.words[l / WORD_BITS] >> (l % WORD_BITS)) & 1 == 1
    }

    /// Entry `l` as `±1.0`.
    pub fn sign(&self, l: usize) -> f64 {
        if self.is_positive(l) {
            1.0
        } else {
            -1.0
        }
    }

    pub fn signs(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.t()).map(move |l| self.sign(l))
    }

    /// Elementwise negation (`¬B`).
    pub fn negated(&self) -> BinaryTensor {
        let t = self.t();
        let mut words: Vec<u64> = self.words.iter().map(|w| !w).collect();
        if let Some(last) = words.last_mut() {
            *last &= Self::tail_mask(t);
        }
        BinaryTensor {
            shape: self.shape,
            words,
        }
    }

    pub fn to_real(&self) -> RealTensor {
        RealTensor {
            shape: self.shape,
            data: self.signs().collect(),
        }
    }

    /// Number of positions where the two tensors disagree.
    pub fn hamming(&self, other: &BinaryTensor) -> Result<usize> {
        self.shape.ensure_same(&other.shape)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum())
    }

    /// Packs the bits LSB-first into `ceil(t/8)` bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.t().div_ceil(8);
        self.words
            .iter()
            .flat_map(|w| w.to_le_bytes())
            .take(n)
            .collect()
    }

    /// Inverse of [`to_bytes`](Self::to_bytes). Nonzero padding bits are
    /// rejected so that a byte pattern has exactly one meaning.
    pub fn from_bytes(shape: Shape, bytes: &[u8]) -> Result<Self> {
        let t = shape.t();
        if bytes.len() != t.div_ceil(8) {
            return Err(Error::LengthMismatch {
                expected: t.div_ceil(8),
                actual: bytes.len(),
            });
        }
        let mut words = vec![0u64; Self::word_count(t)];
        for (i, byte) in bytes.iter().enumerate() {
            words[i / 8] |= (*byte as u64) << (8 * (i % 8));
        }
        let tensor = BinaryTensor::from_words(shape, words.clone())?;
        if tensor.words != words {
            return Err(Error::Corrupt(
                "nonzero padding bits in packed tensor".into(),
            ));
        }
        Ok(tensor)
    }
}

/// Elementwise sign with `sgn(0) = +1`.
pub fn sign_tensor(w: &RealTensor) -> BinaryTensor {
    BinaryTensor::from_fn(w.shape, |l| w.data[l] >= 0.0)
}

/// `Σ_l a_l · b_l` with `b_l ∈ {±1}`.
pub fn inner_product(a: &RealTensor, b: &BinaryTensor) -> Result<f64> {
    a.shape.ensure_same(&b.shape)?;
    let mut acc = 0.0;
    for (wi, &word) in b.words.iter().enumerate() {
        let base = wi * WORD_BITS;
        let end = (base + WORD_BITS).min(a.data.len());
        for (k, v) in a.data[base..end].iter().enumerate() {
            if (word >> k) & 1 == 1 {
                acc += v;
            } else {
                acc -= v;
            }
        }
    }
    Ok(acc)
}

/// Integer inner product `r = t - 2·hamming(b0, b1)`.
pub fn binary_inner_product(b0: &BinaryTensor, b1: &BinaryTensor) -> Result<i64> {
    let hamming = b0.hamming(b1)? as i64;
    Ok(b0.t() as i64 - 2 * hamming)
}

pub fn frobenius_norm_sq(w: &RealTensor) -> f64 {
    w.data.iter().map(|v| v * v).sum()
}
