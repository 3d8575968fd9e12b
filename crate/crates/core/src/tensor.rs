//! Dense and bit-packed tensors, sign binarization, the straight-through
//! estimator and the XNOR-popcount dot product.

use crate::error::{shape_err, Error, Result};
use crate::popcount;

/// Dimension list of a tensor. Every dimension is at least 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.is_empty() {
            return shape_err("shape needs at least one dimension");
        }
        let mut n: u64 = 1;
        for &d in &dims {
            if d == 0 {
                return shape_err(format!("zero-sized dimension in {dims:?}"));
            }
            n = n
                .checked_mul(d as u64)
                .ok_or_else(|| Error::Shape(format!("element count of {dims:?} overflows")))?;
        }
        if n > usize::MAX as u64 {
            return shape_err(format!("element count of {dims:?} overflows"));
        }
        Ok(Shape(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "[{}]", parts.join("x"))
    }
}

/// Row-major `f32` tensor whose values are all finite.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Shape,
    data: Vec<f32>,
}

impl DenseTensor {
    pub fn new(dims: impl Into<Vec<usize>>, data: Vec<f32>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return shape_err(format!(
                "shape {shape} holds {} values, got {}",
                shape.numel(),
                data.len()
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(DenseTensor { shape, data })
    }

    pub fn zeros(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let data = vec![0.0; shape.numel()];
        Ok(DenseTensor { shape, data })
    }

    pub fn filled(dims: impl Into<Vec<usize>>, value: f32) -> Result<Self> {
        let mut t = Self::zeros(dims)?;
        if !value.is_finite() {
            return Err(Error::NonFinite(0));
        }
        t.data.fill(value);
        Ok(t)
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Same data viewed under another shape with equal element count.
    pub fn reshape(self, dims: impl Into<Vec<usize>>) -> Result<Self> {
        DenseTensor::new(dims, self.data)
    }

    pub(crate) fn from_parts_unchecked(shape: Shape, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        DenseTensor { shape, data }
    }
}

/// Bit-packed tensor of ±1 values: bit 1 encodes +1, bit 0 encodes −1.
///
/// Bits are stored row-major, least significant bit first within each 64-bit
/// word. Bits past `numel` in the last word are always zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitTensor {
    shape: Shape,
    words: Vec<u64>,
}

pub(crate) fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

pub(crate) fn tail_mask(bits: usize) -> u64 {
    match bits % 64 {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

impl BitTensor {
    pub fn from_words(dims: impl Into<Vec<usize>>, words: Vec<u64>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let n = shape.numel();
        if words.len() != words_for(n) {
            return shape_err(format!(
                "shape {shape} needs {} words, got {}",
                words_for(n),
                words.len()
            ));
        }
        if let Some(last) = words.last() {
            if last & !tail_mask(n) != 0 {
                return Err(Error::InvalidValue("tail padding bits must be zero".into()));
            }
        }
        Ok(BitTensor { shape, words })
    }

    /// Builds a tensor from booleans (`true` = +1).
    pub fn from_bools(dims: impl Into<Vec<usize>>, bits: impl IntoIterator<Item = bool>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let n = shape.numel();
        let mut words = vec![0u64; words_for(n)];
        let mut count = 0usize;
        for (i, b) in bits.into_iter().enumerate() {
            if i >= n {
                return shape_err(format!("more than {n} bits supplied for shape {shape}"));
            }
            if b {
                words[i / 64] |= 1 << (i % 64);
            }
            count = i + 1;
        }
        if count != n {
            return shape_err(format!("shape {shape} needs {n} bits, got {count}"));
        }
        Ok(BitTensor { shape, words })
    }

    /// All elements set to the same sign.
    pub fn filled(dims: impl Into<Vec<usize>>, positive: bool) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let n = shape.numel();
        let mut words = vec![if positive { u64::MAX } else { 0 }; words_for(n)];
        if let Some(last) = words.last_mut() {
            *last &= tail_mask(n);
        }
        Ok(BitTensor { shape, words })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    /// Logical element count.
    pub fn len(&self) -> usize {
        self.shape.numel()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// `true` when element `i` is +1.
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len(), "bit index {i} out of range {}", self.len());
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len()).map(move |i| self.words[i / 64] >> (i % 64) & 1 == 1)
    }

    /// Number of +1 entries.
    pub fn count_positive(&self) -> usize {
        popcount::popcount_words(&self.words) as usize
    }

    /// Bytes needed to hold the bits with no word padding.
    pub fn packed_bytes(&self) -> usize {
        self.len().div_ceil(8)
    }

    /// Elementwise negation, keeping the tail zero.
    pub fn negated(&self) -> BitTensor {
        let n = self.len();
        let mut words: Vec<u64> = self.words.iter().map(|w| !w).collect();
        if let Some(last) = words.last_mut() {
            *last &= tail_mask(n);
        }
        BitTensor { shape: self.shape.clone(), words }
    }

    pub fn reshape(self, dims: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.len() {
            return shape_err(format!("cannot view {} as {shape}", self.shape));
        }
        Ok(BitTensor { shape, words: self.words })
    }
}

/// Binarizes with `+1` for `x >= 0` (zero included) and `−1` otherwise.
pub fn sign_forward(x: &DenseTensor) -> BitTensor {
    let n = x.len();
    let mut words = vec![0u64; words_for(n)];
    for (w, chunk) in words.iter_mut().zip(x.data().chunks(64)) {
        let mut acc = 0u64;
        for (j, &v) in chunk.iter().enumerate() {
            acc |= ((v >= 0.0) as u64) << j;
        }
        *w = acc;
    }
    BitTensor { shape: x.shape().clone(), words }
}

/// Scalar sign with the same zero convention as [`sign_forward`].
#[inline]
pub fn sign_value(v: f32) -> f32 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Straight-through estimator: passes `upstream_grad` where `|x| < 1`
/// (strict) and zeroes it elsewhere.
pub fn ste_backward(x: &DenseTensor, upstream_grad: &DenseTensor) -> Result<DenseTensor> {
    if x.shape() != upstream_grad.shape() {
        return shape_err(format!(
            "ste_backward: input {} vs gradient {}",
            x.shape(),
            upstream_grad.shape()
        ));
    }
    let data = x
        .data()
        .iter()
        .zip(upstream_grad.data())
        .map(|(&v, &g)| if v.abs() < 1.0 { g } else { 0.0 })
        .collect();
    Ok(DenseTensor::from_parts_unchecked(x.shape().clone(), data))
}

/// Packs a tensor of exact ±1 values into bits.
pub fn pack(signs: &DenseTensor) -> Result<BitTensor> {
    if let Some(i) = signs.data().iter().position(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::InvalidValue(format!(
            "pack expects ±1 values, found {} at index {i}",
            signs.data()[i]
        )));
    }
    Ok(sign_forward(signs))
}

/// Expands bits back to ±1.0 values.
pub fn unpack(b: &BitTensor) -> DenseTensor {
    let data = b.iter().map(|bit| if bit { 1.0 } else { -1.0 }).collect();
    DenseTensor::from_parts_unchecked(b.shape().clone(), data)
}

/// ±1 dot product `Σ aᵢ·bᵢ` as `2·popcount(XNOR(a, b) & mask) − n`.
pub fn xnor_popcount_dot(a: &BitTensor, b: &BitTensor) -> Result<i64> {
    let n = a.len();
    if n != b.len() {
        return shape_err(format!("xnor_popcount_dot: lengths {n} and {}", b.len()));
    }
    Ok(2 * masked_agreement(&a.words, &b.words, n) as i64 - n as i64)
}

popcount::multiversion! {
    fn masked_agreement(a: &[u64], b: &[u64], n: usize) -> u64 {
        let words = a.len();
        let mut agree = 0u64;
        for i in 0..words {
            let mut x = !(a[i] ^ b[i]);
            if i + 1 == words {
                x &= tail_mask(n);
            }
            agree += x.count_ones() as u64;
        }
        agree
    }
}
