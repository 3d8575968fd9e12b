//! Float kernels shared by inference (`f32`) and training (`f32`, or `f64`
//! for gradient checking): 3×3 convolution via im2col + GEMM, max pooling,
//! nearest-neighbour resizing and dense layers.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Floating-point scalar usable by the training kernels.
pub trait Real:
    Copy
    + Debug
    + Default
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
{
    fn zero() -> Self;
    fn one() -> Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn from_f32(v: f32) -> Self;
    fn to_f32(self) -> f32;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn tanh(self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;

    /// `c ← alpha·a·b + beta·c` on strided row/column layouts.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            #[inline(always)]
            fn zero() -> Self {
                0.0
            }
            #[inline(always)]
            fn one() -> Self {
                1.0
            }
            #[inline(always)]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline(always)]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline(always)]
            fn from_f32(v: f32) -> Self {
                v as $t
            }
            #[inline(always)]
            fn to_f32(self) -> f32 {
                self as f32
            }
            #[inline(always)]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline(always)]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline(always)]
            fn tanh(self) -> Self {
                <$t>::tanh(self)
            }
            #[inline(always)]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            #[inline(always)]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                assert!(span(m, k, rsa, csa) <= a.len(), "gemm: lhs too short");
                assert!(span(k, n, rsb, csb) <= b.len(), "gemm: rhs too short");
                assert!(span(m, n, rsc, csc) <= c.len(), "gemm: output too short");
                // SAFETY: the three spans were bounds-checked against the slices,
                // strides are non-negative, and `c` is exclusively borrowed.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

fn span(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    assert!(rs >= 0 && cs >= 0, "negative strides are not supported");
    if rows == 0 || cols == 0 {
        return 0;
    }
    (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
}

/// `c[m×n] (+)= a[m×k] · b[k×n]`, all row-major and contiguous.
pub fn matmul<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], accumulate: bool) {
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm(m, k, n, T::one(), a, k as isize, 1, b, n as isize, 1, beta, c, n as isize, 1);
}

/// `c[m×n] (+)= a[m×k] · bᵀ` where `b` is stored row-major as `[n×k]`.
pub fn matmul_bt<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], accumulate: bool) {
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm(m, k, n, T::one(), a, k as isize, 1, b, 1, k as isize, beta, c, n as isize, 1);
}

/// `c[m×n] (+)= aᵀ · b[k×n]` where `a` is stored row-major as `[k×m]`.
pub fn matmul_at<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], accumulate: bool) {
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm(m, k, n, T::one(), a, 1, m as isize, b, n as isize, 1, beta, c, n as isize, 1);
}

/// Geometry of a size-preserving 3×3 convolution (stride 1, padding 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub height: usize,
    pub width: usize,
}

impl ConvGeom {
    pub fn in_len(&self) -> usize {
        self.in_ch * self.height * self.width
    }
    pub fn out_len(&self) -> usize {
        self.out_ch * self.height * self.width
    }
    pub fn weight_len(&self) -> usize {
        self.out_ch * self.in_ch * 9
    }
    fn cols_len(&self) -> usize {
        self.in_ch * 9 * self.height * self.width
    }
}

/// Unfolds `x[c, h, w]` into `cols[c·9, h·w]` with constant padding.
pub fn im2col<T: Real>(g: &ConvGeom, x: &[T], pad_value: T, cols: &mut Vec<T>) {
    let (h, w) = (g.height, g.width);
    let hw = h * w;
    cols.clear();
    cols.resize(g.cols_len(), pad_value);
    for c in 0..g.in_ch {
        let plane = &x[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(c * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    // kx = 0 reads x−1, kx = 2 reads x+1.
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
}

/// Scatters `cols` gradients back to `dx[c, h, w]`; padding positions drop.
pub fn col2im_add<T: Real>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let (h, w) = (g.height, g.width);
    let hw = h * w;
    for c in 0..g.in_ch {
        let plane = &mut dx[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(c * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..][..w];
                    let src = &row[y * w..][..w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, &s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, &s)| *d += s),
                    }
                }
            }
        }
    }
}

/// `out[oc, h, w] = Σ weight[oc, ic, ky, kx] · x[ic, y+ky−1, x+kx−1] + bias[oc]`.
///
/// `cols` is scratch space kept by the caller between calls.
pub fn conv3x3_forward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    pad_value: T,
    out: &mut [T],
    cols: &mut Vec<T>,
) {
    debug_assert_eq!(x.len(), g.in_len());
    debug_assert_eq!(weight.len(), g.weight_len());
    debug_assert_eq!(out.len(), g.out_len());
    im2col(g, x, pad_value, cols);
    let hw = g.height * g.width;
    match bias {
        Some(b) => {
            for (oc, plane) in out.chunks_mut(hw).enumerate() {
                plane.fill(b[oc]);
            }
            matmul(g.out_ch, g.in_ch * 9, hw, weight, cols, out, true);
        }
        None => matmul(g.out_ch, g.in_ch * 9, hw, weight, cols, out, false),
    }
}

/// Accumulates weight/bias gradients and (optionally) the input gradient of
/// [`conv3x3_forward`]. `cols` must hold the im2col of the forward input.
#[allow(clippy::too_many_arguments)]
pub fn conv3x3_backward<T: Real>(
    g: &ConvGeom,
    cols: &[T],
    weight: &[T],
    dout: &[T],
    dweight: &mut [T],
    dbias: Option<&mut [T]>,
    dx: Option<&mut [T]>,
    dcols: &mut Vec<T>,
) {
    let hw = g.height * g.width;
    let k = g.in_ch * 9;
    // dW[oc, k] += dout[oc, hw] · cols[k, hw]ᵀ
    matmul_bt(g.out_ch, hw, k, dout, cols, dweight, true);
    if let Some(db) = dbias {
        for (oc, plane) in dout.chunks(hw).enumerate() {
            db[oc] += plane.iter().copied().sum::<T>();
        }
    }
    if let Some(dx) = dx {
        dcols.clear();
        dcols.resize(g.cols_len(), T::zero());
        // dcols[k, hw] = Wᵀ[k, oc] · dout[oc, hw]
        matmul_at(k, g.out_ch, hw, weight, dout, dcols, false);
        col2im_add(g, dcols, dx);
    }
}

/// Output side of a 3×3 / stride-2 / unpadded max pool.
pub fn pool_out(n: usize) -> usize {
    if n < 3 {
        0
    } else {
        (n - 3) / 2 + 1
    }
}

/// Max pool over `x[c, h, w]`, recording the flat input index of each maximum
/// (first occurrence wins on ties).
pub fn maxpool3s2_forward<T: Real>(c: usize, h: usize, w: usize, x: &[T], out: &mut [T], argmax: &mut [u32]) {
    let (oh, ow) = (pool_out(h), pool_out(w));
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * 2 * w + ox * 2;
                let mut best_v = x[best];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let i = base + (oy * 2 + ky) * w + ox * 2 + kx;
                        if x[i] > best_v {
                            best_v = x[i];
                            best = i;
                        }
                    }
                }
                let o = ch * oh * ow + oy * ow + ox;
                out[o] = best_v;
                argmax[o] = best as u32;
            }
        }
    }
}

pub fn maxpool_backward<T: Real>(argmax: &[u32], dout: &[T], dx: &mut [T]) {
    for (&i, &g) in argmax.iter().zip(dout) {
        dx[i as usize] += g;
    }
}

/// Source index along one axis for nearest-neighbour resizing `from → to`.
#[inline]
pub fn nearest_src(i: usize, from: usize, to: usize) -> usize {
    ((i * from) / to).min(from - 1)
}

/// Nearest-neighbour resize of `x[c, from, from]` to `out[c, to, to]`.
pub fn resize_nearest_forward<T: Real>(c: usize, from: usize, to: usize, x: &[T], out: &mut [T]) {
    for ch in 0..c {
        let src = &x[ch * from * from..][..from * from];
        let dst = &mut out[ch * to * to..][..to * to];
        for y in 0..to {
            let sy = nearest_src(y, from, to);
            for xx in 0..to {
                dst[y * to + xx] = src[sy * from + nearest_src(xx, from, to)];
            }
        }
    }
}

pub fn resize_nearest_backward<T: Real>(c: usize, from: usize, to: usize, dout: &[T], dx: &mut [T]) {
    for ch in 0..c {
        let src = &dout[ch * to * to..][..to * to];
        let dst = &mut dx[ch * from * from..][..from * from];
        for y in 0..to {
            let sy = nearest_src(y, from, to);
            for xx in 0..to {
                dst[sy * from + nearest_src(xx, from, to)] += src[y * to + xx];
            }
        }
    }
}

#[inline]
pub fn logistic<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(g: &ConvGeom, x: &[f64], w: &[f64], b: &[f64], pad: f64) -> Vec<f64> {
        let (h, wd) = (g.height as isize, g.width as isize);
        let mut out = vec![0.0; g.out_len()];
        for oc in 0..g.out_ch {
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = b[oc];
                    for ic in 0..g.in_ch {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let sy = y + ky - 1;
                                let sx = xx + kx - 1;
                                let v = if sy < 0 || sy >= h || sx < 0 || sx >= wd {
                                    pad
                                } else {
                                    x[ic * (h * wd) as usize + (sy * wd + sx) as usize]
                                };
                                acc += w[((oc * g.in_ch + ic) * 3 + ky as usize) * 3 + kx as usize] * v;
                            }
                        }
                    }
                    out[oc * (h * wd) as usize + (y * wd + xx) as usize] = acc;
                }
            }
        }
        out
    }

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    #[test]
    fn conv_matches_naive_loops() {
        let g = ConvGeom { in_ch: 3, out_ch: 4, height: 5, width: 6 };
        let mut s = 9;
        let x: Vec<f64> = (0..g.in_len()).map(|_| lcg(&mut s)).collect();
        let w: Vec<f64> = (0..g.weight_len()).map(|_| lcg(&mut s)).collect();
        let b: Vec<f64> = (0..4).map(|_| lcg(&mut s)).collect();
        for pad in [0.0, -1.0] {
            let mut out = vec![0.0; g.out_len()];
            let mut cols = Vec::new();
            conv3x3_forward(&g, &x, &w, Some(&b), pad, &mut out, &mut cols);
            let want = naive_conv(&g, &x, &w, &b, pad);
            for (a, e) in out.iter().zip(&want) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint_of_forward() {
        // <dout, conv(x)> is linear in x and w; its gradients must match the
        // backward routine exactly up to rounding.
        let g = ConvGeom { in_ch: 2, out_ch: 3, height: 4, width: 4 };
        let mut s = 5;
        let x: Vec<f64> = (0..g.in_len()).map(|_| lcg(&mut s)).collect();
        let w: Vec<f64> = (0..g.weight_len()).map(|_| lcg(&mut s)).collect();
        let dout: Vec<f64> = (0..g.out_len()).map(|_| lcg(&mut s)).collect();
        let mut cols = Vec::new();
        im2col(&g, &x, 0.0, &mut cols);
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; 3];
        let mut dx = vec![0.0; x.len()];
        let mut dcols = Vec::new();
        conv3x3_backward(&g, &cols, &w, &dout, &mut dw, Some(&mut db), Some(&mut dx), &mut dcols);
        let f = |x: &[f64], w: &[f64]| -> f64 {
            naive_conv(&g, x, w, &[0.0; 3], 0.0).iter().zip(&dout).map(|(a, b)| a * b).sum()
        };
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += 1.0;
            assert!((f(&xp, &w) - f(&x, &w) - dx[i]).abs() < 1e-9);
        }
        for i in 0..w.len() {
            let mut wp = w.clone();
            wp[i] += 1.0;
            assert!((f(&x, &wp) - f(&x, &w) - dw[i]).abs() < 1e-9);
        }
        for (oc, d) in db.iter().enumerate() {
            let s: f64 = dout[oc * 16..(oc + 1) * 16].iter().sum();
            assert!((s - d).abs() < 1e-12);
        }
    }

    #[test]
    fn pool_geometry_follows_table() {
        assert_eq!(pool_out(142), 70);
        assert_eq!(pool_out(70), 34);
        assert_eq!(pool_out(34), 16);
        assert_eq!(pool_out(16), 7);
        assert_eq!(pool_out(2), 0);
    }

    #[test]
    fn resize_backward_is_adjoint() {
        let (c, from, to) = (2, 3, 7);
        let mut s = 1;
        let x: Vec<f64> = (0..c * from * from).map(|_| lcg(&mut s)).collect();
        let d: Vec<f64> = (0..c * to * to).map(|_| lcg(&mut s)).collect();
        let mut y = vec![0.0; c * to * to];
        resize_nearest_forward(c, from, to, &x, &mut y);
        let mut dx = vec![0.0; x.len()];
        resize_nearest_backward(c, from, to, &d, &mut dx);
        let lhs: f64 = y.iter().zip(&d).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
