//! Bit-packed inference kernels: XNOR-popcount convolution and dense layers
//! with folded batch-norm thresholds, and OR-based max pooling.

use crate::error::{shape_err, Result};
use crate::image::Image8;
use crate::kernels::pool_out;
use crate::layers::bn::ThresholdParams;
use crate::popcount::{self, xor_popcount_words};
use crate::tensor::{words_for, BitTensor};

/// Binary feature map with channels packed per pixel (`[h, w]` pixels, each
/// owning `words_per_pixel` words; unused channel bits are zero).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedMap {
    channels: usize,
    height: usize,
    width: usize,
    wpp: usize,
    words: Vec<u64>,
}

impl PackedMap {
    pub fn new_negative(channels: usize, height: usize, width: usize) -> Self {
        let wpp = words_for(channels);
        PackedMap { channels, height, width, wpp, words: vec![0; wpp * height * width] }
    }

    /// From a `[c, h, w]` bit tensor.
    pub fn from_bits(t: &BitTensor) -> Result<Self> {
        let (c, h, w) = match t.dims() {
            &[c, h, w] => (c, h, w),
            _ => return shape_err(format!("expected a [c, h, w] bit tensor, got {}", t.shape())),
        };
        let mut m = PackedMap::new_negative(c, h, w);
        let tw = t.words();
        for ch in 0..c {
            for p in 0..h * w {
                let i = ch * h * w + p;
                if tw[i / 64] >> (i % 64) & 1 == 1 {
                    m.words[p * m.wpp + ch / 64] |= 1 << (ch % 64);
                }
            }
        }
        Ok(m)
    }

    /// Back to a `[c, h, w]` bit tensor.
    pub fn to_bits(&self) -> BitTensor {
        self.flatten_chw()
            .reshape([self.channels, self.height, self.width])
            .expect("same element count")
    }

    /// Flattens channel-major (`c`, then `y`, then `x`) into a 1-D tensor.
    pub fn flatten_chw(&self) -> BitTensor {
        let (c, hw) = (self.channels, self.height * self.width);
        let n = c * hw;
        let mut words = vec![0u64; words_for(n)];
        for p in 0..hw {
            let px = &self.words[p * self.wpp..][..self.wpp];
            for ch in 0..c {
                if px[ch / 64] >> (ch % 64) & 1 == 1 {
                    let i = ch * hw + p;
                    words[i / 64] |= 1 << (i % 64);
                }
            }
        }
        BitTensor::from_words([n], words).expect("tail bits untouched")
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline(always)]
    fn pixel(&self, y: usize, x: usize) -> &[u64] {
        &self.words[(y * self.width + x) * self.wpp..][..self.wpp]
    }

}

/// ORs `nbits` bits of `src` (tail already zero) into `dst` at bit `offset`.
#[inline(always)]
fn or_bits_at(dst: &mut [u64], offset: usize, src: &[u64]) {
    let (w0, sh) = (offset / 64, offset % 64);
    if sh == 0 {
        for (d, s) in dst[w0..].iter_mut().zip(src) {
            *d |= s;
        }
    } else {
        for (j, &s) in src.iter().enumerate() {
            if s == 0 {
                continue;
            }
            dst[w0 + j] |= s << sh;
            if let Some(d) = dst.get_mut(w0 + j + 1) {
                *d |= s >> (64 - sh);
            }
        }
    }
}

/// Binarized 3×3 convolution: ±1 weights `[out, in, 3, 3]` plus the folded
/// batch-norm threshold per output channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinConvParams {
    pub weights: BitTensor,
    pub thresholds: ThresholdParams,
}

impl BinConvParams {
    pub fn new(weights: BitTensor, thresholds: ThresholdParams) -> Result<Self> {
        let d = weights.dims();
        if d.len() != 4 || d[2] != 3 || d[3] != 3 {
            return shape_err(format!("binary conv weights must be [out, in, 3, 3], got {}", weights.shape()));
        }
        if thresholds.channels() != d[0] {
            return shape_err(format!("{} thresholds for {} output channels", thresholds.channels(), d[0]));
        }
        Ok(BinConvParams { weights, thresholds })
    }

    pub fn out_channels(&self) -> usize {
        self.weights.dims()[0]
    }
    pub fn in_channels(&self) -> usize {
        self.weights.dims()[1]
    }
}

/// Binarized dense layer: ±1 weights `[out, in]` plus thresholds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinFcParams {
    pub weights: BitTensor,
    pub thresholds: ThresholdParams,
}

impl BinFcParams {
    pub fn new(weights: BitTensor, thresholds: ThresholdParams) -> Result<Self> {
        let d = weights.dims();
        if d.len() != 2 {
            return shape_err(format!("binary fc weights must be [out, in], got {}", weights.shape()));
        }
        if thresholds.channels() != d[0] {
            return shape_err(format!("{} thresholds for {} outputs", thresholds.channels(), d[0]));
        }
        Ok(BinFcParams { weights, thresholds })
    }

    pub fn out_dim(&self) -> usize {
        self.weights.dims()[0]
    }
    pub fn in_dim(&self) -> usize {
        self.weights.dims()[1]
    }
}

/// Integer lane type for the 8-bit input path. Sums are bounded by the
/// caller, so wrapping ops are exact and keep the loops vectorizable.
trait Accumulator: Copy + Default + From<u8> {
    fn wadd(self, o: Self) -> Self;
    fn wsub(self, o: Self) -> Self;
}

macro_rules! accumulator {
    ($($t:ty),*) => {$(
        impl Accumulator for $t {
            #[inline(always)]
            fn wadd(self, o: Self) -> Self {
                self.wrapping_add(o)
            }
            #[inline(always)]
            fn wsub(self, o: Self) -> Self {
                self.wrapping_sub(o)
            }
        }
    )*};
}
accumulator!(i16, i32);

/// Convolution weights re-laid out for the kernel: for each output channel a
/// word-aligned row whose bit `tap·in_ch + ch` is the weight of input channel
/// `ch` at tap `ky·3 + kx`.
#[derive(Debug, Clone)]
pub(crate) struct PreparedConv {
    in_ch: usize,
    out_ch: usize,
    wpw: usize,
    rows: Vec<u64>,
    /// Weight signs `[out, in, 9]` for the 8-bit input path.
    signs: Vec<bool>,
    thresholds: ThresholdParams,
}

impl PreparedConv {
    pub(crate) fn new(p: &BinConvParams) -> Self {
        let (out_ch, in_ch) = (p.out_channels(), p.in_channels());
        let wpw = words_for(9 * in_ch);
        let mut rows = vec![0u64; out_ch * wpw];
        let mut signs = vec![false; out_ch * in_ch * 9];
        for oc in 0..out_ch {
            for ch in 0..in_ch {
                for tap in 0..9 {
                    let src = (oc * in_ch + ch) * 9 + tap;
                    if p.weights.get(src) {
                        let bit = tap * in_ch + ch;
                        rows[oc * wpw + bit / 64] |= 1 << (bit % 64);
                        signs[src] = true;
                    }
                }
            }
        }
        PreparedConv { in_ch, out_ch, wpw, rows, signs, thresholds: p.thresholds.clone() }
    }

    fn check_input(&self, c: usize) -> Result<()> {
        if c != self.in_ch {
            return shape_err(format!("binary conv: input has {c} channels, weights expect {}", self.in_ch));
        }
        Ok(())
    }

    /// Visits the integer pre-activations (all output channels) of every pixel.
    #[inline(always)]
    fn for_each_preact(&self, x: &PackedMap, mut f: impl FnMut(usize, usize, &[i32])) {
        let (h, w) = (x.height, x.width);
        let n = (9 * self.in_ch) as i32;
        let mut win = vec![0u64; self.wpw];
        let mut pre = vec![0i32; self.out_ch];
        for y in 0..h {
            for xx in 0..w {
                win.fill(0);
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = xx as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        // Out-of-bounds taps stay zero: padding is −1.
                        or_bits_at(&mut win, (ky * 3 + kx) * self.in_ch, x.pixel(sy as usize, sx as usize));
                    }
                }
                for (p, row) in pre.iter_mut().zip(self.rows.chunks_exact(self.wpw)) {
                    *p = n - 2 * xor_popcount_words(&win, row) as i32;
                }
                f(y, xx, &pre);
            }
        }
    }

    pub(crate) fn forward(&self, x: &PackedMap) -> Result<PackedMap> {
        self.check_input(x.channels)?;
        let mut out = PackedMap::new_negative(self.out_ch, x.height, x.width);
        conv_threshold_kernel(self, x, &mut out);
        Ok(out)
    }

    pub(crate) fn preactivations(&self, x: &PackedMap) -> Result<Vec<i32>> {
        self.check_input(x.channels)?;
        let hw = x.height * x.width;
        let mut out = vec![0i32; self.out_ch * hw];
        conv_preact_kernel(self, x, &mut out);
        Ok(out)
    }

    /// First-layer path: ±1 weights against raw 8-bit pixels (zero padded),
    /// accumulated with integer adds and subtracts. `A` must hold `±9·in·255`.
    ///
    /// Each tap is one contiguous pass over the padded plane: output `(y, x)`
    /// lives at `y·(w+2) + x` and reads input `(y+ky)·(w+2) + x+kx`; the two
    /// wrap-around columns per row are computed and discarded.
    #[inline(always)]
    fn image_preact_rows<A>(&self, img: &Image8, mut f: impl FnMut(usize, usize, &[A]))
    where
        A: Accumulator,
    {
        let (h, w) = (img.height(), img.width());
        let pw = w + 2;
        let plane = (h + 2) * pw + 2;
        let len = h * pw;
        let mut padded = vec![A::default(); self.in_ch * plane];
        for c in 0..self.in_ch {
            let src = &img.data()[c * h * w..][..h * w];
            for y in 0..h {
                let dst = &mut padded[c * plane + (y + 1) * pw + 1..][..w];
                for (d, &s) in dst.iter_mut().zip(&src[y * w..][..w]) {
                    *d = A::from(s);
                }
            }
        }
        let mut acc = vec![A::default(); len];
        for oc in 0..self.out_ch {
            acc.fill(A::default());
            for c in 0..self.in_ch {
                let signs = &self.signs[(oc * self.in_ch + c) * 9..][..9];
                let base = &padded[c * plane..][..plane];
                for tap in 0..9 {
                    let off = (tap / 3) * pw + tap % 3;
                    let src = &base[off..off + len];
                    if signs[tap] {
                        acc.iter_mut().zip(src).for_each(|(a, &s)| *a = a.wadd(s));
                    } else {
                        acc.iter_mut().zip(src).for_each(|(a, &s)| *a = a.wsub(s));
                    }
                }
            }
            for y in 0..h {
                f(oc, y, &acc[y * pw..][..w]);
            }
        }
    }

    /// 16-bit lanes suffice while `9·in·255` fits.
    fn narrow_image_acc(&self) -> bool {
        9 * 255 * self.in_ch <= i16::MAX as usize
    }

    pub(crate) fn forward_image(&self, img: &Image8) -> Result<PackedMap> {
        self.check_input(img.channels())?;
        let mut out = PackedMap::new_negative(self.out_ch, img.height(), img.width());
        image_threshold_kernel(self, img, &mut out);
        Ok(out)
    }

    pub(crate) fn image_preactivations(&self, img: &Image8) -> Result<Vec<i32>> {
        self.check_input(img.channels())?;
        let (h, w) = (img.height(), img.width());
        let mut out = vec![0i32; self.out_ch * h * w];
        self.image_preact_rows::<i32>(img, |oc, y, acc| out[(oc * h + y) * w..][..w].copy_from_slice(acc));
        Ok(out)
    }
}

/// Dense weights with word-aligned rows.
#[derive(Debug, Clone)]
pub(crate) struct PreparedFc {
    in_dim: usize,
    out_dim: usize,
    wpr: usize,
    rows: Vec<u64>,
    thresholds: ThresholdParams,
}

impl PreparedFc {
    pub(crate) fn new(p: &BinFcParams) -> Self {
        let (out_dim, in_dim) = (p.out_dim(), p.in_dim());
        let wpr = words_for(in_dim);
        let mut rows = vec![0u64; out_dim * wpr];
        if in_dim % 64 == 0 {
            rows.copy_from_slice(p.weights.words());
        } else {
            for o in 0..out_dim {
                for i in 0..in_dim {
                    if p.weights.get(o * in_dim + i) {
                        rows[o * wpr + i / 64] |= 1 << (i % 64);
                    }
                }
            }
        }
        PreparedFc { in_dim, out_dim, wpr, rows, thresholds: p.thresholds.clone() }
    }

    fn check_input(&self, x: &BitTensor) -> Result<()> {
        if x.len() != self.in_dim {
            return shape_err(format!("binary fc: input length {} vs weight in-dim {}", x.len(), self.in_dim));
        }
        Ok(())
    }

    pub(crate) fn preactivations(&self, x: &BitTensor) -> Result<Vec<i32>> {
        self.check_input(x)?;
        let mut out = vec![0i32; self.out_dim];
        fc_preact_kernel(self, x.words(), &mut out);
        Ok(out)
    }

    pub(crate) fn forward(&self, x: &BitTensor) -> Result<BitTensor> {
        let pre = self.preactivations(x)?;
        BitTensor::from_bools([self.out_dim], pre.iter().enumerate().map(|(o, &v)| self.thresholds.fire(o, v)))
    }
}

popcount::multiversion! {
    fn conv_threshold_kernel(c: &PreparedConv, x: &PackedMap, out: &mut PackedMap) -> () {
        let (w, wpp) = (x.width, out.wpp);
        let words = &mut out.words;
        let thr = &c.thresholds;
        c.for_each_preact(x, |y, xx, pre| {
            let px = &mut words[(y * w + xx) * wpp..][..wpp];
            for (wi, (word, chunk)) in px.iter_mut().zip(pre.chunks(64)).enumerate() {
                let (tau, flip) = (&thr.tau[wi * 64..], &thr.flip[wi * 64..]);
                let mut bits = 0u64;
                for (j, &v) in chunk.iter().enumerate() {
                    bits |= (((v >= tau[j]) != flip[j]) as u64) << j;
                }
                *word = bits;
            }
        })
    }
}

popcount::multiversion! {
    fn conv_preact_kernel(c: &PreparedConv, x: &PackedMap, out: &mut [i32]) -> () {
        let (hw, w) = (x.height * x.width, x.width);
        c.for_each_preact(x, |y, xx, pre| {
            for (oc, &v) in pre.iter().enumerate() {
                out[oc * hw + y * w + xx] = v;
            }
        })
    }
}

#[inline(always)]
fn emit_row<A: Copy + Into<i32>>(words: &mut [u64], wpp: usize, w: usize, thr: &ThresholdParams, oc: usize, y: usize, acc: &[A]) {
    let (tau, flip) = (thr.tau[oc], thr.flip[oc]);
    let (word, shift) = (oc / 64, oc % 64);
    let row = &mut words[y * w * wpp..][..w * wpp];
    for (px, &v) in row.chunks_exact_mut(wpp).zip(acc) {
        px[word] |= (((v.into() >= tau) != flip) as u64) << shift;
    }
}

popcount::multiversion! {
    fn image_threshold_kernel(c: &PreparedConv, img: &Image8, out: &mut PackedMap) -> () {
        let (w, wpp) = (img.width(), out.wpp);
        let words = &mut out.words;
        let thr = &c.thresholds;
        if c.narrow_image_acc() {
            c.image_preact_rows::<i16>(img, |oc, y, acc| emit_row(words, wpp, w, thr, oc, y, acc))
        } else {
            c.image_preact_rows::<i32>(img, |oc, y, acc| emit_row(words, wpp, w, thr, oc, y, acc))
        }
    }
}

popcount::multiversion! {
    fn fc_preact_kernel(f: &PreparedFc, x: &[u64], out: &mut [i32]) -> () {
        let n = f.in_dim as i32;
        for (o, row) in out.iter_mut().zip(f.rows.chunks_exact(f.wpr)) {
            *o = n - 2 * xor_popcount_words(x, row) as i32;
        }
    }
}

/// Max pool (3×3, stride 2) over ±1 maps: a window is +1 iff any bit is set.
pub(crate) fn maxpool_packed(x: &PackedMap) -> Result<PackedMap> {
    let (h, w) = (x.height, x.width);
    if h < 3 || w < 3 {
        return shape_err(format!("maxpool needs at least 3x3 maps, got {h}x{w}"));
    }
    let (oh, ow) = (pool_out(h), pool_out(w));
    let mut out = PackedMap::new_negative(x.channels, oh, ow);
    let wpp = x.wpp;
    for oy in 0..oh {
        for ox in 0..ow {
            let dst = (oy * ow + ox) * wpp;
            for ky in 0..3 {
                for kx in 0..3 {
                    let src = x.pixel(oy * 2 + ky, ox * 2 + kx);
                    for (d, s) in out.words[dst..dst + wpp].iter_mut().zip(src) {
                        *d |= s;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Binary convolution over a `[c, h, w]` ±1 map (padding −1): XNOR-popcount
/// pre-activations compared against the folded thresholds.
pub fn conv2d_binary(x: &BitTensor, p: &BinConvParams) -> Result<BitTensor> {
    let m = PackedMap::from_bits(x)?;
    Ok(PreparedConv::new(p).forward(&m)?.to_bits())
}

/// Integer pre-activations `[out, h, w]` of [`conv2d_binary`].
pub fn conv2d_binary_preact(x: &BitTensor, p: &BinConvParams) -> Result<Vec<i32>> {
    let m = PackedMap::from_bits(x)?;
    PreparedConv::new(p).preactivations(&m)
}

/// First-layer binary convolution of raw 8-bit pixels.
pub fn conv2d_binary_image(img: &Image8, p: &BinConvParams) -> Result<BitTensor> {
    Ok(PreparedConv::new(p).forward_image(img)?.to_bits())
}

/// Integer pre-activations `[out, h, w]` of [`conv2d_binary_image`].
pub fn conv2d_binary_image_preact(img: &Image8, p: &BinConvParams) -> Result<Vec<i32>> {
    PreparedConv::new(p).image_preactivations(img)
}

pub fn fc_binary(x: &BitTensor, p: &BinFcParams) -> Result<BitTensor> {
    PreparedFc::new(p).forward(x)
}

pub fn fc_binary_preact(x: &BitTensor, p: &BinFcParams) -> Result<Vec<i32>> {
    PreparedFc::new(p).preactivations(x)
}

/// Max pool (3×3, stride 2) over a `[c, h, w]` ±1 map.
pub fn maxpool_binary(x: &BitTensor) -> Result<BitTensor> {
    Ok(maxpool_packed(&PackedMap::from_bits(x)?)?.to_bits())
}
