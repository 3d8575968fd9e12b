//! 8-bit planar images and the preprocessing used before the encoder.

use crate::error::{shape_err, Error, Result};
use crate::tensor::DenseTensor;

/// Channel-planar (`[c, h, w]`) 8-bit image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Image8 {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Image8 {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return shape_err("image dimensions must be positive");
        }
        if data.len() != channels * height * width {
            return shape_err(format!(
                "{channels}x{height}x{width} image needs {} bytes, got {}",
                channels * height * width,
                data.len()
            ));
        }
        Ok(Image8 { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Image8 { channels, height, width, data: vec![0; channels * height * width] }
    }

    /// From interleaved `[h, w, c]` bytes (the on-disk RGB layout).
    pub fn from_hwc(height: usize, width: usize, channels: usize, hwc: &[u8]) -> Result<Self> {
        let mut img = Image8::new(channels, height, width, vec![0; hwc.len()])?;
        let hw = height * width;
        for (p, px) in hwc.chunks(channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                img.data[c * hw + p] = v;
            }
        }
        Ok(img)
    }

    pub fn to_hwc(&self) -> Vec<u8> {
        let hw = self.height * self.width;
        let mut out = vec![0; self.data.len()];
        for p in 0..hw {
            for c in 0..self.channels {
                out[p * self.channels + c] = self.data[c * hw + p];
            }
        }
        out
    }

    /// Accepts a `[c, h, w]` tensor of integral values in `[0, 255]`.
    pub fn from_dense(t: &DenseTensor) -> Result<Self> {
        let d = t.dims();
        if d.len() != 3 {
            return shape_err(format!("image tensor must be [c, h, w], got {}", t.shape()));
        }
        let mut data = Vec::with_capacity(t.len());
        for (i, &v) in t.data().iter().enumerate() {
            if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
                return Err(Error::InvalidValue(format!("pixel {i} = {v} is not an 8-bit integer")));
            }
            data.push(v as u8);
        }
        Image8::new(d[0], d[1], d[2], data)
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
    pub fn data(&self) -> &[u8] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    /// Raw integer pixel values as `f32`.
    pub fn to_dense(&self) -> DenseTensor {
        let data = self.data.iter().map(|&v| v as f32).collect();
        DenseTensor::new([self.channels, self.height, self.width], data).expect("valid image shape")
    }

    /// Pixels scaled to `[0, 1]`.
    pub fn to_unit(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32 / 255.0).collect()
    }

    /// Quantizes `[0, 1]` values (clamped) back to 8 bits.
    pub fn from_unit(channels: usize, height: usize, width: usize, values: &[f32]) -> Result<Self> {
        let data = values.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        Image8::new(channels, height, width, data)
    }

    /// Bilinear resize (half-pixel centres) followed by 8-bit rounding.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Image8 {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let sy = self.height as f32 / height as f32;
        let sx = self.width as f32 / width as f32;
        let (ih, iw) = (self.height, self.width);
        let mut out = Image8::zeros(self.channels, height, width);
        let xs: Vec<(usize, usize, f32)> = (0..width).map(|x| taps(x, sx, iw)).collect();
        for y in 0..height {
            let (y0, y1, fy) = taps(y, sy, ih);
            for c in 0..self.channels {
                let src = &self.data[c * ih * iw..][..ih * iw];
                let dst = &mut out.data[c * height * width + y * width..][..width];
                for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
                    let top = src[y0 * iw + x0] as f32 * (1.0 - fx) + src[y0 * iw + x1] as f32 * fx;
                    let bot = src[y1 * iw + x0] as f32 * (1.0 - fx) + src[y1 * iw + x1] as f32 * fx;
                    dst[x] = (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        out
    }
}

fn taps(i: usize, scale: f32, n: usize) -> (usize, usize, f32) {
    let s = ((i as f32 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (s.floor() as usize).min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, s - i0 as f32)
}
