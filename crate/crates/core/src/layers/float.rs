use crate::error::{shape_err, Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::tensor::{DenseTensor, Shape};

/// Full-precision 3×3 convolution weights `[out_ch, in_ch, 3, 3]` and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weights: DenseTensor,
    pub bias: DenseTensor,
}

impl ConvParams {
    pub fn new(weights: DenseTensor, bias: DenseTensor) -> Result<Self> {
        let d = weights.dims();
        if d.len() != 4 || d[2] != 3 || d[3] != 3 {
            return shape_err(format!("conv weights must be [out, in, 3, 3], got {}", weights.shape()));
        }
        if bias.dims() != [d[0]] {
            return shape_err(format!("conv bias must be [{}], got {}", d[0], bias.shape()));
        }
        Ok(ConvParams { weights, bias })
    }

    pub fn out_channels(&self) -> usize {
        self.weights.dims()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.dims()[1]
    }
}

/// Full-precision dense layer, weights `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FcParams {
    pub weights: DenseTensor,
    pub bias: DenseTensor,
}

impl FcParams {
    pub fn new(weights: DenseTensor, bias: DenseTensor) -> Result<Self> {
        let d = weights.dims();
        if d.len() != 2 {
            return shape_err(format!("fc weights must be [out, in], got {}", weights.shape()));
        }
        if bias.dims() != [d[0]] {
            return shape_err(format!("fc bias must be [{}], got {}", d[0], bias.shape()));
        }
        Ok(FcParams { weights, bias })
    }

    pub fn out_dim(&self) -> usize {
        self.weights.dims()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weights.dims()[1]
    }
}

fn chw(x: &DenseTensor, what: &str) -> Result<(usize, usize, usize)> {
    match x.dims() {
        &[c, h, w] => Ok((c, h, w)),
        _ => shape_err(format!("{what} expects a [c, h, w] tensor, got {}", x.shape())),
    }
}

/// Size-preserving 3×3 cross-correlation (stride 1, one pixel of padding
/// filled with `pad_value`).
pub fn conv2d_float(x: &DenseTensor, p: &ConvParams, pad_value: f32) -> Result<DenseTensor> {
    let (c, h, w) = chw(x, "conv2d_float")?;
    if c != p.in_channels() {
        return shape_err(format!("conv2d_float: input has {c} channels, weights expect {}", p.in_channels()));
    }
    let g = ConvGeom { in_ch: c, out_ch: p.out_channels(), height: h, width: w };
    let mut out = vec![0.0; g.out_len()];
    let mut cols = Vec::new();
    kernels::conv3x3_forward(&g, x.data(), p.weights.data(), Some(p.bias.data()), pad_value, &mut out, &mut cols);
    DenseTensor::new([g.out_ch, h, w], out)
}

/// Affine map `W·x + b` over a flattened input.
pub fn fc_float(x: &DenseTensor, p: &FcParams) -> Result<DenseTensor> {
    if x.len() != p.in_dim() {
        return shape_err(format!("fc_float: input length {} vs weight in-dim {}", x.len(), p.in_dim()));
    }
    let mut out = p.bias.data().to_vec();
    kernels::matmul(p.out_dim(), p.in_dim(), 1, p.weights.data(), x.data(), &mut out, true);
    DenseTensor::new([p.out_dim()], out)
}

/// 3×3, stride-2, unpadded max pooling over `[c, h, w]`.
pub fn maxpool(x: &DenseTensor) -> Result<DenseTensor> {
    let (c, h, w) = chw(x, "maxpool")?;
    if h < 3 || w < 3 {
        return shape_err(format!("maxpool needs at least 3x3 maps, got {h}x{w}"));
    }
    let (oh, ow) = (kernels::pool_out(h), kernels::pool_out(w));
    let mut out = vec![0.0; c * oh * ow];
    let mut idx = vec![0u32; out.len()];
    kernels::maxpool3s2_forward(c, h, w, x.data(), &mut out, &mut idx);
    Ok(DenseTensor::from_parts_unchecked(Shape::new([c, oh, ow])?, out))
}

/// Hard tanh, the continuous counterpart of `sign`.
pub fn hardtanh(x: &DenseTensor) -> DenseTensor {
    let data = x.data().iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    DenseTensor::from_parts_unchecked(x.shape().clone(), data)
}

/// Elementwise logistic function.
pub fn logistic(x: &DenseTensor) -> DenseTensor {
    let data = x.data().iter().map(|&v| kernels::logistic(v)).collect();
    DenseTensor::from_parts_unchecked(x.shape().clone(), data)
}

/// Nearest-neighbour resize of a square `[c, s, s]` map to `[c, to, to]`.
pub fn resize_nearest(x: &DenseTensor, to: usize) -> Result<DenseTensor> {
    let (c, h, w) = chw(x, "resize_nearest")?;
    if h != w || to == 0 {
        return Err(Error::Shape(format!("resize_nearest expects square maps, got {h}x{w}")));
    }
    let mut out = vec![0.0; c * to * to];
    kernels::resize_nearest_forward(c, h, to, x.data(), &mut out);
    DenseTensor::new([c, to, to], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rand_tensor(rng: &mut impl Rng, dims: &[usize]) -> DenseTensor {
        let n = dims.iter().product();
        DenseTensor::new(dims.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, &[2, 5, 6]);
        let mut w = vec![0.0; 2 * 2 * 9];
        w[4] = 1.0; // out 0 <- in 0 centre
        w[(2 + 1) * 9 + 4] = 1.0; // out 1 <- in 1 centre
        let p = ConvParams::new(DenseTensor::new([2, 2, 3, 3], w).unwrap(), DenseTensor::zeros([2]).unwrap()).unwrap();
        let y = conv2d_float(&x, &p, 0.0).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&mut rng, &[3, 4, 4]);
        let p = ConvParams::new(
            DenseTensor::zeros([2, 3, 3, 3]).unwrap(),
            DenseTensor::new([2], vec![0.25, -3.0]).unwrap(),
        )
        .unwrap();
        let y = conv2d_float(&x, &p, -1.0).unwrap();
        assert!(y.data()[..16].iter().all(|&v| v == 0.25));
        assert!(y.data()[16..].iter().all(|&v| v == -3.0));
    }

    #[test]
    fn conv_matches_six_loop_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, &[1, 5, 5]);
        let w = rand_tensor(&mut rng, &[1, 1, 3, 3]);
        let b = rand_tensor(&mut rng, &[1]);
        let p = ConvParams::new(w.clone(), b.clone()).unwrap();
        let y = conv2d_float(&x, &p, 0.0).unwrap();
        for oy in 0..5i32 {
            for ox in 0..5i32 {
                let mut acc = b.data()[0] as f64;
                for ky in 0..3i32 {
                    for kx in 0..3i32 {
                        let (sy, sx) = (oy + ky - 1, ox + kx - 1);
                        if (0..5).contains(&sy) && (0..5).contains(&sx) {
                            acc += w.data()[(ky * 3 + kx) as usize] as f64 * x.data()[(sy * 5 + sx) as usize] as f64;
                        }
                    }
                }
                assert!((y.data()[(oy * 5 + ox) as usize] as f64 - acc).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn channel_mismatch_is_error() {
        let x = DenseTensor::zeros([2, 4, 4]).unwrap();
        let p = ConvParams::new(DenseTensor::zeros([1, 3, 3, 3]).unwrap(), DenseTensor::zeros([1]).unwrap()).unwrap();
        assert!(conv2d_float(&x, &p, 0.0).is_err());
        assert!(ConvParams::new(DenseTensor::zeros([1, 3, 5, 5]).unwrap(), DenseTensor::zeros([1]).unwrap()).is_err());
    }

    #[test]
    fn fc_identity() {
        let mut w = vec![0.0; 16];
        for i in 0..4 {
            w[i * 4 + i] = 1.0;
        }
        let p = FcParams::new(DenseTensor::new([4, 4], w).unwrap(), DenseTensor::zeros([4]).unwrap()).unwrap();
        let x = DenseTensor::new([4], vec![1.0, -2.0, 3.5, 0.0]).unwrap();
        assert_eq!(fc_float(&x, &p).unwrap().data(), x.data());
        assert!(fc_float(&DenseTensor::zeros([3]).unwrap(), &p).is_err());
    }

    #[test]
    fn pool_sizes_and_constant_input() {
        for (n, m) in [(142, 70), (70, 34), (34, 16), (16, 7)] {
            let x = DenseTensor::filled([2, n, n], 0.5).unwrap();
            let y = maxpool(&x).unwrap();
            assert_eq!(y.dims(), &[2, m, m]);
            assert!(y.data().iter().all(|&v| v == 0.5));
        }
        assert!(maxpool(&DenseTensor::zeros([1, 2, 5]).unwrap()).is_err());
    }
}
