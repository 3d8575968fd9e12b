//! Binary encoder in two forms: unfolded (±1 weights with batch norm, the
//! float-emulation reference) and folded (packed weights with integer
//! thresholds, the deployment path).

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::image::Image8;
use crate::kernels;
use crate::layers::arch::Architecture;
use crate::layers::bn::{bn_forward, fold_bn_sign, BnParams, ThresholdParams};
use crate::layers::float::{conv2d_float, fc_float, maxpool, ConvParams, FcParams};
use crate::layers::packed::{maxpool_packed, BinConvParams, BinFcParams, PreparedConv, PreparedFc};
use crate::tensor::{sign_forward, unpack, BitTensor, DenseTensor};

/// Encoder with ±1 weights and explicit batch-norm statistics.
///
/// `conv_bn[0]` is expressed in raw-pixel units (inputs in `[0, 255]`).
#[derive(Debug, Clone, PartialEq)]
pub struct BnEncoderParams {
    pub arch: Architecture,
    pub conv_weights: Vec<BitTensor>,
    pub conv_bn: Vec<BnParams>,
    pub fc_weights: Vec<BitTensor>,
    pub fc_bn: Vec<BnParams>,
}

fn random_bits(rng: &mut impl Rng, dims: Vec<usize>) -> BitTensor {
    let n: usize = dims.iter().product();
    BitTensor::from_bools(dims, (0..n).map(|_| rng.random::<bool>())).expect("positive dims")
}

/// Statistics around a pre-activation with spread `scale` and centre `centre`;
/// γ takes both signs.
fn random_bn(rng: &mut impl Rng, c: usize, centre: f32, scale: f32) -> BnParams {
    let gamma = (0..c)
        .map(|_| {
            let g: f32 = rng.random_range(0.25..2.0);
            if rng.random_bool(0.25) {
                -g
            } else {
                g
            }
        })
        .collect();
    BnParams::new(
        gamma,
        (0..c).map(|_| rng.random_range(-0.5..0.5)).collect(),
        (0..c).map(|_| centre + rng.random_range(-0.5..0.5) * scale).collect(),
        (0..c).map(|_| (scale * rng.random_range(0.5..1.5)).powi(2)).collect(),
        1e-5,
    )
    .expect("finite random statistics")
}

impl BnEncoderParams {
    pub fn validate(&self) -> Result<()> {
        let a = &self.arch;
        a.validate()?;
        if self.conv_weights.len() != 4 || self.conv_bn.len() != 4 || self.fc_weights.len() != 2 || self.fc_bn.len() != 2 {
            return shape_err("encoder needs 4 conv and 2 fc layers");
        }
        let ins = a.conv_in_channels();
        for i in 0..4 {
            let want = [a.conv_channels[i], ins[i], 3, 3];
            if self.conv_weights[i].dims() != want {
                return shape_err(format!("conv{} weights {} (expected {:?})", i + 1, self.conv_weights[i].shape(), want));
            }
            if self.conv_bn[i].channels() != want[0] {
                return shape_err(format!("conv{} batch norm has {} channels", i + 1, self.conv_bn[i].channels()));
            }
        }
        let fcs = [[a.fc_hidden, a.flat_dim()], [a.feature_dim, a.fc_hidden]];
        for (i, want) in fcs.iter().enumerate() {
            if self.fc_weights[i].dims() != want {
                return shape_err(format!("fc{} weights {} (expected {:?})", i + 1, self.fc_weights[i].shape(), want));
            }
            if self.fc_bn[i].channels() != want[0] {
                return shape_err(format!("fc{} batch norm has {} channels", i + 1, self.fc_bn[i].channels()));
            }
        }
        Ok(())
    }

    /// Random weights and statistics centred on typical pre-activations, so
    /// every layer emits a mix of ±1.
    pub fn random(arch: Architecture, rng: &mut impl Rng) -> Self {
        let ins = arch.conv_in_channels();
        let mut conv_weights = Vec::new();
        let mut conv_bn = Vec::new();
        for i in 0..4 {
            let oc = arch.conv_channels[i];
            conv_weights.push(random_bits(rng, vec![oc, ins[i], 3, 3]));
            let k = (9 * ins[i]) as f32;
            conv_bn.push(if i == 0 {
                random_bn(rng, oc, 0.0, 128.0 * k.sqrt())
            } else {
                random_bn(rng, oc, 0.0, k.sqrt())
            });
        }
        let dims = [(arch.fc_hidden, arch.flat_dim()), (arch.feature_dim, arch.fc_hidden)];
        let mut fc_weights = Vec::new();
        let mut fc_bn = Vec::new();
        for (o, i) in dims {
            fc_weights.push(random_bits(rng, vec![o, i]));
            fc_bn.push(random_bn(rng, o, 0.0, (i as f32).sqrt()));
        }
        BnEncoderParams { arch, conv_weights, conv_bn, fc_weights, fc_bn }
    }

    /// Float emulation: convolution over ±1.0 data (padding −1, or 0 for the
    /// image), batch norm, sign, dense max pool.
    pub fn forward_reference(&self, img: &Image8) -> Result<DenseTensor> {
        check_image(&self.arch, img)?;
        let mut x = img.to_dense();
        for i in 0..4 {
            let oc = self.arch.conv_channels[i];
            let p = ConvParams::new(unpack(&self.conv_weights[i]), DenseTensor::zeros([oc])?)?;
            let pad = if i == 0 { 0.0 } else { -1.0 };
            let pre = conv2d_float(&x, &p, pad)?;
            x = maxpool(&unpack(&sign_forward(&bn_forward(&pre, &self.conv_bn[i])?)))?;
        }
        let mut v = x.reshape([self.arch.flat_dim()])?;
        for i in 0..2 {
            let w = unpack(&self.fc_weights[i]);
            let p = FcParams::new(w, DenseTensor::zeros([self.fc_bn[i].channels()])?)?;
            let pre = fc_float(&v, &p)?;
            v = unpack(&sign_forward(&bn_forward(&pre, &self.fc_bn[i])?));
        }
        Ok(v)
    }

    /// Replaces every `sign(bn(·))` with its integer threshold.
    pub fn fold(&self) -> Result<EncoderParams> {
        self.validate()?;
        let convs = (0..4)
            .map(|i| BinConvParams::new(self.conv_weights[i].clone(), fold_bn_sign(&self.conv_bn[i])?))
            .collect::<Result<Vec<_>>>()?;
        let fcs = (0..2)
            .map(|i| BinFcParams::new(self.fc_weights[i].clone(), fold_bn_sign(&self.fc_bn[i])?))
            .collect::<Result<Vec<_>>>()?;
        EncoderParams::new(self.arch, convs, fcs)
    }
}

fn check_image(arch: &Architecture, img: &Image8) -> Result<()> {
    let s = arch.input_size;
    if img.channels() != arch.input_channels || img.height() != s || img.width() != s {
        return shape_err(format!(
            "encoder expects {}x{s}x{s} images, got {}x{}x{}",
            arch.input_channels,
            img.channels(),
            img.height(),
            img.width()
        ));
    }
    Ok(())
}

/// Deployed encoder: packed ±1 weights and folded thresholds. Kernel layouts
/// are prepared once at construction.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    arch: Architecture,
    convs: Vec<BinConvParams>,
    fcs: Vec<BinFcParams>,
    prepared_convs: Vec<PreparedConv>,
    prepared_fcs: Vec<PreparedFc>,
}

impl PartialEq for EncoderParams {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch && self.convs == other.convs && self.fcs == other.fcs
    }
}

impl EncoderParams {
    pub fn new(arch: Architecture, convs: Vec<BinConvParams>, fcs: Vec<BinFcParams>) -> Result<Self> {
        arch.validate()?;
        if convs.len() != 4 || fcs.len() != 2 {
            return shape_err("encoder needs 4 conv and 2 fc layers");
        }
        let ins = arch.conv_in_channels();
        for (i, c) in convs.iter().enumerate() {
            if c.out_channels() != arch.conv_channels[i] || c.in_channels() != ins[i] {
                return shape_err(format!(
                    "conv{} is {}->{}, architecture wants {}->{}",
                    i + 1,
                    c.in_channels(),
                    c.out_channels(),
                    ins[i],
                    arch.conv_channels[i]
                ));
            }
        }
        let fc_dims = [(arch.flat_dim(), arch.fc_hidden), (arch.fc_hidden, arch.feature_dim)];
        for (i, (f, (fi, fo))) in fcs.iter().zip(fc_dims).enumerate() {
            if f.in_dim() != fi || f.out_dim() != fo {
                return shape_err(format!(
                    "fc{} is {}->{}, architecture wants {fi}->{fo}",
                    i + 1,
                    f.in_dim(),
                    f.out_dim()
                ));
            }
        }
        Ok(EncoderParams {
            prepared_convs: convs.iter().map(PreparedConv::new).collect(),
            prepared_fcs: fcs.iter().map(PreparedFc::new).collect(),
            arch,
            convs,
            fcs,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }
    pub fn convs(&self) -> &[BinConvParams] {
        &self.convs
    }
    pub fn fcs(&self) -> &[BinFcParams] {
        &self.fcs
    }

    /// Packed path; returns the `feature_dim` output bits.
    pub fn forward_bits(&self, img: &Image8) -> Result<BitTensor> {
        check_image(&self.arch, img)?;
        let mut m = maxpool_packed(&self.prepared_convs[0].forward_image(img)?)?;
        for conv in &self.prepared_convs[1..] {
            m = maxpool_packed(&conv.forward(&m)?)?;
        }
        let mut v = m.flatten_chw();
        for fc in &self.prepared_fcs {
            v = fc.forward(&v)?;
        }
        Ok(v)
    }

    /// Packed path, features as ±1.0.
    pub fn forward(&self, img: &Image8) -> Result<DenseTensor> {
        Ok(unpack(&self.forward_bits(img)?))
    }

    /// Float reference for the folded model: GEMM convolution on ±1.0 data,
    /// threshold compare on the (integral) float pre-activations, dense pool.
    pub fn forward_float(&self, img: &Image8) -> Result<DenseTensor> {
        check_image(&self.arch, img)?;
        let mut x = img.to_dense();
        let mut cols = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            let (_, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2]);
            let g = kernels::ConvGeom { in_ch: c.in_channels(), out_ch: c.out_channels(), height: h, width: w };
            let wts: Vec<f32> = unpack(&c.weights).into_data();
            let mut pre = vec![0.0f32; g.out_len()];
            let pad = if i == 0 { 0.0 } else { -1.0 };
            kernels::conv3x3_forward(&g, x.data(), &wts, None, pad, &mut pre, &mut cols);
            threshold_in_place(&mut pre, h * w, &c.thresholds);
            x = maxpool(&DenseTensor::new([g.out_ch, h, w], pre)?)?;
        }
        let mut v = x.reshape([self.arch.flat_dim()])?;
        for f in &self.fcs {
            let wts = unpack(&f.weights).into_data();
            let mut pre = vec![0.0f32; f.out_dim()];
            kernels::matmul(f.out_dim(), f.in_dim(), 1, &wts, v.data(), &mut pre, false);
            threshold_in_place(&mut pre, 1, &f.thresholds);
            v = DenseTensor::new([f.out_dim()], pre)?;
        }
        Ok(v)
    }

    /// Order-sensitive FNV-1a digest of every weight word and threshold.
    pub fn fingerprint(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut eat = |v: u64| {
            for b in v.to_le_bytes() {
                h = (h ^ b as u64).wrapping_mul(0x100_0000_01b3);
            }
        };
        let layers = self
            .convs
            .iter()
            .map(|c| (&c.weights, &c.thresholds))
            .chain(self.fcs.iter().map(|f| (&f.weights, &f.thresholds)));
        for (w, t) in layers {
            w.dims().iter().for_each(|&d| eat(d as u64));
            w.words().iter().for_each(|&x| eat(x));
            t.tau.iter().zip(&t.flip).for_each(|(&a, &b)| eat(((a as u32) as u64) << 1 | b as u64));
        }
        h
    }
}

fn threshold_in_place(pre: &mut [f32], per_channel: usize, t: &ThresholdParams) {
    for (i, v) in pre.iter_mut().enumerate() {
        *v = if t.fire(i / per_channel, *v as i32) { 1.0 } else { -1.0 };
    }
}

/// Encodes an image tensor of integral pixel values `[c, h, w]` to ±1.0
/// features via the packed kernels.
pub fn encoder_forward(img: &DenseTensor, e: &EncoderParams) -> Result<DenseTensor> {
    e.forward(&Image8::from_dense(img)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random_image(rng: &mut impl Rng, arch: &Architecture) -> Image8 {
        let (c, s) = (arch.input_channels, arch.input_size);
        Image8::new(c, s, s, (0..c * s * s).map(|_| rng.random::<u8>()).collect()).unwrap()
    }

    #[test]
    fn packed_float_and_reference_agree_on_desk_geometry() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        let arch = Architecture::desk();
        let bn = BnEncoderParams::random(arch, &mut rng);
        let enc = bn.fold().unwrap();
        for _ in 0..10 {
            let img = random_image(&mut rng, &arch);
            let packed = enc.forward(&img).unwrap();
            assert_eq!(packed.dims(), &[64]);
            assert!(packed.data().iter().all(|&v| v == 1.0 || v == -1.0));
            assert_eq!(packed, bn.forward_reference(&img).unwrap());
            assert_eq!(packed, enc.forward_float(&img).unwrap());
        }
    }

    #[test]
    fn deterministic_and_shape_checked() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let arch = Architecture::desk();
        let enc = BnEncoderParams::random(arch, &mut rng).fold().unwrap();
        let img = random_image(&mut rng, &arch);
        assert_eq!(enc.forward(&img).unwrap(), enc.forward(&img.clone()).unwrap());
        assert!(enc.forward(&Image8::zeros(3, 63, 64)).is_err());
        assert_eq!(encoder_forward(&img.to_dense(), &enc).unwrap(), enc.forward(&img).unwrap());
    }

    #[test]
    fn fingerprint_tracks_parameters() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let arch = Architecture::desk();
        let mut bn = BnEncoderParams::random(arch, &mut rng);
        let a = bn.fold().unwrap();
        assert_eq!(a.fingerprint(), bn.fold().unwrap().fingerprint());
        bn.fc_bn[1].beta[0] += 100.0;
        assert_ne!(a.fingerprint(), bn.fold().unwrap().fingerprint());
    }

    #[test]
    fn wrong_layer_shapes_rejected() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let mut bn = BnEncoderParams::random(Architecture::desk(), &mut rng);
        bn.conv_weights.swap(1, 2);
        assert!(bn.fold().is_err());
    }
}
