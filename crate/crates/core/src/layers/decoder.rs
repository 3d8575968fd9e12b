//! Training-time decoder mirroring the encoder: two dense layers, reshape,
//! then four nearest-resize + 3×3 conv stages back to the input size.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, Result};
use crate::layers::arch::Architecture;
use crate::layers::bn::{bn_forward, BnParams};
use crate::layers::float::{conv2d_float, fc_float, hardtanh, logistic, resize_nearest, ConvParams, FcParams};
use crate::tensor::{sign_forward, unpack, DenseTensor};

/// Decoder weights and batch-norm statistics.
///
/// Hidden layers have no bias (batch norm follows); the output conv has a
/// bias and a logistic. With `binary` set, every weight is used through
/// `sign` and hidden activations are `sign` instead of hard tanh.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub arch: Architecture,
    pub binary: bool,
    /// `[fc_hidden, feature_dim]`, `[flat_dim, fc_hidden]`.
    pub fcs: Vec<FcParams>,
    pub fc_bn: Vec<BnParams>,
    /// `c3→c2`, `c2→c1`, `c1→c0`, `c0→input_channels`.
    pub convs: Vec<ConvParams>,
    pub conv_bn: Vec<BnParams>,
}

impl DecoderParams {
    /// `[out, in]` channel pairs of the four conv stages.
    pub fn conv_shapes(arch: &Architecture) -> [(usize, usize); 4] {
        let c = arch.conv_channels;
        [(c[2], c[3]), (c[1], c[2]), (c[0], c[1]), (arch.input_channels, c[0])]
    }

    /// Output side of each conv stage.
    pub fn stage_sizes(arch: &Architecture) -> [usize; 4] {
        let s = arch.conv_sizes();
        [s[3], s[2], s[1], s[0]]
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.arch;
        a.validate()?;
        if self.fcs.len() != 2 || self.fc_bn.len() != 2 || self.convs.len() != 4 || self.conv_bn.len() != 3 {
            return shape_err("decoder needs 2 fc layers, 4 conv layers and 5 batch norms");
        }
        let fc = [(a.fc_hidden, a.feature_dim), (a.flat_dim(), a.fc_hidden)];
        for (i, (o, n)) in fc.into_iter().enumerate() {
            if self.fcs[i].out_dim() != o || self.fcs[i].in_dim() != n || self.fc_bn[i].channels() != o {
                return shape_err(format!("decoder fc{} must be {n}->{o}", i + 1));
            }
        }
        for (i, (o, n)) in Self::conv_shapes(a).into_iter().enumerate() {
            let p = &self.convs[i];
            if p.out_channels() != o || p.in_channels() != n {
                return shape_err(format!("decoder conv{} must be {n}->{o}", i + 1));
            }
            if i < 3 && self.conv_bn[i].channels() != o {
                return shape_err(format!("decoder conv{} batch norm must have {o} channels", i + 1));
            }
        }
        Ok(())
    }

    /// All weights and biases zero, identity batch norm.
    pub fn zeros(arch: Architecture, binary: bool) -> Result<Self> {
        Self::build(arch, binary, |dims| DenseTensor::zeros(dims))
    }

    /// Variance-scaled normal weights.
    pub fn random(arch: Architecture, binary: bool, rng: &mut impl Rng) -> Result<Self> {
        Self::build(arch, binary, |dims: Vec<usize>| {
            let fan_in: usize = dims[1..].iter().product();
            let d = Normal::new(0.0f32, (1.0 / fan_in as f32).sqrt()).expect("positive std");
            let n = dims.iter().product();
            DenseTensor::new(dims, (0..n).map(|_| d.sample(rng)).collect())
        })
    }

    fn build(arch: Architecture, binary: bool, mut weights: impl FnMut(Vec<usize>) -> Result<DenseTensor>) -> Result<Self> {
        arch.validate()?;
        let mut fcs = Vec::new();
        let mut fc_bn = Vec::new();
        for (o, n) in [(arch.fc_hidden, arch.feature_dim), (arch.flat_dim(), arch.fc_hidden)] {
            fcs.push(FcParams::new(weights(vec![o, n])?, DenseTensor::zeros([o])?)?);
            fc_bn.push(BnParams::identity(o, 1e-5));
        }
        let mut convs = Vec::new();
        let mut conv_bn = Vec::new();
        for (i, (o, n)) in Self::conv_shapes(&arch).into_iter().enumerate() {
            convs.push(ConvParams::new(weights(vec![o, n, 3, 3])?, DenseTensor::zeros([o])?)?);
            if i < 3 {
                conv_bn.push(BnParams::identity(o, 1e-5));
            }
        }
        Ok(DecoderParams { arch, binary, fcs, fc_bn, convs, conv_bn })
    }

    fn effective(&self, w: &DenseTensor) -> DenseTensor {
        if self.binary {
            unpack(&sign_forward(w))
        } else {
            w.clone()
        }
    }

    fn activate(&self, x: &DenseTensor) -> DenseTensor {
        if self.binary {
            unpack(&sign_forward(x))
        } else {
            hardtanh(x)
        }
    }
}

/// Reconstructs a `[c, s, s]` image in `[0, 1]` from a feature vector.
pub fn decoder_forward(feat: &DenseTensor, d: &DecoderParams) -> Result<DenseTensor> {
    d.validate()?;
    let a = &d.arch;
    if feat.len() != a.feature_dim {
        return shape_err(format!("decoder expects {} features, got {}", a.feature_dim, feat.len()));
    }
    let mut v = feat.clone().reshape([a.feature_dim])?;
    for (p, bn) in d.fcs.iter().zip(&d.fc_bn) {
        let p = FcParams::new(d.effective(&p.weights), p.bias.clone())?;
        v = d.activate(&bn_forward(&fc_float(&v, &p)?, bn)?);
    }
    let p = a.pool_sizes()[3];
    let mut x = v.reshape([a.conv_channels[3], p, p])?;
    let pad = if d.binary { -1.0 } else { 0.0 };
    let sizes = DecoderParams::stage_sizes(a);
    for (i, conv) in d.convs.iter().enumerate() {
        x = resize_nearest(&x, sizes[i])?;
        let p = ConvParams::new(d.effective(&conv.weights), conv.bias.clone())?;
        let pre = conv2d_float(&x, &p, pad)?;
        x = match d.conv_bn.get(i) {
            Some(bn) => d.activate(&bn_forward(&pre, bn)?),
            None => logistic(&pre),
        };
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn zero_decoder_outputs_half() {
        let d = DecoderParams::zeros(Architecture::desk(), false).unwrap();
        let feat = DenseTensor::filled([64], 1.0).unwrap();
        let y = decoder_forward(&feat, &d).unwrap();
        assert_eq!(y.dims(), &[3, 64, 64]);
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn output_in_unit_range_and_deterministic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for binary in [false, true] {
            let d = DecoderParams::random(Architecture::desk(), binary, &mut rng).unwrap();
            let feat = DenseTensor::new([64], (0..64).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect()).unwrap();
            let a = decoder_forward(&feat, &d).unwrap();
            assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
            let b = decoder_forward(&feat, &d).unwrap();
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn paper_geometry_output_shape() {
        let d = DecoderParams::zeros(Architecture::paper(), false).unwrap();
        let y = decoder_forward(&DenseTensor::zeros([64]).unwrap(), &d).unwrap();
        assert_eq!(y.dims(), &[3, 142, 142]);
    }

    #[test]
    fn wrong_feature_length_rejected() {
        let d = DecoderParams::zeros(Architecture::desk(), false).unwrap();
        assert!(decoder_forward(&DenseTensor::zeros([63]).unwrap(), &d).is_err());
    }
}
