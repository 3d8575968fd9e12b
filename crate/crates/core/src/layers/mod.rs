//! Layer kernels and the encoder/decoder composites.

pub mod arch;
pub mod bn;
pub mod decoder;
pub mod encoder;
pub mod float;
pub mod packed;

pub use arch::{Architecture, SizePreset};
pub use bn::{bn_forward, fold_bn_sign, BnParams, ThresholdParams};
pub use decoder::{decoder_forward, DecoderParams};
pub use encoder::{encoder_forward, BnEncoderParams, EncoderParams};
pub use float::{conv2d_float, fc_float, hardtanh, logistic, maxpool, resize_nearest, ConvParams, FcParams};
pub use packed::{
    conv2d_binary, conv2d_binary_image, conv2d_binary_image_preact, conv2d_binary_preact, fc_binary, fc_binary_preact,
    maxpool_binary, BinConvParams, BinFcParams,
};
