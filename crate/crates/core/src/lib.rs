//! Partially binarized convolutional autoencoder with a recurrent
//! visuo-motor predictor.
//!
//! The encoder runs on bit-packed ±1 weights and activations (XNOR and
//! popcount, batch norm folded into integer thresholds); the decoder exists
//! only for training. Encoded image features, joint angles and a gripper
//! command form the input of a two-layer LSTM that predicts the next step.

pub mod cli;
pub mod config;
pub mod error;
pub mod evalsynth;
pub mod image;
pub mod kernels;
pub mod layers;
pub mod modelio;
pub mod popcount;
pub mod seqmodel;
pub mod tensor;
pub mod training;
mod wire;

pub use error::{Error, Result};
pub use image::Image8;
pub use tensor::{pack, sign_forward, ste_backward, unpack, xnor_popcount_dot, BitTensor, DenseTensor, Shape};
