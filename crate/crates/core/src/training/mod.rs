//! Autoencoder training: straight-through gradients for the binarized
//! encoder, exact gradients through the decoder, Adam on shadow weights.

mod dcae;
mod optim;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub use dcae::{mse, mse_grad, Activation, Anchor, Dcae, Grads, Param, RunningStats, Tape};
pub use optim::{Adam, AdamConfig};
pub use train::{dcae_backward, dcae_loss, train_dcae, EpochLoss, TrainConfig, TrainedDcae};

/// Which parts of the autoencoder are binarized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Nothing binarized; hard tanh activations.
    Full,
    /// Encoder and decoder binarized.
    Binary,
    /// Encoder binarized, decoder full precision.
    Partial,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Full, Mode::Partial, Mode::Binary];

    pub fn binary_encoder(self) -> bool {
        self != Mode::Full
    }

    pub fn binary_decoder(self) -> bool {
        self == Mode::Binary
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::Binary => "binary",
            Mode::Partial => "partial",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "full" => Ok(Mode::Full),
            "binary" => Ok(Mode::Binary),
            "partial" => Ok(Mode::Partial),
            other => Err(Error::Config(format!("unknown mode `{other}` (expected full|binary|partial)"))),
        }
    }
}
