use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::pool_out;

/// Encoder geometry: four 3×3 conv + 3×3/2 max-pool stages, then two
/// fully-connected layers down to the feature vector. The decoder mirrors it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_size: usize,
    pub input_channels: usize,
    pub conv_channels: [usize; 4],
    pub fc_hidden: usize,
    pub feature_dim: usize,
}

/// Which preset geometry to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizePreset {
    /// 142×142×3 input, 32/64/128/256 channels, FC 12544→1024→64.
    Paper,
    /// 64×64×3 input with proportionally narrower layers.
    Desk,
}

impl std::str::FromStr for SizePreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(SizePreset::Paper),
            "desk" => Ok(SizePreset::Desk),
            other => Err(Error::Config(format!("unknown size preset `{other}` (expected paper|desk)"))),
        }
    }
}

impl Architecture {
    pub fn paper() -> Self {
        Architecture {
            input_size: 142,
            input_channels: 3,
            conv_channels: [32, 64, 128, 256],
            fc_hidden: 1024,
            feature_dim: 64,
        }
    }

    pub fn desk() -> Self {
        Architecture {
            input_size: 64,
            input_channels: 3,
            conv_channels: [16, 32, 32, 64],
            fc_hidden: 256,
            feature_dim: 64,
        }
    }

    pub fn preset(p: SizePreset) -> Self {
        match p {
            SizePreset::Paper => Self::paper(),
            SizePreset::Desk => Self::desk(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.fc_hidden == 0 || self.feature_dim == 0 {
            return Err(Error::Config("architecture widths must be positive".into()));
        }
        if self.conv_channels.contains(&0) {
            return Err(Error::Config("conv channel counts must be positive".into()));
        }
        let mut s = self.input_size;
        for stage in 0..4 {
            if s < 3 {
                return Err(Error::Config(format!(
                    "input size {} is too small: stage {} pools a {s}x{s} map",
                    self.input_size,
                    stage + 1
                )));
            }
            s = pool_out(s);
        }
        Ok(())
    }

    /// Spatial side of each conv stage's output (before pooling); stage 0 is
    /// the input side.
    pub fn conv_sizes(&self) -> [usize; 4] {
        let mut out = [0; 4];
        let mut s = self.input_size;
        for o in out.iter_mut() {
            *o = s;
            s = pool_out(s);
        }
        out
    }

    /// Spatial side after each pool.
    pub fn pool_sizes(&self) -> [usize; 4] {
        let c = self.conv_sizes();
        [pool_out(c[0]), pool_out(c[1]), pool_out(c[2]), pool_out(c[3])]
    }

    /// Input channel count of each conv stage.
    pub fn conv_in_channels(&self) -> [usize; 4] {
        let c = self.conv_channels;
        [self.input_channels, c[0], c[1], c[2]]
    }

    /// Length of the flattened final feature map (FC1 input).
    pub fn flat_dim(&self) -> usize {
        let p = self.pool_sizes()[3];
        self.conv_channels[3] * p * p
    }

    /// Integer pre-activation bound `K` per encoder layer (window size; for
    /// the first layer multiplied by the 8-bit pixel maximum).
    pub fn reachable_bounds(&self) -> [i64; 6] {
        let i = self.conv_in_channels();
        [
            (i[0] * 9 * 255) as i64,
            (i[1] * 9) as i64,
            (i[2] * 9) as i64,
            (i[3] * 9) as i64,
            self.flat_dim() as i64,
            self.fc_hidden as i64,
        ]
    }

    /// Human-readable per-stage shapes (`[c, h, w]` or `[n]`), input first.
    pub fn stage_shapes(&self) -> Vec<Vec<usize>> {
        let mut v = vec![vec![self.input_channels, self.input_size, self.input_size]];
        for (c, p) in self.conv_channels.iter().zip(self.pool_sizes()) {
            v.push(vec![*c, p, p]);
        }
        v.push(vec![self.flat_dim()]);
        v.push(vec![self.fc_hidden]);
        v.push(vec![self.feature_dim]);
        v
    }
}
