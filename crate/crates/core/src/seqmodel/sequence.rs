use crate::error::{shape_err, Result};
use crate::evalsynth::{io, RawSequence, MOTOR_DIM};
use crate::image::Image8;
use crate::layers::EncoderParams;
use crate::training::TrainedDcae;

/// Image features followed by the motor vector.
pub const FEATURE_DIM: usize = 64;
pub const STEP_DIM: usize = FEATURE_DIM + MOTOR_DIM;

/// Anything that turns a camera frame into a feature vector.
pub trait FeatureExtractor {
    fn feature_dim(&self) -> usize;
    fn features(&self, img: &Image8) -> Result<Vec<f32>>;
}

impl FeatureExtractor for EncoderParams {
    fn feature_dim(&self) -> usize {
        self.arch().feature_dim
    }
    fn features(&self, img: &Image8) -> Result<Vec<f32>> {
        Ok(self.forward(img)?.into_data())
    }
}

impl FeatureExtractor for TrainedDcae {
    fn feature_dim(&self) -> usize {
        self.arch().feature_dim
    }
    fn features(&self, img: &Image8) -> Result<Vec<f32>> {
        TrainedDcae::features(self, img)
    }
}

/// `N` steps of `[features | joints | gripper]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VisuoMotorSequence {
    dim: usize,
    data: Vec<f32>,
}

impl VisuoMotorSequence {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 || data.len() / dim < 2 {
            return shape_err(format!("a sequence needs at least 2 rows of {dim}, got {} values", data.len()));
        }
        Ok(VisuoMotorSequence { dim, data })
    }

    /// Encodes every frame of `raw` with `fx`.
    pub fn from_raw(raw: &RawSequence, fx: &dyn FeatureExtractor) -> Result<Self> {
        let dim = fx.feature_dim() + MOTOR_DIM;
        let mut data = Vec::with_capacity(raw.len() * dim);
        for (img, m) in raw.images.iter().zip(&raw.motor) {
            let f = fx.features(img)?;
            if f.len() != fx.feature_dim() {
                return shape_err("feature extractor returned the wrong width");
            }
            data.extend(f);
            data.extend_from_slice(m);
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn step(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..][..self.dim]
    }
    /// Motor part of step `t`.
    pub fn motor(&self, t: usize) -> &[f32] {
        &self.step(t)[self.dim - MOTOR_DIM..]
    }

    pub fn to_vmsq(&self) -> Vec<u8> {
        io::encode_sequence(self.dim, &self.data).expect("rows are whole")
    }

    pub fn from_vmsq(bytes: &[u8]) -> Result<Self> {
        let (dim, data) = io::decode_sequence(bytes)?;
        Self::new(dim, data)
    }
}

pub fn encode_all(raw: &[RawSequence], fx: &dyn FeatureExtractor) -> Result<Vec<VisuoMotorSequence>> {
    raw.iter().map(|r| VisuoMotorSequence::from_raw(r, fx)).collect()
}
