use crate::error::{shape_err, Error, Result};
use crate::evalsynth::dataset::{RawSequence, JOINTS};
use crate::evalsynth::metrics::{capped, joint_mse, psnr};
use crate::image::Image8;
use crate::seqmodel::{multi_step_rollout, FeatureExtractor, LstmParams, VisuoMotorSequence};
use crate::training::TrainedDcae;

/// Produces an 8-bit reconstruction of a frame.
pub trait ImageReconstructor {
    fn reconstruct(&self, img: &Image8) -> Result<Image8>;
}

impl ImageReconstructor for TrainedDcae {
    fn reconstruct(&self, img: &Image8) -> Result<Image8> {
        TrainedDcae::reconstruct(self, img)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EvalSummary {
    pub sequences: usize,
    pub frames: usize,
    /// Mean capped PSNR over all frames; absent without a decoder.
    pub mean_psnr_db: Option<f64>,
    /// Per joint, degrees², over every predicted step.
    pub per_joint_mse_deg2: Vec<f64>,
    pub joint_mse_deg2: f64,
    pub joint_rmse_deg: f64,
    /// Squared error of the gripper command.
    pub gripper_mse: f64,
}

/// Free-running predictions of a whole sequence from its first step.
pub fn rollout_sequence(seq: &VisuoMotorSequence, lstm: &LstmParams<f32>) -> Result<Vec<Vec<f32>>> {
    Ok(multi_step_rollout(seq.step(0), seq.len(), lstm)?.outputs)
}

/// Rolls every test sequence out from its first step only and scores the
/// predicted joints; reconstructs every frame when a decoder is given.
pub fn evaluate_pipeline(
    fx: &dyn FeatureExtractor,
    recon: Option<&dyn ImageReconstructor>,
    lstm: &LstmParams<f32>,
    test: &[RawSequence],
) -> Result<EvalSummary> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let off = fx.feature_dim();
    if lstm.dim() != off + JOINTS + 1 {
        return shape_err(format!("sequence model width {} does not match features {off} + motor", lstm.dim()));
    }
    let mut per_joint = vec![0.0; JOINTS];
    let mut gripper = 0.0;
    let mut steps = 0usize;
    let mut frames = 0usize;
    let mut psnr_sum = 0.0;
    for raw in test {
        let seq = VisuoMotorSequence::from_raw(raw, fx)?;
        let y = rollout_sequence(&seq, lstm)?;
        for (t, yt) in y.iter().enumerate().skip(1) {
            let truth = seq.step(t);
            for j in 0..JOINTS {
                per_joint[j] += joint_mse(&yt[off + j..][..1], &truth[off + j..][..1])?;
            }
            gripper += (yt[off + JOINTS] as f64 - truth[off + JOINTS] as f64).powi(2);
            steps += 1;
        }
        if let Some(r) = recon {
            for img in &raw.images {
                psnr_sum += capped(psnr(img, &r.reconstruct(img)?, 255.0)?);
            }
        }
        frames += raw.len();
    }
    let n = steps.max(1) as f64;
    per_joint.iter_mut().for_each(|v| *v /= n);
    let joint_mse_deg2 = per_joint.iter().sum::<f64>() / JOINTS as f64;
    Ok(EvalSummary {
        sequences: test.len(),
        frames,
        mean_psnr_db: recon.map(|_| psnr_sum / frames as f64),
        per_joint_mse_deg2: per_joint,
        joint_mse_deg2,
        joint_rmse_deg: joint_mse_deg2.sqrt(),
        gripper_mse: gripper / n,
    })
}
