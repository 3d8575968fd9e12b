//! Two-layer LSTM over visuo-motor vectors and its training.

mod lstm;
mod rollout;
mod sequence;
mod train;

pub use lstm::{lstm_cell_forward, LstmCellParams, LstmParams, LstmState, RolloutResult, GATES};
pub use rollout::{
    combined_loss, combined_loss_grad, loss_combined, loss_multi, loss_single, loss_state, multi_step_rollout,
    single_step_rollout, split_steps, LossParts, LossWeights,
};
pub use sequence::{encode_all, FeatureExtractor, VisuoMotorSequence, FEATURE_DIM, STEP_DIM};
pub use train::{train_lstm, LstmEpoch, LstmTrainConfig, TrainedLstm};
