//! Deployment artifacts, training checkpoints and model size accounting.

mod checkpoint;
mod packed;
mod size;

pub use checkpoint::{load_dcae, load_lstm, save_dcae, save_lstm, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use packed::{export_model, import_model, ManifestEntry, PackedModel, Precision, SegmentKind, PBDC_MAGIC, PBDC_VERSION};
pub use size::{size_report, LstmShape, SizeReport, SizeRow};
