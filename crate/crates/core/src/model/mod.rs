//! MLP encoders, odd-one-out scoring, base-model training and checkpoints.

mod arch;
mod checkpoint;
mod data;
mod scoring;
mod train;

pub use arch::{Architecture, BatchInput, Layer, Model, ModelSpec, ParamKind, Parameter};
pub(crate) use checkpoint::{read_container, write_container};
pub use checkpoint::{header_for, load_checkpoint, save_checkpoint, CheckpointHeader, TensorInfo};
pub use data::EncodedDataset;
pub use scoring::{batch_logits, cross_entropy, odd_one_out_logits, predict, similarity_scores};
pub use train::{
    evaluate, evaluate_detailed, fit, logits, predictions, read_training_log, train_base, write_training_log,
    EpochLog, Evaluation, TrainConfig, TrainedModel, EVAL_BATCH,
};
