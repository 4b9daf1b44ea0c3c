//! Optimization: AdamW, learning-rate schedule, token-bucketed batching,
//! the resumable training loop for both models, sequence-level
//! distillation and checkpoint averaging.

pub mod config;
pub mod data;
pub mod distill;
pub mod learner;
pub mod optim;
pub mod trainer;

pub use config::TrainConfig;
pub use data::{
    epoch_batches, eval_batches, prepare_corpus, snat_batch, token_batches, usable, Example,
    PreparedCorpus,
};
pub use distill::{average_checkpoints, distill, max_decode_len, DistilledPair};
pub use learner::{BatchResult, Learner, SnatLearner, TeacherLearner};
pub use optim::AdamW;
pub use trainer::{evaluate, write_log, LogRow, Progress, StopReason, Trainer, LOG_HEADER};
