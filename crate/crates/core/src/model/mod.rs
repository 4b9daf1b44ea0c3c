//! The SNAT encoder/decoder, the autoregressive teacher, and checkpoints.

pub mod batch;
pub mod checkpoint;
pub mod config;
pub mod counters;
mod layers;
pub mod params;
pub mod snat;
pub mod teacher;

pub use batch::SeqBatch;
pub use checkpoint::{Checkpoint, ModelKind};
pub use config::ModelConfig;
pub use counters::CallCounters;
pub use layers::sinusoidal;
pub use params::{Graph, ParamId, ParamStore};
pub use snat::{DecoderVars, EncodedSource, Prediction, SnatModel};
pub use teacher::{teacher_io, Greedy, TeacherModel};
