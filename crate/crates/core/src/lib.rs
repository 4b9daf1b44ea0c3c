//! Structure-aware non-autoregressive Transformer (SNAT) for machine
//! translation, built on a small reverse-mode autodiff tensor library.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense tensors and the gradient tape.
//! * [`text`]: BPE, vocabularies, POS/NER label schemes, CoNLL ingestion,
//!   the toy annotator and word–label masks.
//! * [`model`]: the SNAT encoder/decoder and the autoregressive teacher.
//! * [`copy`]: decoder-input construction (uniform and structure-aware copy).
//! * [`objective`]: label, joint word and alignment losses.
//! * [`train`]: optimizer, schedules, training loops, distillation, checkpoints.
//! * [`infer`]: length candidates, parallel decoding and teacher rescoring.
//! * [`eval`]: BLEU, latency benchmark, length buckets and ablations.
//! * [`synth`]: seeded synthetic parallel corpora with real label signal.

pub mod copy;
pub mod error;
pub mod eval;
pub mod infer;
pub mod model;
pub mod objective;
pub mod synth;
pub mod tensor;
pub mod text;
pub mod train;

pub use error::{Error, Result};
