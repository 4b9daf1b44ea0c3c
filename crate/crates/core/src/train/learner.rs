use crate::copy::example_seed;
use crate::model::{
    teacher_io, Checkpoint, DecoderVars, ParamStore, SeqBatch, SnatModel, TeacherModel,
};
use crate::objective::{check_md, total_loss_from, DenseMasks, LossBreakdown, ObjectiveConfig};
use crate::tensor::{Scalar, Tensor};
use crate::text::vocab::{BOS, PAD};
use crate::Result;

use super::data::{snat_batch, Example};

/// Epoch value used for copy seeds during evaluation, so dev decoder
/// inputs never change between evaluations.
const EVAL_EPOCH: u64 = u64::MAX - 1;

/// Result of one batch.
#[derive(Clone, Debug)]
pub struct BatchResult {
    pub loss: LossBreakdown,
    /// Supervised target tokens in the batch.
    pub tokens: usize,
    /// Tokens whose argmax word matches the gold word.
    pub correct: usize,
}

/// What the generic training loop needs from a model and its objective.
pub trait Learner {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    /// Loss and parameter gradients for a training batch.
    fn grad(
        &self,
        data: &[Example],
        idx: &[usize],
        seed: u64,
        epoch: u64,
        step: u64,
    ) -> Result<(BatchResult, Vec<Vec<f32>>)>;
    /// Loss and accuracy without dropout or gradients.
    fn eval(&self, data: &[Example], idx: &[usize], seed: u64) -> Result<BatchResult>;
    fn checkpoint(&self, step: u64) -> Checkpoint;
}

fn argmax_hits(probs: &Tensor<f32>, gold: &[Option<usize>]) -> usize {
    let mut hits = 0;
    for (r, g) in gold.iter().enumerate() {
        let Some(g) = *g else { continue };
        let row = probs.row(r);
        let mut best = PAD;
        let mut bv = f32::NEG_INFINITY;
        for (i, v) in row.iter().enumerate() {
            if i != PAD && i != BOS && *v > bv {
                best = i;
                bv = *v;
            }
        }
        hits += usize::from(best == g);
    }
    hits
}

fn dropout_seed(seed: u64, step: u64) -> u64 {
    example_seed(seed ^ 0xD50F, step, 0)
}

pub struct SnatLearner {
    pub model: SnatModel,
    pub objective: ObjectiveConfig,
    masks: DenseMasks<f32>,
}

impl SnatLearner {
    pub fn new(
        model: SnatModel,
        masks: DenseMasks<f32>,
        objective: ObjectiveConfig,
    ) -> Result<Self> {
        if let Some(md) = objective.md {
            check_md(md, model.config().decoder_layers)?;
        }
        Ok(SnatLearner {
            model,
            objective,
            masks,
        })
    }

    fn run(
        &self,
        data: &[Example],
        idx: &[usize],
        seed: u64,
        epoch: u64,
        train: Option<u64>,
    ) -> Result<(BatchResult, Option<Vec<Vec<f32>>>)> {
        let batch = snat_batch(data, idx, seed, epoch)?;
        let mut g = self
            .model
            .graph(train.is_some(), train.map_or(0, |s| dropout_seed(seed, s)));
        let enc = self.model.encode_graph(&mut g, &batch.src)?;
        let DecoderVars { layers, zf } = self
            .model
            .decode_graph(&mut g, &batch.dec, enc, &batch.src)?;
        let (loss, bd) = total_loss_from(
            &mut g,
            &self.model,
            &batch,
            &self.masks,
            &self.objective,
            &layers,
            zf,
        )?;
        let gold = batch.tgt.targets(&batch.tgt.words);
        let correct = if train.is_none() {
            let wl = self.model.word_logits(&mut g, zf)?;
            argmax_hits(g.tape.value(wl), &gold)
        } else {
            0
        };
        let grads = if train.is_some() && bd.total.is_finite() {
            g.tape.backward(loss)?;
            Some(g.param_grads())
        } else {
            None
        };
        Ok((
            BatchResult {
                loss: bd,
                tokens: batch.tgt.num_valid(),
                correct,
            },
            grads,
        ))
    }
}

impl Learner for SnatLearner {
    fn params(&self) -> &ParamStore {
        self.model.params()
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        self.model.params_mut()
    }

    fn grad(
        &self,
        data: &[Example],
        idx: &[usize],
        seed: u64,
        epoch: u64,
        step: u64,
    ) -> Result<(BatchResult, Vec<Vec<f32>>)> {
        let (r, g) = self.run(data, idx, seed, epoch, Some(step))?;
        Ok((r, g.unwrap_or_default()))
    }

    fn eval(&self, data: &[Example], idx: &[usize], seed: u64) -> Result<BatchResult> {
        Ok(self.run(data, idx, seed, EVAL_EPOCH, None)?.0)
    }

    fn checkpoint(&self, step: u64) -> Checkpoint {
        Checkpoint::from_snat(&self.model, step)
    }
}

/// Autoregressive teacher trained with label-smoothed cross-entropy on
/// subword ids (labels are ignored).
pub struct TeacherLearner {
    pub model: TeacherModel,
    pub smoothing: f64,
}

impl TeacherLearner {
    fn run(
        &self,
        data: &[Example],
        idx: &[usize],
        seed: u64,
        train: Option<u64>,
    ) -> Result<(BatchResult, Option<Vec<Vec<f32>>>)> {
        let src: Vec<&[usize]> = idx
            .iter()
            .map(|&i| data[i].src.subwords.as_slice())
            .collect();
        let io: Vec<(Vec<usize>, Vec<usize>)> = idx
            .iter()
            .map(|&i| teacher_io(&data[i].tgt.subwords))
            .collect();
        let ins: Vec<&[usize]> = io.iter().map(|(a, _)| a.as_slice()).collect();
        let outs: Vec<&[usize]> = io.iter().map(|(_, b)| b.as_slice()).collect();
        let src = SeqBatch::from_ids(&src);
        let tin = SeqBatch::from_ids(&ins);
        let tout = SeqBatch::from_ids(&outs);
        let gold = tout.targets(&tout.words);
        let mut g = self
            .model
            .graph(train.is_some(), train.map_or(0, |s| dropout_seed(seed, s)));
        let logits = self.model.forward_graph(&mut g, &src, &tin)?;
        let smoothing = if train.is_some() { self.smoothing } else { 0.0 };
        let loss = g.tape.cross_entropy_logits(logits, &gold, smoothing)?;
        let total = g.tape.value(loss).item().as_f64();
        let correct = if train.is_none() {
            argmax_hits(g.tape.value(logits), &gold)
        } else {
            0
        };
        let grads = if train.is_some() && total.is_finite() {
            g.tape.backward(loss)?;
            Some(g.param_grads())
        } else {
            None
        };
        let bd = LossBreakdown {
            word_loss: total,
            total,
            ..Default::default()
        };
        Ok((
            BatchResult {
                loss: bd,
                tokens: tout.num_valid(),
                correct,
            },
            grads,
        ))
    }
}

impl Learner for TeacherLearner {
    fn params(&self) -> &ParamStore {
        self.model.params()
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        self.model.params_mut()
    }

    fn grad(
        &self,
        data: &[Example],
        idx: &[usize],
        seed: u64,
        _epoch: u64,
        step: u64,
    ) -> Result<(BatchResult, Vec<Vec<f32>>)> {
        let (r, g) = self.run(data, idx, seed, Some(step))?;
        Ok((r, g.unwrap_or_default()))
    }

    fn eval(&self, data: &[Example], idx: &[usize], seed: u64) -> Result<BatchResult> {
        Ok(self.run(data, idx, seed, None)?.0)
    }

    fn checkpoint(&self, step: u64) -> Checkpoint {
        Checkpoint::from_teacher(&self.model, step)
    }
}
