use std::io::Write;

use crate::model::checkpoint::OPT_PREFIX;
use crate::model::{Checkpoint, ParamStore};
use crate::objective::LossBreakdown;
use crate::{Error, Result};

use super::config::TrainConfig;
use super::data::{epoch_batches, eval_batches, Example};
use super::learner::Learner;
use super::optim::AdamW;

const BEST_PREFIX: &str = "best.";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxSteps,
    EarlyStopping,
    AccuracyReached,
}

/// Loop position and early-stopping state; everything needed to resume.
#[derive(Clone, Debug, PartialEq)]
pub struct Progress {
    pub step: usize,
    pub epoch: u64,
    /// Next batch within the current epoch.
    pub cursor: usize,
    pub best_dev: f64,
    pub best_step: usize,
    pub bad_evals: usize,
    pub stop: Option<StopReason>,
}

impl Default for Progress {
    fn default() -> Self {
        Progress {
            step: 0,
            epoch: 0,
            cursor: 0,
            best_dev: f64::INFINITY,
            best_step: 0,
            bad_evals: 0,
            stop: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub epoch: u64,
    pub split: &'static str,
    pub lr: f64,
    pub loss: LossBreakdown,
    pub accuracy: Option<f64>,
}

pub const LOG_HEADER: &str =
    "step\tepoch\tsplit\tlr\tword_loss\tpos_label_loss\tner_label_loss\talignment_reg\ttotal\taccuracy";

impl LogRow {
    pub fn tsv(&self) -> String {
        let l = &self.loss;
        format!(
            "{}\t{}\t{}\t{:.3e}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}",
            self.step,
            self.epoch,
            self.split,
            self.lr,
            l.word_loss,
            l.pos_label_loss,
            l.ner_label_loss,
            l.alignment_reg,
            l.total,
            self.accuracy.map_or("-".to_string(), |a| format!("{a:.4}"))
        )
    }
}

pub fn write_log<W: Write>(mut w: W, rows: &[LogRow]) -> Result<()> {
    writeln!(w, "{LOG_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.tsv())?;
    }
    Ok(())
}

/// Token-weighted mean loss and accuracy over a data set.
pub fn evaluate<L: Learner>(
    learner: &L,
    data: &[Example],
    max_tokens: usize,
    seed: u64,
) -> Result<(LossBreakdown, f64)> {
    let mut acc = LossBreakdown::default();
    let (mut tokens, mut correct) = (0usize, 0usize);
    for idx in eval_batches(data, max_tokens) {
        let r = learner.eval(data, &idx, seed)?;
        acc.accumulate(&r.loss, r.tokens as f64);
        tokens += r.tokens;
        correct += r.correct;
    }
    if tokens == 0 {
        return Ok((acc, 0.0));
    }
    Ok((
        acc.scaled(1.0 / tokens as f64),
        correct as f64 / tokens as f64,
    ))
}

/// AdamW training with a warm-up/decay schedule, token-bucketed batches,
/// periodic dev evaluation and early stopping. Deterministic given the
/// config seed; a run resumed from [`Trainer::checkpoint`] follows the same
/// trajectory as an uninterrupted one.
pub struct Trainer<L: Learner> {
    pub learner: L,
    pub cfg: TrainConfig,
    pub opt: AdamW,
    pub progress: Progress,
    pub log: Vec<LogRow>,
    best: Option<ParamStore>,
    schedule: Option<(u64, Vec<Vec<usize>>)>,
}

impl<L: Learner> Trainer<L> {
    pub fn new(learner: L, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let opt = AdamW::new(
            learner.params(),
            cfg.beta1,
            cfg.beta2,
            cfg.adam_eps,
            cfg.weight_decay,
        );
        Ok(Trainer {
            learner,
            cfg,
            opt,
            progress: Progress::default(),
            log: Vec::new(),
            best: None,
            schedule: None,
        })
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`];
    /// `learner` must already hold the checkpoint's parameters.
    pub fn resume(learner: L, cfg: TrainConfig, ck: &Checkpoint) -> Result<Self> {
        let mut t = Self::new(learner, cfg)?;
        t.opt.restore(ck, t.learner.params())?;
        let get = |k: &str| -> Result<&String> {
            ck.meta
                .get(k)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks training state {k}")))
        };
        let num = |k: &str| -> Result<u64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Format(format!("bad value for {k}")))
        };
        t.opt.t = num("train.adam_t")?;
        let best_dev = u64::from_str_radix(get("train.best_dev")?, 16)
            .map_err(|_| Error::Format("bad value for train.best_dev".into()))?;
        t.progress = Progress {
            step: num("train.step")? as usize,
            epoch: num("train.epoch")?,
            cursor: num("train.cursor")? as usize,
            best_dev: f64::from_bits(best_dev),
            best_step: num("train.best_step")? as usize,
            bad_evals: num("train.bad_evals")? as usize,
            stop: None,
        };
        let names = t.learner.params().names().to_vec();
        let mut best = Vec::new();
        for n in names {
            match ck.block(&format!("{OPT_PREFIX}{BEST_PREFIX}{n}")) {
                Some(b) => best.push((n, b.clone())),
                None => break,
            }
        }
        if !best.is_empty() {
            if best.len() != t.learner.params().len() {
                return Err(Error::Format("incomplete best-parameter snapshot".into()));
            }
            t.best = Some(ParamStore::from_named(best));
        }
        Ok(t)
    }

    /// Model parameters plus optimizer moments, best-so-far parameters and
    /// loop position.
    pub fn checkpoint(&self) -> Checkpoint {
        let p = &self.progress;
        let mut ck = self.learner.checkpoint(p.step as u64);
        ck.blocks.extend(self.opt.to_blocks(self.learner.params()));
        if let Some(b) = &self.best {
            for (n, t) in b.named() {
                ck.blocks
                    .push((format!("{OPT_PREFIX}{BEST_PREFIX}{n}"), t.clone()));
            }
        }
        let kv = [
            ("train.step", p.step.to_string()),
            ("train.epoch", p.epoch.to_string()),
            ("train.cursor", p.cursor.to_string()),
            ("train.best_dev", format!("{:016x}", p.best_dev.to_bits())),
            ("train.best_step", p.best_step.to_string()),
            ("train.bad_evals", p.bad_evals.to_string()),
            ("train.adam_t", self.opt.t.to_string()),
            ("train.seed", self.cfg.seed.to_string()),
        ];
        for (k, v) in kv {
            ck.meta.insert(k.to_string(), v);
        }
        ck
    }

    /// Parameters with the best dev loss so far, or the current ones.
    pub fn best_params(&self) -> &ParamStore {
        self.best.as_ref().unwrap_or(self.learner.params())
    }

    /// Copies the best parameters into the learner.
    pub fn restore_best(&mut self) {
        if let Some(b) = self.best.take() {
            *self.learner.params_mut() = b;
        }
    }

    fn batches(&mut self, train: &[Example]) -> &[Vec<usize>] {
        let epoch = self.progress.epoch;
        if self.schedule.as_ref().map(|s| s.0) != Some(epoch) {
            let b = epoch_batches(train, self.cfg.max_tokens, self.cfg.seed, epoch);
            self.schedule = Some((epoch, b));
        }
        &self.schedule.as_ref().expect("schedule").1
    }

    /// One optimizer update.
    pub fn step(&mut self, train: &[Example]) -> Result<LossBreakdown> {
        if train.is_empty() {
            return Err(Error::Data("empty training set".into()));
        }
        if self.progress.cursor >= self.batches(train).len() {
            self.progress.epoch += 1;
            self.progress.cursor = 0;
        }
        let cursor = self.progress.cursor;
        let idx = self.batches(train)[cursor].clone();
        let step = self.progress.step;
        let lr = self.cfg.lr_at(step);
        let (r, grads) =
            self.learner
                .grad(train, &idx, self.cfg.seed, self.progress.epoch, step as u64)?;
        let finite =
            r.loss.total.is_finite() && grads.iter().all(|g| g.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::Divergence {
                step,
                msg: format!("non-finite loss or gradient (loss {})", r.loss.total),
            });
        }
        self.opt.update(self.learner.params_mut(), &grads, lr);
        self.progress.cursor += 1;
        self.progress.step += 1;
        if self.progress.step.is_multiple_of(self.cfg.log_every) {
            self.log.push(LogRow {
                step: self.progress.step,
                epoch: self.progress.epoch,
                split: "train",
                lr,
                loss: r.loss,
                accuracy: None,
            });
        }
        Ok(r.loss)
    }

    /// Dev evaluation with early-stopping bookkeeping, plus the optional
    /// training-accuracy stop check.
    pub fn evaluate(&mut self, train: &[Example], dev: &[Example]) -> Result<()> {
        let step = self.progress.step;
        let lr = self.cfg.lr_at(step.saturating_sub(1));
        if !dev.is_empty() {
            let (loss, acc) = evaluate(&self.learner, dev, self.cfg.max_tokens, self.cfg.seed)?;
            if !loss.total.is_finite() {
                return Err(Error::Divergence {
                    step,
                    msg: "non-finite dev loss".into(),
                });
            }
            self.log.push(LogRow {
                step,
                epoch: self.progress.epoch,
                split: "dev",
                lr,
                loss,
                accuracy: Some(acc),
            });
            let p = &mut self.progress;
            if loss.total < p.best_dev {
                p.best_dev = loss.total;
                p.best_step = step;
                p.bad_evals = 0;
                self.best = Some(self.learner.params().clone());
            } else {
                p.bad_evals += 1;
                if p.bad_evals >= self.cfg.patience {
                    p.stop = Some(StopReason::EarlyStopping);
                }
            }
        }
        if let Some(target) = self.cfg.stop_at_accuracy {
            let (loss, acc) = evaluate(&self.learner, train, self.cfg.max_tokens, self.cfg.seed)?;
            self.log.push(LogRow {
                step,
                epoch: self.progress.epoch,
                split: "train-eval",
                lr,
                loss,
                accuracy: Some(acc),
            });
            if acc >= target {
                self.progress.stop = Some(StopReason::AccuracyReached);
            }
        }
        Ok(())
    }

    /// Trains until `until` steps, `max_steps`, or a stopping rule fires.
    pub fn run_until(&mut self, train: &[Example], dev: &[Example], until: usize) -> Result<()> {
        let end = until.min(self.cfg.max_steps);
        while self.progress.step < end && self.progress.stop.is_none() {
            self.step(train)?;
            let s = self.progress.step;
            if s.is_multiple_of(self.cfg.eval_every) || s == self.cfg.max_steps {
                self.evaluate(train, dev)?;
            }
        }
        if self.progress.step >= self.cfg.max_steps && self.progress.stop.is_none() {
            self.progress.stop = Some(StopReason::MaxSteps);
        }
        Ok(())
    }

    pub fn run(&mut self, train: &[Example], dev: &[Example]) -> Result<StopReason> {
        self.run_until(train, dev, self.cfg.max_steps)?;
        Ok(self.progress.stop.unwrap_or(StopReason::MaxSteps))
    }
}
