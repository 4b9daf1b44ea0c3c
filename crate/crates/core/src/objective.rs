//! Training losses: label cross-entropy, the mask-mediated joint word loss,
//! intermediate-layer alignment, and their weighted sum.

use crate::model::{DecoderVars, Graph, SeqBatch, SnatModel};
use crate::tensor::{Scalar, Target, Tensor, Var};
use crate::text::{LabelFamily, WordLabelMask};
use crate::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 0.75;
pub const DEFAULT_MD: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveConfig {
    /// Weight of the alignment term.
    pub lambda: f64,
    /// Decoder layer (1-based) whose output is aligned; `None` disables
    /// the term.
    pub md: Option<usize>,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            lambda: DEFAULT_LAMBDA,
            md: Some(DEFAULT_MD),
        }
    }
}

/// Alignment layer must be strictly inside the decoder stack.
pub fn check_md(md: usize, decoder_layers: usize) -> Result<()> {
    if md <= 1 || md >= decoder_layers {
        return Err(Error::Config(format!(
            "alignment layer {md} must satisfy 1 < md < {decoder_layers}"
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub word_loss: f64,
    pub pos_label_loss: f64,
    pub ner_label_loss: f64,
    pub alignment_reg: f64,
    pub total: f64,
    pub lambda: f64,
    pub md: Option<usize>,
}

impl LossBreakdown {
    /// Token-weighted accumulation for averaging over several batches.
    pub fn accumulate(&mut self, other: &LossBreakdown, weight: f64) {
        self.word_loss += weight * other.word_loss;
        self.pos_label_loss += weight * other.pos_label_loss;
        self.ner_label_loss += weight * other.ner_label_loss;
        self.alignment_reg += weight * other.alignment_reg;
        self.total += weight * other.total;
        self.lambda = other.lambda;
        self.md = other.md;
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.word_loss *= s;
        self.pos_label_loss *= s;
        self.ner_label_loss *= s;
        self.alignment_reg *= s;
        self.total *= s;
        self
    }
}

/// Dense masks for the enabled label families.
#[derive(Clone, Debug, Default)]
pub struct DenseMasks<T: Scalar> {
    pub pos: Option<Tensor<T>>,
    pub ner: Option<Tensor<T>>,
}

impl<T: Scalar> DenseMasks<T> {
    pub fn new(pos: Option<&WordLabelMask>, ner: Option<&WordLabelMask>) -> Self {
        DenseMasks {
            pos: pos.map(|m| m.dense()),
            ner: ner.map(|m| m.dense()),
        }
    }

    fn get(&self, f: LabelFamily) -> Option<&Tensor<T>> {
        match f {
            LabelFamily::Pos => self.pos.as_ref(),
            LabelFamily::Ner => self.ner.as_ref(),
        }
    }
}

/// One training batch: encoder input, copied decoder input and gold target
/// (same length as the decoder input).
#[derive(Clone, Debug)]
pub struct TrainBatch {
    pub src: SeqBatch,
    pub dec: SeqBatch,
    pub tgt: SeqBatch,
}

/// Cross-entropy of label distributions `q` against gold labels, averaged
/// over supervised rows.
pub fn label_loss<T: Scalar>(g: &mut Graph<'_, T>, q: Var, gold: &[Option<usize>]) -> Result<Var> {
    g.tape.cross_entropy(q, Target::Index(gold.to_vec()))
}

/// Renormalized joint `J[t,i,j] ∝ p[t,i]·M[i,j]·q[t,j]`, shape
/// `[m, |V_w|, |V_l|]`.
pub fn joint_word_label(
    p: &Tensor<f64>,
    q: &Tensor<f64>,
    mask: &Tensor<f64>,
) -> Result<Tensor<f64>> {
    let (vw, vl) = (p.last_dim(), q.last_dim());
    if mask.shape() != [vw, vl] || p.rows() != q.rows() {
        return Err(Error::Shape(format!(
            "joint of p {:?}, q {:?} under mask {:?}",
            p.shape(),
            q.shape(),
            mask.shape()
        )));
    }
    let m = p.rows();
    let mut out = Vec::with_capacity(m * vw * vl);
    for t in 0..m {
        let start = out.len();
        for i in 0..vw {
            for j in 0..vl {
                out.push(p.row(t)[i] * mask.data()[i * vl + j] * q.row(t)[j]);
            }
        }
        let z: f64 = out[start..].iter().sum();
        for v in &mut out[start..] {
            *v /= z;
        }
    }
    Tensor::new(vec![m, vw, vl], out)
}

/// `−Σ_t log J[t, y_t, l_t]` averaged over positions.
pub fn word_loss(joint: &Tensor<f64>, words: &[usize], labels: &[usize]) -> f64 {
    let (vw, vl) = (joint.shape()[1], joint.shape()[2]);
    let m = words.len();
    let total: f64 = (0..m)
        .map(|t| -joint.data()[t * vw * vl + words[t] * vl + labels[t]].ln())
        .sum();
    total / m as f64
}

/// Word loss on the tape: joint NLL averaged over the enabled label
/// families, or plain cross-entropy when no family is enabled.
pub fn word_loss_graph<'a, T: Scalar>(
    g: &mut Graph<'a, T>,
    p: Var,
    label_probs: &[(LabelFamily, Var)],
    masks: &'a DenseMasks<T>,
    tgt: &SeqBatch,
) -> Result<Var> {
    if label_probs.is_empty() {
        return g
            .tape
            .cross_entropy(p, Target::Index(tgt.targets(&tgt.words)));
    }
    let mut terms = Vec::new();
    for &(family, q) in label_probs {
        let mask = masks.get(family).ok_or_else(|| {
            Error::Config(format!("no {family} mask for an enabled label family"))
        })?;
        let labels = match family {
            LabelFamily::Pos => &tgt.pos,
            LabelFamily::Ner => &tgt.ner,
        };
        let gold: Vec<Option<(usize, usize)>> = (0..tgt.rows())
            .map(|r| tgt.valid[r].then(|| (tgt.words[r], labels[r])))
            .collect();
        terms.push(g.tape.joint_nll(p, q, mask, &gold)?);
    }
    let mut sum = terms[0];
    for &t in &terms[1..] {
        sum = g.tape.add(sum, t)?;
    }
    Ok(g.tape.scale(sum, 1.0 / terms.len() as f64))
}

/// Cross-entropy of gold words against the tied word head applied to an
/// intermediate decoder output.
pub fn alignment_reg<T: Scalar>(
    g: &mut Graph<'_, T>,
    model: &SnatModel<T>,
    z_md: Var,
    tgt: &SeqBatch,
) -> Result<Var> {
    let logits = model.word_logits(g, z_md)?;
    let p = g.tape.softmax(logits, 1)?;
    g.tape
        .cross_entropy(p, Target::Index(tgt.targets(&tgt.words)))
}

/// Full forward pass and loss for a batch. Returns the scalar total on the
/// tape together with its components.
pub fn total_loss<'a, T: Scalar>(
    g: &mut Graph<'a, T>,
    model: &SnatModel<T>,
    batch: &TrainBatch,
    masks: &'a DenseMasks<T>,
    cfg: &ObjectiveConfig,
) -> Result<(Var, LossBreakdown)> {
    if let Some(md) = cfg.md {
        check_md(md, model.config().decoder_layers)?;
    }
    if batch.dec.len != batch.tgt.len || batch.dec.batch != batch.tgt.batch {
        return Err(Error::Shape(
            "decoder input and target differ in shape".into(),
        ));
    }
    let enc = model.encode_graph(g, &batch.src)?;
    let DecoderVars { layers, zf } = model.decode_graph(g, &batch.dec, enc, &batch.src)?;
    total_loss_from(g, model, batch, masks, cfg, &layers, zf)
}

pub(crate) fn total_loss_from<'a, T: Scalar>(
    g: &mut Graph<'a, T>,
    model: &SnatModel<T>,
    batch: &TrainBatch,
    masks: &'a DenseMasks<T>,
    cfg: &ObjectiveConfig,
    layers: &[Var],
    zf: Var,
) -> Result<(Var, LossBreakdown)> {
    let tgt = &batch.tgt;
    let wl = model.word_logits(g, zf)?;
    let p = g.tape.softmax(wl, 1)?;
    let mut label_probs = Vec::new();
    let mut bd = LossBreakdown {
        lambda: cfg.lambda,
        md: cfg.md,
        ..Default::default()
    };
    let mut total_terms = Vec::new();
    for family in [LabelFamily::Pos, LabelFamily::Ner] {
        if let Some(l) = model.label_logits(g, zf, family)? {
            let q = g.tape.softmax(l, 1)?;
            let gold_ids = match family {
                LabelFamily::Pos => &tgt.pos,
                LabelFamily::Ner => &tgt.ner,
            };
            let loss = label_loss(g, q, &tgt.targets(gold_ids))?;
            let v = g.tape.value(loss).item().as_f64();
            match family {
                LabelFamily::Pos => bd.pos_label_loss = v,
                LabelFamily::Ner => bd.ner_label_loss = v,
            }
            total_terms.push(loss);
            label_probs.push((family, q));
        }
    }
    let wloss = word_loss_graph(g, p, &label_probs, masks, tgt)?;
    bd.word_loss = g.tape.value(wloss).item().as_f64();
    let mut total = wloss;
    for t in total_terms {
        total = g.tape.add(total, t)?;
    }
    if let Some(md) = cfg.md {
        let reg = alignment_reg(g, model, layers[md - 1], tgt)?;
        bd.alignment_reg = g.tape.value(reg).item().as_f64();
        if cfg.lambda != 0.0 {
            let r = g.tape.scale(reg, cfg.lambda);
            total = g.tape.add(total, r)?;
        }
    }
    bd.total = g.tape.value(total).item().as_f64();
    Ok((total, bd))
}
