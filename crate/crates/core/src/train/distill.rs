use crate::model::checkpoint::OPT_PREFIX;
use crate::model::{Checkpoint, TeacherModel};
use crate::tensor::Tensor;
use crate::text::{detokenize, label_text, BpeModel, LabeledSentence, ToyAnnotator, Vocabulary};
use crate::{Error, Result};

use super::data::Example;

/// A teacher translation of one source, re-annotated on the target side.
#[derive(Clone, Debug, PartialEq)]
pub struct DistilledPair {
    pub example: Example,
    pub text: String,
    /// The teacher hit the length limit before emitting EOS.
    pub truncated: bool,
}

/// Length limit for teacher decoding of a source of `n` subwords.
pub fn max_decode_len(n: usize) -> usize {
    2 * n + 10
}

/// Replaces gold targets with the teacher's greedy outputs. The output
/// text is detokenized and labeled again with `annotator`, so labels
/// always describe the distilled target rather than the reference.
pub fn distill(
    teacher: &TeacherModel,
    sources: &[LabeledSentence],
    annotator: &ToyAnnotator,
    bpe: &BpeModel,
    vocab: &Vocabulary,
) -> Result<Vec<DistilledPair>> {
    let mut out = Vec::with_capacity(sources.len());
    for src in sources {
        if src.is_empty() {
            return Err(Error::Data("cannot distill an empty source".into()));
        }
        let enc = teacher.encode(&src.subwords)?;
        let g = teacher.greedy(&enc, max_decode_len(src.len()))?;
        let text = detokenize(&vocab.decode(&g.tokens));
        let tgt = label_text(&text, annotator, bpe, vocab);
        out.push(DistilledPair {
            example: Example {
                src: src.clone(),
                tgt,
            },
            text,
            truncated: g.truncated,
        });
    }
    Ok(out)
}

/// Element-wise mean of model parameters over checkpoints of the same
/// kind and configuration. Optimizer state is dropped.
pub fn average_checkpoints(cks: &[Checkpoint]) -> Result<Checkpoint> {
    let first = cks
        .first()
        .ok_or_else(|| Error::Data("no checkpoints to average".into()))?;
    let hash = first.config_hash();
    let mut blocks: Vec<(String, Vec<f64>, Vec<usize>)> = first
        .blocks
        .iter()
        .filter(|(n, _)| !n.starts_with(OPT_PREFIX))
        .map(|(n, t)| (n.clone(), vec![0.0; t.numel()], t.shape().to_vec()))
        .collect();
    for ck in cks {
        if ck.kind != first.kind || ck.config_hash() != hash {
            return Err(Error::Format(
                "checkpoints differ in model kind or configuration".into(),
            ));
        }
        for (name, acc, shape) in &mut blocks {
            let t = ck
                .block(name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Format(format!("{name} differs in shape")));
            }
            for (a, v) in acc.iter_mut().zip(t.data()) {
                *a += *v as f64;
            }
        }
    }
    let k = cks.len() as f64;
    let mut meta = first.meta.clone();
    meta.retain(|key, _| !key.starts_with("train."));
    meta.insert("averaged".into(), cks.len().to_string());
    Ok(Checkpoint {
        kind: first.kind,
        config: first.config.clone(),
        step: cks.iter().map(|c| c.step).max().unwrap_or(0),
        meta,
        blocks: blocks
            .into_iter()
            .map(|(n, acc, shape)| {
                let data = acc.iter().map(|v| (v / k) as f32).collect();
                (n, Tensor::new(shape, data).expect("block shape"))
            })
            .collect(),
    })
}
