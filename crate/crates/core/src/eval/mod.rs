//! Evaluation harnesses: BLEU, corpus decoding, length buckets, the latency
//! benchmark and controlled ablations.

pub mod ablate;
pub mod bench;
pub mod bleu;

pub use ablate::{ablate, ablation_tsv, standard_variants, AblationRow, Variant};
pub use bench::{bench, BenchConfig, LatencyReport, LatencyRow};
pub use bleu::{bleu, BleuReport};

use crate::copy::INFERENCE_SEED;
use crate::infer::{
    candidate_lengths, decode_candidates, rescore, select_by_model, DecodeMasks, LengthPolicy,
    Normalization,
};
use crate::model::{SnatModel, TeacherModel};
use crate::text::{detokenize, Vocabulary};
use crate::train::{max_decode_len, Example};
use crate::Result;

/// How target lengths are chosen when decoding a corpus.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LengthMode {
    /// Reference length; isolates translation quality from length guessing.
    Gold,
    Policy(LengthPolicy),
}

pub fn subword_text(vocab: &Vocabulary, ids: &[usize]) -> String {
    detokenize(&vocab.decode(ids))
}

pub fn reference_texts(examples: &[Example], vocab: &Vocabulary) -> Vec<String> {
    examples
        .iter()
        .map(|e| subword_text(vocab, &e.tgt.subwords))
        .collect()
}

/// SNAT translations of already-labeled sources.
pub fn decode_examples(
    model: &SnatModel,
    examples: &[Example],
    vocab: &Vocabulary,
    length: LengthMode,
    masks: DecodeMasks<'_>,
    teacher: Option<&TeacherModel>,
) -> Result<Vec<String>> {
    let mut out = Vec::with_capacity(examples.len());
    for e in examples {
        if e.src.is_empty() {
            out.push(String::new());
            continue;
        }
        let lengths = match length {
            LengthMode::Gold => vec![e.tgt.len().max(1)],
            LengthMode::Policy(p) => candidate_lengths(e.src.len(), p),
        };
        let cands = decode_candidates(model, &e.src, &lengths, masks, INFERENCE_SEED)?;
        let set = match teacher {
            Some(t) => rescore(cands, &e.src.subwords, t, Normalization::Mean)?,
            None => select_by_model(cands)?,
        };
        out.push(subword_text(vocab, &set.best().words));
    }
    Ok(out)
}

/// Greedy teacher translations.
pub fn teacher_translations(
    teacher: &TeacherModel,
    examples: &[Example],
    vocab: &Vocabulary,
) -> Result<Vec<String>> {
    examples
        .iter()
        .map(|e| {
            let enc = teacher.encode(&e.src.subwords)?;
            let g = teacher.greedy(&enc, max_decode_len(e.src.len()))?;
            Ok(subword_text(vocab, &g.tokens))
        })
        .collect()
}

pub const DEFAULT_BUCKETS: [usize; 5] = [10, 20, 30, 50, 100];

/// Sentences whose reference has `lo < words <= hi`.
#[derive(Clone, Debug, PartialEq)]
pub struct Bucket {
    pub lo: usize,
    /// `None` for the open-ended last bucket.
    pub hi: Option<usize>,
    pub count: usize,
    /// `None` when the bucket is empty.
    pub bleu: Option<f64>,
}

/// BLEU per reference-length bucket; `bounds` must be increasing. Lengths
/// above the last bound land in an open-ended bucket.
pub fn length_buckets<H: AsRef<str>, R: AsRef<str>>(
    hyps: &[H],
    refs: &[R],
    bounds: &[usize],
) -> Result<Vec<Bucket>> {
    if hyps.len() != refs.len() {
        return Err(crate::Error::Data(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    if bounds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(crate::Error::Config("bucket bounds must increase".into()));
    }
    let mut edges: Vec<(usize, Option<usize>)> = Vec::new();
    let mut lo = 0;
    for &b in bounds {
        edges.push((lo, Some(b)));
        lo = b;
    }
    edges.push((lo, None));
    let mut out = Vec::new();
    for (lo, hi) in edges {
        let idx: Vec<usize> = (0..refs.len())
            .filter(|&i| {
                let n = refs[i].as_ref().split_whitespace().count();
                n > lo && hi.is_none_or(|h| n <= h) || (lo == 0 && n == 0)
            })
            .collect();
        let bleu = if idx.is_empty() {
            None
        } else {
            let h: Vec<&str> = idx.iter().map(|&i| hyps[i].as_ref()).collect();
            let r: Vec<&str> = idx.iter().map(|&i| refs[i].as_ref()).collect();
            Some(bleu::bleu(&h, &r)?.bleu)
        };
        out.push(Bucket {
            lo,
            hi,
            count: idx.len(),
            bleu,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_references_fill_one_bucket() {
        let refs = ["a b c", "d e f g", ""];
        let b = length_buckets(&refs, &refs, &DEFAULT_BUCKETS).unwrap();
        assert_eq!(b.len(), 6);
        assert_eq!(b[0].count, 3);
        assert!(b[1..].iter().all(|x| x.count == 0 && x.bleu.is_none()));
    }

    #[test]
    fn bucket_sizes_sum_to_corpus_size() {
        let refs: Vec<String> = (1..60).map(|n| vec!["w"; n].join(" ")).collect();
        let b = length_buckets(&refs, &refs, &[10, 20, 30, 50]).unwrap();
        assert_eq!(b.iter().map(|x| x.count).sum::<usize>(), refs.len());
        assert_eq!(b[0].count, 10);
        assert_eq!(b[4].count, 9);
        assert!(length_buckets(&refs, &refs, &[20, 10]).is_err());
    }
}
