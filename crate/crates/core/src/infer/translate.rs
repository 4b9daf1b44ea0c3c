use crate::copy::INFERENCE_SEED;
use crate::model::{SnatModel, TeacherModel};
use crate::text::bpe::CONTINUATION;
use crate::text::labels::NULL_LABEL;
use crate::text::WordLabelMask;
use crate::text::{detokenize, label_text, BpeModel, LabelVocab, ToyAnnotator, Vocabulary};
use crate::Result;

use super::{
    candidate_lengths, decode_candidates, rescore, select_by_model, CandidateSet, DecodeMasks,
    LengthPolicy, Normalization,
};

/// A surface word with the labels predicted for its first subword.
#[derive(Clone, Debug, PartialEq)]
pub struct WordLabels {
    pub word: String,
    pub pos: Option<String>,
    pub ner: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Translation {
    pub text: String,
    pub words: Vec<WordLabels>,
    /// Empty for empty input.
    pub candidates: Option<CandidateSet>,
}

/// Everything needed to go from raw source text to target text.
pub struct Translator<'a> {
    pub bpe: &'a BpeModel,
    pub vocab: &'a Vocabulary,
    pub annotator: &'a ToyAnnotator,
    pub model: &'a SnatModel,
    pub teacher: Option<&'a TeacherModel>,
    pub pos_mask: Option<&'a WordLabelMask>,
    pub ner_mask: Option<&'a WordLabelMask>,
    pub policy: LengthPolicy,
    pub norm: Normalization,
    pub seed: u64,
}

impl<'a> Translator<'a> {
    pub fn new(
        bpe: &'a BpeModel,
        vocab: &'a Vocabulary,
        annotator: &'a ToyAnnotator,
        model: &'a SnatModel,
        policy: LengthPolicy,
    ) -> Self {
        Translator {
            bpe,
            vocab,
            annotator,
            model,
            teacher: None,
            pos_mask: None,
            ner_mask: None,
            policy,
            norm: Normalization::Mean,
            seed: INFERENCE_SEED,
        }
    }

    pub fn translate(&self, line: &str) -> Result<Translation> {
        let source = label_text(line, self.annotator, self.bpe, self.vocab);
        if source.is_empty() {
            return Ok(Translation {
                text: String::new(),
                words: vec![],
                candidates: None,
            });
        }
        let lengths = candidate_lengths(source.len(), self.policy);
        let masks = DecodeMasks {
            pos: self.pos_mask,
            ner: self.ner_mask,
        };
        let cands = decode_candidates(self.model, &source, &lengths, masks, self.seed)?;
        let set = match self.teacher {
            Some(t) => rescore(cands, &source.subwords, t, self.norm)?,
            None => select_by_model(cands)?,
        };
        let best = set.best();
        let tokens = self.vocab.decode(&best.words);
        let text = detokenize(&tokens);
        let words = word_labels(&tokens, best.pos.as_deref(), best.ner.as_deref());
        Ok(Translation {
            text,
            words,
            candidates: Some(set),
        })
    }
}

fn word_labels(tokens: &[String], pos: Option<&[usize]>, ner: Option<&[usize]>) -> Vec<WordLabels> {
    let (pv, nv) = (LabelVocab::pos(), LabelVocab::ner());
    let name = |v: &LabelVocab, ids: Option<&[usize]>, k: usize| {
        ids.map(|ids| {
            v.name(ids.get(k).copied().unwrap_or(NULL_LABEL))
                .to_string()
        })
    };
    let mut out: Vec<WordLabels> = Vec::new();
    let mut open = false;
    for (k, t) in tokens.iter().enumerate() {
        let stem = t.strip_suffix(CONTINUATION);
        let piece = stem.unwrap_or(t);
        if open {
            out.last_mut().expect("open word").word.push_str(piece);
        } else {
            out.push(WordLabels {
                word: piece.to_string(),
                pos: name(&pv, pos, k),
                ner: name(&nv, ner, k),
            });
        }
        open = stem.is_some();
    }
    out
}
