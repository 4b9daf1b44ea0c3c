use super::bpe::BpeModel;
use super::vocab::Vocabulary;
use crate::{Error, Result};

/// Word-level sentence with one POS and one NER label id per word.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotatedSentence {
    pub words: Vec<String>,
    pub pos: Vec<usize>,
    pub ner: Vec<usize>,
}

impl AnnotatedSentence {
    pub fn new(words: Vec<String>, pos: Vec<usize>, ner: Vec<usize>) -> Result<Self> {
        if words.len() != pos.len() || words.len() != ner.len() {
            return Err(Error::Contract(format!(
                "{} words with {} POS and {} NER tags",
                words.len(),
                pos.len(),
                ner.len()
            )));
        }
        Ok(AnnotatedSentence { words, pos, ner })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn text(&self) -> String {
        self.words.join(" ")
    }
}

/// Subword-level sentence: aligned word ids, POS ids and NER ids.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct LabeledSentence {
    pub subwords: Vec<usize>,
    pub pos: Vec<usize>,
    pub ner: Vec<usize>,
    /// `true` where a subword starts a new surface word.
    pub word_start: Vec<bool>,
}

impl LabeledSentence {
    pub fn new(subwords: Vec<usize>, pos: Vec<usize>, ner: Vec<usize>) -> Result<Self> {
        let n = subwords.len();
        if pos.len() != n || ner.len() != n {
            return Err(Error::Contract(format!(
                "{n} subwords with {} POS and {} NER labels",
                pos.len(),
                ner.len()
            )));
        }
        Ok(LabeledSentence {
            subwords,
            pos,
            ner,
            word_start: vec![true; n],
        })
    }

    pub fn len(&self) -> usize {
        self.subwords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subwords.is_empty()
    }

    /// Number of subwords belonging to each surface word, in order.
    pub fn word_lengths(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for &s in &self.word_start {
            if s || out.is_empty() {
                out.push(1);
            } else {
                *out.last_mut().unwrap() += 1;
            }
        }
        out
    }
}

/// Segments every word with `bpe` and copies the word's POS and NER label
/// onto each of its subwords.
pub fn propagate_labels(
    sentence: &AnnotatedSentence,
    bpe: &BpeModel,
    vocab: &Vocabulary,
) -> LabeledSentence {
    let pieces = bpe.tokenize_words(&sentence.words);
    let mut out = LabeledSentence::default();
    for (i, word_pieces) in pieces.iter().enumerate() {
        for (j, p) in word_pieces.iter().enumerate() {
            out.subwords.push(vocab.id(p));
            out.pos.push(sentence.pos[i]);
            out.ner.push(sentence.ner[i]);
            out.word_start.push(j == 0);
        }
    }
    out
}
