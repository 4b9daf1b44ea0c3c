use crate::text::labels::NULL_LABEL;
use crate::text::vocab::PAD;
use crate::text::LabeledSentence;

/// Right-padded batch of sequences, flattened row-major as
/// `[batch, len]`. Padding uses the pad word and the null label.
#[derive(Clone, Debug, PartialEq)]
pub struct SeqBatch {
    pub batch: usize,
    pub len: usize,
    pub words: Vec<usize>,
    pub pos: Vec<usize>,
    pub ner: Vec<usize>,
    pub valid: Vec<bool>,
}

impl SeqBatch {
    fn with_shape(batch: usize, len: usize) -> Self {
        SeqBatch {
            batch,
            len,
            words: vec![PAD; batch * len],
            pos: vec![NULL_LABEL; batch * len],
            ner: vec![NULL_LABEL; batch * len],
            valid: vec![false; batch * len],
        }
    }

    pub fn from_sentences(sentences: &[&LabeledSentence]) -> Self {
        let len = sentences.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut b = Self::with_shape(sentences.len(), len);
        for (i, s) in sentences.iter().enumerate() {
            for t in 0..s.len() {
                let k = i * len + t;
                b.words[k] = s.subwords[t];
                b.pos[k] = s.pos[t];
                b.ner[k] = s.ner[t];
                b.valid[k] = true;
            }
        }
        b
    }

    /// Unlabeled sequences (labels set to null).
    pub fn from_ids(seqs: &[&[usize]]) -> Self {
        let len = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut b = Self::with_shape(seqs.len(), len);
        for (i, s) in seqs.iter().enumerate() {
            for (t, &w) in s.iter().enumerate() {
                b.words[i * len + t] = w;
                b.valid[i * len + t] = true;
            }
        }
        b
    }

    pub fn rows(&self) -> usize {
        self.batch * self.len
    }

    pub fn num_valid(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Per-row supervision targets, `None` on padding.
    pub fn targets(&self, ids: &[usize]) -> Vec<Option<usize>> {
        ids.iter()
            .zip(&self.valid)
            .map(|(&i, &v)| v.then_some(i))
            .collect()
    }
}
