use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::copy::{example_seed, realize, structure_copy};
use crate::model::SeqBatch;
use crate::objective::TrainBatch;
use crate::text::labels::LabelVocab;
use crate::text::{
    propagate_labels, AnnotatedSentence, BpeModel, LabelFamily, LabeledSentence, Vocabulary,
    WordLabelMask,
};
use crate::{Error, Result};

/// A labeled sentence pair at subword level.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub src: LabeledSentence,
    pub tgt: LabeledSentence,
}

impl Example {
    pub fn from_annotated(
        src: &AnnotatedSentence,
        tgt: &AnnotatedSentence,
        bpe: &BpeModel,
        vocab: &Vocabulary,
    ) -> Self {
        Example {
            src: propagate_labels(src, bpe, vocab),
            tgt: propagate_labels(tgt, bpe, vocab),
        }
    }

    fn cost(&self) -> usize {
        self.src.len().max(self.tgt.len())
    }
}

/// Shared subword model, joint vocabulary, labeled examples and target-side
/// masks for a parallel corpus.
#[derive(Clone, Debug)]
pub struct PreparedCorpus {
    pub bpe: BpeModel,
    pub vocab: Vocabulary,
    pub examples: Vec<Example>,
    pub pos_mask: WordLabelMask,
    pub ner_mask: WordLabelMask,
}

/// Learns a joint BPE and vocabulary over both sides, labels every pair and
/// builds the masks from the targets.
pub fn prepare_corpus(
    pairs: &[(&AnnotatedSentence, &AnnotatedSentence)],
    merges: usize,
    epsilon: f64,
) -> Result<PreparedCorpus> {
    let lines: Vec<String> = pairs
        .iter()
        .flat_map(|(s, t)| [s.text(), t.text()])
        .collect();
    let bpe = BpeModel::learn(&lines, merges)?;
    let tokens: Vec<String> = lines.iter().flat_map(|l| bpe.tokenize(l)).collect();
    let vocab = Vocabulary::build(tokens.iter().map(String::as_str));
    let examples: Vec<Example> = pairs
        .iter()
        .map(|(s, t)| Example::from_annotated(s, t, &bpe, &vocab))
        .collect();
    let targets: Vec<LabeledSentence> = examples.iter().map(|e| e.tgt.clone()).collect();
    let mask = |f: LabelFamily| {
        WordLabelMask::build(
            &targets,
            vocab.len(),
            f,
            LabelVocab::for_family(f).len(),
            epsilon,
        )
    };
    Ok(PreparedCorpus {
        pos_mask: mask(LabelFamily::Pos)?,
        ner_mask: mask(LabelFamily::Ner)?,
        bpe,
        vocab,
        examples,
    })
}

/// Drops pairs with an empty side; both models need at least one token.
pub fn usable(examples: Vec<Example>) -> Vec<Example> {
    examples
        .into_iter()
        .filter(|e| !e.src.is_empty() && !e.tgt.is_empty())
        .collect()
}

/// Groups examples of similar length into batches whose padded size
/// (`count × longest`) stays within `max_tokens`. A single over-long
/// example still forms its own batch.
pub fn token_batches(examples: &[Example], max_tokens: usize, order: &[usize]) -> Vec<Vec<usize>> {
    let mut idx = order.to_vec();
    idx.sort_by_key(|&i| examples[i].cost());
    let mut out = Vec::new();
    let mut cur: Vec<usize> = Vec::new();
    let mut longest = 0;
    for i in idx {
        let c = examples[i].cost();
        let wide = longest.max(c);
        if !cur.is_empty() && wide * (cur.len() + 1) > max_tokens {
            out.push(std::mem::take(&mut cur));
            longest = 0;
        }
        longest = longest.max(c);
        cur.push(i);
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Batches for one epoch: examples are shuffled, bucketed by length, and
/// the batch order shuffled again, all from `(seed, epoch)`.
pub fn epoch_batches(
    examples: &[Example],
    max_tokens: usize,
    seed: u64,
    epoch: u64,
) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(example_seed(seed, epoch, u64::MAX));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut rng);
    let mut batches = token_batches(examples, max_tokens, &order);
    batches.shuffle(&mut rng);
    batches
}

/// Deterministic batches for evaluation (no shuffling).
pub fn eval_batches(examples: &[Example], max_tokens: usize) -> Vec<Vec<usize>> {
    let order: Vec<usize> = (0..examples.len()).collect();
    token_batches(examples, max_tokens, &order)
}

/// Builds the SNAT batch: decoder inputs are structure-aware copies of the
/// sources at the gold target length, seeded per example and epoch.
pub fn snat_batch(
    examples: &[Example],
    idx: &[usize],
    seed: u64,
    epoch: u64,
) -> Result<TrainBatch> {
    let mut dec = Vec::with_capacity(idx.len());
    for &i in idx {
        let e = &examples[i];
        if e.src.is_empty() || e.tgt.is_empty() {
            return Err(Error::Data(format!("example {i} has an empty side")));
        }
        let plan = structure_copy(&e.src, e.tgt.len(), example_seed(seed, epoch, i as u64));
        dec.push(realize(&plan, &e.src)?);
    }
    let src: Vec<&LabeledSentence> = idx.iter().map(|&i| &examples[i].src).collect();
    let tgt: Vec<&LabeledSentence> = idx.iter().map(|&i| &examples[i].tgt).collect();
    let dec: Vec<&LabeledSentence> = dec.iter().collect();
    Ok(TrainBatch {
        src: SeqBatch::from_sentences(&src),
        dec: SeqBatch::from_sentences(&dec),
        tgt: SeqBatch::from_sentences(&tgt),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(n: usize, m: usize) -> Example {
        let s = |k: usize| LabeledSentence::new(vec![7; k], vec![1; k], vec![1; k]).unwrap();
        Example {
            src: s(n),
            tgt: s(m),
        }
    }

    #[test]
    fn batches_respect_the_token_budget_and_cover_everything() {
        let data: Vec<Example> = (1..30).map(|k| ex(k % 9 + 1, k % 7 + 1)).collect();
        let b = epoch_batches(&data, 20, 3, 0);
        let mut seen: Vec<usize> = b.iter().flatten().copied().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..data.len()).collect::<Vec<_>>());
        for batch in &b {
            let longest = batch.iter().map(|&i| data[i].cost()).max().unwrap();
            assert!(batch.len() == 1 || longest * batch.len() <= 20);
        }
        assert_eq!(b, epoch_batches(&data, 20, 3, 0));
        assert_ne!(b, epoch_batches(&data, 20, 3, 1));
    }

    #[test]
    fn oversized_example_gets_its_own_batch() {
        let data = vec![ex(50, 50), ex(2, 2)];
        let b = eval_batches(&data, 10);
        assert_eq!(b, vec![vec![1], vec![0]]);
    }

    #[test]
    fn decoder_input_matches_target_shape() {
        let data = vec![ex(5, 3), ex(2, 6)];
        let b = snat_batch(&data, &[0, 1], 1, 0).unwrap();
        assert_eq!(b.dec.len, b.tgt.len);
        assert_eq!(b.dec.valid, b.tgt.valid);
        assert_eq!(b.src.len, 5);
    }
}
