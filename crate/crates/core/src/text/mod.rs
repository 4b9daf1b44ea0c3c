//! Text pipeline: subword segmentation, vocabularies, label schemes,
//! annotation ingestion, label propagation and word–label masks.

pub mod annotate;
pub mod bpe;
pub mod conll;
pub mod labels;
pub mod mask;
pub mod sentence;
pub mod vocab;

pub use annotate::{LexiconEntry, ToyAnnotator};
pub use bpe::{detokenize, BpeModel};
pub use conll::{ingest_conll, write_conll};
pub use labels::{LabelFamily, LabelVocab};
pub use mask::WordLabelMask;
pub use sentence::{propagate_labels, AnnotatedSentence, LabeledSentence};
pub use vocab::Vocabulary;

/// Annotates raw whitespace-tokenized text and maps it to labeled subwords.
pub fn label_text(
    line: &str,
    annotator: &ToyAnnotator,
    bpe: &BpeModel,
    vocab: &Vocabulary,
) -> LabeledSentence {
    let words: Vec<&str> = line.split_whitespace().collect();
    let annotated = annotator.annotate_sentence(&words);
    propagate_labels(&annotated, bpe, vocab)
}
