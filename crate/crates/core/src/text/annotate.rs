//! Deterministic rule-based POS/NER annotator used for fixtures and
//! synthetic corpora. Real data is expected to arrive pre-annotated.
//!
//! Resolution order per token: lexicon, punctuation, numerals, capitalized
//! mid-sentence tokens, suffix rules, then NOUN/O.

use std::collections::HashMap;
use std::io::BufRead;

use super::labels::{LabelVocab, ENTITY_TYPES};
use super::sentence::AnnotatedSentence;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LexiconEntry {
    pub pos: usize,
    pub entity: Option<String>,
}

const DEFAULT_LEXICON: &[(&str, &str)] = &[
    ("the", "DET"),
    ("a", "DET"),
    ("an", "DET"),
    ("this", "DET"),
    ("that", "DET"),
    ("these", "DET"),
    ("those", "DET"),
    ("of", "ADP"),
    ("in", "ADP"),
    ("on", "ADP"),
    ("at", "ADP"),
    ("for", "ADP"),
    ("with", "ADP"),
    ("from", "ADP"),
    ("by", "ADP"),
    ("to", "PART"),
    ("not", "PART"),
    ("and", "CCONJ"),
    ("or", "CCONJ"),
    ("but", "CCONJ"),
    ("if", "SCONJ"),
    ("because", "SCONJ"),
    ("while", "SCONJ"),
    ("is", "AUX"),
    ("are", "AUX"),
    ("was", "AUX"),
    ("were", "AUX"),
    ("be", "AUX"),
    ("has", "AUX"),
    ("have", "AUX"),
    ("will", "AUX"),
    ("can", "AUX"),
    ("i", "PRON"),
    ("you", "PRON"),
    ("he", "PRON"),
    ("she", "PRON"),
    ("it", "PRON"),
    ("we", "PRON"),
    ("they", "PRON"),
    ("very", "ADV"),
    ("also", "ADV"),
    ("oh", "INTJ"),
    ("great", "ADJ"),
    ("good", "ADJ"),
    ("new", "ADJ"),
];

const SUFFIX_RULES: &[(&str, &str)] = &[
    ("tion", "NOUN"),
    ("ment", "NOUN"),
    ("ness", "NOUN"),
    ("ing", "VERB"),
    ("ize", "VERB"),
    ("ed", "VERB"),
    ("ous", "ADJ"),
    ("ful", "ADJ"),
    ("able", "ADJ"),
    ("ive", "ADJ"),
    ("ly", "ADV"),
];

#[derive(Clone, Debug)]
pub struct ToyAnnotator {
    pos: LabelVocab,
    ner: LabelVocab,
    lexicon: HashMap<String, LexiconEntry>,
    suffixes: Vec<(String, usize)>,
}

impl Default for ToyAnnotator {
    fn default() -> Self {
        let pos = LabelVocab::pos();
        let lexicon = DEFAULT_LEXICON
            .iter()
            .map(|(w, p)| {
                (
                    w.to_string(),
                    LexiconEntry {
                        pos: pos.id(p).unwrap(),
                        entity: None,
                    },
                )
            })
            .collect();
        Self::with_lexicon(lexicon)
    }
}

impl ToyAnnotator {
    pub fn with_lexicon(lexicon: HashMap<String, LexiconEntry>) -> Self {
        let pos = LabelVocab::pos();
        let mut suffixes: Vec<(String, usize)> = SUFFIX_RULES
            .iter()
            .map(|(s, p)| (s.to_string(), pos.id(p).unwrap()))
            .collect();
        // longest suffix first
        suffixes.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        ToyAnnotator {
            pos,
            ner: LabelVocab::ner(),
            lexicon,
            suffixes,
        }
    }

    /// Adds entries from a `word<TAB>POS[<TAB>ENTITY_TYPE]` lexicon. Later
    /// entries override earlier ones.
    pub fn extend_from_reader<R: BufRead>(&mut self, reader: R) -> Result<()> {
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let err = |msg: String| Error::Parse { line: i + 1, msg };
            if cols.len() < 2 || cols.len() > 3 {
                return Err(err(format!("expected 2 or 3 columns in {line:?}")));
            }
            let pos = self
                .pos
                .id(cols[1])
                .filter(|&p| p != 0)
                .ok_or_else(|| err(format!("unknown POS tag {:?}", cols[1])))?;
            let entity = match cols.get(2) {
                Some(t) if !t.is_empty() => {
                    if !ENTITY_TYPES.contains(t) {
                        return Err(err(format!("unknown entity type {t:?}")));
                    }
                    Some(t.to_string())
                }
                _ => None,
            };
            self.lexicon
                .insert(cols[0].to_string(), LexiconEntry { pos, entity });
        }
        Ok(())
    }

    pub fn insert(&mut self, word: &str, entry: LexiconEntry) {
        self.lexicon.insert(word.to_string(), entry);
    }

    pub fn lexicon(&self) -> &HashMap<String, LexiconEntry> {
        &self.lexicon
    }

    /// Tags a tokenized sentence. NER output is always valid BIO: a token
    /// continues a span only when the previous token carries the same type.
    pub fn annotate<S: AsRef<str>>(&self, words: &[S]) -> (Vec<usize>, Vec<usize>) {
        let mut pos = Vec::with_capacity(words.len());
        let mut entities: Vec<Option<&str>> = Vec::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            let w = w.as_ref();
            let (p, e) = self.tag_word(w, i);
            pos.push(p);
            entities.push(e);
        }
        let mut ner = Vec::with_capacity(words.len());
        for i in 0..entities.len() {
            let id = match entities[i] {
                None => self.ner.outside(),
                Some(e) if i > 0 && entities[i - 1] == Some(e) => self.ner.inside(e).unwrap(),
                Some(e) => self.ner.begin(e).unwrap(),
            };
            ner.push(id);
        }
        (pos, ner)
    }

    pub fn annotate_sentence<S: AsRef<str>>(&self, words: &[S]) -> AnnotatedSentence {
        let (pos, ner) = self.annotate(words);
        AnnotatedSentence {
            words: words.iter().map(|w| w.as_ref().to_string()).collect(),
            pos,
            ner,
        }
    }

    fn tag_word(&self, w: &str, index: usize) -> (usize, Option<&str>) {
        let pos = |t: &str| self.pos.id(t).unwrap();
        let entry = self
            .lexicon
            .get(w)
            .or_else(|| self.lexicon.get(&w.to_lowercase()));
        if let Some(e) = entry {
            return (e.pos, e.entity.as_deref());
        }
        if !w.is_empty() && w.chars().all(|c| c.is_ascii_punctuation()) {
            return (pos("PUNCT"), None);
        }
        if w.chars().next().is_some_and(|c| c.is_ascii_digit())
            && w.chars()
                .all(|c| c.is_ascii_digit() || c == '.' || c == ',')
        {
            return (pos("NUM"), Some("CARDINAL"));
        }
        if index > 0 && w.chars().next().is_some_and(char::is_uppercase) {
            return (pos("PROPN"), Some("PERSON"));
        }
        let lower = w.to_lowercase();
        for (suffix, p) in &self.suffixes {
            if lower.len() > suffix.len() + 1 && lower.ends_with(suffix.as_str()) {
                return (*p, None);
            }
        }
        (pos("NOUN"), None)
    }
}
