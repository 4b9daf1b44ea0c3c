//! Seeded synthetic parallel corpora whose POS/NER labels carry real
//! signal.
//!
//! The source side follows `SUBJ VERB OBJ [ADP NP]` with English-like
//! order (`DET ADJ NOUN`). The target is a word-for-word translation
//! reordered to `SUBJ OBJ [ADP NP] VERB` with post-nominal adjectives and
//! determiners agreeing with the noun's gender. Some source forms are
//! both nouns and verbs and translate differently depending on the tag;
//! names are copied unchanged and carry entity labels.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::text::annotate::{LexiconEntry, ToyAnnotator};
use crate::text::labels::LabelVocab;
use crate::text::AnnotatedSentence;

const LANGUAGE_SEED: u64 = 0xC0FFEE;
const SRC_SYLLABLES: &[&str] = &[
    "ba", "de", "ko", "mi", "nu", "ra", "se", "ti", "vo", "la", "pe", "gu", "fa", "zo", "ni",
];
const TGT_SYLLABLES: &[&str] = &[
    "ka", "lu", "me", "so", "ri", "ta", "po", "xe", "bu", "di", "na", "go", "ve", "ju", "hi",
];
const FIRST_NAMES: &[&str] = &[
    "Ana", "Boris", "Carla", "Dmitri", "Elena", "Farid", "Greta", "Hugo", "Ines", "Jonas", "Kira",
    "Luis",
];
const SURNAMES: &[&str] = &["Silva", "Novak", "Berg", "Moreau"];
const CITIES: &[&str] = &["Oslo", "Lima", "Riga", "Quito", "Dakar", "Hanoi"];

/// Vocabulary sizes of a synthetic language pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LexiconSize {
    pub nouns: usize,
    pub verbs: usize,
    pub adjectives: usize,
    pub ambiguous: usize,
    pub names: usize,
}

impl LexiconSize {
    pub const FULL: LexiconSize = LexiconSize {
        nouns: 40,
        verbs: 20,
        adjectives: 12,
        ambiguous: 8,
        names: 12,
    };
    pub const TOY: LexiconSize = LexiconSize {
        nouns: 8,
        verbs: 5,
        adjectives: 3,
        ambiguous: 2,
        names: 4,
    };
}

#[derive(Clone, Debug)]
struct Noun {
    src: String,
    tgt: String,
    feminine: bool,
}

#[derive(Clone, Debug)]
struct Ambiguous {
    src: String,
    noun: Noun,
    verb_tgt: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthPair {
    pub src: AnnotatedSentence,
    pub tgt: AnnotatedSentence,
}

/// A fixed synthetic language pair.
#[derive(Clone, Debug)]
pub struct SynthLanguage {
    nouns: Vec<Noun>,
    verbs: Vec<(String, String)>,
    adjectives: Vec<(String, String)>,
    ambiguous: Vec<Ambiguous>,
    names: Vec<&'static str>,
    surnames: Vec<&'static str>,
    cities: Vec<&'static str>,
    preps: Vec<(&'static str, &'static str)>,
}

fn make_word(
    rng: &mut ChaCha8Rng,
    syl: &[&str],
    used: &mut BTreeSet<String>,
    suffix: &str,
) -> String {
    loop {
        let n = rng.gen_range(2..=3);
        let mut w: String = (0..n).map(|_| *syl.choose(rng).unwrap()).collect();
        w.push_str(suffix);
        if used.insert(w.clone()) {
            return w;
        }
    }
}

impl SynthLanguage {
    pub fn new(size: LexiconSize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(LANGUAGE_SEED);
        let mut su = BTreeSet::new();
        let mut tu = BTreeSet::new();
        // reserve function words
        for w in ["the", "a", "with", "in", "on", "."] {
            su.insert(w.to_string());
        }
        for w in ["le", "la", "un", "una", "kon", "en", "sur", "."] {
            tu.insert(w.to_string());
        }
        let mut noun = |rng: &mut ChaCha8Rng| Noun {
            src: make_word(rng, SRC_SYLLABLES, &mut su, ""),
            tgt: make_word(rng, TGT_SYLLABLES, &mut tu, ""),
            feminine: rng.gen_bool(0.5),
        };
        let nouns: Vec<Noun> = (0..size.nouns).map(|_| noun(&mut rng)).collect();
        let ambiguous_nouns: Vec<Noun> = (0..size.ambiguous).map(|_| noun(&mut rng)).collect();
        let verbs = (0..size.verbs)
            .map(|_| {
                (
                    make_word(&mut rng, SRC_SYLLABLES, &mut su, "s"),
                    make_word(&mut rng, TGT_SYLLABLES, &mut tu, "r"),
                )
            })
            .collect();
        let adjectives = (0..size.adjectives)
            .map(|_| {
                (
                    make_word(&mut rng, SRC_SYLLABLES, &mut su, "y"),
                    make_word(&mut rng, TGT_SYLLABLES, &mut tu, "l"),
                )
            })
            .collect();
        let ambiguous = ambiguous_nouns
            .into_iter()
            .map(|n| Ambiguous {
                src: n.src.clone(),
                verb_tgt: make_word(&mut rng, TGT_SYLLABLES, &mut tu, "r"),
                noun: n,
            })
            .collect();
        let k = size.names.min(FIRST_NAMES.len());
        SynthLanguage {
            nouns,
            verbs,
            adjectives,
            ambiguous,
            names: FIRST_NAMES[..k].to_vec(),
            surnames: SURNAMES[..(k / 3).clamp(1, SURNAMES.len())].to_vec(),
            cities: CITIES[..(k / 2).clamp(1, CITIES.len())].to_vec(),
            preps: vec![("with", "kon"), ("in", "en"), ("on", "sur")],
        }
    }

    fn noun_phrase(&self, rng: &mut ChaCha8Rng, src: &mut Builder, tgt: &mut Builder) {
        if rng.gen_bool(0.25) {
            // names are copied verbatim
            let first = *self.names.choose(rng).unwrap();
            let two = rng.gen_bool(0.3);
            let last = *self.surnames.choose(rng).unwrap();
            for b in [&mut *src, &mut *tgt] {
                b.push(first, "PROPN", Some(("PERSON", true)));
                if two {
                    b.push(last, "PROPN", Some(("PERSON", false)));
                }
            }
            return;
        }
        let use_amb = !self.ambiguous.is_empty() && rng.gen_bool(0.2);
        let noun = if use_amb {
            &self.ambiguous.choose(rng).unwrap().noun
        } else {
            self.nouns.choose(rng).unwrap()
        };
        let definite = rng.gen_bool(0.6);
        let adj = (!self.adjectives.is_empty() && rng.gen_bool(0.4))
            .then(|| self.adjectives.choose(rng).unwrap());
        src.push(if definite { "the" } else { "a" }, "DET", None);
        let tdet = match (definite, noun.feminine) {
            (true, false) => "le",
            (true, true) => "la",
            (false, false) => "un",
            (false, true) => "una",
        };
        tgt.push(tdet, "DET", None);
        if let Some((s, _)) = adj {
            src.push(s, "ADJ", None);
        }
        src.push(&noun.src, "NOUN", None);
        tgt.push(&noun.tgt, "NOUN", None);
        if let Some((_, t)) = adj {
            tgt.push(t, "ADJ", None);
        }
    }

    fn pair(&self, rng: &mut ChaCha8Rng) -> SynthPair {
        let mut src = Builder::default();
        let mut tgt = Builder::default();
        let mut subj_t = Builder::default();
        self.noun_phrase(rng, &mut src, &mut subj_t);

        let (verb_s, verb_t) = if !self.ambiguous.is_empty() && rng.gen_bool(0.25) {
            let a = self.ambiguous.choose(rng).unwrap();
            (a.src.clone(), a.verb_tgt.clone())
        } else {
            self.verbs.choose(rng).unwrap().clone()
        };
        src.push(&verb_s, "VERB", None);

        let mut obj_t = Builder::default();
        self.noun_phrase(rng, &mut src, &mut obj_t);
        let mut pp_t = Builder::default();
        if rng.gen_bool(0.35) {
            let (ps, pt) = *self.preps.choose(rng).unwrap();
            src.push(ps, "ADP", None);
            pp_t.push(pt, "ADP", None);
            if rng.gen_bool(0.5) {
                let city = *self.cities.choose(rng).unwrap();
                src.push(city, "PROPN", Some(("GPE", true)));
                pp_t.push(city, "PROPN", Some(("GPE", true)));
            } else {
                self.noun_phrase(rng, &mut src, &mut pp_t);
            }
        }
        src.push(".", "PUNCT", None);
        tgt.extend(subj_t);
        tgt.extend(obj_t);
        tgt.extend(pp_t);
        tgt.push(&verb_t, "VERB", None);
        tgt.push(".", "PUNCT", None);
        SynthPair {
            src: src.finish(),
            tgt: tgt.finish(),
        }
    }

    /// `n` sentence pairs from a seeded stream.
    pub fn generate(&self, n: usize, seed: u64) -> Vec<SynthPair> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.pair(&mut rng)).collect()
    }

    /// Like [`SynthLanguage::generate`] but without repeated source sentences.
    pub fn generate_distinct(&self, n: usize, seed: u64) -> Vec<SynthPair> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(n);
        let mut attempts = 0;
        while out.len() < n && attempts < 100 * n {
            attempts += 1;
            let p = self.pair(&mut rng);
            if seen.insert(p.src.words.clone()) {
                out.push(p);
            }
        }
        out
    }

    /// Lexicon entries (first-seen tag wins for ambiguous forms).
    fn lexicon(&self, target: bool) -> BTreeMap<String, (String, Option<String>)> {
        let mut m = BTreeMap::new();
        let mut add = |w: &str, p: &str, e: Option<&str>| {
            m.entry(w.to_string())
                .or_insert((p.to_string(), e.map(str::to_string)));
        };
        if target {
            for w in ["le", "la", "un", "una"] {
                add(w, "DET", None);
            }
            for (_, t) in &self.preps {
                add(t, "ADP", None);
            }
        } else {
            for w in ["the", "a"] {
                add(w, "DET", None);
            }
            for (s, _) in &self.preps {
                add(s, "ADP", None);
            }
        }
        add(".", "PUNCT", None);
        for n in &self.nouns {
            add(if target { &n.tgt } else { &n.src }, "NOUN", None);
        }
        for a in &self.ambiguous {
            if target {
                add(&a.noun.tgt, "NOUN", None);
                add(&a.verb_tgt, "VERB", None);
            } else {
                add(&a.src, "NOUN", None);
            }
        }
        for (s, t) in &self.verbs {
            add(if target { t } else { s }, "VERB", None);
        }
        for (s, t) in &self.adjectives {
            add(if target { t } else { s }, "ADJ", None);
        }
        for n in self.names.iter().chain(&self.surnames) {
            add(n, "PROPN", Some("PERSON"));
        }
        for c in &self.cities {
            add(c, "PROPN", Some("GPE"));
        }
        m
    }

    /// `word<TAB>POS[<TAB>TYPE]` lines for the toy annotator.
    pub fn lexicon_tsv(&self, target: bool) -> String {
        let mut s = String::new();
        for (w, (p, e)) in self.lexicon(target) {
            s.push_str(&w);
            s.push('\t');
            s.push_str(&p);
            if let Some(e) = e {
                s.push('\t');
                s.push_str(&e);
            }
            s.push('\n');
        }
        s
    }

    /// Toy annotator knowing one side's lexicon.
    pub fn annotator(&self, target: bool) -> ToyAnnotator {
        let pv = LabelVocab::pos();
        let mut a = ToyAnnotator::default();
        for (w, (p, e)) in self.lexicon(target) {
            a.insert(
                &w,
                LexiconEntry {
                    pos: pv.id(&p).expect("known tag"),
                    entity: e,
                },
            );
        }
        a
    }
}

/// The 64-pair corpus used for overfitting checks.
pub fn toy_corpus() -> Vec<SynthPair> {
    SynthLanguage::new(LexiconSize::TOY).generate_distinct(64, 64)
}

#[derive(Default)]
struct Builder {
    words: Vec<String>,
    pos: Vec<String>,
    ner: Vec<String>,
}

impl Builder {
    /// `entity` is `(type, begins_span)`.
    fn push(&mut self, w: &str, pos: &str, entity: Option<(&str, bool)>) {
        self.words.push(w.to_string());
        self.pos.push(pos.to_string());
        self.ner.push(match entity {
            None => "O".to_string(),
            Some((t, true)) => format!("B_{t}"),
            Some((t, false)) => format!("I_{t}"),
        });
    }

    fn extend(&mut self, other: Builder) {
        self.words.extend(other.words);
        self.pos.extend(other.pos);
        self.ner.extend(other.ner);
    }

    fn finish(self) -> AnnotatedSentence {
        let pv = LabelVocab::pos();
        let nv = LabelVocab::ner();
        AnnotatedSentence {
            pos: self.pos.iter().map(|p| pv.id(p).expect("tag")).collect(),
            ner: self.ner.iter().map(|n| nv.id(n).expect("tag")).collect(),
            words: self.words,
        }
    }
}
