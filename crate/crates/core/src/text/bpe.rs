//! Byte-pair encoding over characters within whitespace-separated words.
//!
//! Non-final subwords of a word carry the `@@` continuation suffix, so
//! `detokenize` only needs to glue tokens ending in `@@` to their successor.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use crate::{Error, Result};

pub const CONTINUATION: &str = "@@";
const HEADER: &str = "snat-bpe\t1";

#[derive(Clone, Debug, PartialEq)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
}

impl BpeModel {
    fn from_merges(merges: Vec<(String, String)>) -> Self {
        let ranks = merges
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, p)| (p, i))
            .collect();
        BpeModel { merges, ranks }
    }

    /// Learns up to `num_merges` merges. Each round merges the most frequent
    /// adjacent pair; ties go to the lexicographically smallest pair.
    pub fn learn<S: AsRef<str>>(lines: &[S], num_merges: usize) -> Result<Self> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for line in lines {
            for w in line.as_ref().split_whitespace() {
                *counts.entry(w).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::Data("cannot learn BPE from an empty corpus".into()));
        }
        let mut words: Vec<(Vec<String>, usize)> = counts
            .into_iter()
            .map(|(w, c)| (w.chars().map(String::from).collect(), c))
            .collect();
        let mut merges = Vec::with_capacity(num_merges);
        while merges.len() < num_merges {
            let mut pairs: HashMap<(&str, &str), usize> = HashMap::new();
            for (syms, c) in &words {
                for win in syms.windows(2) {
                    *pairs.entry((&win[0], &win[1])).or_default() += c;
                }
            }
            let best = pairs
                .into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
                .map(|((a, b), _)| (a.to_string(), b.to_string()));
            let Some(pair) = best else { break };
            for (syms, _) in words.iter_mut() {
                merge_pair(syms, &pair.0, &pair.1);
            }
            merges.push(pair);
        }
        Ok(Self::from_merges(merges))
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// Every subword symbol reachable through the learned merges, plus the
    /// characters of `lines`.
    pub fn symbols<S: AsRef<str>>(&self, lines: &[S]) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = lines
            .iter()
            .flat_map(|l| l.as_ref().chars().filter(|c| !c.is_whitespace()))
            .map(String::from)
            .collect();
        for (a, b) in &self.merges {
            out.insert(format!("{a}{b}"));
        }
        out
    }

    /// Splits one word into subword pieces (without continuation markers).
    pub fn segment_word(&self, word: &str) -> Vec<String> {
        let mut syms: Vec<String> = word.chars().map(String::from).collect();
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())))
                .min()
                .copied();
            let Some(rank) = best else { break };
            let (a, b) = &self.merges[rank];
            merge_pair(&mut syms, a, b);
        }
        syms
    }

    /// Per-word subword tokens with `@@` on every non-final piece.
    pub fn tokenize_words<S: AsRef<str>>(&self, words: &[S]) -> Vec<Vec<String>> {
        words
            .iter()
            .map(|w| {
                let pieces = self.segment_word(w.as_ref());
                let last = pieces.len().saturating_sub(1);
                pieces
                    .into_iter()
                    .enumerate()
                    .map(|(i, p)| if i < last { p + CONTINUATION } else { p })
                    .collect()
            })
            .collect()
    }

    pub fn tokenize(&self, line: &str) -> Vec<String> {
        let words: Vec<&str> = line.split_whitespace().collect();
        self.tokenize_words(&words).into_iter().flatten().collect()
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{HEADER}")?;
        for (a, b) in &self.merges {
            writeln!(w, "{a} {b}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        match lines.next() {
            Some(Ok(h)) if h == HEADER => {}
            _ => return Err(Error::Format("BPE header missing".into())),
        }
        let mut merges = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                    merges.push((a.to_string(), b.to_string()))
                }
                _ => {
                    return Err(Error::Parse {
                        line: i + 2,
                        msg: format!("expected two symbols, got {line:?}"),
                    })
                }
            }
        }
        Ok(Self::from_merges(merges))
    }
}

fn merge_pair(syms: &mut Vec<String>, a: &str, b: &str) {
    let mut i = 0;
    while i + 1 < syms.len() {
        if syms[i] == a && syms[i + 1] == b {
            let right = syms.remove(i + 1);
            syms[i].push_str(&right);
        }
        i += 1;
    }
}

/// Inverse of [`BpeModel::tokenize`].
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    let mut glue = true;
    for t in tokens {
        let t = t.as_ref();
        if !glue {
            out.push(' ');
        }
        match t.strip_suffix(CONTINUATION) {
            Some(stem) => {
                out.push_str(stem);
                glue = true;
            }
            None => {
                out.push_str(t);
                glue = false;
            }
        }
    }
    out
}
