//! Word–label compatibility masks.
//!
//! Entry `(w, l)` is 1 when word `w` was observed with label `l` in the
//! annotated training targets and `epsilon` otherwise. Padding and sentence
//! markers only admit the null label; the unknown word admits every label.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use super::labels::{LabelFamily, NULL_LABEL};
use super::sentence::LabeledSentence;
use super::vocab::{BOS, EOS, PAD, UNK};
use crate::tensor::{Scalar, Tensor};
use crate::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 0.1;
const HEADER: &str = "snat-mask\t1";

#[derive(Clone, Debug, PartialEq)]
pub struct WordLabelMask {
    family: LabelFamily,
    cols: usize,
    epsilon: f64,
    /// Sorted label ids with value 1, per word.
    ones: Vec<Vec<usize>>,
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::Config(format!(
            "mask epsilon must be in (0, 1], got {epsilon}"
        )));
    }
    Ok(())
}

impl WordLabelMask {
    /// Builds the mask for one label family from annotated target sentences.
    pub fn build(
        corpus: &[LabeledSentence],
        word_vocab_size: usize,
        family: LabelFamily,
        label_vocab_size: usize,
        epsilon: f64,
    ) -> Result<Self> {
        check_epsilon(epsilon)?;
        let mut seen: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); word_vocab_size];
        for s in corpus {
            let labels = match family {
                LabelFamily::Pos => &s.pos,
                LabelFamily::Ner => &s.ner,
            };
            for (&w, &l) in s.subwords.iter().zip(labels) {
                if w >= word_vocab_size {
                    return Err(Error::Index {
                        what: "word vocabulary",
                        index: w,
                        size: word_vocab_size,
                    });
                }
                if l >= label_vocab_size {
                    return Err(Error::Index {
                        what: "label vocabulary",
                        index: l,
                        size: label_vocab_size,
                    });
                }
                seen[w].insert(l);
            }
        }
        let all: Vec<usize> = (0..label_vocab_size).collect();
        let mut unobserved = 0;
        let ones = seen
            .into_iter()
            .enumerate()
            .map(|(w, labels)| match w {
                PAD | BOS | EOS => vec![NULL_LABEL],
                UNK => all.clone(),
                _ if labels.is_empty() => {
                    unobserved += 1;
                    all.clone()
                }
                _ => labels.into_iter().collect(),
            })
            .collect();
        if unobserved > 0 {
            log::warn!(
                "{family} mask: {unobserved} words never observed with a label; their rows are all-1"
            );
        }
        Ok(WordLabelMask {
            family,
            cols: label_vocab_size,
            epsilon,
            ones,
        })
    }

    /// A mask with every entry 1 (no penalty).
    pub fn inert(family: LabelFamily, rows: usize, cols: usize) -> Self {
        WordLabelMask {
            family,
            cols,
            epsilon: 1.0,
            ones: vec![(0..cols).collect(); rows],
        }
    }

    pub fn family(&self) -> LabelFamily {
        self.family
    }

    pub fn rows(&self) -> usize {
        self.ones.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn ones(&self, word: usize) -> &[usize] {
        &self.ones[word]
    }

    pub fn value(&self, word: usize, label: usize) -> f64 {
        if self.ones[word].binary_search(&label).is_ok() {
            1.0
        } else {
            self.epsilon
        }
    }

    /// Same mask with a different penalty.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        Ok(WordLabelMask {
            epsilon,
            ..self.clone()
        })
    }

    /// Dense `[rows, cols]` matrix.
    pub fn dense<T: Scalar>(&self) -> Tensor<T> {
        let mut data = vec![T::of_f64(self.epsilon); self.rows() * self.cols];
        for (w, ones) in self.ones.iter().enumerate() {
            for &l in ones {
                data[w * self.cols + l] = T::one();
            }
        }
        Tensor::new(vec![self.rows(), self.cols], data).expect("mask dims")
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "{HEADER}\t{}\t{}\t{}\t{}",
            self.family,
            self.epsilon,
            self.rows(),
            self.cols
        )?;
        for (i, ones) in self.ones.iter().enumerate() {
            let labels: Vec<String> = ones.iter().map(|l| l.to_string()).collect();
            writeln!(w, "{i}\t{}", labels.join(" "))?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .transpose()?
            .ok_or_else(|| Error::Format("empty mask file".into()))?;
        let fields: Vec<&str> = header.split('\t').collect();
        let bad = || Error::Format(format!("bad mask header {header:?}"));
        if fields.len() != 6 || fields[..2] != ["snat-mask", "1"] {
            return Err(bad());
        }
        let family = LabelFamily::parse(fields[2]).ok_or_else(bad)?;
        let epsilon: f64 = fields[3].parse().map_err(|_| bad())?;
        let rows: usize = fields[4].parse().map_err(|_| bad())?;
        let cols: usize = fields[5].parse().map_err(|_| bad())?;
        check_epsilon(epsilon)?;
        let mut ones = Vec::with_capacity(rows);
        for (i, line) in lines.enumerate() {
            let line = line?;
            let perr = |msg: String| Error::Parse { line: i + 2, msg };
            let (id, labels) = line
                .split_once('\t')
                .ok_or_else(|| perr("expected `word<TAB>labels`".into()))?;
            if id.parse::<usize>().ok() != Some(ones.len()) {
                return Err(perr(format!("expected row {}, got {id:?}", ones.len())));
            }
            let mut row = Vec::new();
            for l in labels.split(' ').filter(|s| !s.is_empty()) {
                let l: usize = l.parse().map_err(|_| perr(format!("bad label id {l:?}")))?;
                if l >= cols {
                    return Err(perr(format!("label id {l} out of range")));
                }
                row.push(l);
            }
            if row.is_empty() {
                return Err(perr("row without any 1-entry".into()));
            }
            row.sort_unstable();
            row.dedup();
            ones.push(row);
        }
        if ones.len() != rows {
            return Err(Error::Format(format!(
                "expected {rows} rows, found {}",
                ones.len()
            )));
        }
        Ok(WordLabelMask {
            family,
            cols,
            epsilon,
            ones,
        })
    }
}
