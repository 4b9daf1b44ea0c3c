//! Decoder-input construction: copy source subwords (and their labels) to
//! a target length `m`.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::text::labels::LabelVocab;
use crate::text::LabeledSentence;
use crate::{Error, Result};

/// Fixed seed used when decoding, so inference is reproducible.
pub const INFERENCE_SEED: u64 = 0x5EED;

/// Source positions feeding each decoder slot, in order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CopyPlan {
    pub positions: Vec<usize>,
    pub seed: u64,
}

impl CopyPlan {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Slot `i` copies source position `⌊i·n/m⌋`.
pub fn uniform_copy(n: usize, m: usize) -> CopyPlan {
    assert!(n >= 1 && m >= 1, "uniform_copy needs n, m >= 1");
    CopyPlan {
        positions: (0..m).map(|i| i * n / m).collect(),
        seed: 0,
    }
}

/// Positions tagged NOUN or VERB, or inside a named entity.
pub fn informative_positions(source: &LabeledSentence) -> BTreeSet<usize> {
    let pos = LabelVocab::pos();
    let ner = LabelVocab::ner();
    let noun = pos.id("NOUN").expect("NOUN tag");
    let verb = pos.id("VERB").expect("VERB tag");
    let outside = ner.outside();
    (0..source.len())
        .filter(|&i| {
            let p = source.pos[i];
            let e = source.ner[i];
            p == noun || p == verb || (e != outside && e != crate::text::labels::NULL_LABEL)
        })
        .collect()
}

/// Seed for a training example, so copies vary across epochs but runs
/// are reproducible.
pub fn example_seed(base: u64, epoch: u64, index: u64) -> u64 {
    // splitmix64 over the packed triple
    let mut z = base
        .wrapping_add(epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Keeps every informative source word and deletes others at random when
/// the target is shorter; duplicates informative words (placed next to
/// their original) when it is longer.
pub fn structure_copy(source: &LabeledSentence, m: usize, seed: u64) -> CopyPlan {
    assert!(m >= 1, "structure_copy needs m >= 1");
    let n = source.len();
    assert!(n >= 1, "structure_copy needs a non-empty source");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let informative = informative_positions(source);
    let positions = if n == m {
        (0..n).collect()
    } else if n > m {
        let k = informative.len();
        let (keep_pool, others): (Vec<usize>, Vec<usize>) = if k <= m {
            let rest: Vec<usize> = (0..n).filter(|i| !informative.contains(i)).collect();
            (informative.iter().copied().collect(), rest)
        } else {
            (vec![], informative.iter().copied().collect())
        };
        // choose survivors among the deletable pool
        let need = m - keep_pool.len();
        let picked = sample(&mut rng, others.len(), need);
        let mut keep: Vec<usize> = keep_pool;
        keep.extend(picked.iter().map(|j| others[j]));
        keep.sort_unstable();
        keep
    } else {
        let pool: Vec<usize> = if informative.is_empty() {
            (0..n).collect()
        } else {
            informative.iter().copied().collect()
        };
        let mut copies = vec![1usize; n];
        for _ in 0..m - n {
            copies[pool[rng.gen_range(0..pool.len())]] += 1;
        }
        copies
            .iter()
            .enumerate()
            .flat_map(|(i, &c)| std::iter::repeat_n(i, c))
            .collect()
    };
    CopyPlan { positions, seed }
}

/// Decoder input of length `plan.len()` with words and labels copied.
pub fn realize(plan: &CopyPlan, source: &LabeledSentence) -> Result<LabeledSentence> {
    let mut out = LabeledSentence::default();
    for &p in &plan.positions {
        if p >= source.len() {
            return Err(Error::Contract(format!(
                "copy plan index {p} outside source of length {}",
                source.len()
            )));
        }
        out.subwords.push(source.subwords[p]);
        out.pos.push(source.pos[p]);
        out.ner.push(source.ner[p]);
        out.word_start.push(source.word_start[p]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labeled(pos: &[&str], ner: &[&str]) -> LabeledSentence {
        let pv = LabelVocab::pos();
        let nv = LabelVocab::ner();
        LabeledSentence::new(
            (0..pos.len()).map(|i| 10 + i).collect(),
            pos.iter().map(|p| pv.id(p).unwrap()).collect(),
            ner.iter().map(|n| nv.id(n).unwrap()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn uniform_copy_examples() {
        assert_eq!(uniform_copy(5, 5).positions, vec![0, 1, 2, 3, 4]);
        assert_eq!(uniform_copy(4, 6).positions, vec![0, 0, 1, 2, 2, 3]);
        assert_eq!(uniform_copy(6, 3).positions, vec![0, 2, 4]);
    }

    #[test]
    fn informative_examples() {
        let s = labeled(&["DET", "NOUN", "VERB", "ADP"], &["O", "O", "O", "B_GPE"]);
        assert_eq!(informative_positions(&s), BTreeSet::from([1, 2, 3]));
        let s = labeled(&["DET", "DET"], &["O", "O"]);
        assert!(informative_positions(&s).is_empty());
    }

    #[test]
    fn deletion_keeps_informative_words() {
        let s = labeled(&["DET", "NOUN", "VERB", "ADP", "DET", "NOUN"], &["O"; 6]);
        let mut seen = BTreeSet::new();
        for seed in 0..200 {
            let p = structure_copy(&s, 4, seed).positions;
            assert_eq!(p.len(), 4);
            for i in [1, 2, 5] {
                assert!(p.contains(&i));
            }
            let extra: Vec<usize> = p
                .iter()
                .copied()
                .filter(|i| ![1, 2, 5].contains(i))
                .collect();
            assert_eq!(extra.len(), 1);
            seen.insert(extra[0]);
            assert!(p.windows(2).all(|w| w[0] < w[1]));
        }
        // each of the deletable positions is sometimes the survivor
        assert_eq!(seen, BTreeSet::from([0, 3, 4]));
        assert_eq!(structure_copy(&s, 4, 9), structure_copy(&s, 4, 9));
    }

    #[test]
    fn duplication_of_all_informative_source() {
        let s = labeled(&["NOUN", "VERB", "NOUN"], &["O"; 3]);
        for seed in 0..50 {
            let p = structure_copy(&s, 5, seed).positions;
            assert_eq!(p.len(), 5);
            assert!(p.windows(2).all(|w| w[0] <= w[1]));
            for i in 0..3 {
                assert!(p.contains(&i));
            }
        }
    }

    #[test]
    fn too_many_informative_words_are_thinned() {
        let s = labeled(&["NOUN"; 5], &["O"; 5]);
        let p = structure_copy(&s, 2, 3).positions;
        assert_eq!(p.len(), 2);
        assert!(p[0] < p[1]);
    }

    #[test]
    fn realize_copies_labels() {
        let s = labeled(&["NOUN"], &["B_ORG"]);
        let d = realize(
            &CopyPlan {
                positions: vec![0, 0],
                seed: 0,
            },
            &s,
        )
        .unwrap();
        assert_eq!(d.subwords, vec![10, 10]);
        assert_eq!(d.pos, vec![s.pos[0]; 2]);
        assert_eq!(d.ner, vec![s.ner[0]; 2]);
        let id = realize(&structure_copy(&s, 1, 0), &s).unwrap();
        assert_eq!(id, s);
        assert!(realize(
            &CopyPlan {
                positions: vec![3],
                seed: 0
            },
            &s
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn uniform_copy_is_monotone_and_in_range(n in 1usize..40, m in 1usize..40) {
            let p = uniform_copy(n, m).positions;
            prop_assert_eq!(p.len(), m);
            prop_assert!(p.iter().all(|&i| i < n));
            prop_assert!(p.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
