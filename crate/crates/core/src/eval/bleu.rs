use std::collections::HashMap;

use crate::{Error, Result};

pub const MAX_ORDER: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct BleuReport {
    /// 0..=100
    pub bleu: f64,
    /// Clipped n-gram precisions for n = 1..=4.
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngrams<'a, 'b>(toks: &'b [&'a str], n: usize) -> HashMap<&'b [&'a str], usize> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus-level BLEU-4 over whitespace tokens, no smoothing, one reference
/// per hypothesis.
pub fn bleu<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R]) -> Result<BleuReport> {
    if hyps.len() != refs.len() {
        return Err(Error::Data(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let mut matched = [0usize; MAX_ORDER];
    let mut total = [0usize; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hyps.iter().zip(refs) {
        let h: Vec<&str> = h.as_ref().split_whitespace().collect();
        let r: Vec<&str> = r.as_ref().split_whitespace().collect();
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=MAX_ORDER {
            let hc = ngrams(&h, n);
            let rc = ngrams(&r, n);
            for (g, c) in &hc {
                matched[n - 1] += (*c).min(rc.get(g).copied().unwrap_or(0));
            }
            total[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        precisions[n] = if total[n] == 0 {
            0.0
        } else {
            matched[n] as f64 / total[n] as f64
        };
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    let bleu = if precisions.contains(&0.0) {
        0.0
    } else {
        let mean_log = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        100.0 * brevity_penalty * mean_log.exp()
    };
    Ok(BleuReport {
        bleu,
        precisions,
        brevity_penalty,
        hyp_len,
        ref_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_corpus_scores_100() {
        let r = ["a b c d e", "the cat sat on the mat"];
        let b = bleu(&r, &r).unwrap();
        assert!((b.bleu - 100.0).abs() < 1e-9);
        assert_eq!(b.brevity_penalty, 1.0);
    }

    #[test]
    fn no_four_gram_match_scores_zero() {
        let b = bleu(&["a b c x"], &["a b c d"]).unwrap();
        assert_eq!(b.precisions[3], 0.0);
        assert_eq!(b.bleu, 0.0);
        assert!(bleu(&["a"], &["a", "b"]).is_err());
    }

    #[test]
    fn hand_computed_two_sentence_fixture() {
        // hyp1 "the cat sat on the mat"   ref1 "the cat sat on a mat"
        // hyp2 "a dog runs fast"          ref2 "a dog runs very fast"
        //   1-grams: 5/6 + 4/4 = 9/10
        //   2-grams: the-cat cat-sat sat-on = 3/5; a-dog dog-runs = 2/3 → 5/8
        //   3-grams: the-cat-sat cat-sat-on = 2/4; a-dog-runs = 1/2 → 3/6
        //   4-grams: the-cat-sat-on = 1/3; none of 1 → 1/4
        //   c = 10, r = 11, BP = exp(1 − 11/10)
        let b = bleu(
            &["the cat sat on the mat", "a dog runs fast"],
            &["the cat sat on a mat", "a dog runs very fast"],
        )
        .unwrap();
        let p = [0.9, 5.0 / 8.0, 0.5, 0.25];
        for (got, want) in b.precisions.iter().zip(p) {
            assert!((got - want).abs() < 1e-12);
        }
        let bp = (1.0f64 - 1.1).exp();
        let want = 100.0 * bp * (0.9f64 * 0.625 * 0.5 * 0.25).powf(0.25);
        assert!((b.bleu - want).abs() < 1e-9, "{} vs {want}", b.bleu);
        assert!((b.bleu - 46.5939).abs() < 1e-3);
        assert_eq!((b.hyp_len, b.ref_len), (10, 11));
    }

    proptest! {
        #[test]
        fn order_invariant_and_bounded(
            pairs in prop::collection::vec(
                (prop::collection::vec(0u8..5, 0..8), prop::collection::vec(0u8..5, 1..8)),
                1..6,
            ),
            rot in 0usize..6,
        ) {
            let txt = |v: &Vec<u8>| v.iter().map(|x| format!("w{x}")).collect::<Vec<_>>().join(" ");
            let h: Vec<String> = pairs.iter().map(|p| txt(&p.0)).collect();
            let r: Vec<String> = pairs.iter().map(|p| txt(&p.1)).collect();
            let a = bleu(&h, &r).unwrap();
            let k = rot % h.len();
            let (mut h2, mut r2) = (h.clone(), r.clone());
            h2.rotate_left(k);
            r2.rotate_left(k);
            let b = bleu(&h2, &r2).unwrap();
            prop_assert!((a.bleu - b.bleu).abs() < 1e-9);
            prop_assert!((0.0..=100.0 + 1e-9).contains(&a.bleu));
        }
    }
}
