use super::*;
use crate::copy::INFERENCE_SEED;
use crate::model::{ModelConfig, SnatModel, TeacherModel};
use crate::synth::{LexiconSize, SynthLanguage};
use crate::tensor::Tensor;
use crate::text::LabelVocab;
use crate::train::{prepare_corpus, PreparedCorpus};

fn corpus() -> PreparedCorpus {
    let pairs = SynthLanguage::new(LexiconSize::TOY).generate_distinct(6, 9);
    let refs: Vec<_> = pairs.iter().map(|p| (&p.src, &p.tgt)).collect();
    prepare_corpus(&refs, 30, 0.1).unwrap()
}

fn config(c: &PreparedCorpus) -> ModelConfig {
    let mut m = ModelConfig::desk(
        c.vocab.len(),
        LabelVocab::pos().len(),
        LabelVocab::ner().len(),
    );
    m.d_model = 16;
    m.d_ffn = 32;
    m
}

fn cand(length: usize, words: Vec<usize>, score: f64) -> Candidate {
    Candidate {
        length,
        words,
        pos: None,
        ner: None,
        model_score: 0.0,
        teacher_score: Some(score),
    }
}

#[test]
fn candidate_windows() {
    let p = |c, b| LengthPolicy { c, b };
    assert_eq!(candidate_lengths(10, p(2, 4)), (8..=16).collect::<Vec<_>>());
    assert_eq!(candidate_lengths(10, p(2, 9)), (3..=21).collect::<Vec<_>>());
    assert_eq!(candidate_lengths(10, p(2, 0)), vec![12]);
    assert_eq!(candidate_lengths(1, p(-3, 1)), vec![1]);
    assert_eq!(candidate_lengths(3, p(-3, 2)), vec![1, 2]);
    for dir in ["en-de", "de-en", "en-ro", "ro-en"] {
        for b in [4, 9] {
            let pol = LengthPolicy::for_direction(dir, b).unwrap();
            for n in 1..40 {
                let l = candidate_lengths(n, pol);
                let center = n as i64 + pol.c;
                let want: Vec<usize> = ((center - b as i64)..=(center + b as i64))
                    .filter(|&m| m >= 1)
                    .map(|m| m as usize)
                    .collect();
                let want = if want.is_empty() { vec![1] } else { want };
                assert_eq!(l, want);
            }
        }
    }
    assert_eq!(LengthPolicy::for_direction("en-de", 4).unwrap().c, 2);
    assert_eq!(LengthPolicy::for_direction("ro-en", 4).unwrap().c, -3);
    assert!(LengthPolicy::for_direction("xx", 4).is_none());
}

#[test]
fn c_estimate_rounds_mean_difference() {
    let c = corpus();
    let mut ex = c.examples[..2].to_vec();
    let keep = ex[0].src.len() + 1;
    ex[0].tgt.subwords.truncate(keep);
    ex[0].tgt.pos.truncate(keep);
    let mean = ex
        .iter()
        .map(|e| e.tgt.len() as f64 - e.src.len() as f64)
        .sum::<f64>()
        / 2.0;
    assert_eq!(estimate_c(&ex), mean.round() as i64);
    assert_eq!(estimate_c(&[]), 0);
}

#[test]
fn tie_breaking_prefers_shorter_then_smaller_ids_then_first() {
    let s = |c: &Candidate| c.teacher_score.unwrap();
    let cs = vec![cand(3, vec![9, 9, 9], -1.0), cand(2, vec![8, 8], -1.0)];
    assert_eq!(pick(&cs, s), 1);
    let cs = vec![cand(2, vec![5, 7], -1.0), cand(2, vec![5, 6], -1.0)];
    assert_eq!(pick(&cs, s), 1);
    let cs = vec![cand(2, vec![5, 6], -1.0), cand(2, vec![5, 6], -1.0)];
    assert_eq!(pick(&cs, s), 0);
    let cs = vec![cand(2, vec![5, 6], -2.0), cand(4, vec![9; 4], -0.5)];
    assert_eq!(pick(&cs, s), 1);
}

#[test]
fn rescoring_picks_the_teacher_argmax() {
    let c = corpus();
    let teacher = TeacherModel::new(config(&c), 3).unwrap();
    let src = &c.examples[0].src;
    let cands: Vec<Candidate> = (1..6)
        .map(|k| cand(k, (0..k).map(|i| 4 + (i * 7 + k) % 20).collect(), 0.0))
        .collect();
    let set = rescore(cands.clone(), &src.subwords, &teacher, Normalization::Mean).unwrap();
    let enc = teacher.encode(&src.subwords).unwrap();
    let best = set.best().teacher_score.unwrap();
    for (orig, scored) in cands.iter().zip(&set.candidates) {
        let lp = teacher.token_log_probs(&enc, &orig.words).unwrap();
        let mean = lp.iter().sum::<f64>() / lp.len() as f64;
        assert!((scored.teacher_score.unwrap() - mean).abs() < 1e-9);
        assert!(best >= mean);
    }
    // duplicates: the first copy wins
    let dup = vec![cands[2].clone(), cands[2].clone()];
    assert_eq!(
        rescore(dup, &src.subwords, &teacher, Normalization::Sum)
            .unwrap()
            .best,
        0
    );
    let one = rescore(
        vec![cands[1].clone()],
        &src.subwords,
        &teacher,
        Normalization::Mean,
    )
    .unwrap();
    assert_eq!(one.best, 0);
    assert!(rescore(vec![], &src.subwords, &teacher, Normalization::Mean).is_err());
}

#[test]
fn one_decoder_pass_per_candidate() {
    let c = corpus();
    let model = SnatModel::new(config(&c), 4).unwrap();
    let src = &c.examples[1].src;
    let masks = DecodeMasks {
        pos: Some(&c.pos_mask),
        ner: Some(&c.ner_mask),
    };
    model.counters().reset();
    let lengths = candidate_lengths(src.len(), LengthPolicy { c: 0, b: 4 });
    let fwd = decode_candidates(&model, src, &lengths, masks, INFERENCE_SEED).unwrap();
    assert_eq!(model.counters().decoder_calls(), 9);
    assert_eq!(model.counters().encoder_calls(), 1);
    let mut rev = lengths.clone();
    rev.reverse();
    let mut back = decode_candidates(&model, src, &rev, masks, INFERENCE_SEED).unwrap();
    back.reverse();
    assert_eq!(fwd, back);
    for (cand, m) in fwd.iter().zip(&lengths) {
        assert_eq!(cand.words.len(), *m);
        assert_eq!(cand.pos.as_ref().unwrap().len(), *m);
        assert!(cand.words.iter().all(|&w| is_emittable(w)));
    }
}

/// Brute-force joint argmax over every (word, POS, NER) cell, scored as
/// the mean of the two per-family log joints.
#[test]
fn decoding_maximizes_the_masked_joint() {
    let c = corpus();
    let model = SnatModel::new(config(&c), 5).unwrap();
    let src = &c.examples[2].src;
    let enc = model.encode(&[src]).unwrap();
    let masks = DecodeMasks {
        pos: Some(&c.pos_mask),
        ner: Some(&c.ner_mask),
    };
    let m = src.len();
    let got = decode_one(&model, src, &enc, m, masks, 17).unwrap();
    let dec = realize(&structure_copy(src, m, 17), src).unwrap();
    let pred = model
        .predict(&enc, &SeqBatch::from_sentences(&[&dec]))
        .unwrap();
    let dp: Tensor<f64> = c.pos_mask.dense();
    let dn: Tensor<f64> = c.ner_mask.dense();
    let (lp, ln) = (dp.last_dim(), dn.last_dim());
    let mut total = 0.0;
    for t in 0..m {
        let p = pred.word_probs.row(t);
        let qp = pred.pos_probs.as_ref().unwrap().row(t);
        let qn = pred.ner_probs.as_ref().unwrap().row(t);
        let z = |d: &Tensor<f64>, q: &[f32], cols: usize| -> f64 {
            let mut s = 0.0;
            for (i, &pi) in p.iter().enumerate() {
                for j in 0..cols {
                    s += pi as f64 * d.data()[i * cols + j] * q[j] as f64;
                }
            }
            s
        };
        let (zp, zn) = (z(&dp, qp, lp), z(&dn, qn, ln));
        let mut best = (f64::NEG_INFINITY, 0, 0, 0);
        for (i, &pi) in p.iter().enumerate() {
            if !is_emittable(i) {
                continue;
            }
            let mut bp = (f64::NEG_INFINITY, 0);
            for j in 0..lp {
                let v = pi as f64 * dp.data()[i * lp + j] * qp[j] as f64 / zp;
                if v > bp.0 {
                    bp = (v, j);
                }
            }
            let mut bn = (f64::NEG_INFINITY, 0);
            for j in 0..ln {
                let v = pi as f64 * dn.data()[i * ln + j] * qn[j] as f64 / zn;
                if v > bn.0 {
                    bn = (v, j);
                }
            }
            let s = 0.5 * (bp.0.ln() + bn.0.ln());
            if s > best.0 {
                best = (s, i, bp.1, bn.1);
            }
        }
        assert_eq!(got.words[t], best.1);
        assert_eq!(got.pos.as_ref().unwrap()[t], best.2);
        assert_eq!(got.ner.as_ref().unwrap()[t], best.3);
        total += best.0;
    }
    assert!((got.model_score - total).abs() < 1e-6 * total.abs().max(1.0));
}

#[test]
fn translator_edge_cases() {
    let c = corpus();
    let lang = SynthLanguage::new(LexiconSize::TOY);
    let ann = lang.annotator(false);
    let model = SnatModel::new(config(&c), 6).unwrap();
    let mut tr = Translator::new(&c.bpe, &c.vocab, &ann, &model, LengthPolicy { c: 0, b: 0 });
    tr.pos_mask = Some(&c.pos_mask);
    tr.ner_mask = Some(&c.ner_mask);
    let empty = tr.translate("   ").unwrap();
    assert_eq!(empty.text, "");
    assert!(empty.candidates.is_none());
    let line = lang.generate(1, 3)[0].src.text();
    let a = tr.translate(&line).unwrap();
    let b = tr.translate(&line).unwrap();
    assert_eq!(a, b);
    for tok in ["<pad>", "<s>", "</s>"] {
        assert!(!a.text.contains(tok));
    }
    assert_eq!(a.words.len(), a.text.split_whitespace().count());
    assert!(a.words.iter().all(|w| w.pos.is_some() && w.ner.is_some()));
    // unknown words go through <unk> rather than failing
    assert!(tr.translate("Zzyzx qwv").is_ok());
    let teacher = TeacherModel::new(config(&c), 7).unwrap();
    tr.teacher = Some(&teacher);
    tr.policy.b = 2;
    let r = tr.translate(&line).unwrap();
    let set = r.candidates.unwrap();
    assert_eq!(set.candidates.len(), 5);
    assert!(set.candidates.iter().all(|c| c.teacher_score.is_some()));
}
