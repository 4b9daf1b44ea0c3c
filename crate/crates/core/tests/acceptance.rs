//! End-to-end acceptance checks. Everything runs inside one test so the
//! latency measurement is not disturbed by other test threads.
//!
//! Each criterion prints one `PASS`/`FAIL` line. Hard gates panic on
//! failure. Measurements that depend on the machine or on training
//! dynamics are reported but only enforced with `SNAT_STRICT=1`.

use std::collections::{BTreeSet, HashSet};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use snat::copy::{informative_positions, realize, structure_copy, uniform_copy};
use snat::eval::{
    ablate, ablation_tsv, bench, bleu, decode_examples, reference_texts, standard_variants,
    BenchConfig, LengthMode,
};
use snat::infer::{
    candidate_lengths, rescore, select_by_model, Candidate, DecodeMasks, LengthPolicy,
    Normalization,
};
use snat::model::{Checkpoint, ModelConfig, SeqBatch, SnatModel, TeacherModel};
use snat::objective::{joint_word_label, total_loss, DenseMasks, ObjectiveConfig, TrainBatch};
use snat::synth::{toy_corpus, LexiconSize, SynthLanguage};
use snat::tensor::Tensor;
use snat::text::labels::NULL_LABEL;
use snat::text::vocab::{BOS, EOS, PAD, UNK};
use snat::text::{BpeModel, LabelFamily, LabelVocab, LabeledSentence, Vocabulary, WordLabelMask};
use snat::train::{
    max_decode_len, prepare_corpus, Example, PreparedCorpus, SnatLearner, TeacherLearner,
    TrainConfig, Trainer,
};

// Pinned tolerances.
const GRAD_REL_TOL: f64 = 1e-3;
const GRAD_REL_FLOOR: f64 = 1e-6;
const FD_STEP: f64 = 1e-5;
const GRAD_TIME_LIMIT: Duration = Duration::from_secs(120);
const JOINT_TOL: f64 = 1e-9;
const COPY_CASES: usize = 10_000;
const OVERFIT_BLEU: f64 = 95.0;
const OVERFIT_STEPS: usize = 2000;
const OVERFIT_TIME_LIMIT: Duration = Duration::from_secs(15 * 60);
const MIN_SPEEDUP: f64 = 3.0;
const RESUME_STEPS: usize = 100;

struct Report {
    strict: bool,
    soft_failures: Vec<String>,
}

impl Report {
    /// One line per criterion. `gate` must hold; `measured` is a target
    /// that may be missed on this hardware or at this scale, and is
    /// enforced only in strict mode.
    fn line(&mut self, n: usize, name: &str, gate: bool, measured: bool, detail: String) {
        say(&format!(
            "criterion {n} {name}: {} ({detail})\n",
            verdict(gate && measured)
        ));
        assert!(gate, "criterion {n} {name} failed: {detail}");
        if !measured {
            self.soft_failures.push(format!("{n} {name}"));
            assert!(!self.strict, "criterion {n} {name} failed: {detail}");
        }
    }

    fn hard(&mut self, n: usize, name: &str, ok: bool, detail: String) {
        self.line(n, name, ok, true, detail);
    }
}

/// Writes past the test harness's output capture, so the report shows up
/// in a plain `cargo test` run.
fn say(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes());
    let _ = out.flush();
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn corpus_of(pairs: &[snat::synth::SynthPair], merges: usize) -> PreparedCorpus {
    let refs: Vec<_> = pairs.iter().map(|p| (&p.src, &p.tgt)).collect();
    prepare_corpus(&refs, merges, 0.1).unwrap()
}

fn label_sizes() -> (usize, usize) {
    (LabelVocab::pos().len(), LabelVocab::ner().len())
}

// ---------------------------------------------------------------- 1

/// Largest relative error between analytic and central-difference
/// gradients over every scalar parameter.
fn grad_check(cfg: ModelConfig, md: Option<usize>) -> (f64, usize) {
    let (pl, nl) = (cfg.pos_vocab, cfg.ner_vocab);
    let sent = |w: &[usize], p: &[usize], n: &[usize]| {
        LabeledSentence::new(w.to_vec(), p.to_vec(), n.to_vec()).unwrap()
    };
    let srcs = [
        sent(&[4, 5, 6, 7], &[8, 16, 6, 1], &[1, 2, 3, 1]),
        sent(&[8, 9], &[12, 16], &[6, 1]),
        sent(&[10, 11, 4], &[8, 8, 13], &[2, 3, 1]),
    ];
    let tgts = [
        sent(&[5, 12, 13, 7, 6], &[16, 8, 6, 1, 8], &[1, 2, 3, 1, 1]),
        sent(&[9, 8], &[16, 12], &[1, 6]),
        sent(&[11, 10, 13], &[8, 8, 6], &[3, 2, 1]),
    ];
    let dec: Vec<LabeledSentence> = srcs
        .iter()
        .zip(&tgts)
        .enumerate()
        .map(|(i, (s, t))| realize(&structure_copy(s, t.len(), i as u64), s).unwrap())
        .collect();
    let batch = TrainBatch {
        src: SeqBatch::from_sentences(&srcs.iter().collect::<Vec<_>>()),
        dec: SeqBatch::from_sentences(&dec.iter().collect::<Vec<_>>()),
        tgt: SeqBatch::from_sentences(&tgts.iter().collect::<Vec<_>>()),
    };
    let pm = WordLabelMask::build(&tgts, cfg.word_vocab, LabelFamily::Pos, pl, 0.1).unwrap();
    let nm = WordLabelMask::build(&tgts, cfg.word_vocab, LabelFamily::Ner, nl, 0.1).unwrap();
    let masks: DenseMasks<f64> = DenseMasks::new(Some(&pm), Some(&nm));
    let obj = ObjectiveConfig { lambda: 0.75, md };
    let model = SnatModel::<f64>::new(cfg, 17).unwrap();

    let loss = |m: &SnatModel<f64>| {
        let mut g = m.graph(false, 0);
        let (l, _) = total_loss(&mut g, m, &batch, &masks, &obj).unwrap();
        g.tape.value(l).item()
    };
    let mut g = model.graph(true, 0);
    let (l, bd) = total_loss(&mut g, &model, &batch, &masks, &obj).unwrap();
    if md.is_some() {
        assert!(bd.alignment_reg > 0.0);
    }
    g.tape.backward(l).unwrap();
    let grads = g.param_grads();
    drop(g);

    let mut m = model.clone();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (pi, grad) in grads.iter().enumerate() {
        for k in 0..grad.len() {
            let orig = m.params().tensors()[pi].data()[k];
            m.params_mut().tensors_mut()[pi].data_mut()[k] = orig + FD_STEP;
            let up = loss(&m);
            m.params_mut().tensors_mut()[pi].data_mut()[k] = orig - FD_STEP;
            let down = loss(&m);
            m.params_mut().tensors_mut()[pi].data_mut()[k] = orig;
            let fd = (up - down) / (2.0 * FD_STEP);
            let an = grad[k];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(GRAD_REL_FLOOR);
            if rel > worst {
                worst = rel;
            }
            count += 1;
        }
    }
    (worst, count)
}

fn criterion_1(r: &mut Report) {
    let (pl, nl) = label_sizes();
    let cfg = |dec| ModelConfig {
        encoder_layers: 2,
        decoder_layers: dec,
        num_heads: 2,
        d_model: 16,
        d_ffn: 32,
        word_vocab: 14,
        pos_vocab: pl,
        ner_vocab: nl,
        max_positions: 16,
        dropout: 0.0,
        use_pos: true,
        use_ner: true,
    };
    let start = Instant::now();
    // Two decoder layers leave no valid alignment layer, so the
    // regularizer is checked on a three-layer decoder as well.
    let (a, na) = grad_check(cfg(2), None);
    let (b, nb) = grad_check(cfg(3), Some(2));
    let took = start.elapsed();
    let worst = a.max(b);
    r.hard(
        1,
        "gradient check",
        worst < GRAD_REL_TOL && took < GRAD_TIME_LIMIT,
        format!(
            "{} + {} parameters, max rel err {worst:.2e} < {GRAD_REL_TOL:e}, {:.1}s",
            na,
            nb,
            took.as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------- 2

fn criterion_2(r: &mut Report) {
    // uniform copy: slot i takes the last source index j with j·m ≤ i·n
    let mut copy_ok = true;
    for n in 1..=30 {
        for m in 1..=30 {
            let want: Vec<usize> = (0..m)
                .map(|i| (0..n).filter(|j| j * m <= i * n).max().unwrap())
                .collect();
            copy_ok &= uniform_copy(n, m).positions == want;
        }
    }

    // masks against an independent pair enumeration
    let pairs = SynthLanguage::new(LexiconSize::TOY).generate(10, 3);
    let c = corpus_of(&pairs, 40);
    let targets: Vec<LabeledSentence> = c.examples.iter().map(|e| e.tgt.clone()).collect();
    let v = c.vocab.len();
    let mut mask_ok = true;
    for (family, labels) in [
        (LabelFamily::Pos, LabelVocab::pos().len()),
        (LabelFamily::Ner, LabelVocab::ner().len()),
    ] {
        let eps = 0.25;
        let mask = WordLabelMask::build(&targets, v, family, labels, eps).unwrap();
        let mut seen: HashSet<(usize, usize)> = HashSet::new();
        let mut observed_words: HashSet<usize> = HashSet::new();
        for s in &targets {
            let ls = match family {
                LabelFamily::Pos => &s.pos,
                LabelFamily::Ner => &s.ner,
            };
            for i in 0..s.len() {
                seen.insert((s.subwords[i], ls[i]));
                observed_words.insert(s.subwords[i]);
            }
        }
        for w in 0..v {
            for l in 0..labels {
                let want = if [PAD, BOS, EOS].contains(&w) {
                    if l == NULL_LABEL {
                        1.0
                    } else {
                        eps
                    }
                } else if w == UNK || !observed_words.contains(&w) || seen.contains(&(w, l)) {
                    1.0
                } else {
                    eps
                };
                mask_ok &= mask.value(w, l) == want;
            }
        }
    }

    // 2×2 joint
    let p = Tensor::from_f64(&[1, 2], &[0.5, 0.5]).unwrap();
    let m = Tensor::from_f64(&[2, 2], &[1.0, 0.1, 0.1, 1.0]).unwrap();
    let j = joint_word_label(&p, &p, &m).unwrap();
    let want = [0.25 / 0.55, 0.025 / 0.55, 0.025 / 0.55, 0.25 / 0.55];
    let joint_err = j
        .data()
        .iter()
        .zip(want)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    r.hard(
        2,
        "oracles",
        copy_ok && mask_ok && joint_err < JOINT_TOL,
        format!(
            "uniform copy 900 shapes {}, masks {}, joint err {joint_err:.1e} < {JOINT_TOL:e}",
            verdict(copy_ok),
            verdict(mask_ok)
        ),
    );
}

// ---------------------------------------------------------------- 3

fn copy_violations(src: &LabeledSentence, m: usize, seed: u64) -> Vec<&'static str> {
    let mut bad = Vec::new();
    let plan = structure_copy(src, m, seed);
    let p = &plan.positions;
    let n = src.len();
    let info = informative_positions(src);
    if p.len() != m {
        bad.push("length");
    }
    if p.windows(2).any(|w| w[0] > w[1]) || p.iter().any(|&i| i >= n) {
        bad.push("order");
    }
    let kept: BTreeSet<usize> = p.iter().copied().collect();
    if m >= n {
        if kept.len() != n {
            bad.push("all sources kept when expanding");
        }
        let dup_ok = p
            .windows(2)
            .filter(|w| w[0] == w[1])
            .all(|w| info.is_empty() || info.contains(&w[0]));
        if !dup_ok {
            bad.push("duplicated a non-informative word");
        }
    } else {
        if kept.len() != m {
            bad.push("duplicate while shrinking");
        }
        if info.len() <= m && !info.is_subset(&kept) {
            bad.push("dropped an informative word");
        }
        if info.len() > m && !kept.is_subset(&info) {
            bad.push("kept a non-informative word over an informative one");
        }
    }
    if structure_copy(src, m, seed) != plan {
        bad.push("seed determinism");
    }
    bad
}

fn criterion_3(r: &mut Report) {
    let (pl, nl) = label_sizes();
    let outside = LabelVocab::ner().outside();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut violations = 0;
    let mut first = None;
    for case in 0..COPY_CASES {
        let n = rng.gen_range(1..=40);
        let m = rng.gen_range(1..=80);
        let dense_info = rng.gen_bool(0.5);
        let src = LabeledSentence::new(
            (0..n).map(|_| rng.gen_range(4..100)).collect(),
            (0..n)
                .map(|_| {
                    if dense_info {
                        rng.gen_range(1..pl)
                    } else {
                        [1, 2, 6, 13][rng.gen_range(0..4)]
                    }
                })
                .collect(),
            (0..n)
                .map(|_| {
                    if dense_info || rng.gen_bool(0.1) {
                        rng.gen_range(1..nl)
                    } else {
                        outside
                    }
                })
                .collect(),
        )
        .unwrap();
        let seed = rng.gen();
        let bad = copy_violations(&src, m, seed);
        if !bad.is_empty() {
            violations += 1;
            first.get_or_insert((case, n, m, bad));
        }
    }
    r.hard(
        3,
        "structure copy properties",
        violations == 0,
        format!("{COPY_CASES} cases, {violations} violations {first:?}"),
    );
}

// ---------------------------------------------------------------- 4

fn criterion_4(r: &mut Report) {
    let start = Instant::now();
    let c = corpus_of(&toy_corpus(), 200);
    let (pl, nl) = label_sizes();
    let mut mc = ModelConfig::desk(c.vocab.len(), pl, nl);
    mc.decoder_layers = 4;
    mc.dropout = 0.0;
    let tc = TrainConfig {
        lr: 3e-3,
        max_steps: OVERFIT_STEPS,
        max_tokens: 512,
        eval_every: 50,
        patience: 1000,
        stop_at_accuracy: Some(1.0),
        ..TrainConfig::default()
    };
    let data = &c.examples;

    let teacher = TeacherLearner {
        model: TeacherModel::new(mc.clone(), 5).unwrap(),
        smoothing: 0.0,
    };
    let mut tt = Trainer::new(teacher, tc.clone()).unwrap();
    tt.run(data, &[]).unwrap();
    let teacher_steps = tt.progress.step;
    let exact = data
        .iter()
        .filter(|e| {
            let m = &tt.learner.model;
            let enc = m.encode(&e.src.subwords).unwrap();
            m.greedy(&enc, max_decode_len(e.src.len())).unwrap().tokens == e.tgt.subwords
        })
        .count();

    let masks = DenseMasks::new(Some(&c.pos_mask), Some(&c.ner_mask));
    let obj = ObjectiveConfig {
        lambda: 0.75,
        md: Some(3),
    };
    let learner = SnatLearner::new(SnatModel::new(mc, 5).unwrap(), masks, obj).unwrap();
    let mut st = Trainer::new(learner, tc).unwrap();
    st.run(data, &[]).unwrap();
    let snat_steps = st.progress.step;
    let dm = DecodeMasks {
        pos: Some(&c.pos_mask),
        ner: Some(&c.ner_mask),
    };
    let hyps = decode_examples(
        &st.learner.model,
        data,
        &c.vocab,
        LengthMode::Gold,
        dm,
        None,
    )
    .unwrap();
    let score = bleu(&hyps, &reference_texts(data, &c.vocab)).unwrap().bleu;
    let took = start.elapsed();

    r.hard(
        4,
        "toy overfit",
        exact == data.len()
            && score >= OVERFIT_BLEU
            && snat_steps <= OVERFIT_STEPS
            && took < OVERFIT_TIME_LIMIT,
        format!(
            "teacher exact {exact}/{} after {teacher_steps} steps, SNAT gold-length BLEU {score:.2} \
             >= {OVERFIT_BLEU} after {snat_steps} steps, {:.0}s",
            data.len(),
            took.as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------- 5

fn criterion_5(r: &mut Report) {
    let start = Instant::now();
    let lang = SynthLanguage::new(LexiconSize::FULL);
    let mut pairs = lang.generate(5000, 21);
    pairs.extend(lang.generate(200, 22));
    let c = corpus_of(&pairs, 300);
    let (train, dev) = c.examples.split_at(5000);
    let (pl, nl) = label_sizes();
    let mut mc = ModelConfig::desk(c.vocab.len(), pl, nl);
    mc.d_model = 32;
    mc.d_ffn = 128;
    mc.decoder_layers = 4;
    mc.dropout = 0.0;
    let steps = 1000;
    let tc = TrainConfig {
        lr: 3e-3,
        max_steps: steps,
        eval_every: steps / 4,
        max_tokens: 256,
        patience: 100,
        ..TrainConfig::default()
    };
    let variants: Vec<_> = standard_variants(0.75)
        .into_iter()
        .filter(|v| ["full", "no-label", "no-reg"].contains(&v.name.as_str()))
        .collect();
    let seeds = [1, 2, 3];
    let rows = ablate(
        train,
        dev,
        &c.vocab,
        &c.pos_mask,
        &c.ner_mask,
        &mc,
        &tc,
        &variants,
        &seeds,
        LengthMode::Gold,
    )
    .unwrap();
    say(&ablation_tsv(&rows));
    let score = |name: &str, seed: u64| {
        rows.iter()
            .find(|r| r.variant == name && r.seed == seed)
            .unwrap()
            .bleu
    };
    let mean = |name: &str| seeds.iter().map(|&s| score(name, s)).sum::<f64>() / 3.0;
    let wins = |a: &str, b: &str| seeds.iter().filter(|&&s| score(a, s) > score(b, s)).count();
    let label_ok = mean("full") >= mean("no-label") && wins("full", "no-label") >= 2;
    let reg_ok = mean("full") >= mean("no-reg") && wins("full", "no-reg") >= 2;
    let detail = format!(
        "label direction {}, alignment direction {}; mean BLEU full {:.2}, no-label {:.2} \
         (full ahead in {}/3), no-reg {:.2} (full ahead in {}/3), {:.0}s",
        verdict(label_ok),
        verdict(reg_ok),
        mean("full"),
        mean("no-label"),
        wins("full", "no-label"),
        mean("no-reg"),
        wins("full", "no-reg"),
        start.elapsed().as_secs_f64()
    );
    r.line(5, "directional ablation", true, label_ok && reg_ok, detail);
}

// ---------------------------------------------------------------- 6

fn criterion_6(r: &mut Report) {
    let c = corpus_of(
        &SynthLanguage::new(LexiconSize::FULL).generate_distinct(200, 5),
        200,
    );
    let (pl, nl) = label_sizes();
    let mc = ModelConfig::desk(c.vocab.len(), pl, nl);
    let model = SnatModel::new(mc.clone(), 1).unwrap();
    let teacher = TeacherModel::new(mc, 2).unwrap();
    let sources: Vec<LabeledSentence> = c.examples[..10].iter().map(|e| e.src.clone()).collect();
    let masks = DecodeMasks {
        pos: Some(&c.pos_mask),
        ner: Some(&c.ner_mask),
    };
    let cfg = BenchConfig {
        runs: 5,
        out_len: 20,
        widths: vec![4, 9],
    };
    let report = bench(&model, &teacher, &sources, masks, &cfg).unwrap();
    say(&report.tsv());
    let ar = report.row("ar-greedy").unwrap();
    let nat = report.row("nat-b0").unwrap();
    let counters = report.counters_ok() && ar.decoder_calls == 20.0 && nat.decoder_calls == 1.0;
    r.line(
        6,
        "latency",
        counters,
        nat.speedup >= MIN_SPEEDUP,
        format!(
            "counters {}: AR {} decoder calls for m=20, NAT {} per candidate; \
             NAT(B=0) {:.3} ms vs AR {:.3} ms, speedup {:.2}x, target {MIN_SPEEDUP}x",
            verdict(counters),
            ar.decoder_calls,
            nat.decoder_calls,
            nat.ms_per_sentence,
            ar.ms_per_sentence,
            nat.speedup
        ),
    );
}

// ---------------------------------------------------------------- 7

fn cand(words: Vec<usize>, model_score: f64) -> Candidate {
    Candidate {
        length: words.len(),
        words,
        pos: None,
        ner: None,
        model_score,
        teacher_score: None,
    }
}

fn criterion_7(r: &mut Report) {
    let mut lengths_ok = true;
    for (dir, c) in [("en-de", 2), ("de-en", -2), ("en-ro", 3), ("ro-en", -3)] {
        for b in [4usize, 9] {
            let pol = LengthPolicy::for_direction(dir, b).unwrap();
            lengths_ok &= pol.c == c && pol.b == b;
            for n in 1..=60usize {
                let center = n as i64 + c;
                let mut want: Vec<usize> = (center - b as i64..=center + b as i64)
                    .map(|m| m.max(1) as usize)
                    .collect();
                want.dedup();
                lengths_ok &= candidate_lengths(n, pol) == want;
            }
        }
    }
    lengths_ok &=
        candidate_lengths(10, LengthPolicy { c: 2, b: 4 }) == (8..=16).collect::<Vec<_>>();

    // A teacher with all-zero weights gives every token the same
    // probability, so every candidate ties on the mean score.
    let c = corpus_of(&toy_corpus(), 100);
    let (pl, nl) = label_sizes();
    let mut mc = ModelConfig::desk(c.vocab.len(), pl, nl);
    mc.d_model = 16;
    mc.d_ffn = 32;
    let mut flat = TeacherModel::new(mc.clone(), 1).unwrap();
    for t in flat.params_mut().tensors_mut() {
        t.data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    let src = &c.examples[0].src.subwords;
    let pick = |cands: Vec<Candidate>| {
        rescore(cands, src, &flat, Normalization::Mean)
            .unwrap()
            .best
    };
    let mut ties_ok = pick(vec![cand(vec![9, 9, 9], 0.0), cand(vec![8, 8], 0.0)]) == 1;
    ties_ok &= pick(vec![
        cand(vec![5, 7], 0.0),
        cand(vec![5, 6], 0.0),
        cand(vec![6, 5], 0.0),
    ]) == 1;
    ties_ok &= pick(vec![cand(vec![5, 6], 0.0), cand(vec![5, 6], 0.0)]) == 0;
    ties_ok &= select_by_model(vec![cand(vec![7, 7], -1.0), cand(vec![6, 6], -1.0)])
        .unwrap()
        .best
        == 1;

    // With a real teacher the winner is the argmax of its scores.
    let teacher = TeacherModel::new(mc, 2).unwrap();
    let cands: Vec<Candidate> = (1..8)
        .map(|k| {
            cand(
                (0..k)
                    .map(|i| 4 + (i * 5 + k) % (c.vocab.len() - 4))
                    .collect(),
                0.0,
            )
        })
        .collect();
    let set = rescore(cands, src, &teacher, Normalization::Mean).unwrap();
    let best = set.best().teacher_score.unwrap();
    let argmax_ok = set
        .candidates
        .iter()
        .all(|c| c.teacher_score.unwrap() <= best);

    r.hard(
        7,
        "inference contract",
        lengths_ok && ties_ok && argmax_ok,
        format!(
            "length windows {}, tie-breaks {}, argmax {}",
            verdict(lengths_ok),
            verdict(ties_ok),
            verdict(argmax_ok)
        ),
    );
}

// ---------------------------------------------------------------- 8

fn bytes_of(write: impl FnOnce(&mut Vec<u8>)) -> Vec<u8> {
    let mut v = Vec::new();
    write(&mut v);
    v
}

fn criterion_8(r: &mut Report) {
    let c = corpus_of(&toy_corpus(), 200);
    let (pl, nl) = label_sizes();
    let mut mc = ModelConfig::desk(c.vocab.len(), pl, nl);
    mc.d_model = 32;
    mc.d_ffn = 64;
    mc.decoder_layers = 4;

    // artifacts
    let bpe = bytes_of(|w| c.bpe.write(w).unwrap());
    let bpe_ok = bytes_of(|w| BpeModel::read(bpe.as_slice()).unwrap().write(w).unwrap()) == bpe;
    let voc = bytes_of(|w| c.vocab.write(w).unwrap());
    let voc_ok = bytes_of(|w| Vocabulary::read(voc.as_slice()).unwrap().write(w).unwrap()) == voc;
    let mut mask_ok = true;
    for m in [&c.pos_mask, &c.ner_mask] {
        let b = bytes_of(|w| m.write(w).unwrap());
        let back = WordLabelMask::read(b.as_slice()).unwrap();
        mask_ok &= &back == m && bytes_of(|w| back.write(w).unwrap()) == b;
    }
    let model = SnatModel::new(mc.clone(), 3).unwrap();
    let ck = bytes_of(|w| Checkpoint::from_snat(&model, 0).write(w).unwrap());
    let back = Checkpoint::read(ck.as_slice()).unwrap();
    let bits = |m: &SnatModel| -> Vec<u32> {
        m.params()
            .tensors()
            .iter()
            .flat_map(|t| t.data().iter().map(|x| x.to_bits()))
            .collect()
    };
    let ck_ok = bytes_of(|w| back.write(w).unwrap()) == ck
        && bits(&back.into_snat().unwrap()) == bits(&model);

    // resume
    let masks = || DenseMasks::new(Some(&c.pos_mask), Some(&c.ner_mask));
    let obj = ObjectiveConfig {
        lambda: 0.75,
        md: Some(3),
    };
    let tc = TrainConfig {
        lr: 1e-3,
        max_steps: RESUME_STEPS,
        max_tokens: 256,
        eval_every: 25,
        log_every: 1,
        patience: 100,
        ..TrainConfig::default()
    };
    let data: &[Example] = &c.examples;
    let dev = &data[..8];
    let fresh = || SnatLearner::new(SnatModel::new(mc.clone(), 3).unwrap(), masks(), obj).unwrap();
    let mut full = Trainer::new(fresh(), tc.clone()).unwrap();
    full.run(data, dev).unwrap();
    let mut first = Trainer::new(fresh(), tc.clone()).unwrap();
    first.run_until(data, dev, RESUME_STEPS / 2).unwrap();
    let state = bytes_of(|w| first.checkpoint().write(w).unwrap());
    let ck = Checkpoint::read(state.as_slice()).unwrap();
    let learner = SnatLearner::new(ck.into_snat().unwrap(), masks(), obj).unwrap();
    let mut second = Trainer::resume(learner, tc, &ck).unwrap();
    second.run(data, dev).unwrap();
    let curve = |t: &Trainer<SnatLearner>| -> Vec<(usize, &'static str, u64)> {
        t.log
            .iter()
            .filter(|l| l.step > RESUME_STEPS / 2)
            .map(|l| (l.step, l.split, l.loss.total.to_bits()))
            .collect()
    };
    let a = curve(&full);
    let resume_ok = a.len() >= RESUME_STEPS / 2
        && a == curve(&second)
        && bits(&full.learner.model) == bits(&second.learner.model);

    r.hard(
        8,
        "serialization",
        bpe_ok && voc_ok && mask_ok && ck_ok && resume_ok,
        format!(
            "bpe {}, vocab {}, masks {}, checkpoint {}, resumed loss curve over {RESUME_STEPS} steps {}",
            verdict(bpe_ok),
            verdict(voc_ok),
            verdict(mask_ok),
            verdict(ck_ok),
            verdict(resume_ok)
        ),
    );
}

#[test]
fn acceptance() {
    let mut r = Report {
        strict: std::env::var("SNAT_STRICT").is_ok_and(|v| v == "1"),
        soft_failures: Vec::new(),
    };
    criterion_1(&mut r);
    criterion_2(&mut r);
    criterion_3(&mut r);
    criterion_7(&mut r);
    criterion_8(&mut r);
    criterion_6(&mut r);
    criterion_4(&mut r);
    criterion_5(&mut r);
    if !r.soft_failures.is_empty() {
        say(&format!(
            "measured criteria below target: {}\n",
            r.soft_failures.join(", ")
        ));
    }
}
