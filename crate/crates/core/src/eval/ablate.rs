use std::collections::BTreeMap;

use crate::infer::DecodeMasks;
use crate::model::{ModelConfig, SnatModel};
use crate::objective::{DenseMasks, ObjectiveConfig};
use crate::text::{Vocabulary, WordLabelMask};
use crate::train::{Example, SnatLearner, TrainConfig, Trainer};
use crate::Result;

use super::{bleu, decode_examples, reference_texts, LengthMode};

/// One switch setting; everything else is shared between variants.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub name: String,
    pub use_pos: bool,
    pub use_ner: bool,
    pub md: Option<usize>,
    pub lambda: f64,
}

impl Variant {
    fn new(name: &str, use_pos: bool, use_ner: bool, md: Option<usize>, lambda: f64) -> Self {
        Variant {
            name: name.into(),
            use_pos,
            use_ner,
            md,
            lambda,
        }
    }
}

/// Full model, single-family and label-free variants, and alignment layer
/// choices (`md ∈ {2, 3}` and none) for the given weight.
pub fn standard_variants(lambda: f64) -> Vec<Variant> {
    vec![
        Variant::new("full", true, true, Some(3), lambda),
        Variant::new("pos-only", true, false, Some(3), lambda),
        Variant::new("ner-only", false, true, Some(3), lambda),
        Variant::new("no-label", false, false, Some(3), lambda),
        Variant::new("md2", true, true, Some(2), lambda),
        Variant::new("no-reg", true, true, None, lambda),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub bleu: f64,
    pub steps: usize,
}

/// Trains every variant for every seed on the same data and reports dev
/// BLEU. The seed drives both initialization and data order.
#[allow(clippy::too_many_arguments)]
pub fn ablate(
    train: &[Example],
    dev: &[Example],
    vocab: &Vocabulary,
    pos_mask: &WordLabelMask,
    ner_mask: &WordLabelMask,
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    variants: &[Variant],
    seeds: &[u64],
    length: LengthMode,
) -> Result<Vec<AblationRow>> {
    let refs = reference_texts(dev, vocab);
    let mut rows = Vec::new();
    for &seed in seeds {
        for v in variants {
            let mut cfg = base.clone();
            cfg.use_pos = v.use_pos;
            cfg.use_ner = v.use_ner;
            let model = SnatModel::new(cfg, seed)?;
            let masks =
                DenseMasks::new(v.use_pos.then_some(pos_mask), v.use_ner.then_some(ner_mask));
            let obj = ObjectiveConfig {
                lambda: v.lambda,
                md: v.md,
            };
            let learner = SnatLearner::new(model, masks, obj)?;
            let tc = TrainConfig {
                seed,
                lambda: v.lambda,
                md: v.md,
                ..train_cfg.clone()
            };
            let mut t = Trainer::new(learner, tc)?;
            t.run(train, dev)?;
            t.restore_best();
            let dm = DecodeMasks {
                pos: v.use_pos.then_some(pos_mask),
                ner: v.use_ner.then_some(ner_mask),
            };
            let hyps = decode_examples(&t.learner.model, dev, vocab, length, dm, None)?;
            rows.push(AblationRow {
                variant: v.name.clone(),
                seed,
                bleu: bleu(&hyps, &refs)?.bleu,
                steps: t.progress.step,
            });
            log::info!(
                "ablation {} seed {seed}: {:.2}",
                v.name,
                rows.last().unwrap().bleu
            );
        }
    }
    Ok(rows)
}

/// Per-run rows followed by per-variant means.
pub fn ablation_tsv(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant\tseed\tbleu\tsteps\n");
    let mut means: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    let mut order: Vec<&str> = Vec::new();
    for r in rows {
        s.push_str(&format!(
            "{}\t{}\t{:.2}\t{}\n",
            r.variant, r.seed, r.bleu, r.steps
        ));
        let e = means.entry(&r.variant).or_insert((0.0, 0));
        if e.1 == 0 {
            order.push(&r.variant);
        }
        e.0 += r.bleu;
        e.1 += 1;
    }
    for v in order {
        let (sum, n) = means[v];
        s.push_str(&format!("{v}\tmean\t{:.2}\t-\n", sum / n as f64));
    }
    s
}
