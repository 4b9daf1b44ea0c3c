//! Parallel decoding: length candidates around `n + C`, one decoder pass
//! per candidate with a joint word/label argmax, and optional rescoring by
//! the autoregressive teacher.

mod translate;

pub use translate::{Translation, Translator, WordLabels};

use std::cmp::Ordering;

use crate::copy::{realize, structure_copy};
use crate::model::{EncodedSource, SeqBatch, SnatModel, TeacherModel};
use crate::text::labels::NULL_LABEL;
use crate::text::vocab::{BOS, EOS, PAD};
use crate::text::{LabelFamily, LabeledSentence, WordLabelMask};
use crate::train::Example;
use crate::{Error, Result};

/// Target length guess `m′ = n + C` and candidate half-width `B`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LengthPolicy {
    pub c: i64,
    pub b: usize,
}

impl LengthPolicy {
    /// Biases for the four translation directions of the original setup.
    pub fn for_direction(direction: &str, b: usize) -> Option<Self> {
        let c = match direction {
            "en-de" => 2,
            "de-en" => -2,
            "en-ro" => 3,
            "ro-en" => -3,
            _ => return None,
        };
        Some(LengthPolicy { c, b })
    }
}

/// `[max(1, n+C−B) ..= n+C+B]`, without duplicates after clipping.
pub fn candidate_lengths(n: usize, policy: LengthPolicy) -> Vec<usize> {
    let center = n as i64 + policy.c;
    let b = policy.b as i64;
    let lo = (center - b).max(1);
    let hi = (center + b).max(1);
    (lo..=hi).map(|m| m as usize).collect()
}

/// `round(mean(target − source length))` in subwords.
pub fn estimate_c(examples: &[Example]) -> i64 {
    if examples.is_empty() {
        return 0;
    }
    let total: i64 = examples
        .iter()
        .map(|e| e.tgt.len() as i64 - e.src.len() as i64)
        .sum();
    (total as f64 / examples.len() as f64).round() as i64
}

/// Masks used to couple words and labels at decode time. Families whose
/// mask is absent (or disabled in the model) are ignored.
#[derive(Clone, Copy, Debug, Default)]
pub struct DecodeMasks<'a> {
    pub pos: Option<&'a WordLabelMask>,
    pub ner: Option<&'a WordLabelMask>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub length: usize,
    pub words: Vec<usize>,
    pub pos: Option<Vec<usize>>,
    pub ner: Option<Vec<usize>>,
    /// Sum over positions of the log joint probability of the chosen cells.
    pub model_score: f64,
    pub teacher_score: Option<f64>,
}

fn is_emittable(w: usize) -> bool {
    w != PAD && w != BOS && w != EOS
}

/// Per family: best label for every word, and `log J(word, best label)`
/// for one position. `J ∝ p_i · M_ij · q_j`.
struct FamilyView<'a> {
    mask: &'a WordLabelMask,
    q: &'a [f32],
}

impl FamilyView<'_> {
    /// `(best label, max_j M_ij q_j)` for word `i`.
    fn best_label(&self, i: usize, q_max: (usize, f64)) -> (usize, f64) {
        let mut best = (NULL_LABEL, -1.0);
        for &j in self.mask.ones(i) {
            let v = self.q[j] as f64;
            if v > best.1 || (v == best.1 && j < best.0) {
                best = (j, v);
            }
        }
        let eps = self.mask.epsilon() * q_max.1;
        if eps > best.1 && self.mask.ones(i).binary_search(&q_max.0).is_err() {
            best = (q_max.0, eps);
        }
        best
    }

    /// Normalizer `Σ_ij p_i M_ij q_j`.
    fn normalizer(&self, p: &[f32]) -> f64 {
        let eps = self.mask.epsilon();
        let q_sum: f64 = self.q.iter().map(|&v| v as f64).sum();
        p.iter()
            .enumerate()
            .map(|(i, &pi)| {
                let on: f64 = self.mask.ones(i).iter().map(|&j| self.q[j] as f64).sum();
                pi as f64 * (eps * q_sum + (1.0 - eps) * on)
            })
            .sum()
    }
}

fn argmax(v: &[f32]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &x) in v.iter().enumerate() {
        if (x as f64) > best.1 {
            best = (i, x as f64);
        }
    }
    best
}

/// Decodes one candidate of length `m` with a single decoder pass.
///
/// Each position picks the word maximizing the mean over enabled label
/// families of `log max_l J(word, l)`; labels are the per-family argmax for
/// that word. Without labels this is a plain word argmax.
pub fn decode_one(
    model: &SnatModel,
    source: &LabeledSentence,
    enc: &EncodedSource,
    m: usize,
    masks: DecodeMasks<'_>,
    seed: u64,
) -> Result<Candidate> {
    if m == 0 || source.is_empty() {
        return Err(Error::Contract(
            "decode needs m >= 1 and a non-empty source".into(),
        ));
    }
    let plan = structure_copy(source, m, seed);
    let dec = realize(&plan, source)?;
    let pred = model.predict(enc, &SeqBatch::from_sentences(&[&dec]))?;
    let mut fams: Vec<(LabelFamily, &WordLabelMask, &crate::tensor::Tensor<f32>)> = Vec::new();
    for (f, mask, probs) in [
        (LabelFamily::Pos, masks.pos, pred.pos_probs.as_ref()),
        (LabelFamily::Ner, masks.ner, pred.ner_probs.as_ref()),
    ] {
        if let (Some(mask), Some(probs)) = (mask, probs) {
            if mask.rows() != pred.word_probs.last_dim() || mask.cols() != probs.last_dim() {
                return Err(Error::Shape(format!("{f} mask does not match the model")));
            }
            fams.push((f, mask, probs));
        }
    }
    let mut words = Vec::with_capacity(m);
    let mut pos = fams.iter().any(|f| f.0 == LabelFamily::Pos).then(Vec::new);
    let mut ner = fams.iter().any(|f| f.0 == LabelFamily::Ner).then(Vec::new);
    let mut score = 0.0;
    for t in 0..m {
        let p = pred.word_probs.row(t);
        let views: Vec<FamilyView> = fams
            .iter()
            .map(|(_, mask, q)| FamilyView { mask, q: q.row(t) })
            .collect();
        let q_max: Vec<(usize, f64)> = views.iter().map(|v| argmax(v.q)).collect();
        // Ranking by p_i^K · Π_k max_l M·q avoids a log per word; the
        // normalizers are shared by all words and only enter the score.
        let k = views.len() as i32;
        let mut best: Option<(usize, f64)> = None;
        for (i, &pi) in p.iter().enumerate() {
            if !is_emittable(i) {
                continue;
            }
            let mut key = (pi as f64).powi(k.max(1));
            for (v, &qm) in views.iter().zip(&q_max) {
                key *= v.best_label(i, qm).1;
            }
            if best.is_none_or(|b| key > b.1) {
                best = Some((i, key));
            }
        }
        let (w, _) =
            best.ok_or_else(|| Error::Contract("vocabulary has no emittable word".into()))?;
        let lp = (p[w] as f64).ln();
        let mut labels = Vec::with_capacity(views.len());
        let s = if views.is_empty() {
            lp
        } else {
            let mut s = 0.0;
            for (v, &qm) in views.iter().zip(&q_max) {
                let (l, val) = v.best_label(w, qm);
                s += lp + val.ln() - v.normalizer(p).ln();
                labels.push(l);
            }
            s / views.len() as f64
        };
        words.push(w);
        score += s;
        for ((f, _, _), l) in fams.iter().zip(labels) {
            match f {
                LabelFamily::Pos => pos.as_mut().expect("pos").push(l),
                LabelFamily::Ner => ner.as_mut().expect("ner").push(l),
            }
        }
    }
    Ok(Candidate {
        length: m,
        words,
        pos,
        ner,
        model_score: score,
        teacher_score: None,
    })
}

/// Encodes once and decodes every candidate length.
pub fn decode_candidates(
    model: &SnatModel,
    source: &LabeledSentence,
    lengths: &[usize],
    masks: DecodeMasks<'_>,
    seed: u64,
) -> Result<Vec<Candidate>> {
    let enc = model.encode(&[source])?;
    lengths
        .iter()
        .map(|&m| decode_one(model, source, &enc, m, masks, seed))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Normalization {
    /// Mean per-token log-probability (EOS included).
    #[default]
    Mean,
    Sum,
}

/// Candidates with teacher scores and the index of the winner.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
    pub best: usize,
}

impl CandidateSet {
    pub fn best(&self) -> &Candidate {
        &self.candidates[self.best]
    }
}

/// Higher score wins; ties go to the shorter, then lexicographically smaller
/// word sequence, then the earlier candidate.
fn pick(cands: &[Candidate], score: impl Fn(&Candidate) -> f64) -> usize {
    let mut best = 0;
    for i in 1..cands.len() {
        let (a, b) = (&cands[i], &cands[best]);
        let ord = score(a)
            .partial_cmp(&score(b))
            .unwrap_or(Ordering::Equal)
            .then_with(|| b.length.cmp(&a.length))
            .then_with(|| b.words.cmp(&a.words));
        if ord == Ordering::Greater {
            best = i;
        }
    }
    best
}

/// Scores each candidate with one teacher-forced teacher pass and marks
/// the argmax.
pub fn rescore(
    mut candidates: Vec<Candidate>,
    source: &[usize],
    teacher: &TeacherModel,
    norm: Normalization,
) -> Result<CandidateSet> {
    if candidates.is_empty() {
        return Err(Error::Contract("no candidates to rescore".into()));
    }
    let enc = teacher.encode(source)?;
    for c in &mut candidates {
        let lp = teacher.token_log_probs(&enc, &c.words)?;
        let sum: f64 = lp.iter().sum();
        c.teacher_score = Some(match norm {
            Normalization::Sum => sum,
            Normalization::Mean => sum / lp.len() as f64,
        });
    }
    let best = pick(&candidates, |c| {
        c.teacher_score.unwrap_or(f64::NEG_INFINITY)
    });
    Ok(CandidateSet { candidates, best })
}

/// Fallback without a teacher: the highest length-normalized model score.
pub fn select_by_model(candidates: Vec<Candidate>) -> Result<CandidateSet> {
    if candidates.is_empty() {
        return Err(Error::Contract("no candidates to select from".into()));
    }
    let best = pick(&candidates, |c| c.model_score / c.length as f64);
    Ok(CandidateSet { candidates, best })
}

#[cfg(test)]
mod tests;
