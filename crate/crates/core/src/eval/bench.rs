use std::time::Instant;

use crate::copy::INFERENCE_SEED;
use crate::infer::{decode_candidates, rescore, DecodeMasks, Normalization};
use crate::model::{SnatModel, TeacherModel};
use crate::text::LabeledSentence;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    /// Timed passes over the sentence set (at least 5).
    pub runs: usize,
    /// Output length forced on every system, so costs are comparable.
    pub out_len: usize,
    /// Candidate half-widths for the rescoring modes.
    pub widths: Vec<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            runs: 5,
            out_len: 20,
            widths: vec![4, 9],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatencyRow {
    pub mode: String,
    /// Mean wall-clock per sentence, batch size 1.
    pub ms_per_sentence: f64,
    /// AR latency divided by this mode's latency.
    pub speedup: f64,
    /// Decoder forwards counted during the timed runs, per sentence.
    pub decoder_calls: f64,
    pub expected_calls: f64,
    /// Teacher-forced rescoring passes per sentence.
    pub rescoring_calls: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatencyReport {
    pub runs: usize,
    pub sentences: usize,
    pub out_len: usize,
    pub rows: Vec<LatencyRow>,
}

impl LatencyReport {
    /// Every mode made exactly the expected number of decoder forwards.
    pub fn counters_ok(&self) -> bool {
        self.rows
            .iter()
            .all(|r| r.decoder_calls == r.expected_calls)
    }

    pub fn row(&self, mode: &str) -> Option<&LatencyRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    pub fn tsv(&self) -> String {
        let mut s = String::from(
            "mode\tms_per_sentence\tspeedup\tdecoder_calls\texpected_calls\trescoring_calls\n",
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{}\t{:.3}\t{:.2}\t{}\t{}\t{}\n",
                r.mode,
                r.ms_per_sentence,
                r.speedup,
                r.decoder_calls,
                r.expected_calls,
                r.rescoring_calls
            ));
        }
        s
    }
}

/// Per-sentence latency of greedy AR decoding against single-pass SNAT
/// decoding (one candidate, and `2B+1` candidates with teacher rescoring),
/// all at a fixed output length. The first pass of each mode is a warm-up
/// and is not timed.
pub fn bench(
    model: &SnatModel,
    teacher: &TeacherModel,
    sources: &[LabeledSentence],
    masks: DecodeMasks<'_>,
    cfg: &BenchConfig,
) -> Result<LatencyReport> {
    if cfg.runs < 5 {
        return Err(Error::Config("latency needs at least 5 runs".into()));
    }
    if sources.is_empty() || sources.iter().any(|s| s.is_empty()) || cfg.out_len == 0 {
        return Err(Error::Data(
            "bench needs non-empty sources and out_len >= 1".into(),
        ));
    }
    let m = cfg.out_len;
    let per = (cfg.runs * sources.len()) as f64;

    let ar = |s: &LabeledSentence| -> Result<()> {
        let enc = teacher.encode(&s.subwords)?;
        teacher.greedy_fixed(&enc, m)?;
        Ok(())
    };
    let nat = |s: &LabeledSentence, b: usize, rescoring: bool| -> Result<()> {
        let lengths: Vec<usize> = (m.saturating_sub(b).max(1)..=m + b).collect();
        let cands = decode_candidates(model, s, &lengths, masks, INFERENCE_SEED)?;
        if rescoring {
            rescore(cands, &s.subwords, teacher, Normalization::Mean)?;
        }
        Ok(())
    };

    let timed = |f: &dyn Fn(&LabeledSentence) -> Result<()>| -> Result<(f64, u64, u64)> {
        f(&sources[0])?;
        model.counters().reset();
        teacher.counters().reset();
        let start = Instant::now();
        for _ in 0..cfg.runs {
            for s in sources {
                f(s)?;
            }
        }
        let ms = start.elapsed().as_secs_f64() * 1e3 / per;
        Ok((
            ms,
            model.counters().decoder_calls(),
            teacher.counters().decoder_calls(),
        ))
    };

    let mut rows = Vec::new();
    let (ar_ms, _, ar_calls) = timed(&|s| ar(s))?;
    rows.push(LatencyRow {
        mode: "ar-greedy".into(),
        ms_per_sentence: ar_ms,
        speedup: 1.0,
        decoder_calls: ar_calls as f64 / per,
        expected_calls: m as f64,
        rescoring_calls: 0.0,
    });
    let (ms, calls, _) = timed(&|s| nat(s, 0, false))?;
    rows.push(LatencyRow {
        mode: "nat-b0".into(),
        ms_per_sentence: ms,
        speedup: ar_ms / ms,
        decoder_calls: calls as f64 / per,
        expected_calls: 1.0,
        rescoring_calls: 0.0,
    });
    for &b in &cfg.widths {
        let (ms, calls, tcalls) = timed(&|s| nat(s, b, true))?;
        let k = (m.saturating_sub(b).max(1)..=m + b).count() as f64;
        rows.push(LatencyRow {
            mode: format!("nat-b{b}-rescore"),
            ms_per_sentence: ms,
            speedup: ar_ms / ms,
            decoder_calls: calls as f64 / per,
            expected_calls: k,
            rescoring_calls: tcalls as f64 / per,
        });
    }
    Ok(LatencyReport {
        runs: cfg.runs,
        sentences: sources.len(),
        out_len: m,
        rows,
    })
}
