//! Three-column annotation files: `token POS NER`, blank line between
//! sentences.

use std::io::{BufRead, Write};

use super::labels::{first_bio_violation, LabelVocab};
use super::sentence::AnnotatedSentence;
use crate::{Error, Result};

pub fn ingest_conll<R: BufRead>(reader: R) -> Result<Vec<AnnotatedSentence>> {
    let pos_vocab = LabelVocab::pos();
    let ner_vocab = LabelVocab::ner();
    let mut out = Vec::new();
    let mut cur = AnnotatedSentence {
        words: vec![],
        pos: vec![],
        ner: vec![],
    };
    let mut start_line = 1;

    let mut finish = |cur: &mut AnnotatedSentence, start: usize| -> Result<()> {
        if cur.is_empty() {
            return Ok(());
        }
        if let Some(i) = first_bio_violation(&ner_vocab, &cur.ner) {
            return Err(Error::Validation {
                line: start + i,
                msg: format!(
                    "{} does not continue an entity span",
                    ner_vocab.name(cur.ner[i])
                ),
            });
        }
        out.push(std::mem::replace(
            cur,
            AnnotatedSentence {
                words: vec![],
                pos: vec![],
                ner: vec![],
            },
        ));
        Ok(())
    };

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            finish(&mut cur, start_line)?;
            start_line = lineno + 1;
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let [tok, p, n] = cols[..] else {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 3 columns, found {}", cols.len()),
            });
        };
        let p_id = pos_vocab
            .id(p)
            .filter(|&id| id != 0)
            .ok_or_else(|| Error::Parse {
                line: lineno,
                msg: format!("unknown POS tag {p:?}"),
            })?;
        let n_id = ner_vocab
            .id(n)
            .filter(|&id| id != 0)
            .ok_or_else(|| Error::Parse {
                line: lineno,
                msg: format!("unknown NER tag {n:?}"),
            })?;
        if cur.is_empty() {
            start_line = lineno;
        }
        cur.words.push(tok.to_string());
        cur.pos.push(p_id);
        cur.ner.push(n_id);
    }
    finish(&mut cur, start_line)?;
    Ok(out)
}

pub fn write_conll<W: Write>(mut w: W, sentences: &[AnnotatedSentence]) -> Result<()> {
    let pos_vocab = LabelVocab::pos();
    let ner_vocab = LabelVocab::ner();
    for s in sentences {
        for i in 0..s.len() {
            writeln!(
                w,
                "{}\t{}\t{}",
                s.words[i],
                pos_vocab.name(s.pos[i]),
                ner_vocab.name(s.ner[i])
            )?;
        }
        writeln!(w)?;
    }
    Ok(())
}
