use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use snat::eval::{
    ablate, ablation_tsv, bench, bleu, decode_examples, length_buckets, reference_texts,
    standard_variants, BenchConfig, LengthMode, DEFAULT_BUCKETS,
};
use snat::infer::{DecodeMasks, Translator};
use snat::model::{Checkpoint, SnatModel, TeacherModel};
use snat::objective::{DenseMasks, ObjectiveConfig};
use snat::synth::{LexiconSize, SynthLanguage};
use snat::text::{
    ingest_conll, propagate_labels, write_conll, AnnotatedSentence, BpeModel, LabelFamily,
    LabelVocab, LabeledSentence, ToyAnnotator, Vocabulary, WordLabelMask,
};
use snat::train::{
    distill, usable, write_log, Example, Learner, SnatLearner, TeacherLearner, TrainConfig, Trainer,
};

use crate::settings::Settings;

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn is_conll(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "conll")
}

pub fn read_conll(path: &Path) -> Result<Vec<AnnotatedSentence>> {
    ingest_conll(open(path)?).with_context(|| format!("reading {}", path.display()))
}

/// Plain lines, or the word sequence of each sentence for `.conll` files.
fn read_text(path: &Path) -> Result<Vec<String>> {
    if is_conll(path) {
        return Ok(read_conll(path)?.iter().map(|s| s.text()).collect());
    }
    Ok(open(path)?.lines().collect::<std::io::Result<_>>()?)
}

pub fn load_bpe(path: &Path) -> Result<BpeModel> {
    BpeModel::read(open(path)?).with_context(|| format!("reading {}", path.display()))
}

pub fn load_vocab(path: &Path) -> Result<Vocabulary> {
    Vocabulary::read(open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn load_mask(path: &Path, family: LabelFamily) -> Result<WordLabelMask> {
    let m =
        WordLabelMask::read(open(path)?).with_context(|| format!("reading {}", path.display()))?;
    ensure!(
        m.family() == family,
        "{} holds a {} mask, expected {family}",
        path.display(),
        m.family()
    );
    Ok(m)
}

fn load_annotator(path: &Path) -> Result<ToyAnnotator> {
    let mut a = ToyAnnotator::default();
    a.extend_from_reader(open(path)?)
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(a)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))
}

fn load_teacher(path: &Path) -> Result<TeacherModel> {
    Ok(load_checkpoint(path)?.into_teacher()?)
}

fn write_lines<S: AsRef<str>>(path: Option<&Path>, lines: &[S]) -> Result<()> {
    let mut out: Box<dyn Write> = match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    for l in lines {
        writeln!(out, "{}", l.as_ref())?;
    }
    out.flush()?;
    Ok(())
}

/// Subword pieces plus the vocabulary they index.
pub struct Subwords {
    pub bpe: BpeModel,
    pub vocab: Vocabulary,
}

impl Subwords {
    pub fn load(bpe: &Path, vocab: &Path) -> Result<Self> {
        Ok(Subwords {
            bpe: load_bpe(bpe)?,
            vocab: load_vocab(vocab)?,
        })
    }

    pub fn examples(&self, src: &Path, tgt: &Path) -> Result<Vec<Example>> {
        let s = read_conll(src)?;
        let t = read_conll(tgt)?;
        ensure!(
            s.len() == t.len(),
            "{} has {} sentences but {} has {}",
            src.display(),
            s.len(),
            tgt.display(),
            t.len()
        );
        let all: Vec<Example> = s
            .iter()
            .zip(&t)
            .map(|(a, b)| Example::from_annotated(a, b, &self.bpe, &self.vocab))
            .collect();
        let n = all.len();
        let kept = usable(all);
        if kept.len() < n {
            log::warn!("dropped {} pairs with an empty side", n - kept.len());
        }
        ensure!(
            !kept.is_empty(),
            "no usable sentence pairs in {}",
            src.display()
        );
        Ok(kept)
    }

    pub fn sources(&self, src: &Path) -> Result<Vec<LabeledSentence>> {
        Ok(read_conll(src)?
            .iter()
            .map(|s| propagate_labels(s, &self.bpe, &self.vocab))
            .collect())
    }
}

pub struct Masks {
    pub pos: Option<WordLabelMask>,
    pub ner: Option<WordLabelMask>,
}

impl Masks {
    pub fn load(pos: Option<&Path>, ner: Option<&Path>) -> Result<Self> {
        Ok(Masks {
            pos: pos.map(|p| load_mask(p, LabelFamily::Pos)).transpose()?,
            ner: ner.map(|p| load_mask(p, LabelFamily::Ner)).transpose()?,
        })
    }

    /// Masks for the families a model actually uses.
    fn decode(&self, model: &SnatModel) -> DecodeMasks<'_> {
        DecodeMasks {
            pos: self.pos.as_ref().filter(|_| model.config().use_pos),
            ner: self.ner.as_ref().filter(|_| model.config().use_ner),
        }
    }

    fn dense(&self, s: &Settings) -> Result<DenseMasks<f32>> {
        if s.use_pos && self.pos.is_none() {
            bail!("use_pos is on but no --pos-mask was given");
        }
        if s.use_ner && self.ner.is_none() {
            bail!("use_ner is on but no --ner-mask was given");
        }
        Ok(DenseMasks::new(
            self.pos.as_ref().filter(|_| s.use_pos),
            self.ner.as_ref().filter(|_| s.use_ner),
        ))
    }
}

pub fn synth_corpus(out: &Path, pairs: usize, dev: usize, toy: bool, seed: u64) -> Result<()> {
    let size = if toy {
        LexiconSize::TOY
    } else {
        LexiconSize::FULL
    };
    let lang = SynthLanguage::new(size);
    let mut all = lang.generate(pairs + dev, seed);
    let dev_pairs = all.split_off(pairs);
    std::fs::create_dir_all(out)?;
    for (name, set) in [("train", &all), ("dev", &dev_pairs)] {
        let src: Vec<AnnotatedSentence> = set.iter().map(|p| p.src.clone()).collect();
        let tgt: Vec<AnnotatedSentence> = set.iter().map(|p| p.tgt.clone()).collect();
        write_conll(create(&out.join(format!("{name}.src.conll")))?, &src)?;
        write_conll(create(&out.join(format!("{name}.tgt.conll")))?, &tgt)?;
        let text =
            |v: &[AnnotatedSentence]| -> Vec<String> { v.iter().map(|s| s.text()).collect() };
        write_lines(Some(&out.join(format!("{name}.src.txt"))), &text(&src))?;
        write_lines(Some(&out.join(format!("{name}.tgt.txt"))), &text(&tgt))?;
    }
    std::fs::write(out.join("src.lexicon.tsv"), lang.lexicon_tsv(false))?;
    std::fs::write(out.join("tgt.lexicon.tsv"), lang.lexicon_tsv(true))?;
    eprintln!(
        "wrote {} training and {} dev pairs to {}",
        all.len(),
        dev_pairs.len(),
        out.display()
    );
    Ok(())
}

pub fn annotate(lexicon: &Path, input: &Path, output: &Path) -> Result<()> {
    let a = load_annotator(lexicon)?;
    let sentences: Vec<AnnotatedSentence> = read_text(input)?
        .iter()
        .map(|l| {
            let words: Vec<&str> = l.split_whitespace().collect();
            a.annotate_sentence(&words)
        })
        .collect();
    write_conll(create(output)?, &sentences)?;
    eprintln!("annotated {} sentences", sentences.len());
    Ok(())
}

pub fn bpe_learn(inputs: &[PathBuf], output: &Path, s: &Settings) -> Result<()> {
    let mut lines = Vec::new();
    for p in inputs {
        lines.extend(read_text(p)?);
    }
    let bpe = BpeModel::learn(&lines, s.merges)?;
    bpe.write(create(output)?)?;
    eprintln!(
        "learned {} merges from {} lines",
        bpe.merges().len(),
        lines.len()
    );
    Ok(())
}

pub fn build_vocab(bpe: &Path, inputs: &[PathBuf], output: &Path) -> Result<()> {
    let bpe = load_bpe(bpe)?;
    let mut tokens: Vec<String> = Vec::new();
    for p in inputs {
        for l in read_text(p)? {
            tokens.extend(bpe.tokenize(&l));
        }
    }
    let vocab = Vocabulary::build(tokens.iter().map(String::as_str));
    vocab.write(create(output)?)?;
    eprintln!("vocabulary of {} entries", vocab.len());
    Ok(())
}

pub fn build_mask(
    sw: &Subwords,
    input: &Path,
    family: LabelFamily,
    output: &Path,
    s: &Settings,
) -> Result<()> {
    let corpus = sw.sources(input)?;
    let labels = LabelVocab::for_family(family);
    let mask = WordLabelMask::build(&corpus, sw.vocab.len(), family, labels.len(), s.epsilon)?;
    mask.write(create(output)?)?;
    eprintln!(
        "{family} mask over {} words and {} labels",
        mask.rows(),
        mask.cols()
    );
    Ok(())
}

/// Paths shared by the two training commands.
pub struct TrainPaths<'a> {
    pub train_src: &'a Path,
    pub train_tgt: &'a Path,
    pub dev_src: &'a Path,
    pub dev_tgt: &'a Path,
    pub out: &'a Path,
    pub state: Option<&'a Path>,
    pub log: Option<&'a Path>,
}

fn run_training<L: Learner>(
    mut trainer: Trainer<L>,
    train: &[Example],
    dev: &[Example],
    paths: &TrainPaths<'_>,
) -> Result<()> {
    let stop = trainer.run(train, dev)?;
    if let Some(p) = paths.log {
        write_log(create(p)?, &trainer.log)?;
    }
    if let Some(p) = paths.state {
        trainer.checkpoint().save(p)?;
    }
    trainer.restore_best();
    let step = trainer.progress.best_step as u64;
    trainer.learner.checkpoint(step).save(paths.out)?;
    eprintln!(
        "stopped after {} steps ({stop:?}); best dev loss {:.4} at step {}",
        trainer.progress.step, trainer.progress.best_dev, trainer.progress.best_step
    );
    Ok(())
}

fn trainer_for<L: Learner>(
    learner: L,
    tc: TrainConfig,
    resume: Option<&Checkpoint>,
) -> Result<Trainer<L>> {
    Ok(match resume {
        Some(ck) => Trainer::resume(learner, tc, ck)?,
        None => Trainer::new(learner, tc)?,
    })
}

pub fn train_teacher(
    sw: &Subwords,
    paths: &TrainPaths<'_>,
    resume: Option<&Path>,
    s: &Settings,
) -> Result<()> {
    let train = sw.examples(paths.train_src, paths.train_tgt)?;
    let dev = sw.examples(paths.dev_src, paths.dev_tgt)?;
    let resume = resume.map(load_checkpoint).transpose()?;
    let model = match &resume {
        Some(ck) => ck.into_teacher()?,
        None => TeacherModel::new(s.model_config(sw.vocab.len()), s.seed)?,
    };
    let learner = TeacherLearner {
        model,
        smoothing: s.label_smoothing,
    };
    let trainer = trainer_for(learner, s.train_config(), resume.as_ref())?;
    run_training(trainer, &train, &dev, paths)
}

pub fn train_snat(
    sw: &Subwords,
    masks: &Masks,
    paths: &TrainPaths<'_>,
    resume: Option<&Path>,
    s: &Settings,
) -> Result<()> {
    let train = sw.examples(paths.train_src, paths.train_tgt)?;
    let dev = sw.examples(paths.dev_src, paths.dev_tgt)?;
    let resume = resume.map(load_checkpoint).transpose()?;
    let model = match &resume {
        Some(ck) => ck.into_snat()?,
        None => SnatModel::new(s.model_config(sw.vocab.len()), s.seed)?,
    };
    let tc = s.train_config();
    let objective = ObjectiveConfig {
        lambda: tc.lambda,
        md: tc.md,
    };
    let learner = SnatLearner::new(model, masks.dense(s)?, objective)?;
    let trainer = trainer_for(learner, tc, resume.as_ref())?;
    run_training(trainer, &train, &dev, paths)
}

pub fn distill_cmd(
    sw: &Subwords,
    teacher: &Path,
    lexicon: &Path,
    input: &Path,
    output: &Path,
) -> Result<()> {
    let teacher = load_checkpoint(teacher)?.into_teacher()?;
    let annotator = load_annotator(lexicon)?;
    let sources = sw.sources(input)?;
    let pairs = distill(&teacher, &sources, &annotator, &sw.bpe, &sw.vocab)?;
    let truncated = pairs.iter().filter(|p| p.truncated).count();
    let annotated: Vec<AnnotatedSentence> = pairs
        .iter()
        .map(|p| {
            let words: Vec<&str> = p.text.split_whitespace().collect();
            annotator.annotate_sentence(&words)
        })
        .collect();
    write_conll(create(output)?, &annotated)?;
    eprintln!(
        "distilled {} sentences ({truncated} hit the length cap)",
        pairs.len()
    );
    Ok(())
}

pub struct TranslateArgs<'a> {
    pub model: &'a Path,
    pub teacher: Option<&'a Path>,
    pub lexicon: &'a Path,
    pub input: Option<&'a Path>,
    pub output: Option<&'a Path>,
    pub labels: bool,
}

pub fn translate(sw: &Subwords, masks: &Masks, a: &TranslateArgs<'_>, s: &Settings) -> Result<()> {
    let model = load_checkpoint(a.model)?.into_snat()?;
    let teacher = a.teacher.map(load_teacher).transpose()?;
    let annotator = load_annotator(a.lexicon)?;
    let mut tr = Translator::new(&sw.bpe, &sw.vocab, &annotator, &model, s.length_policy()?);
    let dm = masks.decode(&model);
    tr.pos_mask = dm.pos;
    tr.ner_mask = dm.ner;
    tr.teacher = teacher.as_ref();
    tr.seed = s.seed;
    let lines: Vec<String> = match a.input {
        Some(p) => read_text(p)?,
        None => std::io::stdin()
            .lock()
            .lines()
            .collect::<std::io::Result<_>>()?,
    };
    let mut out = Vec::with_capacity(lines.len());
    for l in &lines {
        let t = tr.translate(l)?;
        if a.labels {
            let cells: Vec<String> = t
                .words
                .iter()
                .map(|w| {
                    let mut c = w.word.clone();
                    for tag in [&w.pos, &w.ner].into_iter().flatten() {
                        c.push('|');
                        c.push_str(tag);
                    }
                    c
                })
                .collect();
            out.push(cells.join(" "));
        } else {
            out.push(t.text);
        }
    }
    write_lines(a.output, &out)
}

pub struct EvalArgs<'a> {
    pub model: &'a Path,
    pub teacher: Option<&'a Path>,
    pub src: &'a Path,
    pub tgt: &'a Path,
    pub gold_length: bool,
    pub hypotheses: Option<&'a Path>,
}

pub fn evaluate(sw: &Subwords, masks: &Masks, a: &EvalArgs<'_>, s: &Settings) -> Result<()> {
    let model = load_checkpoint(a.model)?.into_snat()?;
    let teacher = a.teacher.map(load_teacher).transpose()?;
    let examples = sw.examples(a.src, a.tgt)?;
    let length = if a.gold_length {
        LengthMode::Gold
    } else {
        LengthMode::Policy(s.length_policy()?)
    };
    let hyps = decode_examples(
        &model,
        &examples,
        &sw.vocab,
        length,
        masks.decode(&model),
        teacher.as_ref(),
    )?;
    let refs = reference_texts(&examples, &sw.vocab);
    if let Some(p) = a.hypotheses {
        write_lines(Some(p), &hyps)?;
    }
    let b = bleu(&hyps, &refs)?;
    println!(
        "BLEU = {:.2}, {:.1}/{:.1}/{:.1}/{:.1} (BP={:.3}, hyp_len={}, ref_len={})",
        b.bleu,
        100.0 * b.precisions[0],
        100.0 * b.precisions[1],
        100.0 * b.precisions[2],
        100.0 * b.precisions[3],
        b.brevity_penalty,
        b.hyp_len,
        b.ref_len
    );
    println!("bucket\tcount\tbleu");
    for bk in length_buckets(&hyps, &refs, &DEFAULT_BUCKETS)? {
        let range = match bk.hi {
            Some(h) => format!("{}-{}", bk.lo + 1, h),
            None => format!("{}+", bk.lo + 1),
        };
        let score = bk.bleu.map_or("-".to_string(), |v| format!("{v:.2}"));
        println!("{range}\t{}\t{score}", bk.count);
    }
    Ok(())
}

pub fn bench_cmd(
    sw: &Subwords,
    masks: &Masks,
    model: &Path,
    teacher: &Path,
    src: &Path,
    sentences: usize,
    s: &Settings,
) -> Result<()> {
    let model = load_checkpoint(model)?.into_snat()?;
    let teacher = load_checkpoint(teacher)?.into_teacher()?;
    let sources: Vec<LabeledSentence> = sw
        .sources(src)?
        .into_iter()
        .filter(|x| !x.is_empty())
        .take(sentences)
        .collect();
    let cfg = BenchConfig {
        runs: s.bench_runs,
        out_len: s.bench_len,
        widths: s.bench_widths.clone(),
    };
    let report = bench(&model, &teacher, &sources, masks.decode(&model), &cfg)?;
    print!("{}", report.tsv());
    ensure!(
        report.counters_ok(),
        "decoder call counters disagree with the expected counts"
    );
    Ok(())
}

pub struct AblateArgs<'a> {
    pub train_src: &'a Path,
    pub train_tgt: &'a Path,
    pub dev_src: &'a Path,
    pub dev_tgt: &'a Path,
    pub variants: &'a [String],
    pub output: Option<&'a Path>,
}

pub fn ablate_cmd(sw: &Subwords, masks: &Masks, a: &AblateArgs<'_>, s: &Settings) -> Result<()> {
    let (Some(pos), Some(ner)) = (&masks.pos, &masks.ner) else {
        bail!("ablation needs both --pos-mask and --ner-mask");
    };
    let train = sw.examples(a.train_src, a.train_tgt)?;
    let dev = sw.examples(a.dev_src, a.dev_tgt)?;
    let mut variants = standard_variants(s.lambda);
    if !a.variants.is_empty() {
        for v in a.variants {
            ensure!(
                variants.iter().any(|x| &x.name == v),
                "unknown variant {v:?}"
            );
        }
        variants.retain(|x| a.variants.contains(&x.name));
    }
    let base = s.model_config(sw.vocab.len());
    let rows = ablate(
        &train,
        &dev,
        &sw.vocab,
        pos,
        ner,
        &base,
        &s.train_config(),
        &variants,
        &s.ablation_seeds,
        LengthMode::Gold,
    )?;
    let tsv = ablation_tsv(&rows);
    match a.output {
        Some(p) => std::fs::write(p, &tsv)?,
        None => print!("{tsv}"),
    }
    Ok(())
}
