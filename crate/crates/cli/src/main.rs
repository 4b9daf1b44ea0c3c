use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use snat::text::LabelFamily;

mod commands;
mod settings;

use commands::{Masks, Subwords, TrainPaths};
use settings::Settings;

const LONG_VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    "\ntarget: ",
    env!("SNAT_TARGET"),
    "\nprofile: ",
    env!("SNAT_PROFILE"),
);

#[derive(Parser, Debug)]
#[command(name = "snat", version, long_version = LONG_VERSION)]
#[command(about = "Structure-aware non-autoregressive translation")]
struct Cli {
    /// TOML settings file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set lr=0.001`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Seed for initialization, data order and decoder inputs.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct SubwordArgs {
    #[arg(long)]
    bpe: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
}

#[derive(Args, Debug)]
struct MaskArgs {
    #[arg(long)]
    pos_mask: Option<PathBuf>,
    #[arg(long)]
    ner_mask: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CorpusArgs {
    #[arg(long)]
    train_src: PathBuf,
    #[arg(long)]
    train_tgt: PathBuf,
    #[arg(long)]
    dev_src: PathBuf,
    #[arg(long)]
    dev_tgt: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Best-on-dev model checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Full trainer state at the last step, for `--resume`.
    #[arg(long)]
    state: Option<PathBuf>,
    /// Continue from a trainer state file.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Training log (TSV).
    #[arg(long)]
    log: Option<PathBuf>,
}

impl TrainArgs {
    fn paths(&self) -> TrainPaths<'_> {
        TrainPaths {
            train_src: &self.corpus.train_src,
            train_tgt: &self.corpus.train_tgt,
            dev_src: &self.corpus.dev_src,
            dev_tgt: &self.corpus.dev_tgt,
            out: &self.out,
            state: self.state.as_deref(),
            log: self.log.as_deref(),
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded synthetic parallel corpus with lexicons.
    SynthCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        pairs: usize,
        #[arg(long, default_value_t = 200)]
        dev: usize,
        /// Use the small lexicon.
        #[arg(long)]
        toy: bool,
    },
    /// Tag raw text (or re-tag CoNLL) with a lexicon annotator.
    Annotate {
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Learn BPE merges from text or CoNLL files.
    BpeLearn {
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Build the joint subword vocabulary.
    BuildVocab {
        #[arg(long)]
        bpe: PathBuf,
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Build a word-label mask from target-side CoNLL.
    BuildMask {
        #[command(flatten)]
        subwords: SubwordArgs,
        #[arg(long)]
        input: PathBuf,
        /// `pos` or `ner`.
        #[arg(long, value_parser = parse_family)]
        family: LabelFamily,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train the autoregressive teacher.
    TrainTeacher {
        #[command(flatten)]
        subwords: SubwordArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Replace training targets with teacher translations.
    Distill {
        #[command(flatten)]
        subwords: SubwordArgs,
        #[arg(long)]
        teacher: PathBuf,
        /// Target-side lexicon for re-tagging the outputs.
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train the non-autoregressive model.
    Train {
        #[command(flatten)]
        subwords: SubwordArgs,
        #[command(flatten)]
        masks: MaskArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Translate lines from a file or stdin.
    Translate {
        #[command(flatten)]
        subwords: SubwordArgs,
        #[command(flatten)]
        masks: MaskArgs,
        #[arg(long)]
        model: PathBuf,
        /// Rescore length candidates with this teacher.
        #[arg(long)]
        teacher: Option<PathBuf>,
        /// Source-side lexicon.
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Print `word|POS|NER` cells.
        #[arg(long)]
        labels: bool,
    },
    /// BLEU and per-length BLEU on a CoNLL test set.
    Evaluate {
        #[command(flatten)]
        subwords: SubwordArgs,
        #[command(flatten)]
        masks: MaskArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        tgt: PathBuf,
        /// Decode at the reference length.
        #[arg(long)]
        gold_length: bool,
        #[arg(long)]
        hypotheses: Option<PathBuf>,
    },
    /// Batch-1 latency of AR and NAT decoding.
    Bench {
        #[command(flatten)]
        subwords: SubwordArgs,
        #[command(flatten)]
        masks: MaskArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        src: PathBuf,
        #[arg(long, default_value_t = 50)]
        sentences: usize,
    },
    /// Train and score model variants over several seeds.
    Ablate {
        #[command(flatten)]
        subwords: SubwordArgs,
        #[command(flatten)]
        masks: MaskArgs,
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Restrict to these variants (repeatable).
        #[arg(long = "variant")]
        variants: Vec<String>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn parse_family(s: &str) -> Result<LabelFamily, String> {
    LabelFamily::parse(s).ok_or_else(|| format!("expected pos or ner, got {s:?}"))
}

fn masks(m: &MaskArgs) -> Result<Masks> {
    Masks::load(m.pos_mask.as_deref(), m.ner_mask.as_deref())
}

fn subwords(s: &SubwordArgs) -> Result<Subwords> {
    Subwords::load(&s.bpe, &s.vocab)
}

fn run(cli: Cli) -> Result<()> {
    let s = Settings::load(cli.config.as_deref(), &cli.overrides, cli.seed)?;
    match cli.command {
        Command::SynthCorpus {
            out,
            pairs,
            dev,
            toy,
        } => commands::synth_corpus(&out, pairs, dev, toy, s.seed),
        Command::Annotate {
            lexicon,
            input,
            output,
        } => commands::annotate(&lexicon, &input, &output),
        Command::BpeLearn { inputs, output } => commands::bpe_learn(&inputs, &output, &s),
        Command::BuildVocab {
            bpe,
            inputs,
            output,
        } => commands::build_vocab(&bpe, &inputs, &output),
        Command::BuildMask {
            subwords: sw,
            input,
            family,
            output,
        } => commands::build_mask(&subwords(&sw)?, &input, family, &output, &s),
        Command::TrainTeacher {
            subwords: sw,
            train,
        } => commands::train_teacher(&subwords(&sw)?, &train.paths(), train.resume.as_deref(), &s),
        Command::Distill {
            subwords: sw,
            teacher,
            lexicon,
            input,
            output,
        } => commands::distill_cmd(&subwords(&sw)?, &teacher, &lexicon, &input, &output),
        Command::Train {
            subwords: sw,
            masks: m,
            train,
        } => commands::train_snat(
            &subwords(&sw)?,
            &masks(&m)?,
            &train.paths(),
            train.resume.as_deref(),
            &s,
        ),
        Command::Translate {
            subwords: sw,
            masks: m,
            model,
            teacher,
            lexicon,
            input,
            output,
            labels,
        } => commands::translate(
            &subwords(&sw)?,
            &masks(&m)?,
            &commands::TranslateArgs {
                model: &model,
                teacher: teacher.as_deref(),
                lexicon: &lexicon,
                input: input.as_deref(),
                output: output.as_deref(),
                labels,
            },
            &s,
        ),
        Command::Evaluate {
            subwords: sw,
            masks: m,
            model,
            teacher,
            src,
            tgt,
            gold_length,
            hypotheses,
        } => commands::evaluate(
            &subwords(&sw)?,
            &masks(&m)?,
            &commands::EvalArgs {
                model: &model,
                teacher: teacher.as_deref(),
                src: &src,
                tgt: &tgt,
                gold_length,
                hypotheses: hypotheses.as_deref(),
            },
            &s,
        ),
        Command::Bench {
            subwords: sw,
            masks: m,
            model,
            teacher,
            src,
            sentences,
        } => commands::bench_cmd(
            &subwords(&sw)?,
            &masks(&m)?,
            &model,
            &teacher,
            &src,
            sentences,
            &s,
        ),
        Command::Ablate {
            subwords: sw,
            masks: m,
            corpus,
            variants,
            output,
        } => commands::ablate_cmd(
            &subwords(&sw)?,
            &masks(&m)?,
            &commands::AblateArgs {
                train_src: &corpus.train_src,
                train_tgt: &corpus.train_tgt,
                dev_src: &corpus.dev_src,
                dev_tgt: &corpus.dev_tgt,
                variants: &variants,
                output: output.as_deref(),
            },
            &s,
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
