use std::path::Path;

use anyhow::{bail, Context};
use serde::Deserialize;
use snat::infer::LengthPolicy;
use snat::model::ModelConfig;
use snat::text::LabelVocab;
use snat::train::TrainConfig;

/// Every tunable knob. Values come from the defaults below, then the config
/// file, then `--set key=value` flags, then `--seed`.
#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub seed: u64,

    // text
    pub merges: usize,
    pub epsilon: f64,

    // model
    pub d_model: usize,
    pub d_ffn: usize,
    pub num_heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub dropout: f64,
    pub use_pos: bool,
    pub use_ner: bool,
    pub max_positions: usize,

    // training
    pub lr: f64,
    pub warmup_ratio: f64,
    pub weight_decay: f64,
    pub max_tokens: usize,
    pub max_steps: usize,
    pub patience: usize,
    pub eval_every: usize,
    pub log_every: usize,
    pub lambda: f64,
    /// Alignment layer; 0 turns the regularizer off.
    pub md: usize,
    pub label_smoothing: f64,

    // inference
    /// Language pair used to pick the length offset when `length_c` is unset.
    pub direction: String,
    pub length_c: Option<i64>,
    pub length_b: usize,

    // benchmark
    pub bench_runs: usize,
    pub bench_len: usize,
    pub bench_widths: Vec<usize>,

    // ablation
    pub ablation_seeds: Vec<u64>,
}

impl Default for Settings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Settings {
            seed: t.seed,
            merges: 1000,
            epsilon: t.epsilon,
            d_model: 64,
            d_ffn: 256,
            num_heads: 2,
            encoder_layers: 2,
            decoder_layers: 4,
            dropout: 0.1,
            use_pos: true,
            use_ner: true,
            max_positions: 256,
            lr: t.lr,
            warmup_ratio: t.warmup_ratio,
            weight_decay: t.weight_decay,
            max_tokens: t.max_tokens,
            max_steps: t.max_steps,
            patience: t.patience,
            eval_every: t.eval_every,
            log_every: t.log_every,
            lambda: t.lambda,
            md: t.md.unwrap_or(0),
            label_smoothing: t.label_smoothing,
            direction: "en-de".into(),
            length_c: None,
            length_b: 4,
            bench_runs: 5,
            bench_len: 20,
            bench_widths: vec![4, 9],
            ablation_seeds: vec![1, 2, 3],
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl Settings {
    pub fn load(
        path: Option<&Path>,
        overrides: &[String],
        seed: Option<u64>,
    ) -> anyhow::Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<toml::Table>()
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let Some((k, v)) = o.split_once('=') else {
                bail!("--set expects key=value, got {o:?}");
            };
            table.insert(k.trim().to_string(), parse_value(v.trim()));
        }
        let mut s: Settings = table.try_into().context("invalid settings")?;
        if let Some(seed) = seed {
            s.seed = seed;
        }
        Ok(s)
    }

    pub fn model_config(&self, word_vocab: usize) -> ModelConfig {
        let mut c = ModelConfig::desk(word_vocab, LabelVocab::pos().len(), LabelVocab::ner().len());
        c.d_model = self.d_model;
        c.d_ffn = self.d_ffn;
        c.num_heads = self.num_heads;
        c.encoder_layers = self.encoder_layers;
        c.decoder_layers = self.decoder_layers;
        c.dropout = self.dropout;
        c.use_pos = self.use_pos;
        c.use_ner = self.use_ner;
        c.max_positions = self.max_positions;
        c
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            warmup_ratio: self.warmup_ratio,
            weight_decay: self.weight_decay,
            max_tokens: self.max_tokens,
            max_steps: self.max_steps,
            patience: self.patience,
            eval_every: self.eval_every,
            log_every: self.log_every,
            seed: self.seed,
            lambda: self.lambda,
            epsilon: self.epsilon,
            md: (self.md > 0).then_some(self.md),
            label_smoothing: self.label_smoothing,
            ..TrainConfig::default()
        }
    }

    pub fn length_policy(&self) -> anyhow::Result<LengthPolicy> {
        match self.length_c {
            Some(c) => Ok(LengthPolicy {
                c,
                b: self.length_b,
            }),
            None => LengthPolicy::for_direction(&self.direction, self.length_b)
                .with_context(|| format!("unknown direction {:?}; set length_c", self.direction)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_beat_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "lr = 0.01\nmd = 2\ndirection = \"en-ro\"\n").unwrap();
        let s = Settings::load(
            Some(&p),
            &["md=0".into(), "direction=de-en".into()],
            Some(9),
        )
        .unwrap();
        assert_eq!(s.lr, 0.01);
        assert_eq!(s.md, 0);
        assert_eq!(s.direction, "de-en");
        assert_eq!(s.seed, 9);
        assert_eq!(s.train_config().md, None);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Settings::load(None, &["learning_rate=1".into()], None).is_err());
        assert!(Settings::load(None, &["nokey".into()], None).is_err());
    }
}
