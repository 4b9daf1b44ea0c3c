use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Network hyper-parameters. The parameter layout is a pure function of
/// this struct.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub d_ffn: usize,
    pub word_vocab: usize,
    pub pos_vocab: usize,
    pub ner_vocab: usize,
    pub max_positions: usize,
    pub dropout: f64,
    pub use_pos: bool,
    pub use_ner: bool,
}

impl ModelConfig {
    /// Small model used for tests and toy corpora: 2+2 layers, 2 heads,
    /// d_model 64, d_ffn 256.
    pub fn desk(word_vocab: usize, pos_vocab: usize, ner_vocab: usize) -> Self {
        ModelConfig {
            encoder_layers: 2,
            decoder_layers: 2,
            num_heads: 2,
            d_model: 64,
            d_ffn: 256,
            word_vocab,
            pos_vocab,
            ner_vocab,
            max_positions: 256,
            dropout: 0.1,
            use_pos: true,
            use_ner: true,
        }
    }

    /// Base Transformer sizes: 6+6 layers, 8 heads, 512/2048.
    pub fn paper(word_vocab: usize, pos_vocab: usize, ner_vocab: usize) -> Self {
        ModelConfig {
            encoder_layers: 6,
            decoder_layers: 6,
            num_heads: 8,
            d_model: 512,
            d_ffn: 2048,
            max_positions: 1024,
            ..Self::desk(word_vocab, pos_vocab, ner_vocab)
        }
    }

    pub fn with_layers(mut self, layers: usize) -> Self {
        self.encoder_layers = layers;
        self.decoder_layers = layers;
        self
    }

    pub fn uses_labels(&self) -> bool {
        self.use_pos || self.use_ner
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_heads == 0 || self.d_model == 0 || self.d_ffn == 0 {
            return bad("heads, d_model and d_ffn must be positive");
        }
        if !self.d_model.is_multiple_of(self.num_heads) {
            return bad("d_model must be divisible by num_heads");
        }
        if self.decoder_layers == 0 {
            return bad("decoder needs at least one layer");
        }
        if self.word_vocab == 0 || self.max_positions == 0 {
            return bad("word vocabulary and max positions must be positive");
        }
        if (self.use_pos && self.pos_vocab == 0) || (self.use_ner && self.ner_vocab == 0) {
            return bad("enabled label families need a non-empty vocabulary");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        Ok(())
    }

    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("encoder_layers", self.encoder_layers.to_string());
        put("decoder_layers", self.decoder_layers.to_string());
        put("num_heads", self.num_heads.to_string());
        put("d_model", self.d_model.to_string());
        put("d_ffn", self.d_ffn.to_string());
        put("word_vocab", self.word_vocab.to_string());
        put("pos_vocab", self.pos_vocab.to_string());
        put("ner_vocab", self.ner_vocab.to_string());
        put("max_positions", self.max_positions.to_string());
        // bit pattern keeps the round trip exact
        put("dropout", format!("{:016x}", self.dropout.to_bits()));
        put("use_pos", self.use_pos.to_string());
        put("use_ner", self.use_ner.to_string());
        m
    }

    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        fn get<V: std::str::FromStr>(kv: &BTreeMap<String, String>, k: &str) -> Result<V> {
            kv.get(k)
                .ok_or_else(|| Error::Format(format!("missing config key {k}")))?
                .parse()
                .map_err(|_| Error::Format(format!("bad value for config key {k}")))
        }
        let dropout_bits = u64::from_str_radix(
            kv.get("dropout")
                .ok_or_else(|| Error::Format("missing config key dropout".into()))?,
            16,
        )
        .map_err(|_| Error::Format("bad value for config key dropout".into()))?;
        let c = ModelConfig {
            encoder_layers: get(kv, "encoder_layers")?,
            decoder_layers: get(kv, "decoder_layers")?,
            num_heads: get(kv, "num_heads")?,
            d_model: get(kv, "d_model")?,
            d_ffn: get(kv, "d_ffn")?,
            word_vocab: get(kv, "word_vocab")?,
            pos_vocab: get(kv, "pos_vocab")?,
            ner_vocab: get(kv, "ner_vocab")?,
            max_positions: get(kv, "max_positions")?,
            dropout: f64::from_bits(dropout_bits),
            use_pos: get(kv, "use_pos")?,
            use_ner: get(kv, "use_ner")?,
        };
        c.validate()?;
        Ok(c)
    }

    /// Stable digest of the configuration, checked when resuming.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.to_kv() {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        hex::encode(&h.finalize()[..8])
    }
}
