use super::batch::SeqBatch;
use super::config::ModelConfig;
use super::counters::CallCounters;
use super::layers::{
    attend, attn_scale, attn_spec, embed, encoder_spec, encoder_stack, ffn, ffn_spec, norm_spec,
    residual, tiled_positions, Attn, EncLayer, Ffn, Norm,
};
use super::params::{Graph, Init, ParamId, ParamStore, Specs};
use crate::tensor::{AttnSpec, Scalar, Tensor, Var};
use crate::text::{LabelFamily, LabeledSentence};
use crate::Result;

#[derive(Clone, Copy, Debug)]
struct DecLayer {
    self_attn: Attn,
    ln1: Norm,
    pos_attn: Attn,
    ln2: Norm,
    cross_attn: Attn,
    ln3: Norm,
    ffn: Ffn,
    ln4: Norm,
}

#[derive(Clone, Copy, Debug)]
struct LabelHead {
    table: ParamId,
    bias: ParamId,
    ffn: Ffn,
    ln: Norm,
}

#[derive(Clone, Debug)]
struct Layout {
    word_emb: ParamId,
    word_bias: ParamId,
    pos: Option<LabelHead>,
    ner: Option<LabelHead>,
    /// One norm per embedding table in `label_tables` order.
    enc_ln: Vec<Norm>,
    dec_ln: Vec<Norm>,
    enc: Vec<EncLayer>,
    dec: Vec<DecLayer>,
    final_ffn: Ffn,
    final_ln: Norm,
}

fn layout(c: &ModelConfig) -> (Layout, Specs) {
    let mut s = Specs::default();
    let d = c.d_model;
    let word_emb = s.add("word_emb", &[c.word_vocab, d], Init::Normal);
    let word_bias = s.add("word_bias", &[c.word_vocab], Init::Zeros);
    let mut head = |name: &str, on: bool, v: usize| {
        on.then(|| LabelHead {
            table: s.add(format!("{name}_emb"), &[v, d], Init::Normal),
            bias: s.add(format!("{name}_bias"), &[v], Init::Zeros),
            ffn: ffn_spec(&mut s, &format!("{name}_head.ffn"), d, c.d_ffn),
            ln: norm_spec(&mut s, &format!("{name}_head.ln"), d),
        })
    };
    let pos = head("pos", c.use_pos, c.pos_vocab);
    let ner = head("ner", c.use_ner, c.ner_vocab);
    let mut tables = vec!["word"];
    if c.use_pos {
        tables.push("pos");
    }
    if c.use_ner {
        tables.push("ner");
    }
    let mut norms = |side: &str| -> Vec<Norm> {
        tables
            .iter()
            .map(|t| norm_spec(&mut s, &format!("{side}.emb_ln.{t}"), d))
            .collect()
    };
    let enc_ln = norms("enc");
    let dec_ln = norms("dec");
    let enc = encoder_spec(&mut s, c.encoder_layers, d, c.d_ffn);
    let dec = (0..c.decoder_layers)
        .map(|i| DecLayer {
            self_attn: attn_spec(&mut s, &format!("dec.{i}.self_attn"), d),
            ln1: norm_spec(&mut s, &format!("dec.{i}.ln1"), d),
            pos_attn: attn_spec(&mut s, &format!("dec.{i}.pos_attn"), d),
            ln2: norm_spec(&mut s, &format!("dec.{i}.ln2"), d),
            cross_attn: attn_spec(&mut s, &format!("dec.{i}.cross_attn"), d),
            ln3: norm_spec(&mut s, &format!("dec.{i}.ln3"), d),
            ffn: ffn_spec(&mut s, &format!("dec.{i}.ffn"), d, c.d_ffn),
            ln4: norm_spec(&mut s, &format!("dec.{i}.ln4"), d),
        })
        .collect();
    let final_ffn = ffn_spec(&mut s, "dec.final_ffn", d, c.d_ffn);
    let final_ln = norm_spec(&mut s, "dec.final_ln", d);
    let l = Layout {
        word_emb,
        word_bias,
        pos,
        ner,
        enc_ln,
        dec_ln,
        enc,
        dec,
        final_ffn,
        final_ln,
    };
    (l, s)
}

/// Encoder output for one or more sources, detached from any tape.
#[derive(Clone, Debug)]
pub struct EncodedSource<T: Scalar = f32> {
    /// `[batch * n, d_model]`
    pub h: Tensor<T>,
    pub source: SeqBatch,
}

/// Decoder activations on a tape.
#[derive(Clone, Debug)]
pub struct DecoderVars {
    /// Output of every decoder block, `Z^1 .. Z^L`.
    pub layers: Vec<Var>,
    pub zf: Var,
}

/// Detached single-pass prediction for a batch of decoder inputs.
#[derive(Clone, Debug)]
pub struct Prediction<T: Scalar = f32> {
    pub word_probs: Tensor<T>,
    pub pos_probs: Option<Tensor<T>>,
    pub ner_probs: Option<Tensor<T>>,
}

#[derive(Clone, Debug)]
pub struct SnatModel<T: Scalar = f32> {
    config: ModelConfig,
    params: ParamStore<T>,
    layout: Layout,
    counters: CallCounters,
}

impl<T: Scalar> SnatModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = layout(&config);
        let params = ParamStore::init(&specs, seed);
        Ok(SnatModel {
            config,
            params,
            layout,
            counters: CallCounters::default(),
        })
    }

    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = layout(&config);
        params.check(&specs)?;
        Ok(SnatModel {
            config,
            params,
            layout,
            counters: CallCounters::default(),
        })
    }

    /// Parameter count implied by a config, without allocating weights.
    pub fn count_params(config: &ModelConfig) -> usize {
        layout(config)
            .1
            .list
            .iter()
            .map(|(_, s, _)| s.iter().product::<usize>())
            .sum()
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn counters(&self) -> &CallCounters {
        &self.counters
    }

    pub fn cast<U: Scalar>(&self) -> SnatModel<U> {
        SnatModel {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
            counters: CallCounters::default(),
        }
    }

    pub fn word_embedding(&self) -> ParamId {
        self.layout.word_emb
    }

    /// A fresh tape bound to this model's parameters. `train` enables
    /// gradients and dropout.
    pub fn graph(&self, train: bool, seed: u64) -> Graph<'_, T> {
        let p = if train { self.config.dropout } else { 0.0 };
        Graph::new(&self.params, train, p, seed)
    }

    fn label_tables<'b>(&self, b: &'b SeqBatch) -> Vec<(ParamId, &'b [usize])> {
        let mut t: Vec<(ParamId, &[usize])> = vec![(self.layout.word_emb, &b.words)];
        if let Some(h) = self.layout.pos {
            t.push((h.table, &b.pos));
        }
        if let Some(h) = self.layout.ner {
            t.push((h.table, &b.ner));
        }
        t
    }

    /// Word + enabled label embeddings + positions, layer-normalized.
    pub fn embed(&self, g: &mut Graph<'_, T>, b: &SeqBatch, decoder: bool) -> Result<Var> {
        let ln = if decoder {
            &self.layout.dec_ln
        } else {
            &self.layout.enc_ln
        };
        let c = &self.config;
        embed(g, &self.label_tables(b), ln, b, c.d_model, c.max_positions)
    }

    pub fn encode_graph(&self, g: &mut Graph<'_, T>, src: &SeqBatch) -> Result<Var> {
        self.counters.bump_encoder();
        let x = self.embed(g, src, false)?;
        let c = &self.config;
        encoder_stack(g, &self.layout.enc, x, src, c.num_heads, c.d_model)
    }

    /// One non-autoregressive decoder pass over `dec` given encoder states
    /// `enc` for `src`.
    pub fn decode_graph(
        &self,
        g: &mut Graph<'_, T>,
        dec: &SeqBatch,
        enc: Var,
        src: &SeqBatch,
    ) -> Result<DecoderVars> {
        self.counters.bump_decoder();
        let c = &self.config;
        let (d, heads) = (c.d_model, c.num_heads);
        let mut x = self.embed(g, dec, true)?;
        let pe = g.tape.constant(tiled_positions(dec.batch, dec.len, d));
        let self_spec = AttnSpec {
            batch: dec.batch,
            q_len: dec.len,
            k_len: dec.len,
            heads,
            scale: attn_scale(d),
            causal: false,
            key_valid: Some(dec.valid.clone()),
        };
        let cross_spec = AttnSpec {
            k_len: src.len,
            key_valid: Some(src.valid.clone()),
            ..self_spec.clone()
        };
        let mut layers = Vec::with_capacity(self.layout.dec.len());
        for l in &self.layout.dec {
            let a = attend(g, &l.self_attn, x, x, x, self_spec.clone())?;
            x = residual(g, x, a, l.ln1)?;
            let a = attend(g, &l.pos_attn, pe, pe, x, self_spec.clone())?;
            x = residual(g, x, a, l.ln2)?;
            let a = attend(g, &l.cross_attn, x, enc, enc, cross_spec.clone())?;
            x = residual(g, x, a, l.ln3)?;
            let f = ffn(g, &l.ffn, x)?;
            x = residual(g, x, f, l.ln4)?;
            layers.push(x);
        }
        let f = ffn(g, &self.layout.final_ffn, x)?;
        let zf = residual(g, x, f, self.layout.final_ln)?;
        Ok(DecoderVars { layers, zf })
    }

    /// `GeLU(Z·W_wᵀ + b_w)` through the tied word embedding.
    pub fn word_logits(&self, g: &mut Graph<'_, T>, z: Var) -> Result<Var> {
        tied_head(g, z, self.layout.word_emb, self.layout.word_bias)
    }

    /// Label logits for a family through its own FFN block, or `None` when
    /// the family is disabled.
    pub fn label_logits(
        &self,
        g: &mut Graph<'_, T>,
        z: Var,
        family: LabelFamily,
    ) -> Result<Option<Var>> {
        let head = match family {
            LabelFamily::Pos => self.layout.pos,
            LabelFamily::Ner => self.layout.ner,
        };
        let Some(h) = head else { return Ok(None) };
        let f = ffn(g, &h.ffn, z)?;
        let z = residual(g, z, f, h.ln)?;
        tied_head(g, z, h.table, h.bias).map(Some)
    }

    pub fn uses_family(&self, family: LabelFamily) -> bool {
        match family {
            LabelFamily::Pos => self.layout.pos.is_some(),
            LabelFamily::Ner => self.layout.ner.is_some(),
        }
    }

    /// Encodes a batch of labeled sources without gradients.
    pub fn encode(&self, sources: &[&LabeledSentence]) -> Result<EncodedSource<T>> {
        let src = SeqBatch::from_sentences(sources);
        let mut g = self.graph(false, 0);
        let h = self.encode_graph(&mut g, &src)?;
        Ok(EncodedSource {
            h: g.tape.value(h).clone(),
            source: src,
        })
    }

    /// One decoder pass (no gradients) returning word and label
    /// distributions per position, `[batch * m, vocab]`.
    pub fn predict(&self, enc: &EncodedSource<T>, dec: &SeqBatch) -> Result<Prediction<T>> {
        let mut g = self.graph(false, 0);
        let h = g.tape.constant(enc.h.clone());
        let out = self.decode_graph(&mut g, dec, h, &enc.source)?;
        let probs = |g: &mut Graph<'_, T>, logits: Var| -> Result<Tensor<T>> {
            let p = g.tape.softmax(logits, 1)?;
            Ok(g.tape.value(p).clone())
        };
        let wl = self.word_logits(&mut g, out.zf)?;
        let word_probs = probs(&mut g, wl)?;
        let mut label = |fam| -> Result<Option<Tensor<T>>> {
            match self.label_logits(&mut g, out.zf, fam)? {
                Some(l) => Ok(Some(probs(&mut g, l)?)),
                None => Ok(None),
            }
        };
        let pos_probs = label(LabelFamily::Pos)?;
        let ner_probs = label(LabelFamily::Ner)?;
        Ok(Prediction {
            word_probs,
            pos_probs,
            ner_probs,
        })
    }
}

fn tied_head<T: Scalar>(
    g: &mut Graph<'_, T>,
    z: Var,
    table: ParamId,
    bias: ParamId,
) -> Result<Var> {
    let (t, b) = (g.p(table), g.p(bias));
    let y = g.tape.matmul_nt(z, t)?;
    let y = g.tape.add_bias(y, b)?;
    Ok(g.tape.gelu(y))
}
