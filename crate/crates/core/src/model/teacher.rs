//! Left-to-right Transformer used for distillation, rescoring and as the
//! latency baseline. Same encoder as the SNAT model; the decoder has causal
//! self-attention, inter-attention and an FFN per block, and a tied linear
//! output layer.

use super::batch::SeqBatch;
use super::config::ModelConfig;
use super::counters::CallCounters;
use super::layers::{
    attend, attn_scale, attn_spec, embed, encoder_spec, encoder_stack, ffn, ffn_spec, linear, norm,
    norm_spec, residual, sinusoidal, Attn, EncLayer, Ffn, Norm,
};
use super::params::{Graph, Init, ParamId, ParamStore, Specs};
use super::snat::EncodedSource;
use crate::tensor::{AttnSpec, Scalar, Tensor, Var};
use crate::text::vocab::{BOS, EOS, PAD};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct DecLayer {
    self_attn: Attn,
    ln1: Norm,
    cross_attn: Attn,
    ln2: Norm,
    ffn: Ffn,
    ln3: Norm,
}

#[derive(Clone, Debug)]
struct Layout {
    word_emb: ParamId,
    out_bias: ParamId,
    enc_ln: Norm,
    enc: Vec<EncLayer>,
    dec_ln: Norm,
    dec: Vec<DecLayer>,
}

fn layout(c: &ModelConfig) -> (Layout, Specs) {
    let mut s = Specs::default();
    let d = c.d_model;
    let word_emb = s.add("word_emb", &[c.word_vocab, d], Init::Normal);
    let out_bias = s.add("word_bias", &[c.word_vocab], Init::Zeros);
    let enc_ln = norm_spec(&mut s, "enc.emb_ln.word", d);
    let enc = encoder_spec(&mut s, c.encoder_layers, d, c.d_ffn);
    let dec_ln = norm_spec(&mut s, "dec.emb_ln.word", d);
    let dec = (0..c.decoder_layers)
        .map(|i| DecLayer {
            self_attn: attn_spec(&mut s, &format!("dec.{i}.self_attn"), d),
            ln1: norm_spec(&mut s, &format!("dec.{i}.ln1"), d),
            cross_attn: attn_spec(&mut s, &format!("dec.{i}.cross_attn"), d),
            ln2: norm_spec(&mut s, &format!("dec.{i}.ln2"), d),
            ffn: ffn_spec(&mut s, &format!("dec.{i}.ffn"), d, c.d_ffn),
            ln3: norm_spec(&mut s, &format!("dec.{i}.ln3"), d),
        })
        .collect();
    let l = Layout {
        word_emb,
        out_bias,
        enc_ln,
        enc,
        dec_ln,
        dec,
    };
    (l, s)
}

/// Shifted decoder input `[BOS, y…]` and output `[y…, EOS]`.
pub fn teacher_io(target: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut input = Vec::with_capacity(target.len() + 1);
    input.push(BOS);
    input.extend_from_slice(target);
    let mut output = target.to_vec();
    output.push(EOS);
    (input, output)
}

/// Result of greedy decoding.
#[derive(Clone, Debug, PartialEq)]
pub struct Greedy {
    pub tokens: Vec<usize>,
    /// `true` when decoding hit the length limit without emitting EOS.
    pub truncated: bool,
}

#[derive(Clone, Debug)]
pub struct TeacherModel<T: Scalar = f32> {
    config: ModelConfig,
    params: ParamStore<T>,
    layout: Layout,
    counters: CallCounters,
}

/// Per-layer key/value caches for incremental decoding.
pub(crate) struct StepCache<T: Scalar> {
    enc_k: Vec<Tensor<T>>,
    enc_v: Vec<Tensor<T>>,
    self_k: Vec<Vec<T>>,
    self_v: Vec<Vec<T>>,
    src_valid: Vec<bool>,
    pe: Tensor<T>,
    steps: usize,
}

impl<T: Scalar> TeacherModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = layout(&config);
        Ok(TeacherModel {
            params: ParamStore::init(&specs, seed),
            config,
            layout,
            counters: CallCounters::default(),
        })
    }

    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = layout(&config);
        params.check(&specs)?;
        Ok(TeacherModel {
            config,
            params,
            layout,
            counters: CallCounters::default(),
        })
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

    pub fn graph(&self, train: bool, seed: u64) -> Graph<'_, T> {
        let p = if train { self.config.dropout } else { 0.0 };
        Graph::new(&self.params, train, p, seed)
    }

    pub fn encode_graph(&self, g: &mut Graph<'_, T>, src: &SeqBatch) -> Result<Var> {
        self.counters.bump_encoder();
        let c = &self.config;
        let x = embed(
            g,
            &[(self.layout.word_emb, &src.words)],
            &[self.layout.enc_ln],
            src,
            c.d_model,
            c.max_positions,
        )?;
        encoder_stack(g, &self.layout.enc, x, src, c.num_heads, c.d_model)
    }

    /// Teacher-forced decoder pass; returns next-token logits `[batch*m, V]`
    /// where `tgt_in` is the shifted target.
    pub fn decode_graph(
        &self,
        g: &mut Graph<'_, T>,
        tgt_in: &SeqBatch,
        enc: Var,
        src: &SeqBatch,
    ) -> Result<Var> {
        self.counters.bump_decoder();
        let c = &self.config;
        let (d, heads) = (c.d_model, c.num_heads);
        let mut x = embed(
            g,
            &[(self.layout.word_emb, &tgt_in.words)],
            &[self.layout.dec_ln],
            tgt_in,
            d,
            c.max_positions,
        )?;
        let self_spec = AttnSpec {
            batch: tgt_in.batch,
            q_len: tgt_in.len,
            k_len: tgt_in.len,
            heads,
            scale: attn_scale(d),
            causal: true,
            key_valid: Some(tgt_in.valid.clone()),
        };
        let cross_spec = AttnSpec {
            k_len: src.len,
            causal: false,
            key_valid: Some(src.valid.clone()),
            ..self_spec.clone()
        };
        for l in &self.layout.dec {
            let a = attend(g, &l.self_attn, x, x, x, self_spec.clone())?;
            x = residual(g, x, a, l.ln1)?;
            let a = attend(g, &l.cross_attn, x, enc, enc, cross_spec.clone())?;
            x = residual(g, x, a, l.ln2)?;
            let f = ffn(g, &l.ffn, x)?;
            x = residual(g, x, f, l.ln3)?;
        }
        self.output(g, x)
    }

    fn output(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (g.p(self.layout.word_emb), g.p(self.layout.out_bias));
        let y = g.tape.matmul_nt(x, w)?;
        g.tape.add_bias(y, b)
    }

    /// Full forward: source ids and target prefix → logits per prefix position.
    pub fn forward_graph(
        &self,
        g: &mut Graph<'_, T>,
        src: &SeqBatch,
        tgt_in: &SeqBatch,
    ) -> Result<Var> {
        let enc = self.encode_graph(g, src)?;
        self.decode_graph(g, tgt_in, enc, src)
    }

    pub fn encode(&self, source: &[usize]) -> Result<EncodedSource<T>> {
        let src = SeqBatch::from_ids(&[source]);
        let mut g = self.graph(false, 0);
        let h = self.encode_graph(&mut g, &src)?;
        Ok(EncodedSource {
            h: g.tape.value(h).clone(),
            source: src,
        })
    }

    /// Per-token log-probabilities of `target` followed by EOS, from one
    /// teacher-forced pass.
    pub fn token_log_probs(&self, enc: &EncodedSource<T>, target: &[usize]) -> Result<Vec<f64>> {
        let (input, output) = teacher_io(target);
        let tgt = SeqBatch::from_ids(&[&input]);
        let mut g = self.graph(false, 0);
        let h = g.tape.constant(enc.h.clone());
        let logits = self.decode_graph(&mut g, &tgt, h, &enc.source)?;
        let lp = g.tape.log_softmax(logits, 1)?;
        let lp = g.tape.value(lp);
        Ok(output
            .iter()
            .enumerate()
            .map(|(t, &y)| lp.row(t)[y].as_f64())
            .collect())
    }

    /// Next-token logits after `prefix` (which starts with BOS), computed
    /// with a full teacher-forced pass.
    pub fn next_logits(&self, enc: &EncodedSource<T>, prefix: &[usize]) -> Result<Vec<T>> {
        let tgt = SeqBatch::from_ids(&[prefix]);
        let mut g = self.graph(false, 0);
        let h = g.tape.constant(enc.h.clone());
        let logits = self.decode_graph(&mut g, &tgt, h, &enc.source)?;
        Ok(g.tape.value(logits).row(prefix.len() - 1).to_vec())
    }

    pub(crate) fn start_cache(
        &self,
        enc: &EncodedSource<T>,
        max_len: usize,
    ) -> Result<StepCache<T>> {
        if enc.source.batch != 1 {
            return Err(Error::Contract(
                "incremental decoding takes one source".into(),
            ));
        }
        let mut g = self.graph(false, 0);
        let h = g.tape.constant(enc.h.clone());
        let mut enc_k = Vec::new();
        let mut enc_v = Vec::new();
        for l in &self.layout.dec {
            let k = linear(&mut g, l.cross_attn.k, h)?;
            let v = linear(&mut g, l.cross_attn.v, h)?;
            enc_k.push(g.tape.value(k).clone());
            enc_v.push(g.tape.value(v).clone());
        }
        let n = self.layout.dec.len();
        Ok(StepCache {
            enc_k,
            enc_v,
            self_k: vec![Vec::new(); n],
            self_v: vec![Vec::new(); n],
            src_valid: enc.source.valid.clone(),
            pe: sinusoidal(max_len.min(self.config.max_positions), self.config.d_model),
            steps: 0,
        })
    }

    /// Feeds one token and returns logits for the next one, reusing cached
    /// keys and values of earlier positions.
    pub(crate) fn step(&self, cache: &mut StepCache<T>, token: usize) -> Result<Vec<T>> {
        self.counters.bump_decoder();
        let c = &self.config;
        let d = c.d_model;
        let t = cache.steps;
        if t >= cache.pe.rows() {
            return Err(Error::Contract(format!(
                "decoding beyond {} positions",
                cache.pe.rows()
            )));
        }
        let mut g = self.graph(false, 0);
        let pe = g
            .tape
            .constant(Tensor::new(vec![1, d], cache.pe.row(t).to_vec())?);
        let w = g.p(self.layout.word_emb);
        let e = g.tape.gather(w, &[token])?;
        let e = norm(&mut g, self.layout.dec_ln, e)?;
        let mut x = g.tape.add(pe, e)?;
        let n_src = cache.src_valid.len();
        for (i, l) in self.layout.dec.iter().enumerate() {
            let q = linear(&mut g, l.self_attn.q, x)?;
            let k = linear(&mut g, l.self_attn.k, x)?;
            let v = linear(&mut g, l.self_attn.v, x)?;
            cache.self_k[i].extend_from_slice(g.tape.value(k).data());
            cache.self_v[i].extend_from_slice(g.tape.value(v).data());
            let kk = g
                .tape
                .constant(Tensor::new(vec![t + 1, d], cache.self_k[i].clone())?);
            let vv = g
                .tape
                .constant(Tensor::new(vec![t + 1, d], cache.self_v[i].clone())?);
            let spec = AttnSpec {
                batch: 1,
                q_len: 1,
                k_len: t + 1,
                heads: c.num_heads,
                scale: attn_scale(d),
                causal: false,
                key_valid: None,
            };
            let a = g.tape.attention(q, kk, vv, spec.clone())?;
            let a = linear(&mut g, l.self_attn.o, a)?;
            x = residual(&mut g, x, a, l.ln1)?;

            let q = linear(&mut g, l.cross_attn.q, x)?;
            let kk = g.tape.constant(cache.enc_k[i].clone());
            let vv = g.tape.constant(cache.enc_v[i].clone());
            let cross = AttnSpec {
                k_len: n_src,
                key_valid: Some(cache.src_valid.clone()),
                ..spec
            };
            let a = g.tape.attention(q, kk, vv, cross)?;
            let a = linear(&mut g, l.cross_attn.o, a)?;
            x = residual(&mut g, x, a, l.ln2)?;
            let f = ffn(&mut g, &l.ffn, x)?;
            x = residual(&mut g, x, f, l.ln3)?;
        }
        let logits = self.output(&mut g, x)?;
        cache.steps += 1;
        Ok(g.tape.value(logits).data().to_vec())
    }

    /// Greedy left-to-right decoding until EOS or `max_len` tokens. Each
    /// emitted token costs exactly one decoder call.
    pub fn greedy(&self, enc: &EncodedSource<T>, max_len: usize) -> Result<Greedy> {
        let mut cache = self.start_cache(enc, max_len + 1)?;
        let mut tokens = Vec::new();
        let mut prev = BOS;
        while tokens.len() < max_len {
            let logits = self.step(&mut cache, prev)?;
            let next = argmax_excluding(&logits, &[PAD, BOS]);
            if next == EOS {
                return Ok(Greedy {
                    tokens,
                    truncated: false,
                });
            }
            tokens.push(next);
            prev = next;
        }
        Ok(Greedy {
            tokens,
            truncated: true,
        })
    }

    /// Greedy decoding of exactly `len` tokens (EOS suppressed); used by the
    /// latency benchmark so output length is controlled.
    pub fn greedy_fixed(&self, enc: &EncodedSource<T>, len: usize) -> Result<Vec<usize>> {
        let mut cache = self.start_cache(enc, len + 1)?;
        let mut tokens = Vec::with_capacity(len);
        let mut prev = BOS;
        for _ in 0..len {
            let logits = self.step(&mut cache, prev)?;
            prev = argmax_excluding(&logits, &[PAD, BOS, EOS]);
            tokens.push(prev);
        }
        Ok(tokens)
    }
}

fn argmax_excluding<T: Scalar>(logits: &[T], skip: &[usize]) -> usize {
    let mut best = None;
    for (i, v) in logits.iter().enumerate() {
        if skip.contains(&i) {
            continue;
        }
        if best.is_none_or(|(_, b): (usize, T)| *v > b) {
            best = Some((i, *v));
        }
    }
    best.map(|(i, _)| i).unwrap_or(EOS)
}
