// Building blocks shared by the SNAT model and the autoregressive teacher.
// Weights are stored `[in, out]`; every sublayer is post-norm:
// LN(x + dropout(f(x))).

use super::batch::SeqBatch;
use super::params::{Graph, Init, ParamId, Specs};
use crate::tensor::{AttnSpec, Scalar, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub(crate) struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Norm {
    pub g: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Attn {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Ffn {
    pub up: Linear,
    pub down: Linear,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct EncLayer {
    pub attn: Attn,
    pub ln1: Norm,
    pub ffn: Ffn,
    pub ln2: Norm,
}

pub(crate) fn linear_spec(s: &mut Specs, name: &str, d_in: usize, d_out: usize) -> Linear {
    Linear {
        w: s.add(format!("{name}.w"), &[d_in, d_out], Init::Normal),
        b: s.add(format!("{name}.b"), &[d_out], Init::Zeros),
    }
}

pub(crate) fn norm_spec(s: &mut Specs, name: &str, d: usize) -> Norm {
    Norm {
        g: s.add(format!("{name}.g"), &[d], Init::Ones),
        b: s.add(format!("{name}.b"), &[d], Init::Zeros),
    }
}

pub(crate) fn attn_spec(s: &mut Specs, name: &str, d: usize) -> Attn {
    Attn {
        q: linear_spec(s, &format!("{name}.q"), d, d),
        k: linear_spec(s, &format!("{name}.k"), d, d),
        v: linear_spec(s, &format!("{name}.v"), d, d),
        o: linear_spec(s, &format!("{name}.o"), d, d),
    }
}

pub(crate) fn ffn_spec(s: &mut Specs, name: &str, d: usize, d_ffn: usize) -> Ffn {
    Ffn {
        up: linear_spec(s, &format!("{name}.up"), d, d_ffn),
        down: linear_spec(s, &format!("{name}.down"), d_ffn, d),
    }
}

pub(crate) fn encoder_spec(s: &mut Specs, layers: usize, d: usize, d_ffn: usize) -> Vec<EncLayer> {
    (0..layers)
        .map(|i| EncLayer {
            attn: attn_spec(s, &format!("enc.{i}.self_attn"), d),
            ln1: norm_spec(s, &format!("enc.{i}.ln1"), d),
            ffn: ffn_spec(s, &format!("enc.{i}.ffn"), d, d_ffn),
            ln2: norm_spec(s, &format!("enc.{i}.ln2"), d),
        })
        .collect()
}

/// Fixed sinusoidal position table for positions `0..len`.
pub fn sinusoidal<T: Scalar>(len: usize, d: usize) -> Tensor<T> {
    let rates: Vec<f64> = (0..d)
        .map(|i| 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64))
        .collect();
    let mut data = Vec::with_capacity(len * d);
    for pos in 0..len {
        for (i, &rate) in rates.iter().enumerate() {
            let a = pos as f64 * rate;
            data.push(T::of_f64(if i % 2 == 0 { a.sin() } else { a.cos() }));
        }
    }
    Tensor::new(vec![len, d], data).expect("pe dims")
}

/// Position table repeated for every sequence of a batch: `[batch*len, d]`.
pub(crate) fn tiled_positions<T: Scalar>(batch: usize, len: usize, d: usize) -> Tensor<T> {
    let pe = sinusoidal::<T>(len, d);
    let mut data = Vec::with_capacity(batch * len * d);
    for _ in 0..batch {
        data.extend_from_slice(pe.data());
    }
    Tensor::new(vec![batch * len, d], data).expect("pe dims")
}

pub(crate) fn linear<T: Scalar>(g: &mut Graph<'_, T>, p: Linear, x: Var) -> Result<Var> {
    let (w, b) = (g.p(p.w), g.p(p.b));
    let y = g.tape.matmul(x, w)?;
    g.tape.add_bias(y, b)
}

pub(crate) fn norm<T: Scalar>(g: &mut Graph<'_, T>, p: Norm, x: Var) -> Result<Var> {
    let (gain, bias) = (g.p(p.g), g.p(p.b));
    g.tape.layer_norm(x, gain, bias)
}

/// Attention with separate query, key and value inputs.
pub(crate) fn attend<T: Scalar>(
    g: &mut Graph<'_, T>,
    p: &Attn,
    q_in: Var,
    k_in: Var,
    v_in: Var,
    spec: AttnSpec,
) -> Result<Var> {
    let q = linear(g, p.q, q_in)?;
    let k = linear(g, p.k, k_in)?;
    let v = linear(g, p.v, v_in)?;
    let o = g.tape.attention(q, k, v, spec)?;
    linear(g, p.o, o)
}

pub(crate) fn ffn<T: Scalar>(g: &mut Graph<'_, T>, p: &Ffn, x: Var) -> Result<Var> {
    let h = linear(g, p.up, x)?;
    let h = g.tape.gelu(h);
    linear(g, p.down, h)
}

/// `LN(x + dropout(sub))`
pub(crate) fn residual<T: Scalar>(g: &mut Graph<'_, T>, x: Var, sub: Var, ln: Norm) -> Result<Var> {
    let sub = g.dropout(sub);
    let y = g.tape.add(x, sub)?;
    norm(g, ln, y)
}

pub(crate) fn attn_scale(d_model: usize) -> f64 {
    1.0 / (d_model as f64).sqrt()
}

/// Sum of separately layer-normalized table lookups plus positions, so no
/// single table can dominate the input by growing its norm.
pub(crate) fn embed<T: Scalar>(
    g: &mut Graph<'_, T>,
    tables: &[(ParamId, &[usize])],
    norms: &[Norm],
    batch: &SeqBatch,
    d: usize,
    max_positions: usize,
) -> Result<Var> {
    if batch.len > max_positions {
        return Err(Error::Contract(format!(
            "sequence length {} exceeds max positions {max_positions}",
            batch.len
        )));
    }
    debug_assert_eq!(tables.len(), norms.len());
    let mut x = g.tape.constant(tiled_positions(batch.batch, batch.len, d));
    for (&(table, ids), &ln) in tables.iter().zip(norms) {
        let t = g.p(table);
        let e = g.tape.gather(t, ids)?;
        let e = norm(g, ln, e)?;
        x = g.tape.add(x, e)?;
    }
    Ok(g.dropout(x))
}

pub(crate) fn encoder_stack<T: Scalar>(
    g: &mut Graph<'_, T>,
    layers: &[EncLayer],
    mut x: Var,
    batch: &SeqBatch,
    heads: usize,
    d: usize,
) -> Result<Var> {
    let spec = AttnSpec {
        batch: batch.batch,
        q_len: batch.len,
        k_len: batch.len,
        heads,
        scale: attn_scale(d),
        causal: false,
        key_valid: Some(batch.valid.clone()),
    };
    for l in layers {
        let a = attend(g, &l.attn, x, x, x, spec.clone())?;
        x = residual(g, x, a, l.ln1)?;
        let f = ffn(g, &l.ffn, x)?;
        x = residual(g, x, f, l.ln2)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sinusoid_values() {
        let pe = sinusoidal::<f64>(3, 4);
        // pos 0: sin 0, cos 0, sin 0, cos 0
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0]);
        // pos 2, dims 2/3 use rate 1/100
        assert!((pe.row(2)[2] - (0.02f64).sin()).abs() < 1e-15);
        assert!((pe.row(2)[1] - 2f64.cos()).abs() < 1e-15);
    }
}
