// Wengert-style tape: ops are appended during the forward pass and replayed
// in reverse by `backward`. Node indices are a topological order by
// construction, so the reverse pass is a single descending sweep.

use std::borrow::Cow;

use rand::Rng;

use super::kernels::{dot, matmul, matmul_nt, matmul_tn};
use super::{Scalar, Tensor};
use crate::{Error, Result};

const LN_EPS: f64 = 1e-5;
const LOG_GUARD: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Supervision for [`Tape::cross_entropy`].
#[derive(Clone, Debug)]
pub enum Target<T> {
    /// One class index per row; `None` rows are ignored (padding).
    Index(Vec<Option<usize>>),
    /// A full target distribution per row.
    Dist(Tensor<T>),
}

/// Geometry of a batched multi-head attention call.
///
/// Queries are `[batch * q_len, d]`, keys and values `[batch * k_len, d]`.
#[derive(Clone, Debug)]
pub struct AttnSpec {
    pub batch: usize,
    pub q_len: usize,
    pub k_len: usize,
    pub heads: usize,
    pub scale: f64,
    pub causal: bool,
    /// `batch * k_len` flags; `false` keys receive zero weight.
    pub key_valid: Option<Vec<bool>>,
}

enum Op<'a, T> {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Transpose(Var),
    Reshape(Var),
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    LogSoftmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        spec: AttnSpec,
        probs: Vec<T>,
    },
    CrossEntropy {
        pred: Var,
        target: Target<T>,
        count: usize,
    },
    CrossEntropyLogits {
        logits: Var,
        targets: Vec<Option<usize>>,
        smoothing: f64,
        probs: Vec<T>,
        count: usize,
    },
    JointNll {
        p: Var,
        q: Var,
        mask: &'a Tensor<T>,
        gold: Vec<Option<(usize, usize)>>,
        mq: Vec<T>,
        z: Vec<f64>,
        count: usize,
    },
}

struct Node<'a, T: Scalar> {
    value: Cow<'a, Tensor<T>>,
    op: Op<'a, T>,
    requires_grad: bool,
}

/// Records a computation for reverse-mode differentiation.
///
/// Leaves may borrow parameter tensors for `'a`, so a forward pass over a
/// read-only model copies no weights.
pub struct Tape<'a, T: Scalar = f32> {
    nodes: Vec<Node<'a, T>>,
    grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
}

impl<'a, T: Scalar> Default for Tape<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(msg: String) -> Error {
    Error::Shape(msg)
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

fn gauss_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gauss_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor<T>>, op: Op<'a, T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor<T>, op: Op<'a, T>, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Cow::Owned(value), op, rg)
    }

    /// Owned leaf.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, requires_grad)
    }

    /// Leaf borrowing an external tensor (typically a model parameter).
    pub fn param(&mut self, value: &'a Tensor<T>, requires_grad: bool) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` call with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Attention probabilities `[batch, heads, q_len, k_len]` saved by an
    /// [`Tape::attention`] node.
    pub fn attention_probs(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Every attention node recorded so far, in recording order.
    pub fn attention_vars(&self) -> Vec<Var> {
        (0..self.nodes.len())
            .filter(|&i| matches!(self.nodes[i].op, Op::Attention { .. }))
            .map(Var)
            .collect()
    }

    /// Clears gradients so `backward` may run again.
    pub fn reset(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    // ── forward ops ─────────────────────────────────────────────────

    /// `a[..., k] · b[k, n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.shape().len() != 2 || av.shape().is_empty() || av.last_dim() != bv.shape()[0] {
            return Err(shape_err(format!(
                "matmul {:?} x {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (m, k, n) = (av.rows(), bv.shape()[0], bv.shape()[1]);
        let mut out = vec![T::zero(); m * n];
        matmul(av.data(), bv.data(), &mut out, m, k, n);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let t = Tensor::new(shape, out)?;
        Ok(self.derived(t, Op::MatMul(a, b), &[a, b]))
    }

    /// `a[..., k] · b[n, k]ᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.shape().len() != 2 || av.shape().is_empty() || av.last_dim() != bv.shape()[1] {
            return Err(shape_err(format!(
                "matmul_nt {:?} x {:?}ᵀ",
                av.shape(),
                bv.shape()
            )));
        }
        let (m, k, n) = (av.rows(), bv.shape()[1], bv.shape()[0]);
        let mut out = vec![T::zero(); m * n];
        matmul_nt(av.data(), bv.data(), &mut out, m, k, n);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let t = Tensor::new(shape, out)?;
        Ok(self.derived(t, Op::MatMulNT(a, b), &[a, b]))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| *x + *y)
            .collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.derived(t, Op::Add(a, b), &[a, b]))
    }

    /// Adds `b[c]` to every row of `a[..., c]`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.shape().len() != 1 || bv.shape()[0] != av.last_dim() {
            return Err(shape_err(format!(
                "add_bias {:?} + {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let c = av.last_dim();
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(c) {
            for (x, y) in row.iter_mut().zip(bv.data()) {
                *x = *x + *y;
            }
        }
        let t = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.derived(t, Op::AddBias(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| *x * *y)
            .collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.derived(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = T::of_f64(s);
        let av = self.value(a);
        let data = av.data().iter().map(|x| *x * s).collect();
        let t = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        self.derived(t, Op::Scale(a, s), &[a])
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().map(|x| x.as_f64()).sum();
        self.derived(Tensor::scalar(T::of_f64(s)), Op::Sum(a), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.shape().len() != 2 {
            return Err(shape_err(format!("transpose of {:?}", av.shape())));
        }
        let (r, c) = (av.shape()[0], av.shape()[1]);
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = av.data()[i * c + j];
            }
        }
        let t = Tensor::new(vec![c, r], data)?;
        Ok(self.derived(t, Op::Transpose(a), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape)?;
        Ok(self.derived(t, Op::Reshape(a), &[a]))
    }

    fn axis_geometry(&self, x: Var, axis: usize) -> Result<(usize, usize, usize)> {
        let shape = self.value(x).shape();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::Contract(format!(
                "axis {axis} invalid for shape {shape:?}"
            )));
        }
        Ok(split_axis(shape, axis))
    }

    /// Softmax along `axis`, max-subtracted, accumulated in f64.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (outer, len, inner) = self.axis_geometry(x, axis)?;
        let xv = self.value(x);
        let src = xv.data();
        let mut out = vec![T::zero(); src.len()];
        let mut buf = vec![0.0f64; len];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| o * len * inner + j * inner + i;
                let mx = (0..len)
                    .map(|j| src[idx(j)].as_f64())
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for (j, b) in buf.iter_mut().enumerate() {
                    *b = (src[idx(j)].as_f64() - mx).exp();
                    s += *b;
                }
                for (j, b) in buf.iter().enumerate() {
                    out[idx(j)] = T::of_f64(b / s);
                }
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.derived(
            t,
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            },
            &[x],
        ))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (outer, len, inner) = self.axis_geometry(x, axis)?;
        let xv = self.value(x);
        let src = xv.data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| o * len * inner + j * inner + i;
                let mx = (0..len)
                    .map(|j| src[idx(j)].as_f64())
                    .fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = (0..len).map(|j| (src[idx(j)].as_f64() - mx).exp()).sum();
                let lse = mx + s.ln();
                for j in 0..len {
                    out[idx(j)] = T::of_f64(src[idx(j)].as_f64() - lse);
                }
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.derived(
            t,
            Op::LogSoftmax {
                x,
                outer,
                len,
                inner,
            },
            &[x],
        ))
    }

    /// Layer normalization over the last axis with epsilon 1e-5 under the root.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        if d == 0 || self.value(gain).shape() != [d] || self.value(bias).shape() != [d] {
            return Err(shape_err(format!(
                "layer_norm over {:?} with gain {:?}, bias {:?}",
                xv.shape(),
                self.value(gain).shape(),
                self.value(bias).shape()
            )));
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let rows = xv.rows();
        let mut xhat = vec![T::zero(); xv.numel()];
        let mut out = vec![T::zero(); xv.numel()];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / d as f64;
            let var = row
                .iter()
                .map(|v| {
                    let c = v.as_f64() - mean;
                    c * c
                })
                .sum::<f64>()
                / d as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = T::of_f64((row[j].as_f64() - mean) * rs);
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.derived(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        ))
    }

    /// Exact GeLU, `x·Φ(x)`.
    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv
            .data()
            .iter()
            .map(|v| {
                let z = v.as_f64();
                T::of_f64(z * gauss_cdf(z))
            })
            .collect();
        let t = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        self.derived(t, Op::Gelu(x), &[x])
    }

    /// Row lookup `table[ids[i]]`; backward scatter-adds into the table.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.shape().len() != 2 {
            return Err(shape_err(format!("gather from {:?}", tv.shape())));
        }
        let (vocab, d) = (tv.shape()[0], tv.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(Error::Index {
                    what: "embedding table",
                    index: id,
                    size: vocab,
                });
            }
            out.extend_from_slice(tv.row(id));
        }
        let t = Tensor::new(vec![ids.len(), d], out)?;
        Ok(self.derived(
            t,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Inverted dropout. Identity when `p == 0`.
    pub fn dropout<R: Rng>(&mut self, x: Var, p: f64, rng: &mut R) -> Var {
        if p <= 0.0 {
            return x;
        }
        let keep = 1.0 - p;
        let xv = self.value(x);
        let mask: Vec<T> = (0..xv.numel())
            .map(|_| {
                if rng.gen::<f64>() < keep {
                    T::of_f64(1.0 / keep)
                } else {
                    T::zero()
                }
            })
            .collect();
        let data = xv.data().iter().zip(&mask).map(|(a, m)| *a * *m).collect();
        let t = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        self.derived(t, Op::Dropout { x, mask }, &[x])
    }

    /// Batched multi-head scaled dot-product attention.
    ///
    /// Scores are `q·kᵀ · spec.scale` per head; masked keys get zero weight.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, spec: AttnSpec) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.last_dim();
        let AttnSpec {
            batch,
            q_len,
            k_len,
            heads,
            ..
        } = spec;
        if heads == 0
            || d % heads != 0
            || qv.shape() != [batch * q_len, d]
            || kv.shape() != [batch * k_len, d]
            || vv.shape() != [batch * k_len, d]
            || spec
                .key_valid
                .as_ref()
                .is_some_and(|m| m.len() != batch * k_len)
        {
            return Err(shape_err(format!(
                "attention q {:?} k {:?} v {:?} for batch {batch}, q_len {q_len}, k_len {k_len}, heads {heads}",
                qv.shape(),
                kv.shape(),
                vv.shape()
            )));
        }
        let dh = d / heads;
        let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
        let mut probs = vec![T::zero(); batch * heads * q_len * k_len];
        let mut out = vec![T::zero(); batch * q_len * d];
        let mut scores = vec![0.0f64; k_len];
        for b in 0..batch {
            for h in 0..heads {
                let off = h * dh;
                for i in 0..q_len {
                    let qrow = &qd[(b * q_len + i) * d + off..(b * q_len + i) * d + off + dh];
                    let mut mx = f64::NEG_INFINITY;
                    for (j, s) in scores.iter_mut().enumerate() {
                        let masked = (spec.causal && j > i)
                            || spec.key_valid.as_ref().is_some_and(|m| !m[b * k_len + j]);
                        *s = if masked {
                            f64::NEG_INFINITY
                        } else {
                            let krow =
                                &kd[(b * k_len + j) * d + off..(b * k_len + j) * d + off + dh];
                            dot(qrow, krow).as_f64() * spec.scale
                        };
                        mx = mx.max(*s);
                    }
                    if mx == f64::NEG_INFINITY {
                        continue;
                    }
                    let mut sum = 0.0;
                    for s in scores.iter_mut() {
                        *s = (*s - mx).exp();
                        sum += *s;
                    }
                    let prow = &mut probs[((b * heads + h) * q_len + i) * k_len..][..k_len];
                    let orow = &mut out[(b * q_len + i) * d + off..(b * q_len + i) * d + off + dh];
                    for j in 0..k_len {
                        let p = T::of_f64(scores[j] / sum);
                        prow[j] = p;
                        if p == T::zero() {
                            continue;
                        }
                        let vrow = &vd[(b * k_len + j) * d + off..(b * k_len + j) * d + off + dh];
                        for (o, x) in orow.iter_mut().zip(vrow) {
                            *o = *o + p * *x;
                        }
                    }
                }
            }
        }
        let t = Tensor::new(vec![batch * q_len, d], out)?;
        Ok(self.derived(
            t,
            Op::Attention {
                q,
                k,
                v,
                spec,
                probs,
            },
            &[q, k, v],
        ))
    }

    /// `−Σ target·log(pred + 1e-12)`, averaged over supervised rows.
    /// `pred` rows are distributions over the last axis.
    pub fn cross_entropy(&mut self, pred: Var, target: Target<T>) -> Result<Var> {
        let pv = self.value(pred);
        let c = pv.last_dim();
        let rows = pv.rows();
        let mut total = 0.0;
        let count;
        match &target {
            Target::Index(ids) => {
                if ids.len() != rows {
                    return Err(shape_err(format!(
                        "cross_entropy: {} targets for {} rows",
                        ids.len(),
                        rows
                    )));
                }
                let mut n = 0;
                for (r, id) in ids.iter().enumerate() {
                    if let Some(id) = *id {
                        if id >= c {
                            return Err(Error::Index {
                                what: "class",
                                index: id,
                                size: c,
                            });
                        }
                        total -= (pv.row(r)[id].as_f64() + LOG_GUARD).ln();
                        n += 1;
                    }
                }
                count = n;
            }
            Target::Dist(t) => {
                if t.shape() != pv.shape() {
                    return Err(shape_err(format!(
                        "cross_entropy target {:?} vs pred {:?}",
                        t.shape(),
                        pv.shape()
                    )));
                }
                for (p, q) in pv.data().iter().zip(t.data()) {
                    let q = q.as_f64();
                    if q != 0.0 {
                        total -= q * (p.as_f64() + LOG_GUARD).ln();
                    }
                }
                count = rows;
            }
        }
        let loss = if count > 0 { total / count as f64 } else { 0.0 };
        Ok(self.derived(
            Tensor::scalar(T::of_f64(loss)),
            Op::CrossEntropy {
                pred,
                target,
                count,
            },
            &[pred],
        ))
    }

    /// Cross-entropy from unnormalized logits with optional label smoothing
    /// (target = (1−s)·one-hot + s/C).
    pub fn cross_entropy_logits(
        &mut self,
        logits: Var,
        targets: &[Option<usize>],
        smoothing: f64,
    ) -> Result<Var> {
        let lv = self.value(logits);
        let c = lv.last_dim();
        let rows = lv.rows();
        if targets.len() != rows {
            return Err(shape_err(format!(
                "cross_entropy_logits: {} targets for {} rows",
                targets.len(),
                rows
            )));
        }
        let mut probs = vec![T::zero(); lv.numel()];
        let mut total = 0.0;
        let mut count = 0;
        for (r, tgt) in targets.iter().enumerate() {
            let Some(id) = *tgt else { continue };
            if id >= c {
                return Err(Error::Index {
                    what: "class",
                    index: id,
                    size: c,
                });
            }
            let row = lv.row(r);
            let mx = row
                .iter()
                .map(|v| v.as_f64())
                .fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = row.iter().map(|v| (v.as_f64() - mx).exp()).sum();
            let lse = mx + s.ln();
            let mut mean_lp = 0.0;
            for (j, v) in row.iter().enumerate() {
                let lp = v.as_f64() - lse;
                probs[r * c + j] = T::of_f64(lp.exp());
                mean_lp += lp;
            }
            mean_lp /= c as f64;
            let gold_lp = row[id].as_f64() - lse;
            total -= (1.0 - smoothing) * gold_lp + smoothing * mean_lp;
            count += 1;
        }
        let loss = if count > 0 { total / count as f64 } else { 0.0 };
        Ok(self.derived(
            Tensor::scalar(T::of_f64(loss)),
            Op::CrossEntropyLogits {
                logits,
                targets: targets.to_vec(),
                smoothing,
                probs,
                count,
            },
            &[logits],
        ))
    }

    /// Mean negative log of the renormalized word–label joint at the gold
    /// cells: `−log(p_y·M[y,l]·q_l / pᵀMq)` per supervised row.
    pub fn joint_nll(
        &mut self,
        p: Var,
        q: Var,
        mask: &'a Tensor<T>,
        gold: &[Option<(usize, usize)>],
    ) -> Result<Var> {
        let (pv, qv) = (self.value(p), self.value(q));
        let (vw, vl) = (pv.last_dim(), qv.last_dim());
        let rows = pv.rows();
        if mask.shape() != [vw, vl] || qv.rows() != rows || gold.len() != rows {
            return Err(shape_err(format!(
                "joint_nll p {:?} q {:?} mask {:?} gold {}",
                pv.shape(),
                qv.shape(),
                mask.shape(),
                gold.len()
            )));
        }
        let mut mq = vec![T::zero(); rows * vw];
        matmul_nt(qv.data(), mask.data(), &mut mq, rows, vl, vw);
        let mut z = vec![0.0; rows];
        let mut total = 0.0;
        let mut count = 0;
        for (r, g) in gold.iter().enumerate() {
            let Some((w, l)) = *g else { continue };
            if w >= vw {
                return Err(Error::Index {
                    what: "word",
                    index: w,
                    size: vw,
                });
            }
            if l >= vl {
                return Err(Error::Index {
                    what: "label",
                    index: l,
                    size: vl,
                });
            }
            let prow = pv.row(r);
            let zr: f64 = prow
                .iter()
                .zip(&mq[r * vw..(r + 1) * vw])
                .map(|(a, b)| a.as_f64() * b.as_f64())
                .sum();
            z[r] = zr;
            let num = prow[w].as_f64() * mask.data()[w * vl + l].as_f64() * qv.row(r)[l].as_f64();
            total += zr.ln() - (num + LOG_GUARD).ln();
            count += 1;
        }
        let loss = if count > 0 { total / count as f64 } else { 0.0 };
        Ok(self.derived(
            Tensor::scalar(T::of_f64(loss)),
            Op::JointNll {
                p,
                q,
                mask,
                gold: gold.to_vec(),
                mq,
                z,
                count,
            },
            &[p, q],
        ))
    }

    // ── backward ────────────────────────────────────────────────────

    /// Reverse sweep from a scalar `loss`. Gradients accumulate additively
    /// across every use of a value.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Contract(
                "backward called twice without reset".into(),
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.backward_done = true;
        let n = self.nodes.len();
        self.grads = vec![None; n];
        self.grads[loss.0] = Some(vec![T::one()]);
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        for i in (0..=loss.0).rev() {
            if !nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            backprop(nodes, grads, i, &g);
            grads[i] = Some(g);
        }
        Ok(())
    }
}

fn acc_grad<'g, T: Scalar>(
    nodes: &[Node<'_, T>],
    grads: &'g mut [Option<Vec<T>>],
    v: Var,
) -> Option<&'g mut Vec<T>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let n = nodes[v.0].value.numel();
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
}

fn backprop<T: Scalar>(nodes: &[Node<'_, T>], grads: &mut [Option<Vec<T>>], i: usize, g: &[T]) {
    let val = |v: Var| -> &Tensor<T> { &nodes[v.0].value };
    match &nodes[i].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k, n) = (av.rows(), bv.shape()[0], bv.shape()[1]);
            if let Some(ga) = acc_grad(nodes, grads, *a) {
                matmul_nt(g, bv.data(), ga, m, n, k);
            }
            if let Some(gb) = acc_grad(nodes, grads, *b) {
                matmul_tn(av.data(), g, gb, k, m, n);
            }
        }
        Op::MatMulNT(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k, n) = (av.rows(), bv.shape()[1], bv.shape()[0]);
            if let Some(ga) = acc_grad(nodes, grads, *a) {
                matmul(g, bv.data(), ga, m, n, k);
            }
            if let Some(gb) = acc_grad(nodes, grads, *b) {
                matmul_tn(g, av.data(), gb, n, m, k);
            }
        }
        Op::Add(a, b) => {
            for v in [*a, *b] {
                if let Some(gv) = acc_grad(nodes, grads, v) {
                    for (x, y) in gv.iter_mut().zip(g) {
                        *x = *x + *y;
                    }
                }
            }
        }
        Op::AddBias(a, b) => {
            if let Some(ga) = acc_grad(nodes, grads, *a) {
                for (x, y) in ga.iter_mut().zip(g) {
                    *x = *x + *y;
                }
            }
            if let Some(gb) = acc_grad(nodes, grads, *b) {
                let c = gb.len();
                for row in g.chunks(c) {
                    for (x, y) in gb.iter_mut().zip(row) {
                        *x = *x + *y;
                    }
                }
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a).data(), val(*b).data());
            if let Some(ga) = acc_grad(nodes, grads, *a) {
                for ((x, y), w) in ga.iter_mut().zip(g).zip(bv) {
                    *x = *x + *y * *w;
                }
            }
            if let Some(gb) = acc_grad(nodes, grads, *b) {
                for ((x, y), w) in gb.iter_mut().zip(g).zip(av) {
                    *x = *x + *y * *w;
                }
            }
        }
        Op::Scale(a, s) => {
            if let Some(ga) = acc_grad(nodes, grads, *a) {
                for (x, y) in ga.iter_mut().zip(g) {
                    *x = *x + *y * *s;
                }
            }
        }
        Op::Sum(a) => {
            if let Some(ga) = acc_grad(nodes, grads, *a) {
                for x in ga.iter_mut() {
                    *x = *x + g[0];
                }
            }
        }
        Op::Transpose(a) => {
            let (r, c) = (val(*a).shape()[0], val(*a).shape()[1]);
            if let Some(ga) = acc_grad(nodes, grads, *a) {
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] = ga[i * c + j] + g[j * r + i];
                    }
                }
            }
        }
        Op::Reshape(a) => {
            if let Some(ga) = acc_grad(nodes, grads, *a) {
                for (x, y) in ga.iter_mut().zip(g) {
                    *x = *x + *y;
                }
            }
        }
        Op::Dropout { x, mask } => {
            if let Some(gx) = acc_grad(nodes, grads, *x) {
                for ((a, b), m) in gx.iter_mut().zip(g).zip(mask) {
                    *a = *a + *b * *m;
                }
            }
        }
        Op::Softmax {
            x,
            outer,
            len,
            inner,
        } => {
            let y = nodes[i].value.data();
            if let Some(gx) = acc_grad(nodes, grads, *x) {
                for o in 0..*outer {
                    for ii in 0..*inner {
                        let idx = |j: usize| o * len * inner + j * inner + ii;
                        let s: f64 = (0..*len)
                            .map(|j| g[idx(j)].as_f64() * y[idx(j)].as_f64())
                            .sum();
                        for j in 0..*len {
                            let d = y[idx(j)].as_f64() * (g[idx(j)].as_f64() - s);
                            gx[idx(j)] = gx[idx(j)] + T::of_f64(d);
                        }
                    }
                }
            }
        }
        Op::LogSoftmax {
            x,
            outer,
            len,
            inner,
        } => {
            let y = nodes[i].value.data();
            if let Some(gx) = acc_grad(nodes, grads, *x) {
                for o in 0..*outer {
                    for ii in 0..*inner {
                        let idx = |j: usize| o * len * inner + j * inner + ii;
                        let s: f64 = (0..*len).map(|j| g[idx(j)].as_f64()).sum();
                        for j in 0..*len {
                            let d = g[idx(j)].as_f64() - y[idx(j)].as_f64().exp() * s;
                            gx[idx(j)] = gx[idx(j)] + T::of_f64(d);
                        }
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        } => {
            let d = val(*gain).numel();
            let gv = val(*gain).data();
            if let Some(gg) = acc_grad(nodes, grads, *gain) {
                for (row_g, row_h) in g.chunks(d).zip(xhat.chunks(d)) {
                    for j in 0..d {
                        gg[j] = gg[j] + row_g[j] * row_h[j];
                    }
                }
            }
            if let Some(gb) = acc_grad(nodes, grads, *bias) {
                for row_g in g.chunks(d) {
                    for j in 0..d {
                        gb[j] = gb[j] + row_g[j];
                    }
                }
            }
            if let Some(gx) = acc_grad(nodes, grads, *x) {
                for (r, (row_g, row_h)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for j in 0..d {
                        let dh = row_g[j].as_f64() * gv[j].as_f64();
                        m1 += dh;
                        m2 += dh * row_h[j].as_f64();
                    }
                    m1 /= d as f64;
                    m2 /= d as f64;
                    for j in 0..d {
                        let dh = row_g[j].as_f64() * gv[j].as_f64();
                        let dx = rstd[r] * (dh - m1 - row_h[j].as_f64() * m2);
                        gx[r * d + j] = gx[r * d + j] + T::of_f64(dx);
                    }
                }
            }
        }
        Op::Gelu(x) => {
            let xv = val(*x).data();
            if let Some(gx) = acc_grad(nodes, grads, *x) {
                for ((a, b), v) in gx.iter_mut().zip(g).zip(xv) {
                    let z = v.as_f64();
                    let d = gauss_cdf(z) + z * gauss_pdf(z);
                    *a = *a + *b * T::of_f64(d);
                }
            }
        }
        Op::Gather { table, ids } => {
            if let Some(gt) = acc_grad(nodes, grads, *table) {
                let d = val(*table).shape()[1];
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        gt[id * d + j] = gt[id * d + j] + g[r * d + j];
                    }
                }
            }
        }
        Op::Attention {
            q,
            k,
            v,
            spec,
            probs,
        } => attention_backward(nodes, grads, g, *q, *k, *v, spec, probs),
        Op::CrossEntropy {
            pred,
            target,
            count,
        } => {
            if *count == 0 {
                return;
            }
            let pv = val(*pred);
            let c = pv.last_dim();
            let scale = g[0].as_f64() / *count as f64;
            if let Some(gp) = acc_grad(nodes, grads, *pred) {
                match target {
                    Target::Index(ids) => {
                        for (r, id) in ids.iter().enumerate() {
                            if let Some(id) = *id {
                                let p = pv.data()[r * c + id].as_f64();
                                let d = -scale / (p + LOG_GUARD);
                                gp[r * c + id] = gp[r * c + id] + T::of_f64(d);
                            }
                        }
                    }
                    Target::Dist(t) => {
                        for ((a, p), q) in gp.iter_mut().zip(pv.data()).zip(t.data()) {
                            let d = -scale * q.as_f64() / (p.as_f64() + LOG_GUARD);
                            *a = *a + T::of_f64(d);
                        }
                    }
                }
            }
        }
        Op::CrossEntropyLogits {
            logits,
            targets,
            smoothing,
            probs,
            count,
        } => {
            if *count == 0 {
                return;
            }
            let c = val(*logits).last_dim();
            let scale = g[0].as_f64() / *count as f64;
            if let Some(gl) = acc_grad(nodes, grads, *logits) {
                for (r, tgt) in targets.iter().enumerate() {
                    let Some(id) = *tgt else { continue };
                    for j in 0..c {
                        let mut t = smoothing / c as f64;
                        if j == id {
                            t += 1.0 - smoothing;
                        }
                        let d = scale * (probs[r * c + j].as_f64() - t);
                        gl[r * c + j] = gl[r * c + j] + T::of_f64(d);
                    }
                }
            }
        }
        Op::JointNll {
            p,
            q,
            mask,
            gold,
            mq,
            z,
            count,
        } => {
            if *count == 0 {
                return;
            }
            let (pv, qv) = (val(*p), val(*q));
            let (vw, vl) = (pv.last_dim(), qv.last_dim());
            let scale = g[0].as_f64() / *count as f64;
            let md = mask.data();
            if let Some(gp) = acc_grad(nodes, grads, *p) {
                for (r, gd) in gold.iter().enumerate() {
                    let Some((w, l)) = *gd else { continue };
                    let zr = z[r];
                    for j in 0..vw {
                        let d = scale * mq[r * vw + j].as_f64() / zr;
                        gp[r * vw + j] = gp[r * vw + j] + T::of_f64(d);
                    }
                    let ml = md[w * vl + l].as_f64() * qv.row(r)[l].as_f64();
                    let num = pv.row(r)[w].as_f64() * ml;
                    gp[r * vw + w] = gp[r * vw + w] - T::of_f64(scale * ml / (num + LOG_GUARD));
                }
            }
            if let Some(gq) = acc_grad(nodes, grads, *q) {
                let mut mtp = vec![T::zero(); vl];
                for (r, gd) in gold.iter().enumerate() {
                    let Some((w, l)) = *gd else { continue };
                    mtp.iter_mut().for_each(|x| *x = T::zero());
                    matmul(pv.row(r), md, &mut mtp, 1, vw, vl);
                    let zr = z[r];
                    for j in 0..vl {
                        let d = scale * mtp[j].as_f64() / zr;
                        gq[r * vl + j] = gq[r * vl + j] + T::of_f64(d);
                    }
                    let pm = pv.row(r)[w].as_f64() * md[w * vl + l].as_f64();
                    let num = pm * qv.row(r)[l].as_f64();
                    gq[r * vl + l] = gq[r * vl + l] - T::of_f64(scale * pm / (num + LOG_GUARD));
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn attention_backward<T: Scalar>(
    nodes: &[Node<'_, T>],
    grads: &mut [Option<Vec<T>>],
    g: &[T],
    q: Var,
    k: Var,
    v: Var,
    spec: &AttnSpec,
    probs: &[T],
) {
    let d = nodes[q.0].value.last_dim();
    let AttnSpec {
        batch,
        q_len,
        k_len,
        heads,
        scale,
        ..
    } = *spec;
    let dh = d / heads;
    let (qd, kd, vd) = (
        nodes[q.0].value.data(),
        nodes[k.0].value.data(),
        nodes[v.0].value.data(),
    );
    let mut dq = vec![T::zero(); qd.len()];
    let mut dk = vec![T::zero(); kd.len()];
    let mut dv = vec![T::zero(); vd.len()];
    let mut ds = vec![0.0f64; k_len];
    let sc = T::of_f64(scale);
    for b in 0..batch {
        for h in 0..heads {
            let off = h * dh;
            for i in 0..q_len {
                let prow = &probs[((b * heads + h) * q_len + i) * k_len..][..k_len];
                let grow = &g[(b * q_len + i) * d + off..][..dh];
                let mut s = 0.0;
                for j in 0..k_len {
                    let p = prow[j].as_f64();
                    if p == 0.0 {
                        ds[j] = 0.0;
                        continue;
                    }
                    let vrow = &vd[(b * k_len + j) * d + off..][..dh];
                    let dp = dot(grow, vrow).as_f64();
                    ds[j] = dp;
                    s += p * dp;
                    let dvrow = &mut dv[(b * k_len + j) * d + off..][..dh];
                    let pt = prow[j];
                    for (x, y) in dvrow.iter_mut().zip(grow) {
                        *x = *x + pt * *y;
                    }
                }
                let qrow = &qd[(b * q_len + i) * d + off..][..dh];
                for j in 0..k_len {
                    let p = prow[j].as_f64();
                    if p == 0.0 {
                        continue;
                    }
                    let dsj = T::of_f64(p * (ds[j] - s)) * sc;
                    let krow = &kd[(b * k_len + j) * d + off..][..dh];
                    let dqrow = &mut dq[(b * q_len + i) * d + off..][..dh];
                    for (x, y) in dqrow.iter_mut().zip(krow) {
                        *x = *x + dsj * *y;
                    }
                    let dkrow = &mut dk[(b * k_len + j) * d + off..][..dh];
                    for (x, y) in dkrow.iter_mut().zip(qrow) {
                        *x = *x + dsj * *y;
                    }
                }
            }
        }
    }
    for (var, delta) in [(q, dq), (k, dk), (v, dv)] {
        if let Some(gv) = acc_grad(nodes, grads, var) {
            for (x, y) in gv.iter_mut().zip(&delta) {
                *x = *x + *y;
            }
        }
    }
}
