use crate::model::checkpoint::OPT_PREFIX;
use crate::model::{Checkpoint, ParamStore};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Adam with decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub t: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new(params: &ParamStore, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f32>> = params
            .tensors()
            .iter()
            .map(|t| vec![0.0; t.numel()])
            .collect();
        AdamW {
            beta1,
            beta2,
            eps,
            weight_decay,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, params: &mut ParamStore, grads: &[Vec<f32>], lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = (lr / c1) as f32;
        let c2s = c2.sqrt() as f32;
        let eps = self.eps as f32;
        let decay = (lr * self.weight_decay) as f32;
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads[i]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let denom = v[j].sqrt() / c2s + eps;
                *w -= step * m[j] / denom + decay * *w;
            }
        }
    }

    /// Moment tensors as `opt.m.<name>` / `opt.v.<name>` checkpoint blocks.
    pub fn to_blocks(&self, params: &ParamStore) -> Vec<(String, Tensor<f32>)> {
        let mut out = Vec::new();
        for (i, (name, t)) in params.named().enumerate() {
            out.push((
                format!("{OPT_PREFIX}m.{name}"),
                Tensor::new(t.shape().to_vec(), self.m[i].clone()).expect("moment shape"),
            ));
            out.push((
                format!("{OPT_PREFIX}v.{name}"),
                Tensor::new(t.shape().to_vec(), self.v[i].clone()).expect("moment shape"),
            ));
        }
        out
    }

    pub fn restore(&mut self, ck: &Checkpoint, params: &ParamStore) -> Result<()> {
        for (i, (name, t)) in params.named().enumerate() {
            for (which, dst) in [("m", &mut self.m[i]), ("v", &mut self.v[i])] {
                let key = format!("{OPT_PREFIX}{which}.{name}");
                let b = ck
                    .block(&key)
                    .ok_or_else(|| Error::Format(format!("checkpoint lacks {key}")))?;
                if b.shape() != t.shape() {
                    return Err(Error::Format(format!("{key} has shape {:?}", b.shape())));
                }
                dst.copy_from_slice(b.data());
            }
        }
        Ok(())
    }
}
