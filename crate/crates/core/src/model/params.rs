use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Ordered list of parameter names, shapes and initializers.
#[derive(Default)]
pub(crate) struct Specs {
    pub list: Vec<(String, Vec<usize>, Init)>,
}

impl Specs {
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> ParamId {
        self.list.push((name.into(), shape.to_vec(), init));
        ParamId(self.list.len() - 1)
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T: Scalar = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

/// Truncated normal: resample anything beyond two standard deviations.
fn truncated_normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    let n = Normal::new(0.0, std).expect("positive std");
    loop {
        let x: f64 = n.sample(rng);
        if x.abs() <= 2.0 * std {
            return x;
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub(crate) fn init(specs: &Specs, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape, init) in &specs.list {
            let n: usize = shape.iter().product();
            let data = match init {
                Init::Zeros => vec![T::zero(); n],
                Init::Ones => vec![T::one(); n],
                Init::Normal => (0..n)
                    .map(|_| T::of_f64(truncated_normal(&mut rng, INIT_STD)))
                    .collect(),
            };
            names.push(name.clone());
            tensors.push(Tensor::new(shape.clone(), data).expect("spec shape"));
        }
        ParamStore { names, tensors }
    }

    pub fn from_named(named: Vec<(String, Tensor<T>)>) -> Self {
        let (names, tensors) = named.into_iter().unzip();
        ParamStore { names, tensors }
    }

    /// Checks names and shapes against the layout expected for a config.
    pub(crate) fn check(&self, specs: &Specs) -> Result<()> {
        if self.names.len() != specs.list.len() {
            return Err(Error::Format(format!(
                "expected {} parameters, found {}",
                specs.list.len(),
                self.names.len()
            )));
        }
        for (i, (name, shape, _)) in specs.list.iter().enumerate() {
            if &self.names[i] != name || self.tensors[i].shape() != shape.as_slice() {
                return Err(Error::Format(format!(
                    "parameter {i}: expected {name} {shape:?}, found {} {:?}",
                    self.names[i],
                    self.tensors[i].shape()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

/// A tape with every model parameter bound as a leaf, plus the dropout
/// stream for one forward pass.
pub struct Graph<'a, T: Scalar> {
    pub tape: Tape<'a, T>,
    params: Vec<Var>,
    pub(crate) dropout: f64,
    pub(crate) rng: ChaCha8Rng,
}

impl<'a, T: Scalar> Graph<'a, T> {
    /// `dropout` is only applied when positive; pass 0 for evaluation.
    pub fn new(store: &'a ParamStore<T>, requires_grad: bool, dropout: f64, seed: u64) -> Self {
        let mut tape = Tape::new();
        let params = store
            .tensors
            .iter()
            .map(|t| tape.param(t, requires_grad))
            .collect();
        Graph {
            tape,
            params,
            dropout,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn p(&self, id: ParamId) -> Var {
        self.params[id.0]
    }

    pub fn param_vars(&self) -> &[Var] {
        &self.params
    }

    /// Gradients for every parameter after `tape.backward`, in store order.
    /// Parameters that did not take part in the loss get zeros.
    pub fn param_grads(&self) -> Vec<Vec<T>> {
        self.params
            .iter()
            .map(|&v| match self.tape.grad(v) {
                Some(g) => g.to_vec(),
                None => vec![T::zero(); self.tape.value(v).numel()],
            })
            .collect()
    }

    pub(crate) fn dropout(&mut self, x: Var) -> Var {
        let p = self.dropout;
        self.tape.dropout(x, p, &mut self.rng)
    }
}
