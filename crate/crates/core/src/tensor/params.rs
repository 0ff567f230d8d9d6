use std::collections::BTreeMap;
use std::ops::Index;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::Var;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter collection in insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<S> {
    names: Vec<String>,
    tensors: Vec<Tensor<S>>,
    lookup: BTreeMap<String, usize>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new(), lookup: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<S>) -> Result<ParamId> {
        let name = name.into();
        if self.lookup.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name {name:?}")));
        }
        self.lookup.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(ParamId(self.names.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<S>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<S>> {
        self.tensors.iter()
    }

    pub(crate) fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<S>> {
        self.tensors.iter_mut()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar parameters.
    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<S>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            lookup: self.lookup.clone(),
        }
    }

    /// Replaces every tensor with the same-named tensor of `other`, which
    /// must carry exactly the same names and shapes. All offenders are listed.
    pub fn load_from(&mut self, other: &ParamStore<S>) -> Result<()> {
        let mut problems = Vec::new();
        for (name, t) in self.iter() {
            match other.by_name(name) {
                None => problems.push(format!("missing tensor {name}")),
                Some(o) if o.shape() != t.shape() => {
                    problems.push(format!("tensor {name} has shape {:?}, expected {:?}", o.shape(), t.shape()))
                }
                _ => {}
            }
        }
        for (name, _) in other.iter() {
            if self.id(name).is_none() {
                problems.push(format!("unexpected tensor {name}"));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Checkpoint(problems));
        }
        for i in 0..self.tensors.len() {
            self.tensors[i] = other.by_name(&self.names[i]).expect("checked").clone();
        }
        Ok(())
    }
}

/// Graph nodes for the tensors of a [`ParamStore`], in store order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn new(vars: Vec<Var>) -> Self {
        Bound { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

/// Seeded parameter initializer: uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn uniform<S: Scalar>(&mut self, shape: &[usize], bound: f64) -> Tensor<S> {
        Tensor::from_fn(shape, |_| S::of(self.rng.random_range(-bound..=bound)))
    }

    pub fn fan_in<S: Scalar>(&mut self, shape: &[usize], fan_in: usize) -> Tensor<S> {
        self.uniform(shape, 1.0 / (fan_in as f64).sqrt())
    }

    /// Conv kernel `[co, ci, kh, kw]` and bias `[co]`.
    pub fn conv<S: Scalar>(&mut self, co: usize, ci: usize, k: usize) -> (Tensor<S>, Tensor<S>) {
        let fan = ci * k * k;
        (self.fan_in(&[co, ci, k, k], fan), self.fan_in(&[co], fan))
    }

    /// Transposed-conv kernel `[ci, co, kh, kw]` and bias `[co]`.
    pub fn deconv<S: Scalar>(&mut self, ci: usize, co: usize, k: usize) -> (Tensor<S>, Tensor<S>) {
        let fan = ci * k * k;
        (self.fan_in(&[ci, co, k, k], fan), self.fan_in(&[co], fan))
    }

    /// Dense weight `[d, m]` and bias `[m]`.
    pub fn dense<S: Scalar>(&mut self, d: usize, m: usize) -> (Tensor<S>, Tensor<S>) {
        (self.fan_in(&[d, m], d), self.fan_in(&[m], d))
    }
}
