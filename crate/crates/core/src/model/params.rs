use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Graph, Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named, ordered parameter arrays.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<S> {
    names: Vec<String>,
    values: Vec<Tensor<S>>,
    index: HashMap<String, usize>,
}

impl<S: Real> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub(crate) fn add(&mut self, name: String, value: Tensor<S>) -> ParamId {
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
        ParamId(self.names.len() - 1)
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub(crate) fn add_uniform(
        &mut self,
        rng: &mut ChaCha8Rng,
        name: String,
        shape: &[usize],
        fan_in: usize,
    ) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let numel = shape.iter().product();
        let data = (0..numel)
            .map(|_| S::lit(rng.random_range(-bound..bound)))
            .collect();
        self.add(name, Tensor::new(shape.to_vec(), data).expect("valid shape"))
    }

    pub(crate) fn add_const(&mut self, name: String, shape: &[usize], value: f64) -> ParamId {
        let numel = shape.iter().product();
        self.add(
            name,
            Tensor::new(shape.to_vec(), vec![S::lit(value); numel]).expect("valid shape"),
        )
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.values[id.0]
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn tensor(&self, i: usize) -> &Tensor<S> {
        &self.values[i]
    }

    pub fn tensors(&self) -> &[Tensor<S>] {
        &self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Replaces array `i`; the shape must not change.
    pub fn set(&mut self, i: usize, value: Tensor<S>) {
        assert_eq!(value.shape(), self.values[i].shape(), "{}", self.names[i]);
        self.values[i] = value;
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Registers every array on `graph` as a trainable leaf.
    pub fn bind<'g>(&self, graph: &'g Graph<S>) -> Bound<'g, S> {
        Bound {
            vars: self.values.iter().map(|t| graph.leaf(t.clone())).collect(),
            graph,
        }
    }

    /// Registers every array as a constant (inference).
    pub fn bind_frozen<'g>(&self, graph: &'g Graph<S>) -> Bound<'g, S> {
        Bound {
            vars: self.values.iter().map(|t| graph.constant(t.clone())).collect(),
            graph,
        }
    }
}

/// Parameters as nodes of one graph.
pub struct Bound<'g, S> {
    vars: Vec<Var<'g, S>>,
    graph: &'g Graph<S>,
}

impl<'g, S: Real> Bound<'g, S> {
    pub fn var(&self, id: ParamId) -> Var<'g, S> {
        self.vars[id.0]
    }

    pub fn graph(&self) -> &'g Graph<S> {
        self.graph
    }

    /// Gradient of every parameter after a backward pass (zeros where none
    /// flowed), in store order.
    pub fn grads(&self) -> Vec<Tensor<S>> {
        self.vars
            .iter()
            .map(|v| v.grad().unwrap_or_else(|| Tensor::zeros(v.shape())))
            .collect()
    }
}
