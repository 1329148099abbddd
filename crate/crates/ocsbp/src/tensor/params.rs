//! Named parameter store with Adam optimizer state.

use std::collections::BTreeMap;

use thiserror::Error;

use super::{Array, El, Graph, RngState, Tensor};

#[derive(Debug, Error)]
pub enum ParamError {
    #[error("adam_step: missing gradients for parameters: {0:?}")]
    MissingGrads(Vec<String>),
    #[error("duplicate parameter name: {0}")]
    Duplicate(String),
}

pub struct Param<T: El> {
    pub value: Array<T>,
    pub grad: Option<Array<T>>,
    m: Array<T>,
    v: Array<T>,
}

/// All learnable state of a model, keyed by dot-separated names.
/// Iteration order is the name order, which keeps updates deterministic.
pub struct ParamStore<T: El> {
    params: BTreeMap<String, Param<T>>,
    step: u64,
}

impl<T: El> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: El> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
            step: 0,
        }
    }

    pub fn insert(&mut self, name: &str, value: Array<T>) {
        if self.params.contains_key(name) {
            panic!("{}", ParamError::Duplicate(name.to_string()));
        }
        let shape = value.shape().to_vec();
        self.params.insert(
            name.to_string(),
            Param {
                value,
                grad: None,
                m: Array::zeros(&shape),
                v: Array::zeros(&shape),
            },
        );
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> &Param<T> {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Param<T> {
        self.params
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn set_value(&mut self, name: &str, value: Array<T>) {
        let p = self.get_mut(name);
        assert_eq!(p.value.shape(), value.shape(), "set_value shape for {name}");
        p.value = value;
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param<T>)> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    /// Add a gradient contribution for one parameter.
    pub fn accumulate_grad(&mut self, name: &str, g: &Array<T>) {
        let p = self.get_mut(name);
        match &mut p.grad {
            Some(existing) => existing.iadd(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }

    /// Multiply every pending gradient by `s` (batch averaging).
    pub fn scale_grads(&mut self, s: f64) {
        for p in self.params.values_mut() {
            if let Some(g) = &mut p.grad {
                g.scale(T::from_f64(s));
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    /// Bind a parameter as a differentiable leaf on `graph`.
    pub fn bind(&self, graph: &Graph<T>, name: &str) -> Tensor<T> {
        graph.leaf(self.get(name).value.clone())
    }
}

fn fan_in_uniform<T: El>(shape: &[usize], fan_in: usize, rng: &mut RngState) -> Array<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<T> = (0..n)
        .map(|_| T::from_f64(rng.uniform_range(-bound, bound)))
        .collect();
    Array::new(shape.to_vec(), data)
}

/// Register `name.weight` `[c_out, c_in, k, k]` and `name.bias` `[c_out]`,
/// both uniform in ±1/sqrt(c_in·k·k).
pub fn init_conv<T: El>(
    store: &mut ParamStore<T>,
    name: &str,
    c_out: usize,
    c_in: usize,
    k: usize,
    rng: &mut RngState,
) {
    let fan_in = c_in * k * k;
    store.insert(
        &format!("{name}.weight"),
        fan_in_uniform(&[c_out, c_in, k, k], fan_in, rng),
    );
    store.insert(&format!("{name}.bias"), fan_in_uniform(&[c_out], fan_in, rng));
}

/// Transposed-convolution weights are stored `[c_in, c_out, k, k]`.
pub fn init_conv_transpose<T: El>(
    store: &mut ParamStore<T>,
    name: &str,
    c_in: usize,
    c_out: usize,
    k: usize,
    rng: &mut RngState,
) {
    let fan_in = c_out * k * k;
    store.insert(
        &format!("{name}.weight"),
        fan_in_uniform(&[c_in, c_out, k, k], fan_in, rng),
    );
    store.insert(&format!("{name}.bias"), fan_in_uniform(&[c_out], fan_in, rng));
}

/// Register `name.weight` `[c_out, c_in]` and `name.bias` `[c_out]`.
pub fn init_linear<T: El>(
    store: &mut ParamStore<T>,
    name: &str,
    c_out: usize,
    c_in: usize,
    rng: &mut RngState,
) {
    store.insert(
        &format!("{name}.weight"),
        fan_in_uniform(&[c_out, c_in], c_in, rng),
    );
    store.insert(&format!("{name}.bias"), fan_in_uniform(&[c_out], c_in, rng));
}

/// Register normalization affine parameters: gamma ones, beta zeros.
pub fn init_norm<T: El>(store: &mut ParamStore<T>, name: &str, c: usize) {
    store.insert(&format!("{name}.gamma"), Array::full(&[c], T::one()));
    store.insert(&format!("{name}.beta"), Array::zeros(&[c]));
}

/// Binds store parameters onto one graph, remembering every binding so
/// gradients can be harvested back after the backward pass.
pub struct Binder<'a, T: El> {
    store: &'a ParamStore<T>,
    graph: Graph<T>,
    bound: std::cell::RefCell<Vec<(String, Tensor<T>)>>,
}

impl<'a, T: El> Binder<'a, T> {
    pub fn new(store: &'a ParamStore<T>, graph: &Graph<T>) -> Self {
        Self {
            store,
            graph: graph.clone(),
            bound: std::cell::RefCell::new(Vec::new()),
        }
    }

    pub fn graph(&self) -> &Graph<T> {
        &self.graph
    }

    pub fn get(&self, name: &str) -> Tensor<T> {
        let t = self.store.bind(&self.graph, name);
        self.bound
            .borrow_mut()
            .push((name.to_string(), t.clone()));
        t
    }

    /// Gradients of every bound parameter, consuming the binder (and its
    /// borrow of the store) so they can be accumulated back. Parameters
    /// that received no gradient contribute zeros, so a later `adam_step`
    /// never fails on unused branches.
    pub fn into_grads(self) -> Vec<(String, Array<T>)> {
        self.bound
            .into_inner()
            .into_iter()
            .map(|(name, t)| {
                let g = t.grad_or_zeros();
                (name, g)
            })
            .collect()
    }
}

/// Accumulate harvested binder gradients into the store.
pub fn apply_grads<T: El>(store: &mut ParamStore<T>, grads: Vec<(String, Array<T>)>) {
    for (name, g) in grads {
        store.accumulate_grad(&name, &g);
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update over every parameter. Requires every parameter to carry
/// a gradient; zeroes all gradients afterwards.
pub fn adam_step<T: El>(store: &mut ParamStore<T>, cfg: &AdamConfig) -> Result<(), ParamError> {
    let missing: Vec<String> = store
        .params
        .iter()
        .filter(|(_, p)| p.grad.is_none())
        .map(|(n, _)| n.clone())
        .collect();
    if !missing.is_empty() {
        return Err(ParamError::MissingGrads(missing));
    }
    store.step += 1;
    let t = store.step as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    let (b1, b2) = (T::from_f64(cfg.beta1), T::from_f64(cfg.beta2));
    let (ob1, ob2) = (T::from_f64(1.0 - cfg.beta1), T::from_f64(1.0 - cfg.beta2));
    let lr = T::from_f64(cfg.lr / bc1);
    let eps = T::from_f64(cfg.eps);
    let bc2s = T::from_f64(bc2.sqrt());
    for p in store.params.values_mut() {
        let g = p.grad.take().expect("checked above");
        for i in 0..p.value.numel() {
            let gi = g.data()[i];
            let m = b1 * p.m.data()[i] + ob1 * gi;
            let v = b2 * p.v.data()[i] + ob2 * gi * gi;
            p.m.data_mut()[i] = m;
            p.v.data_mut()[i] = v;
            let denom = v.sqrt() / bc2s + eps;
            p.value.data_mut()[i] = p.value.data()[i] - lr * m / denom;
        }
    }
    Ok(())
}
