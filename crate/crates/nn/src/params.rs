//! Trainable parameters and the store that owns them for a network's
//! lifetime. Adam moment buffers live alongside each parameter and start at
//! zero; non-trainable entries (batch-norm running statistics) share the
//! store so checkpoints have a single mechanism.

use rand::Rng;

use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Parameter<S> {
    pub name: String,
    pub value: Tensor<S>,
    pub grad: Option<Vec<S>>,
    pub trainable: bool,
    pub adam_m: Vec<S>,
    pub adam_v: Vec<S>,
    pub step_count: u64,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<S> {
    params: Vec<Parameter<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>, trainable: bool) -> ParamId {
        let len = value.len();
        let name = name.into();
        debug_assert!(
            !self.params.iter().any(|p| p.name == name),
            "duplicate parameter name {name}"
        );
        self.params.push(Parameter {
            name,
            value,
            grad: None,
            trainable,
            adam_m: vec![S::ZERO; len],
            adam_v: vec![S::ZERO; len],
            step_count: 0,
        });
        ParamId(self.params.len() - 1)
    }

    /// Adds a trainable tensor drawn from a zero-mean normal distribution.
    pub fn add_normal<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        sigma: f64,
        rng: &mut R,
    ) -> ParamId {
        let mut t = Tensor::zeros(shape);
        fill_normal(&mut t, sigma, rng);
        self.add(name, t, true)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: Vec<usize>) -> ParamId {
        self.add(name, Tensor::zeros(shape), true)
    }

    pub fn add_const(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        value: S,
        trainable: bool,
    ) -> ParamId {
        self.add(name, Tensor::full(shape, value), trainable)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<S> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<S> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, data: Vec<S>) -> Result<()> {
        let p = &mut self.params[id.0];
        if data.len() != p.value.len() {
            return Err(NnError::ShapeMismatch(format!(
                "parameter {} expects {} values, got {}",
                p.name,
                p.value.len(),
                data.len()
            )));
        }
        p.value.data_mut().copy_from_slice(&data);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<S>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<S>> {
        self.params.iter_mut()
    }

    pub fn accumulate_grad(&mut self, id: ParamId, contribution: &[S]) {
        let p = &mut self.params[id.0];
        match &mut p.grad {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(contribution) {
                    *a += *b;
                }
            }
            None => p.grad = Some(contribution.to_vec()),
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Number of trainable scalar values.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    /// Number of stored scalar values including non-trainable buffers.
    pub fn total_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params
            .iter()
            .position(|p| p.name == name)
            .map(ParamId)
    }
}

/// Fills a tensor with draws from N(0, sigma^2) via Box-Muller; deterministic
/// for a seeded rng.
pub fn fill_normal<S: Scalar, R: Rng>(t: &mut Tensor<S>, sigma: f64, rng: &mut R) {
    for v in t.data_mut() {
        *v = S::from_f64(sigma * standard_normal(rng));
    }
}

/// One standard-normal draw (Box-Muller, cosine branch).
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
