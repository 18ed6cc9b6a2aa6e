use std::collections::HashMap;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    /// RMSprop running mean of squared gradients.
    pub accumulator: Tensor<T>,
}

/// Named learnable tensors with their gradient slots and optimizer state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet<T> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, ParamId>,
}

/// Gradients produced by one backward pass, indexed by parameter.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub(crate) grads: Vec<Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(Tensor::is_finite)
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { params: Vec::new(), by_name: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.params.len());
        let accumulator = Tensor::zeros(value.shape());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param { name, value, grad: None, accumulator });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name.get(name).copied().ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Adds a backward pass's gradients into the gradient slots.
    pub fn accumulate(&mut self, grads: &Gradients<T>) -> Result<()> {
        if grads.grads.len() != self.params.len() {
            return Err(Error::shape(
                "accumulate",
                format!("{} gradients for {} parameters", grads.grads.len(), self.params.len()),
            ));
        }
        for (p, g) in self.params.iter_mut().zip(&grads.grads) {
            match &mut p.grad {
                Some(existing) => existing.add_assign(g.data()),
                slot @ None => *slot = Some(g.clone()),
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub fn reset_optimizer_state(&mut self) {
        for p in &mut self.params {
            p.accumulator = Tensor::zeros(p.value.shape());
        }
    }

    pub fn convert<U: Scalar>(&self) -> ParamSet<U> {
        let conv = |t: &Tensor<T>| {
            Tensor::from_vec(t.shape(), t.data().iter().map(|v| U::from_f64_lossy(v.as_f64())).collect())
                .expect("same shape")
        };
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: conv(&p.value),
                    grad: p.grad.as_ref().map(conv),
                    accumulator: conv(&p.accumulator),
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}
