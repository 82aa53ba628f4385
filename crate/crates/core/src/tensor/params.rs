use std::collections::BTreeMap;

use super::{Gradients, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Named trainable tensors of a model.
///
/// Iteration (and therefore serialization) order is lexicographic by name.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Tensor<T>>,
}

/// Per-parameter gradients, keyed like the [`ParamStore`] they belong to.
pub type ParamGrads<T> = BTreeMap<String, Tensor<T>>;

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: BTreeMap::new(),
        }
    }

    /// Registers a new parameter; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter name `{name}`")));
        }
        self.params.insert(name, value);
        Ok(())
    }

    /// Replaces the value of an existing parameter, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter `{name}`")))?;
        if slot.shape() != value.shape() {
            return Err(Error::shape(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Records every parameter as a differentiable leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> BoundParams<'t, T> {
        BoundParams {
            vars: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
                .collect(),
        }
    }
}

/// Parameters recorded on one tape.
pub struct BoundParams<'t, T: Real> {
    vars: BTreeMap<String, Var<'t, T>>,
}

impl<'t, T: Real> BoundParams<'t, T> {
    /// Wraps variables that were already recorded, e.g. by a gradient checker.
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var<'t, T>)>) -> Self {
        BoundParams {
            vars: vars.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var<'t, T>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::contract(format!("missing parameter `{name}`")))
    }

    /// Gradients of every bound parameter; unreached parameters get zeros.
    pub fn collect_grads(&self, grads: &Gradients<T>) -> ParamGrads<T> {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), grads.get_or_zeros(*v)))
            .collect()
    }
}

/// `acc += other`, entry by entry. Names missing from `acc` are inserted.
pub fn accumulate_grads<T: Real>(acc: &mut ParamGrads<T>, other: &ParamGrads<T>) -> Result<()> {
    for (name, g) in other {
        match acc.get_mut(name) {
            Some(a) => {
                if a.shape() != g.shape() {
                    return Err(Error::shape(format!("gradient `{name}` shape mismatch")));
                }
                for (x, &y) in a.data_mut().iter_mut().zip(g.data()) {
                    *x = *x + y;
                }
            }
            None => {
                acc.insert(name.clone(), g.clone());
            }
        }
    }
    Ok(())
}

pub fn scale_grads<T: Real>(grads: &mut ParamGrads<T>, factor: T) {
    for g in grads.values_mut() {
        g.data_mut().iter_mut().for_each(|v| *v = *v * factor);
    }
}
