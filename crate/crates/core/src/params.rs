//! Named trainable parameters with per-parameter freeze flags.

use std::collections::BTreeMap;

use crate::autodiff::{Gradients, Graph, Var};
use crate::error::{config_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub value: Tensor<T>,
    pub requires_grad: bool,
    /// Accumulated gradient. Never populated while `requires_grad` is false.
    pub grad: Option<Tensor<T>>,
}

/// Parameters keyed by unique dotted name, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Parameter<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(config_err!("duplicate parameter name {name}"));
        }
        self.params.insert(
            name,
            Parameter {
                value,
                requires_grad: true,
                grad: None,
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter<T>> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| config_err!("no parameter named {name}"))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| config_err!("no parameter named {name}"))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Parameter<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    /// Leaf for `name` in `g`, bound once per graph.
    pub fn bind(&self, g: &mut Graph<T>, name: &str) -> Result<Var> {
        let p = self
            .params
            .get(name)
            .ok_or_else(|| config_err!("no parameter named {name}"))?;
        Ok(g.bind_param(name, &p.value, p.requires_grad))
    }

    /// Add this pass's gradients into every trainable parameter bound in `g`.
    /// Bound parameters the loss did not reach receive zeros.
    pub fn accumulate_grads(&mut self, g: &Graph<T>, grads: &Gradients<T>) {
        for (name, var) in g.bound_params() {
            let Some(p) = self.params.get_mut(name) else { continue };
            if !p.requires_grad {
                continue;
            }
            let acc = p
                .grad
                .get_or_insert_with(|| Tensor::zeros(p.value.shape().to_vec()));
            if let Some(gv) = grads.get(var) {
                acc.data_mut().iter_mut().zip(gv).for_each(|(a, &b)| *a += b);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    /// Set every parameter's trainability from its name; clears gradients of
    /// newly frozen parameters.
    pub fn set_trainable(&mut self, rule: impl Fn(&str) -> bool) {
        for (name, p) in self.params.iter_mut() {
            p.requires_grad = rule(name);
            if !p.requires_grad {
                p.grad = None;
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Parameter {
                            value: p.value.cast(),
                            requires_grad: p.requires_grad,
                            grad: p.grad.as_ref().map(Tensor::cast),
                        },
                    )
                })
                .collect(),
        }
    }
}
