//! Named, ordered parameter storage.

use std::collections::BTreeMap;

use crate::engine::Var;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Role of a parameter, derived from the last path segment of its name.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Convolution kernel (`*.weight`); the only kind under the l2 penalty.
    Weight,
    /// Additive bias (`*.bias`).
    Bias,
    /// PReLU negative slope (`*.slope`).
    Slope,
}

impl ParamKind {
    pub fn of(name: &str) -> Option<Self> {
        match name.rsplit('.').next()? {
            "weight" => Some(Self::Weight),
            "bias" => Some(Self::Bias),
            "slope" => Some(Self::Slope),
            _ => None,
        }
    }
}

/// Every learnable tensor of a model, keyed by path (`spatial.level1.conv0.weight`).
///
/// Iteration is in lexicographic path order, which is also the on-disk order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Real> {
    entries: BTreeMap<String, Tensor<T>>,
    grads: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
            grads: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if ParamKind::of(&name).is_none() {
            return Err(Error::Config(format!(
                "parameter `{name}` must end in .weight, .bias or .slope"
            )));
        }
        if self.entries.contains_key(&name) {
            return Err(Error::Config(format!(
                "parameter `{name}` registered twice"
            )));
        }
        self.entries.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor<T>> {
        self.grads.get(name)
    }

    pub fn set_grad(&mut self, name: &str, grad: Tensor<T>) -> Result<()> {
        let p = self.get(name)?;
        if p.shape() != grad.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_grad",
                lhs: p.shape().to_vec(),
                rhs: grad.shape().to_vec(),
            });
        }
        self.grads.insert(name.to_string(), grad);
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        self.grads.clear();
    }

    /// Puts every parameter on the tape as a leaf.
    pub fn bind(&self, trainable: bool) -> Bindings<T> {
        let vars = self
            .entries
            .iter()
            .map(|(k, v)| {
                let var = if trainable {
                    Var::parameter(v.clone())
                } else {
                    Var::constant(v.clone())
                };
                (k.clone(), var)
            })
            .collect();
        Bindings { vars }
    }

    /// Copies leaf gradients out of `bindings` after backward. Parameters the
    /// loss does not depend on receive an explicit zero gradient.
    pub fn absorb_grads(&mut self, bindings: &Bindings<T>) -> Result<()> {
        for (name, var) in &bindings.vars {
            let grad = var.grad().unwrap_or_else(|| Tensor::zeros(var.shape()));
            self.set_grad(name, grad)?;
        }
        Ok(())
    }
}

/// Tape leaves for one forward pass over a [`ParamStore`].
pub struct Bindings<T: Real> {
    vars: BTreeMap<String, Var<T>>,
}

impl<T: Real> Bindings<T> {
    pub fn get(&self, name: &str) -> Result<&Var<T>> {
        self.vars
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var<T>)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_from_suffix() {
        assert_eq!(ParamKind::of("a.b.weight"), Some(ParamKind::Weight));
        assert_eq!(ParamKind::of("bias"), Some(ParamKind::Bias));
        assert_eq!(ParamKind::of("x.slope"), Some(ParamKind::Slope));
        assert_eq!(ParamKind::of("x.gamma"), None);
    }

    #[test]
    fn duplicate_and_unknown_names_are_errors() {
        let mut s = ParamStore::<f32>::new();
        s.insert("a.weight", Tensor::zeros(&[2])).unwrap();
        assert!(s.insert("a.weight", Tensor::zeros(&[2])).is_err());
        assert!(s.insert("a.thing", Tensor::zeros(&[2])).is_err());
        assert!(matches!(s.get("b.weight"), Err(Error::UnknownParameter(_))));
    }

    #[test]
    fn iteration_order_is_stable() {
        let mut s = ParamStore::<f32>::new();
        for n in ["z.bias", "a.weight", "m.slope"] {
            s.insert(n, Tensor::zeros(&[1])).unwrap();
        }
        assert_eq!(
            s.names().collect::<Vec<_>>(),
            vec!["a.weight", "m.slope", "z.bias"]
        );
    }
}
