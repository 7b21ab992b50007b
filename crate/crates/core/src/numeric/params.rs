use std::collections::BTreeMap;

use super::Matrix;
use crate::error::{Error, Result};

/// A trainable matrix together with its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Matrix,
    pub grad: Matrix,
}

/// Named parameters, iterated in lexicographic name order.
///
/// Names are hierarchical, dot separated (`fusion.1.wk.2`).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::param(format!("duplicate parameter name `{name}`")));
        }
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.params.insert(name, Param { value, grad });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn value(&self, name: &str) -> Result<&Matrix> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::param(format!("unknown parameter `{name}`")))
    }

    /// Overwrites a parameter value; the shape must not change.
    pub fn set_value(&mut self, name: &str, value: Matrix) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::param(format!("unknown parameter `{name}`")))?;
        if p.value.shape() != value.shape() {
            return Err(Error::Shape {
                op: "set_value",
                left: p.value.shape(),
                right: value.shape(),
            });
        }
        p.value = value;
        Ok(())
    }

    pub fn grad(&self, name: &str) -> Option<&Matrix> {
        self.params.get(name).map(|p| &p.grad)
    }

    pub fn accumulate_grad(&mut self, name: &str, grad: &Matrix) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::Internal(format!("gradient for unknown parameter `{name}`")))?;
        if p.grad.shape() != grad.shape() {
            return Err(Error::Internal(format!(
                "gradient shape {:?} for `{name}` with shape {:?}",
                grad.shape(),
                p.grad.shape()
            )));
        }
        p.grad.add_assign(grad);
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.fill(0.0);
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries over all parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.insert("a", Matrix::zeros(1, 1)).unwrap();
        assert!(s.insert("a", Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn grads_match_value_shapes_and_accumulate() {
        let mut s = ParamStore::new();
        s.insert("w", Matrix::zeros(2, 3)).unwrap();
        assert_eq!(s.grad("w").unwrap().shape(), (2, 3));
        s.accumulate_grad("w", &Matrix::filled(2, 3, 1.0)).unwrap();
        s.accumulate_grad("w", &Matrix::filled(2, 3, 1.0)).unwrap();
        assert_eq!(s.grad("w").unwrap(), &Matrix::filled(2, 3, 2.0));
        assert!(s.accumulate_grad("w", &Matrix::zeros(3, 2)).is_err());
        s.zero_grads();
        assert_eq!(s.grad("w").unwrap(), &Matrix::zeros(2, 3));
    }
}
