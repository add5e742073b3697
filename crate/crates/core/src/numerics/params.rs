use std::cell::RefCell;
use std::collections::HashMap;

use super::{NumericsError, Tensor};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable tensor. The gradient buffer sits behind a `RefCell` so a
/// tape holding `&ParamStore` can accumulate into it during backward.
#[derive(Debug, Clone)]
pub struct Parameter {
    name: String,
    value: Tensor,
    pub(crate) grad: RefCell<Option<Vec<f64>>>,
}

impl Parameter {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Tensor {
        &mut self.value
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.grad.borrow().clone()
    }

    pub fn has_grad(&self) -> bool {
        self.grad.borrow().is_some()
    }
}

/// Ordered collection of uniquely named parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId, NumericsError> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(NumericsError::DuplicateParameter(name));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            value,
            grad: RefCell::new(None),
        });
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.params.iter().map(|p| p.name.as_str()).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Sets every gradient buffer to zeros.
    pub fn zero_grad(&self) {
        for p in &self.params {
            let mut g = p.grad.borrow_mut();
            match g.as_mut() {
                Some(buf) => buf.iter_mut().for_each(|x| *x = 0.0),
                None => *g = Some(vec![0.0; p.value.len()]),
            }
        }
    }

    /// Drops every gradient buffer.
    pub fn clear_grad(&self) {
        for p in &self.params {
            *p.grad.borrow_mut() = None;
        }
    }

    pub(crate) fn accumulate(&self, id: ParamId, delta: &[f64]) {
        let p = &self.params[id.0];
        let mut g = p.grad.borrow_mut();
        let buf = g.get_or_insert_with(|| vec![0.0; p.value.len()]);
        for (b, d) in buf.iter_mut().zip(delta) {
            *b += d;
        }
    }

    pub(crate) fn accumulate_rows(&self, id: ParamId, rows: &[usize], cols: usize, delta: &[f64]) {
        let p = &self.params[id.0];
        let mut g = p.grad.borrow_mut();
        let buf = g.get_or_insert_with(|| vec![0.0; p.value.len()]);
        for (k, &r) in rows.iter().enumerate() {
            let dst = &mut buf[r * cols..(r + 1) * cols];
            for (b, d) in dst.iter_mut().zip(&delta[k * cols..(k + 1) * cols]) {
                *b += d;
            }
        }
    }

    /// Copies all values out, in store order.
    pub fn snapshot(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    /// Restores values previously taken with [`ParamStore::snapshot`].
    pub fn restore(&mut self, values: &[Tensor]) -> Result<(), NumericsError> {
        if values.len() != self.params.len() {
            return Err(NumericsError::ParameterCount {
                expected: self.params.len(),
                found: values.len(),
            });
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            if p.value.shape() != v.shape() {
                return Err(NumericsError::ShapeMismatch {
                    op: "restore",
                    left: p.value.shape().to_vec(),
                    right: v.shape().to_vec(),
                });
            }
            p.value = v.clone();
        }
        Ok(())
    }
}
