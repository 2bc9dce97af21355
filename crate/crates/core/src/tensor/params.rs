use indexmap::IndexMap;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Param {
    pub value: Tensor,
    pub grad: Vec<f64>,
    /// Adam first-moment estimate.
    pub m: Vec<f64>,
    /// Adam second-moment estimate.
    pub v: Vec<f64>,
}

impl Param {
    fn new(value: Tensor) -> Self {
        let n = value.numel();
        Param {
            value,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// Named learnable parameters plus non-learnable buffers (running
/// statistics). Insertion order is preserved and is the serialization order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: IndexMap<String, Param>,
    buffers: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) || self.buffers.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter name {name}")));
        }
        self.params.insert(name, Param::new(value));
        Ok(())
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) || self.buffers.contains_key(&name) {
            return Err(Error::contract(format!("duplicate buffer name {name}")));
        }
        self.buffers.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.params
            .get(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter {name}")))
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor> {
        self.buffers
            .get(name)
            .ok_or_else(|| Error::contract(format!("unknown buffer {name}")))
    }

    /// Replaces a buffer's contents; the shape must not change.
    pub fn set_buffer(&mut self, name: &str, data: Vec<f64>) -> Result<()> {
        let buf = self
            .buffers
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("unknown buffer {name}")))?;
        if buf.numel() != data.len() {
            return Err(Error::Dimension { op: "set_buffer", lhs: buf.shape().to_vec(), rhs: vec![data.len()] });
        }
        buf.data_mut().copy_from_slice(&data);
        Ok(())
    }

    /// Overwrites a parameter's values; the shape must not change.
    pub fn set_value(&mut self, name: &str, data: &[f64]) -> Result<()> {
        let p = self.get_mut(name)?;
        if p.value.numel() != data.len() {
            return Err(Error::Dimension { op: "set_value", lhs: p.value.shape().to_vec(), rhs: vec![data.len()] });
        }
        p.value.data_mut().copy_from_slice(data);
        Ok(())
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of learnable scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Records every parameter as a gradient-carrying leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundParams<'t> {
        let vars = self
            .params
            .iter()
            .map(|(name, p)| (name.clone(), tape.variable(p.value.clone())))
            .collect();
        BoundParams { vars }
    }
}

/// Parameters recorded on a particular tape.
pub struct BoundParams<'t> {
    vars: IndexMap<String, Var<'t>>,
}

impl<'t> BoundParams<'t> {
    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::contract(format!("unknown parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var<'t>)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Adds the tape gradients of every bound parameter into `store`.
    pub fn accumulate_into(&self, store: &mut ParamStore) -> Result<()> {
        for (name, var) in &self.vars {
            if let Some(g) = var.grad() {
                let p = store.get_mut(name)?;
                p.grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
        }
        Ok(())
    }
}
