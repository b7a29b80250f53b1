use super::Tensor;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    m: Tensor,
    v: Tensor,
}

impl Param {
    fn new(value: Tensor) -> Self {
        let zeros = Tensor::zeros(value.shape().to_vec());
        Self {
            grad: zeros.clone(),
            m: zeros.clone(),
            v: zeros,
            value,
        }
    }

    /// Adam first/second moments.
    pub fn moments(&self) -> (&Tensor, &Tensor) {
        (&self.m, &self.v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Named parameters, their gradients, and Adam state. Insertion order is
/// stable and defines the on-disk tensor order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: Vec<(String, Param)>,
    step: u64,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.position(&name).is_some() {
            return Err(Error::InvalidConfig(format!("duplicate parameter `{name}`")));
        }
        self.params.push((name, Param::new(value)));
        Ok(())
    }

    fn position(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|(n, _)| n == name)
    }

    pub fn param(&self, name: &str) -> Result<&Param> {
        self.position(name)
            .map(|i| &self.params[i].1)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn param_mut(&mut self, name: &str) -> Result<&mut Param> {
        match self.position(name) {
            Some(i) => Ok(&mut self.params[i].1),
            None => Err(Error::UnknownParam(name.to_string())),
        }
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.param(name)?.value)
    }

    pub fn grad_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        Ok(&mut self.param_mut(name)?.grad)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(n, p)| (n.as_str(), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(n, p)| (n.as_str(), p))
    }

    pub fn names(&self) -> Vec<String> {
        self.params.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|(_, p)| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for (_, p) in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Adam with bias correction; gradients are zeroed afterwards.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (_, p) in &mut self.params {
            let Param { value, grad, m, v } = p;
            for (((w, g), m), v) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data_mut().iter_mut())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * *g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * *g * *g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
                *g = 0.0;
            }
        }
    }

    /// Multiplies every gradient by `s`.
    pub fn scale_grads(&mut self, s: f64) {
        for (_, p) in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= s);
        }
    }

    pub(crate) fn entries(&self) -> Vec<TensorEntry> {
        self.params
            .iter()
            .map(|(n, p)| TensorEntry {
                name: n.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect()
    }

    /// Concatenated parameter values in insertion order.
    pub fn flat_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.scalar_count());
        for (_, p) in &self.params {
            out.extend_from_slice(p.value.data());
        }
        out
    }

    pub(crate) fn from_entries(entries: &[TensorEntry], payload: &[f64]) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut offset = 0;
        for e in entries {
            let n: usize = e.shape.iter().product();
            let slice = payload
                .get(offset..offset + n)
                .ok_or_else(|| Error::format(e.name.clone(), "payload too short"))?;
            store.insert(e.name.clone(), Tensor::new(e.shape.clone(), slice.to_vec())?)?;
            offset += n;
        }
        if offset != payload.len() {
            return Err(Error::format("payload", "trailing values after last tensor"));
        }
        Ok(store)
    }
}
