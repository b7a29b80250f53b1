//! Minimal differentiable-network substrate.
//!
//! Layers are described by [`LayerSpec`] and composed into a [`Network`]; all
//! trainable tensors live in one [`ParamStore`] keyed by `"<layer>.<tensor>"`.
//! Forward passes borrow the store immutably and return a cache; backward
//! passes consume the cache and accumulate into the store's gradients.
//!
//! Tensors are row-major `f64`. Convolutions use NHWC activations and
//! `[out, kh, kw, in]` kernels so that im2col rows are contiguous.

mod gemm;
pub mod gradcheck;
pub mod layers;
mod network;
mod store;

pub use layers::{GruCache, LayerSpec};
pub use network::{Network, NetworkCache};
pub use store::{AdamConfig, Param, ParamStore};
pub(crate) use store::TensorEntry;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                layer: "tensor".into(),
                detail: format!("shape {shape:?} needs {n} values, got {}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Shape {
                layer: "reshape".into(),
                detail: format!("{:?} -> {shape:?}", self.shape),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
