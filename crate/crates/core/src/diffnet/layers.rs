//! Layer kernels. Every layer works on a leading batch dimension.

use super::gemm::gemm;
use super::{ParamStore, Tensor};
use crate::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// `y = W x + b`, `W: [outputs, inputs]`. Inputs of rank > 2 are
    /// flattened after the batch dimension.
    Dense { inputs: usize, outputs: usize },
    /// NHWC convolution with "same" padding, `W: [out, k, k, in]`.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    LeakyRelu { slope: f64 },
    /// Single GRU step. Inside a [`super::Network`] it starts from a zero state.
    GruCell { inputs: usize, hidden: usize },
}

impl LayerSpec {
    /// Parameter names (without the layer prefix) and shapes.
    pub fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                vec![("weight", vec![outputs, inputs]), ("bias", vec![outputs])]
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                ("weight", vec![out_channels, kernel, kernel, in_channels]),
                ("bias", vec![out_channels]),
            ],
            LayerSpec::LeakyRelu { .. } => vec![],
            LayerSpec::GruCell { inputs, hidden } => vec![
                ("w_ih", vec![3 * hidden, inputs]),
                ("w_hh", vec![3 * hidden, hidden]),
                ("b_ih", vec![3 * hidden]),
                ("b_hh", vec![3 * hidden]),
            ],
        }
    }

    /// Registers this layer's parameters under `prefix`, drawn uniformly from
    /// `±1/sqrt(fan_in)` (biases included).
    pub fn init_params<R: Rng>(&self, prefix: &str, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        let bound = match *self {
            LayerSpec::Dense { inputs, .. } => 1.0 / (inputs as f64).sqrt(),
            LayerSpec::Conv2d {
                in_channels, kernel, ..
            } => 1.0 / ((in_channels * kernel * kernel) as f64).sqrt(),
            LayerSpec::GruCell { hidden, .. } => 1.0 / (hidden as f64).sqrt(),
            LayerSpec::LeakyRelu { .. } => 0.0,
        };
        for (name, shape) in self.param_shapes() {
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
            store.insert(format!("{prefix}.{name}"), Tensor::new(shape, data)?)?;
        }
        Ok(())
    }
}

fn shape_err(layer: &str, detail: String) -> Error {
    Error::Shape {
        layer: layer.to_string(),
        detail,
    }
}

// ---------------------------------------------------------------- dense

pub(crate) fn dense_forward(name: &str, store: &ParamStore, x: &Tensor, outputs: usize) -> Result<Tensor> {
    let w = store.value(&format!("{name}.weight"))?;
    let b = store.value(&format!("{name}.bias"))?;
    let inputs = w.shape()[1];
    // Trailing dimensions are flattened: [N, ...] is read as [N, prod(...)].
    let n = x.shape().first().copied().unwrap_or(0);
    if x.shape().len() < 2 || n * inputs != x.len() || w.shape()[0] != outputs {
        return Err(shape_err(name, format!("input {:?} vs weight {:?}", x.shape(), w.shape())));
    }
    let mut y = vec![0.0; n * outputs];
    for row in y.chunks_exact_mut(outputs) {
        row.copy_from_slice(b.data());
    }
    gemm(n, inputs, outputs, x.data(), false, w.data(), true, 1.0, &mut y);
    Tensor::new(vec![n, outputs], y)
}

pub(crate) fn dense_backward(name: &str, store: &mut ParamStore, x: &Tensor, dy: &Tensor) -> Result<Tensor> {
    let n = x.shape()[0];
    let inputs = x.len() / n.max(1);
    let outputs = dy.shape()[1];
    {
        let gw = store.grad_mut(&format!("{name}.weight"))?;
        gemm(outputs, n, inputs, dy.data(), true, x.data(), false, 1.0, gw.data_mut());
    }
    {
        let gb = store.grad_mut(&format!("{name}.bias"))?;
        for row in dy.data().chunks_exact(outputs) {
            for (g, d) in gb.data_mut().iter_mut().zip(row) {
                *g += d;
            }
        }
    }
    let w = store.value(&format!("{name}.weight"))?;
    let mut dx = vec![0.0; n * inputs];
    gemm(n, outputs, inputs, dy.data(), false, w.data(), false, 0.0, &mut dx);
    Tensor::new(x.shape().to_vec(), dx)
}

// ---------------------------------------------------------------- conv2d

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub oh: usize,
    pub ow: usize,
    pub k: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeometry {
    pub fn new(shape: &[usize], kernel: usize, stride: usize) -> Self {
        let (n, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
        let oh = h.div_ceil(stride);
        let ow = w.div_ceil(stride);
        let pad_h = ((oh - 1) * stride + kernel).saturating_sub(h);
        let pad_w = ((ow - 1) * stride + kernel).saturating_sub(w);
        Self {
            n,
            h,
            w,
            c,
            oh,
            ow,
            k: kernel,
            stride,
            pad_top: pad_h / 2,
            pad_left: pad_w / 2,
        }
    }

    fn patch(&self) -> usize {
        self.k * self.k * self.c
    }

    fn rows(&self) -> usize {
        self.n * self.oh * self.ow
    }

    /// Input coordinate for output position and kernel offset, if inside.
    #[inline]
    fn source(&self, o: usize, kk: usize, pad: usize, limit: usize) -> Option<usize> {
        let i = (o * self.stride + kk) as isize - pad as isize;
        (i >= 0 && (i as usize) < limit).then_some(i as usize)
    }
}

pub(crate) fn im2col(x: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let patch = g.patch();
    let mut cols = vec![0.0; g.rows() * patch];
    for b in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let row = ((b * g.oh + oy) * g.ow + ox) * patch;
                for ky in 0..g.k {
                    let Some(iy) = g.source(oy, ky, g.pad_top, g.h) else { continue };
                    for kx in 0..g.k {
                        let Some(ix) = g.source(ox, kx, g.pad_left, g.w) else { continue };
                        let src = ((b * g.h + iy) * g.w + ix) * g.c;
                        let dst = row + (ky * g.k + kx) * g.c;
                        cols[dst..dst + g.c].copy_from_slice(&x[src..src + g.c]);
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let patch = g.patch();
    let mut x = vec![0.0; g.n * g.h * g.w * g.c];
    for b in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let row = ((b * g.oh + oy) * g.ow + ox) * patch;
                for ky in 0..g.k {
                    let Some(iy) = g.source(oy, ky, g.pad_top, g.h) else { continue };
                    for kx in 0..g.k {
                        let Some(ix) = g.source(ox, kx, g.pad_left, g.w) else { continue };
                        let dst = ((b * g.h + iy) * g.w + ix) * g.c;
                        let src = row + (ky * g.k + kx) * g.c;
                        for (d, s) in x[dst..dst + g.c].iter_mut().zip(&cols[src..src + g.c]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
    x
}

/// Returns the output and the im2col matrix (kept for backward).
pub(crate) fn conv_forward(
    name: &str,
    store: &ParamStore,
    x: &Tensor,
    spec: (usize, usize, usize, usize),
) -> Result<(Tensor, Vec<f64>)> {
    let (cin, cout, kernel, stride) = spec;
    if x.shape().len() != 4 || x.shape()[3] != cin {
        return Err(shape_err(name, format!("expected [N,H,W,{cin}] input, got {:?}", x.shape())));
    }
    let w = store.value(&format!("{name}.weight"))?;
    let b = store.value(&format!("{name}.bias"))?;
    if w.shape() != [cout, kernel, kernel, cin] {
        return Err(shape_err(name, format!("weight shape {:?}", w.shape())));
    }
    let g = ConvGeometry::new(x.shape(), kernel, stride);
    let cols = im2col(x.data(), &g);
    let mut y = vec![0.0; g.rows() * cout];
    for row in y.chunks_exact_mut(cout) {
        row.copy_from_slice(b.data());
    }
    gemm(g.rows(), g.patch(), cout, &cols, false, w.data(), true, 1.0, &mut y);
    Ok((Tensor::new(vec![g.n, g.oh, g.ow, cout], y)?, cols))
}

pub(crate) fn conv_backward(
    name: &str,
    store: &mut ParamStore,
    input_shape: &[usize],
    cols: &[f64],
    dy: &Tensor,
    kernel: usize,
    stride: usize,
) -> Result<Tensor> {
    let g = ConvGeometry::new(input_shape, kernel, stride);
    let cout = dy.shape()[3];
    {
        let gw = store.grad_mut(&format!("{name}.weight"))?;
        gemm(cout, g.rows(), g.patch(), dy.data(), true, cols, false, 1.0, gw.data_mut());
    }
    {
        let gb = store.grad_mut(&format!("{name}.bias"))?;
        for row in dy.data().chunks_exact(cout) {
            for (acc, d) in gb.data_mut().iter_mut().zip(row) {
                *acc += d;
            }
        }
    }
    let w = store.value(&format!("{name}.weight"))?;
    let mut dcols = vec![0.0; g.rows() * g.patch()];
    gemm(g.rows(), cout, g.patch(), dy.data(), false, w.data(), false, 0.0, &mut dcols);
    Tensor::new(input_shape.to_vec(), col2im(&dcols, &g))
}

// ---------------------------------------------------------------- leaky relu

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

pub(crate) fn leaky_forward(x: &Tensor, slope: f64) -> Tensor {
    let data = x.data().iter().map(|&v| leaky_relu(v, slope)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

pub(crate) fn leaky_backward(x: &Tensor, dy: &Tensor, slope: f64) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &d)| if v > 0.0 { d } else { slope * d })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

// ---------------------------------------------------------------- gru

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations of one GRU step, enough for an exact backward.
#[derive(Debug, Clone)]
pub struct GruCache {
    x: Tensor,
    h: Tensor,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    /// `W_hn h + b_hn`, before gating by `r`.
    gh_n: Vec<f64>,
}

/// One GRU step (gate order r, z, n):
///
/// ```text
/// r  = σ(W_ir x + b_ir + W_hr h + b_hr)
/// z  = σ(W_iz x + b_iz + W_hz h + b_hz)
/// n  = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
pub fn gru_forward(name: &str, store: &ParamStore, x: &Tensor, h: &Tensor) -> Result<(Tensor, GruCache)> {
    let w_ih = store.value(&format!("{name}.w_ih"))?;
    let w_hh = store.value(&format!("{name}.w_hh"))?;
    let b_ih = store.value(&format!("{name}.b_ih"))?;
    let b_hh = store.value(&format!("{name}.b_hh"))?;
    let hidden = w_hh.shape()[1];
    let inputs = w_ih.shape()[1];
    let batch = x.shape()[0];
    if x.shape() != [batch, inputs] || h.shape() != [batch, hidden] {
        return Err(shape_err(
            name,
            format!("input {:?} / state {:?} for {inputs}->{hidden}", x.shape(), h.shape()),
        ));
    }
    let g3 = 3 * hidden;
    let mut gi = vec![0.0; batch * g3];
    let mut gh = vec![0.0; batch * g3];
    for (ri, rh) in gi.chunks_exact_mut(g3).zip(gh.chunks_exact_mut(g3)) {
        ri.copy_from_slice(b_ih.data());
        rh.copy_from_slice(b_hh.data());
    }
    gemm(batch, inputs, g3, x.data(), false, w_ih.data(), true, 1.0, &mut gi);
    gemm(batch, hidden, g3, h.data(), false, w_hh.data(), true, 1.0, &mut gh);

    let len = batch * hidden;
    let (mut r, mut z, mut n, mut gh_n, mut out) =
        (vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len]);
    for b in 0..batch {
        for j in 0..hidden {
            let o = b * g3;
            let idx = b * hidden + j;
            let rv = sigmoid(gi[o + j] + gh[o + j]);
            let zv = sigmoid(gi[o + hidden + j] + gh[o + hidden + j]);
            let ghn = gh[o + 2 * hidden + j];
            let nv = (gi[o + 2 * hidden + j] + rv * ghn).tanh();
            r[idx] = rv;
            z[idx] = zv;
            n[idx] = nv;
            gh_n[idx] = ghn;
            out[idx] = (1.0 - zv) * nv + zv * h.data()[idx];
        }
    }
    let cache = GruCache {
        x: x.clone(),
        h: h.clone(),
        r,
        z,
        n,
        gh_n,
    };
    Ok((Tensor::new(vec![batch, hidden], out)?, cache))
}

/// Backward of one GRU step; returns `(dx, dh)`.
pub fn gru_backward(name: &str, store: &mut ParamStore, cache: &GruCache, dout: &Tensor) -> Result<(Tensor, Tensor)> {
    let batch = cache.x.shape()[0];
    let inputs = cache.x.shape()[1];
    let hidden = cache.h.shape()[1];
    let g3 = 3 * hidden;
    let mut dgi = vec![0.0; batch * g3];
    let mut dgh = vec![0.0; batch * g3];
    let mut dh = vec![0.0; batch * hidden];
    for b in 0..batch {
        for j in 0..hidden {
            let idx = b * hidden + j;
            let o = b * g3;
            let d = dout.data()[idx];
            let (r, z, n) = (cache.r[idx], cache.z[idx], cache.n[idx]);
            let dn = d * (1.0 - z);
            let dz = d * (cache.h.data()[idx] - n);
            dh[idx] = d * z;
            let dn_pre = dn * (1.0 - n * n);
            let dr = dn_pre * cache.gh_n[idx];
            let dr_pre = dr * r * (1.0 - r);
            let dz_pre = dz * z * (1.0 - z);
            dgi[o + j] = dr_pre;
            dgi[o + hidden + j] = dz_pre;
            dgi[o + 2 * hidden + j] = dn_pre;
            dgh[o + j] = dr_pre;
            dgh[o + hidden + j] = dz_pre;
            dgh[o + 2 * hidden + j] = dn_pre * r;
        }
    }
    {
        let gw = store.grad_mut(&format!("{name}.w_ih"))?;
        gemm(g3, batch, inputs, &dgi, true, cache.x.data(), false, 1.0, gw.data_mut());
    }
    {
        let gw = store.grad_mut(&format!("{name}.w_hh"))?;
        gemm(g3, batch, hidden, &dgh, true, cache.h.data(), false, 1.0, gw.data_mut());
    }
    for (bias, src) in [("b_ih", &dgi), ("b_hh", &dgh)] {
        let gb = store.grad_mut(&format!("{name}.{bias}"))?;
        for row in src.chunks_exact(g3) {
            for (acc, d) in gb.data_mut().iter_mut().zip(row) {
                *acc += d;
            }
        }
    }
    let mut dx = vec![0.0; batch * inputs];
    gemm(batch, g3, inputs, &dgi, false, store.value(&format!("{name}.w_ih"))?.data(), false, 0.0, &mut dx);
    gemm(batch, g3, hidden, &dgh, false, store.value(&format!("{name}.w_hh"))?.data(), false, 1.0, &mut dh);
    Ok((Tensor::new(vec![batch, inputs], dx)?, Tensor::new(vec![batch, hidden], dh)?))
}
