//! The trajectory planner network: a convolutional encoder applied to every
//! potential map of the window, a GRU across the window, and a dense head
//! that emits the coefficients of a [`ContinuousTrajectory`].
//!
//! Also holds the derivative-aware loss, the training loop, and the model
//! file format.

use crate::diffnet::{AdamConfig, GruCache, LayerSpec, Network, NetworkCache, ParamStore, Tensor};
use crate::diffnet::layers::{gru_backward, gru_forward};
use crate::io::{decode_framed, encode_framed, write_atomic};
use crate::metrics::{aggregate, evaluate};
use crate::neural_trajectory::{fit_basis, BasisKind, CoefficientGrads, ContinuousTrajectory, KinematicState};
use crate::potential_map::PotentialMap;
use crate::scenario_data::{Episode, TrajectorySample};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub map_rows: usize,
    pub map_cols: usize,
    /// Number of maps per window.
    pub window: usize,
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub feature_dim: usize,
    pub gru_layers: usize,
    pub head_hidden: Vec<usize>,
    pub basis_count: usize,
    pub horizon: f64,
    /// Frequencies are `freq_scale · softplus(raw)`.
    pub freq_scale: f64,
    /// Multiplies the raw weight and bias outputs, in meters.
    pub position_scale: f64,
    pub leaky_slope: f64,
    /// Inverted dropout on GRU outputs during training.
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            map_rows: 64,
            map_cols: 64,
            window: 4,
            conv_channels: vec![8, 16, 32, 64],
            kernel: 4,
            stride: 2,
            feature_dim: 128,
            gru_layers: 1,
            head_hidden: vec![256, 256],
            basis_count: 32,
            horizon: 3.0,
            freq_scale: 20.0,
            position_scale: 10.0,
            leaky_slope: 0.2,
            dropout: 0.0,
        }
    }
}

impl ModelConfig {
    /// A very small model on 8×8 maps, used for gradient checks.
    pub fn tiny() -> Self {
        Self {
            map_rows: 8,
            map_cols: 8,
            conv_channels: vec![2, 3, 3, 4],
            feature_dim: 5,
            head_hidden: vec![6, 6],
            basis_count: 4,
            ..Self::default()
        }
    }

    pub fn condition_dim(&self) -> usize {
        1 + self.feature_dim
    }

    pub fn head_outputs(&self) -> usize {
        4 * self.basis_count + 2
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.map_rows == 0 || self.map_cols == 0 || self.window == 0 {
            return bad("map size and window must be positive");
        }
        if self.conv_channels.is_empty() || self.kernel == 0 || self.stride == 0 {
            return bad("conv stack needs at least one layer with positive kernel and stride");
        }
        if self.feature_dim == 0 || self.gru_layers == 0 || self.basis_count == 0 {
            return bad("feature_dim, gru_layers, and basis_count must be positive");
        }
        if !(self.horizon > 0.0 && self.freq_scale > 0.0 && self.position_scale > 0.0) {
            return bad("horizon, freq_scale, and position_scale must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    fn conv_output_size(&self) -> (usize, usize) {
        let mut rows = self.map_rows;
        let mut cols = self.map_cols;
        for _ in &self.conv_channels {
            rows = rows.div_ceil(self.stride);
            cols = cols.div_ceil(self.stride);
        }
        (rows, cols)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub velocity_weight: f64,
    pub acceleration_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            velocity_weight: 0.5,
            acceleration_weight: 0.1,
        }
    }
}

/// Training variants that each remove or change one ingredient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    None,
    /// Maps are replaced by blank (all-zero) maps.
    NoIntention,
    /// The speed slot of the condition is zeroed.
    NoV0,
    /// Leaky-ReLU basis instead of cosines.
    NoCos,
    /// No velocity or acceleration loss.
    NoHos,
    /// Velocity and acceleration loss weights ×10.
    BigHos,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::None,
        Ablation::NoIntention,
        Ablation::NoV0,
        Ablation::NoCos,
        Ablation::NoHos,
        Ablation::BigHos,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoIntention => "no-intention",
            Ablation::NoV0 => "no-v0",
            Ablation::NoCos => "no-cos",
            Ablation::NoHos => "no-hos",
            Ablation::BigHos => "big-hos",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }

    pub fn basis(&self) -> BasisKind {
        match self {
            Ablation::NoCos => BasisKind::LeakyRelu,
            _ => BasisKind::Cosine,
        }
    }

    pub fn loss_config(&self, base: &LossConfig) -> LossConfig {
        match self {
            Ablation::NoHos => LossConfig {
                velocity_weight: 0.0,
                acceleration_weight: 0.0,
            },
            Ablation::BigHos => LossConfig {
                velocity_weight: base.velocity_weight * 10.0,
                acceleration_weight: base.acceleration_weight * 10.0,
            },
            _ => *base,
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn inverse_softplus(y: f64) -> f64 {
    y.exp_m1().ln()
}

/// Layer chains and shapes; holds no parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub config: ModelConfig,
    pub basis: BasisKind,
    pub encoder: Network,
    pub head: Network,
}

/// Activations of one batch, enough for an exact backward pass.
struct ForwardCache {
    batch: usize,
    encoder: NetworkCache,
    /// `[layer][frame]`
    gru: Vec<Vec<GruCache>>,
    /// Dropout multipliers per layer and frame, if active.
    masks: Vec<Vec<Vec<f64>>>,
    head: NetworkCache,
}

impl Architecture {
    pub fn new(config: ModelConfig, basis: BasisKind) -> Result<Self> {
        config.validate()?;
        let slope = config.leaky_slope;
        let mut enc = vec![];
        let mut in_ch = 1;
        for (i, &ch) in config.conv_channels.iter().enumerate() {
            enc.push((
                format!("conv{i}"),
                LayerSpec::Conv2d {
                    in_channels: in_ch,
                    out_channels: ch,
                    kernel: config.kernel,
                    stride: config.stride,
                },
            ));
            enc.push((format!("conv{i}_act"), LayerSpec::LeakyRelu { slope }));
            in_ch = ch;
        }
        let (r, c) = config.conv_output_size();
        enc.push((
            "project".into(),
            LayerSpec::Dense {
                inputs: r * c * in_ch,
                outputs: config.feature_dim,
            },
        ));
        enc.push(("project_act".into(), LayerSpec::LeakyRelu { slope }));

        let mut head = vec![];
        let mut width = config.condition_dim();
        for (i, &h) in config.head_hidden.iter().enumerate() {
            head.push((format!("head{i}"), LayerSpec::Dense { inputs: width, outputs: h }));
            head.push((format!("head{i}_act"), LayerSpec::LeakyRelu { slope }));
            width = h;
        }
        head.push((
            "head_out".into(),
            LayerSpec::Dense {
                inputs: width,
                outputs: config.head_outputs(),
            },
        ));
        Ok(Self {
            config,
            basis,
            encoder: Network::new(enc),
            head: Network::new(head),
        })
    }

    fn gru_spec(&self) -> LayerSpec {
        LayerSpec::GruCell {
            inputs: self.config.feature_dim,
            hidden: self.config.feature_dim,
        }
    }

    /// Draws initial parameters. The output biases of the frequency and
    /// phase slots start at a fixed spread of low frequencies and
    /// quadrature phases so the basis is well conditioned from step one.
    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        self.encoder.init_params(&mut store, &mut rng)?;
        for l in 0..self.config.gru_layers {
            self.gru_spec().init_params(&format!("gru{l}"), &mut store, &mut rng)?;
        }
        self.head.init_params(&mut store, &mut rng)?;
        let m = self.config.basis_count;
        let (freq, phase) = fit_basis(m);
        let bias = store.param_mut("head_out.bias")?;
        let data = bias.value.data_mut();
        for i in 0..m {
            data[i] = inverse_softplus(freq[i] / self.config.freq_scale);
            data[m + i] = phase[i];
        }
        Ok(store)
    }

    /// Stacks the windows of `batch` into `[B·window, rows, cols, 1]`.
    fn input_tensor(&self, windows: &[&[PotentialMap]]) -> Result<Tensor> {
        let cfg = &self.config;
        let frame = cfg.map_rows * cfg.map_cols;
        let mut data = Vec::with_capacity(windows.len() * cfg.window * frame);
        for w in windows {
            if w.len() != cfg.window {
                return Err(Error::SpecMismatch(format!("window of {} maps, expected {}", w.len(), cfg.window)));
            }
            let spec = *w[0].spec();
            for map in w.iter() {
                if *map.spec() != spec || spec.rows != cfg.map_rows || spec.cols != cfg.map_cols {
                    return Err(Error::SpecMismatch(format!(
                        "map {}x{} in a window of {}x{} for a model expecting {}x{}",
                        map.spec().rows,
                        map.spec().cols,
                        spec.rows,
                        spec.cols,
                        cfg.map_rows,
                        cfg.map_cols
                    )));
                }
                data.extend_from_slice(map.values());
            }
        }
        Tensor::new(vec![windows.len() * cfg.window, cfg.map_rows, cfg.map_cols, 1], data)
    }

    fn forward(
        &self,
        store: &ParamStore,
        input: &Tensor,
        speeds: &[f64],
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Tensor, Tensor, ForwardCache)> {
        let cfg = &self.config;
        let batch = speeds.len();
        let frames = cfg.window;
        let hidden = cfg.feature_dim;
        let (features, enc_cache) = self.encoder.forward(store, input)?;
        let fd = features.data();

        let mut seq: Vec<Tensor> = (0..frames)
            .map(|f| {
                let mut d = Vec::with_capacity(batch * hidden);
                for b in 0..batch {
                    let row = b * frames + f;
                    d.extend_from_slice(&fd[row * hidden..(row + 1) * hidden]);
                }
                Tensor::new(vec![batch, hidden], d)
            })
            .collect::<Result<_>>()?;
        let mut gru_caches = Vec::with_capacity(cfg.gru_layers);
        let mut masks = Vec::new();
        let mut rng = dropout_rng.filter(|_| cfg.dropout > 0.0);
        for l in 0..cfg.gru_layers {
            let name = format!("gru{l}");
            let mut h = Tensor::zeros(vec![batch, hidden]);
            let mut caches = Vec::with_capacity(frames);
            let mut out = Vec::with_capacity(frames);
            let mut layer_masks = Vec::new();
            for x in &seq {
                let (h2, c) = gru_forward(&name, store, x, &h)?;
                caches.push(c);
                let mut emitted = h2.clone();
                if let Some(rng) = rng.as_deref_mut() {
                    let keep = 1.0 - cfg.dropout;
                    let mask: Vec<f64> = (0..emitted.len())
                        .map(|_| if rng.random_bool(keep) { 1.0 / keep } else { 0.0 })
                        .collect();
                    emitted.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                    layer_masks.push(mask);
                }
                out.push(emitted);
                h = h2;
            }
            gru_caches.push(caches);
            if !layer_masks.is_empty() {
                masks.push(layer_masks);
            }
            seq = out;
        }
        let r = seq.pop().expect("window is non-empty");
        let mut cond = Vec::with_capacity(batch * cfg.condition_dim());
        for (b, &v0) in speeds.iter().enumerate() {
            cond.push(v0);
            cond.extend_from_slice(&r.data()[b * hidden..(b + 1) * hidden]);
        }
        let cond = Tensor::new(vec![batch, cfg.condition_dim()], cond)?;
        let (out, head_cache) = self.head.forward(store, &cond)?;
        Ok((
            cond,
            out,
            ForwardCache {
                batch,
                encoder: enc_cache,
                gru: gru_caches,
                masks,
                head: head_cache,
            },
        ))
    }

    fn backward(&self, store: &mut ParamStore, cache: &mut ForwardCache, d_out: &Tensor) -> Result<()> {
        let cfg = &self.config;
        let batch = cache.batch;
        let frames = cfg.window;
        let hidden = cfg.feature_dim;
        let d_cond = self.head.backward(store, &mut cache.head, d_out)?;
        let mut d_r = Vec::with_capacity(batch * hidden);
        for b in 0..batch {
            let row = &d_cond.data()[b * cfg.condition_dim()..(b + 1) * cfg.condition_dim()];
            d_r.extend_from_slice(&row[1..]);
        }
        // Gradient w.r.t. each layer's emitted sequence; only the last frame
        // of the top layer feeds the head.
        let mut d_seq: Vec<Tensor> = (0..frames).map(|_| Tensor::zeros(vec![batch, hidden])).collect();
        d_seq[frames - 1] = Tensor::new(vec![batch, hidden], d_r)?;
        for l in (0..cfg.gru_layers).rev() {
            let name = format!("gru{l}");
            let mut d_h_next = Tensor::zeros(vec![batch, hidden]);
            let mut d_in: Vec<Tensor> = Vec::with_capacity(frames);
            for f in (0..frames).rev() {
                let mut d = d_seq[f].clone();
                if let Some(mask) = cache.masks.get(l).map(|m| &m[f]) {
                    d.data_mut().iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
                }
                d.data_mut().iter_mut().zip(d_h_next.data()).for_each(|(g, h)| *g += h);
                let (dx, dh) = gru_backward(&name, store, &cache.gru[l][f], &d)?;
                d_in.push(dx);
                d_h_next = dh;
            }
            d_in.reverse();
            d_seq = d_in;
        }
        let mut d_feat = vec![0.0; batch * frames * hidden];
        for (f, t) in d_seq.iter().enumerate() {
            for b in 0..batch {
                let row = b * frames + f;
                d_feat[row * hidden..(row + 1) * hidden].copy_from_slice(&t.data()[b * hidden..(b + 1) * hidden]);
            }
        }
        self.encoder
            .backward(store, &mut cache.encoder, &Tensor::new(vec![batch * frames, hidden], d_feat)?)?;
        Ok(())
    }

    /// Decodes one row of head outputs into a trajectory.
    pub fn decode(&self, row: &[f64]) -> Result<ContinuousTrajectory> {
        let m = self.config.basis_count;
        let s = self.config.position_scale;
        ContinuousTrajectory::new(
            self.config.horizon,
            self.basis,
            row[..m].iter().map(|&x| self.config.freq_scale * softplus(x)).collect(),
            row[m..2 * m].to_vec(),
            row[2 * m..3 * m].iter().map(|&x| s * x).collect(),
            row[3 * m..4 * m].iter().map(|&x| s * x).collect(),
            [s * row[4 * m], s * row[4 * m + 1]],
        )
    }

    /// Chain rule from coefficient gradients to one row of head outputs.
    fn encode_grads(&self, row: &[f64], g: &CoefficientGrads, out: &mut [f64]) {
        let m = self.config.basis_count;
        let s = self.config.position_scale;
        for i in 0..m {
            out[i] = g.freq[i] * self.config.freq_scale * sigmoid(row[i]);
            out[m + i] = g.phase[i];
            out[2 * m + i] = g.weight_x[i] * s;
            out[3 * m + i] = g.weight_y[i] * s;
        }
        out[4 * m] = g.bias[0] * s;
        out[4 * m + 1] = g.bias[1] * s;
    }
}

/// Squared-error loss over the label samples on position, velocity, and
/// acceleration, averaged over samples. Returns the loss and, if `grads` is
/// given, accumulates `scale · dloss/dcoefficients` into it.
pub fn trajectory_loss(
    traj: &ContinuousTrajectory,
    label: &[TrajectorySample],
    cfg: &LossConfig,
    mut grads: Option<(&mut CoefficientGrads, f64)>,
) -> f64 {
    let n = label.len() as f64;
    let mut total = 0.0;
    for s in label {
        let y = traj.eval(s.t);
        let rp = [y.position[0] - s.position[0], y.position[1] - s.position[1]];
        let rv = [y.velocity[0] - s.velocity[0], y.velocity[1] - s.velocity[1]];
        let ra = [y.acceleration[0] - s.acceleration[0], y.acceleration[1] - s.acceleration[1]];
        let sq = |r: [f64; 2]| r[0] * r[0] + r[1] * r[1];
        total += sq(rp) + cfg.velocity_weight * sq(rv) + cfg.acceleration_weight * sq(ra);
        if let Some((g, scale)) = grads.as_mut() {
            let c = 2.0 * *scale / n;
            let kv = c * cfg.velocity_weight;
            let ka = c * cfg.acceleration_weight;
            let up = KinematicState {
                position: [c * rp[0], c * rp[1]],
                velocity: [kv * rv[0], kv * rv[1]],
                acceleration: [ka * ra[0], ka * ra[1]],
            };
            traj.accumulate_grads(s.t, &up, g);
        }
    }
    total / n
}

/// Architecture plus trained parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivingModel {
    pub arch: Architecture,
    pub ablation: Ablation,
    pub params: ParamStore,
}

impl DrivingModel {
    pub fn new(config: ModelConfig, ablation: Ablation, seed: u64) -> Result<Self> {
        let arch = Architecture::new(config, ablation.basis())?;
        let params = arch.init_params(seed)?;
        Ok(Self { arch, ablation, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.arch.config
    }

    fn model_input(&self, v0: f64) -> f64 {
        if self.ablation == Ablation::NoV0 {
            0.0
        } else {
            v0
        }
    }

    fn blank_if_needed<'a>(&self, window: &'a [PotentialMap], blank: &'a [PotentialMap]) -> &'a [PotentialMap] {
        if self.ablation == Ablation::NoIntention {
            blank
        } else {
            window
        }
    }

    fn blanks(&self, window: &[PotentialMap]) -> Vec<PotentialMap> {
        if self.ablation == Ablation::NoIntention {
            window.iter().map(|m| PotentialMap::zeros(*m.spec())).collect()
        } else {
            vec![]
        }
    }

    /// Condition vector `[v0, r]` for one window.
    pub fn encode(&self, window: &[PotentialMap], v0: f64) -> Result<Vec<f64>> {
        Ok(self.encode_batch(&[window], &[v0])?.pop().expect("one row"))
    }

    pub fn encode_batch(&self, windows: &[&[PotentialMap]], speeds: &[f64]) -> Result<Vec<Vec<f64>>> {
        let (cond, _) = self.run(windows, speeds)?;
        let d = self.arch.config.condition_dim();
        Ok(cond.data().chunks_exact(d).map(<[f64]>::to_vec).collect())
    }

    /// Trajectory for a condition vector.
    pub fn predict(&self, condition: &[f64]) -> Result<ContinuousTrajectory> {
        let d = self.arch.config.condition_dim();
        if condition.len() != d {
            return Err(Error::SpecMismatch(format!("condition of length {}, expected {d}", condition.len())));
        }
        let out = self.arch.head.infer(&self.params, &Tensor::new(vec![1, d], condition.to_vec())?)?;
        self.arch.decode(out.data())
    }

    /// Encode and predict in one call.
    pub fn plan(&self, window: &[PotentialMap], v0: f64) -> Result<ContinuousTrajectory> {
        Ok(self.plan_batch(&[window], &[v0])?.pop().expect("one row"))
    }

    pub fn plan_batch(&self, windows: &[&[PotentialMap]], speeds: &[f64]) -> Result<Vec<ContinuousTrajectory>> {
        let (_, out) = self.run(windows, speeds)?;
        out.data()
            .chunks_exact(self.arch.config.head_outputs())
            .map(|row| self.arch.decode(row))
            .collect()
    }

    fn run(&self, windows: &[&[PotentialMap]], speeds: &[f64]) -> Result<(Tensor, Tensor)> {
        let blanks: Vec<Vec<PotentialMap>> = windows.iter().map(|w| self.blanks(w)).collect();
        let windows: Vec<&[PotentialMap]> =
            windows.iter().zip(&blanks).map(|(w, b)| self.blank_if_needed(w, b)).collect();
        let input = self.arch.input_tensor(&windows)?;
        let speeds: Vec<f64> = speeds.iter().map(|&v| self.model_input(v)).collect();
        let (cond, out, _) = self.arch.forward(&self.params, &input, &speeds, None)?;
        Ok((cond, out))
    }

    /// Mean loss over `batch` under parameters `params`.
    pub fn batch_loss_with(&self, params: &ParamStore, batch: &[&Episode], loss: &LossConfig) -> Result<f64> {
        let (input, speeds) = self.batch_inputs(batch)?;
        let (_, out, _) = self.arch.forward(params, &input, &speeds, None)?;
        let mut total = 0.0;
        for (ep, row) in batch.iter().zip(out.data().chunks_exact(self.arch.config.head_outputs())) {
            total += trajectory_loss(&self.arch.decode(row)?, &ep.label, loss, None);
        }
        Ok(total / batch.len() as f64)
    }

    pub fn batch_loss(&self, batch: &[&Episode], loss: &LossConfig) -> Result<f64> {
        self.batch_loss_with(&self.params, batch, loss)
    }

    fn batch_inputs(&self, batch: &[&Episode]) -> Result<(Tensor, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let blanks: Vec<Vec<PotentialMap>> = batch.iter().map(|e| self.blanks(&e.map_window)).collect();
        let windows: Vec<&[PotentialMap]> = batch
            .iter()
            .zip(&blanks)
            .map(|(e, b)| self.blank_if_needed(&e.map_window, b))
            .collect();
        let speeds = batch.iter().map(|e| self.model_input(e.v0)).collect();
        Ok((self.arch.input_tensor(&windows)?, speeds))
    }

    /// Forward and backward over `batch`; gradients of the mean loss are
    /// accumulated into `self.params`. Returns the mean loss.
    pub fn accumulate_batch_grads(
        &mut self,
        batch: &[&Episode],
        loss: &LossConfig,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<f64> {
        let (input, speeds) = self.batch_inputs(batch)?;
        let (_, out, mut cache) = self.arch.forward(&self.params, &input, &speeds, dropout_rng)?;
        let width = self.arch.config.head_outputs();
        let scale = 1.0 / batch.len() as f64;
        let mut d_out = vec![0.0; out.len()];
        let mut total = 0.0;
        for ((ep, row), d_row) in batch.iter().zip(out.data().chunks_exact(width)).zip(d_out.chunks_exact_mut(width)) {
            let traj = self.arch.decode(row)?;
            let mut g = CoefficientGrads::zeros(self.arch.config.basis_count);
            total += trajectory_loss(&traj, &ep.label, loss, Some((&mut g, scale)));
            self.arch.encode_grads(row, &g, d_row);
        }
        self.arch.backward(&mut self.params, &mut cache, &Tensor::new(out.shape().to_vec(), d_out)?)?;
        Ok(total * scale)
    }

    // ------------------------------------------------------------- file I/O

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = ModelHeader {
            format: MODEL_FORMAT.into(),
            config: self.arch.config.clone(),
            ablation: self.ablation,
            encoder: self.arch.encoder.clone(),
            head: self.arch.head.clone(),
            tensors: self.params.entries(),
        };
        encode_framed(&header, &self.params.flat_values())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload) = decode_framed(bytes, |h: &ModelHeader| {
            h.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum()
        })?;
        if header.format != MODEL_FORMAT {
            return Err(Error::format("format", format!("unknown model format `{}`", header.format)));
        }
        let arch = Architecture::new(header.config, header.ablation.basis())?;
        if arch.encoder != header.encoder || arch.head != header.head {
            return Err(Error::format("layers", "layer specs do not match the config"));
        }
        let params = crate::diffnet::ParamStore::from_entries(&header.tensors, &payload)?;
        let expected = arch.init_params(0)?;
        for ((n1, p1), (n2, p2)) in params.iter().zip(expected.iter()) {
            if n1 != n2 || p1.value.shape() != p2.value.shape() {
                return Err(Error::format("tensors", format!("tensor `{n1}` does not fit the architecture")));
            }
        }
        if params.names().len() != expected.names().len() {
            return Err(Error::format("tensors", "tensor count does not fit the architecture"));
        }
        Ok(Self {
            arch,
            ablation: header.ablation,
            params,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

const MODEL_FORMAT: &str = "neurotraj-model-v1";

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    format: String,
    config: ModelConfig,
    ablation: Ablation,
    encoder: Network,
    head: Network,
    tensors: Vec<crate::diffnet::TensorEntry>,
}

// ------------------------------------------------------------------ training

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many epochs without a validation improvement.
    pub patience: usize,
    /// Learning rate multiplier applied after every epoch.
    pub lr_decay: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            adam: AdamConfig::default(),
            batch_size: 32,
            max_epochs: 40,
            patience: 10,
            lr_decay: 1.0,
            val_fraction: 0.1,
            test_fraction: 0.2,
        }
    }
}

/// Disjoint index sets into a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle into test, validation, and training parts (in that order
/// of the shuffled list); each part is sorted.
pub fn split_dataset(n: usize, seed: u64, val_fraction: f64, test_fraction: f64) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5EED));
    let n_test = ((n as f64) * test_fraction).round() as usize;
    let n_val = ((n as f64) * val_fraction).round() as usize;
    let n_test = n_test.min(n);
    let n_val = n_val.min(n - n_test);
    let mut test = idx[..n_test].to_vec();
    let mut val = idx[n_test..n_test + n_val].to_vec();
    let mut train = idx[n_test + n_val..].to_vec();
    test.sort_unstable();
    val.sort_unstable();
    train.sort_unstable();
    Split { train, val, test }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_ade: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_ADE\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{},{}\n", e.epoch, e.train_loss, e.val_loss, e.val_ade));
        }
        out
    }
}

pub struct TrainOutcome {
    pub model: DrivingModel,
    pub log: TrainLog,
    pub split: Split,
}

/// Mean loss and ADE of `model` on the episodes at `idx`.
pub fn evaluate_subset(
    model: &DrivingModel,
    episodes: &[Episode],
    idx: &[usize],
    loss: &LossConfig,
    chunk: usize,
) -> Result<(f64, f64)> {
    if idx.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let mut total = 0.0;
    let mut reports = Vec::with_capacity(idx.len());
    for part in idx.chunks(chunk.max(1)) {
        let batch: Vec<&Episode> = part.iter().map(|&i| &episodes[i]).collect();
        let windows: Vec<&[PotentialMap]> = batch.iter().map(|e| e.map_window.as_slice()).collect();
        let speeds: Vec<f64> = batch.iter().map(|e| e.v0).collect();
        for (ep, traj) in batch.iter().zip(model.plan_batch(&windows, &speeds)?) {
            total += trajectory_loss(&traj, &ep.label, loss, None);
            reports.push(evaluate(&traj, &ep.label)?);
        }
    }
    Ok((total / idx.len() as f64, aggregate(&reports)?.e_ad))
}

/// Mini-batch Adam with early stopping on validation loss; the parameters
/// of the best validation epoch are returned. Deterministic per seed.
pub fn train(
    episodes: &[Episode],
    cfg: &TrainConfig,
    ablation: Ablation,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    if episodes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let split = split_dataset(episodes.len(), seed, cfg.val_fraction, cfg.test_fraction);
    if split.train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let loss_cfg = ablation.loss_config(&cfg.loss);
    let mut model = DrivingModel::new(cfg.model.clone(), ablation, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let mut adam = cfg.adam;
    let eval_chunk = 64;
    // Validation falls back to the training set when no episodes are held out.
    let val_idx = if split.val.is_empty() { &split.train } else { &split.val };

    let mut log = TrainLog::default();
    let (train0, _) = evaluate_subset(&model, episodes, &split.train, &loss_cfg, eval_chunk)?;
    let (val0, ade0) = evaluate_subset(&model, episodes, val_idx, &loss_cfg, eval_chunk)?;
    let first = EpochLog {
        epoch: 0,
        train_loss: train0,
        val_loss: val0,
        val_ade: ade0,
    };
    on_epoch(&first);
    log.epochs.push(first);
    let mut best = (val0, model.params.clone(), 0usize);

    let mut order = split.train.clone();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for part in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<&Episode> = part.iter().map(|&i| &episodes[i]).collect();
            let l = model.accumulate_batch_grads(&batch, &loss_cfg, Some(&mut dropout_rng))?;
            if !l.is_finite() {
                return Err(Error::InvalidConfig(format!("training diverged at epoch {epoch}")));
            }
            sum += l * part.len() as f64;
            model.params.adam_step(&adam);
        }
        adam.lr *= cfg.lr_decay;
        let (val_loss, val_ade) = evaluate_subset(&model, episodes, val_idx, &loss_cfg, eval_chunk)?;
        let row = EpochLog {
            epoch,
            train_loss: sum / order.len() as f64,
            val_loss,
            val_ade,
        };
        on_epoch(&row);
        log.epochs.push(row);
        if val_loss < best.0 {
            best = (val_loss, model.params.clone(), epoch);
        } else if epoch - best.2 >= cfg.patience {
            break;
        }
    }
    model.params = best.1;
    log.best_epoch = best.2;
    Ok(TrainOutcome { model, log, split })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::gradcheck::check_param_grads;
    use crate::potential_map::GridSpec;
    use crate::scenario_data::ScenarioTag;

    fn random_episode(rng: &mut ChaCha8Rng, rows: usize) -> Episode {
        let spec = GridSpec::square(rows, 0.5);
        let map_window = (0..4)
            .map(|_| PotentialMap::new(spec, (0..rows * rows).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
            .collect();
        let v0 = rng.random_range(0.0..8.0);
        let kappa = rng.random_range(-0.1..0.1);
        let label = (0..31)
            .map(|k| {
                let t = k as f64 * 0.1;
                let th = v0 * kappa * t;
                TrajectorySample {
                    t,
                    position: [v0 * t * th.cos(), v0 * t * th.sin()],
                    velocity: [v0 * th.cos(), v0 * th.sin()],
                    acceleration: [0.0, v0 * v0 * kappa],
                    speed: v0,
                }
            })
            .collect();
        Episode {
            id: "r".into(),
            scenario_tag: ScenarioTag::Turn,
            v0,
            map_window,
            obstacle_cells: vec![],
            label,
        }
    }

    #[test]
    fn zero_parameters_give_zero_feature() {
        let mut model = DrivingModel::new(ModelConfig::tiny(), Ablation::None, 1).unwrap();
        for (_, p) in model.params.iter_mut() {
            p.value.fill(0.0);
        }
        let window = vec![PotentialMap::zeros(GridSpec::square(8, 0.5)); 4];
        let c = model.encode(&window, 3.5).unwrap();
        assert_eq!(c[0], 3.5);
        assert!(c[1..].iter().all(|&v| v == 0.0));
        let traj = model.predict(&c).unwrap();
        let expected_freq = 20.0 * 2f64.ln();
        assert!(traj.freq.iter().all(|&f| (f - expected_freq).abs() < 1e-12));
        for t in [0.0, 1.3, 3.0] {
            let s = traj.eval(t);
            assert_eq!(s.position, [0.0, 0.0]);
            assert_eq!(s.velocity, [0.0, 0.0]);
        }
    }

    #[test]
    fn encode_rejects_bad_windows() {
        let model = DrivingModel::new(ModelConfig::tiny(), Ablation::None, 1).unwrap();
        let short = vec![PotentialMap::zeros(GridSpec::square(8, 0.5)); 3];
        assert!(matches!(model.encode(&short, 1.0), Err(Error::SpecMismatch(_))));
        let wrong = vec![PotentialMap::zeros(GridSpec::square(16, 0.5)); 4];
        assert!(matches!(model.encode(&wrong, 1.0), Err(Error::SpecMismatch(_))));
    }

    #[test]
    fn inference_is_pure_and_sensitive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = DrivingModel::new(ModelConfig::tiny(), Ablation::None, 2).unwrap();
        let a = random_episode(&mut rng, 8);
        let b = random_episode(&mut rng, 8);
        let ca = model.encode(&a.map_window, a.v0).unwrap();
        assert_eq!(ca, model.encode(&a.map_window, a.v0).unwrap());
        let cb = model.encode(&b.map_window, b.v0).unwrap();
        assert_ne!(model.predict(&ca).unwrap(), model.predict(&cb).unwrap());
        // Batched and single inference agree exactly.
        let batch = model.plan_batch(&[&a.map_window, &b.map_window], &[a.v0, b.v0]).unwrap();
        assert_eq!(batch[1], model.plan(&b.map_window, b.v0).unwrap());
    }

    #[test]
    fn loss_of_exact_fit_is_zero_and_position_only_without_derivative_terms() {
        let label: Vec<TrajectorySample> = (0..31)
            .map(|k| {
                let t = k as f64 * 0.1;
                TrajectorySample {
                    t,
                    position: [2.0, -1.0],
                    ..Default::default()
                }
            })
            .collect();
        let exact = ContinuousTrajectory::constant(3.0, [2.0, -1.0]);
        assert_eq!(trajectory_loss(&exact, &label, &LossConfig::default(), None), 0.0);
        let off = ContinuousTrajectory::new(3.0, BasisKind::Cosine, vec![1.0], vec![0.3], vec![0.5], vec![0.0], [2.0, -1.0])
            .unwrap();
        let pos_only = LossConfig {
            velocity_weight: 0.0,
            acceleration_weight: 0.0,
        };
        let mse: f64 = label
            .iter()
            .map(|s| {
                let p = off.eval(s.t).position;
                (p[0] - s.position[0]).powi(2) + (p[1] - s.position[1]).powi(2)
            })
            .sum::<f64>()
            / 31.0;
        assert!((trajectory_loss(&off, &label, &pos_only, None) - mse).abs() < 1e-15);
    }

    #[test]
    fn single_sample_loss_by_hand() {
        // One basis term: x(τ) = w cos(ωτ + φ), T = 2, sample at t = 1.
        let (w, om, ph) = (1.5f64, 2.0f64, 0.25f64);
        let traj = ContinuousTrajectory::new(2.0, BasisKind::Cosine, vec![om], vec![ph], vec![w], vec![0.0], [0.0, 0.0])
            .unwrap();
        let z = om * 0.5 + ph;
        let x = w * z.cos();
        let vx = -w * om / 2.0 * z.sin();
        let ax = -w * om * om / 4.0 * z.cos();
        let label = [TrajectorySample {
            t: 1.0,
            position: [1.0, 0.0],
            velocity: [0.5, 0.0],
            acceleration: [0.0, 0.0],
            speed: 0.5,
        }];
        let want = (x - 1.0).powi(2) + 0.5 * (vx - 0.5).powi(2) + 0.1 * ax.powi(2);
        assert!((trajectory_loss(&traj, &label, &LossConfig::default(), None) - want).abs() < 1e-14);
    }

    #[test]
    fn no_hos_derivative_terms_give_bitwise_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ep = random_episode(&mut rng, 8);
        let model = DrivingModel::new(ModelConfig::tiny(), Ablation::NoHos, 4).unwrap();
        let traj = model.plan(&ep.map_window, ep.v0).unwrap();
        let no_hos = Ablation::NoHos.loss_config(&LossConfig::default());
        let mut with = CoefficientGrads::zeros(4);
        trajectory_loss(&traj, &ep.label, &no_hos, Some((&mut with, 1.0)));
        // Same gradient computed with the derivative labels scrambled.
        let mut scrambled = ep.label.clone();
        for s in &mut scrambled {
            s.velocity = [123.0, -7.0];
            s.acceleration = [9.0, 44.0];
        }
        let mut without = CoefficientGrads::zeros(4);
        trajectory_loss(&traj, &scrambled, &no_hos, Some((&mut without, 1.0)));
        assert_eq!(with, without);
    }

    #[test]
    fn tiny_model_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let eps: Vec<Episode> = (0..3).map(|_| random_episode(&mut rng, 8)).collect();
        let batch: Vec<&Episode> = eps.iter().collect();
        for (ablation, gru_layers) in [(Ablation::None, 2), (Ablation::NoCos, 1)] {
            let cfg = ModelConfig {
                gru_layers,
                ..ModelConfig::tiny()
            };
            let mut model = DrivingModel::new(cfg, ablation, 5).unwrap();
            let loss = LossConfig::default();
            model.accumulate_batch_grads(&batch, &loss, None).unwrap();
            let probe = model.clone();
            let report =
                check_param_grads(&mut model.params, 1e-4, |p| probe.batch_loss_with(p, &batch, &loss).unwrap());
            assert!(report.max_rel_error < 1e-3, "{ablation:?}: {report:?}");
            assert_eq!(report.checked, probe.params.scalar_count());
        }
    }

    #[test]
    fn model_file_round_trip_and_validation() {
        let model = DrivingModel::new(ModelConfig::tiny(), Ablation::BigHos, 9).unwrap();
        let bytes = model.to_bytes().unwrap();
        assert_eq!(DrivingModel::from_bytes(&bytes).unwrap(), model);
        assert!(DrivingModel::from_bytes(&bytes[..bytes.len() - 8]).is_err());
        let text = String::from_utf8_lossy(&bytes[..bytes.iter().position(|&b| b == b'\n').unwrap()]).to_string();
        let tampered = text.replace("\"basis_count\":4", "\"basis_count\":5");
        let mut forged = tampered.into_bytes();
        forged.extend_from_slice(&bytes[bytes.iter().position(|&b| b == b'\n').unwrap()..]);
        assert!(DrivingModel::from_bytes(&forged).is_err());
    }

    #[test]
    fn split_is_disjoint_and_covering() {
        let s = split_dataset(100, 4, 0.1, 0.2);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 10, 20));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(s, split_dataset(100, 4, 0.1, 0.2));
    }

    #[test]
    fn training_descends_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let eps: Vec<Episode> = (0..64).map(|_| random_episode(&mut rng, 8)).collect();
        let cfg = TrainConfig {
            model: ModelConfig::tiny(),
            max_epochs: 2,
            adam: AdamConfig {
                lr: 3e-3,
                ..Default::default()
            },
            ..Default::default()
        };
        let a = train(&eps, &cfg, Ablation::None, 7, |_| {}).unwrap();
        assert!(a.log.epochs[1].train_loss < a.log.epochs[0].train_loss, "{:?}", a.log);
        let b = train(&eps, &cfg, Ablation::None, 7, |_| {}).unwrap();
        assert_eq!(a.model.to_bytes().unwrap(), b.model.to_bytes().unwrap());
        assert!(matches!(train(&[], &cfg, Ablation::None, 7, |_| {}), Err(Error::EmptyDataset)));
    }
}
