use super::layers::{self, GruCache, LayerSpec};
use super::{ParamStore, Tensor};
use crate::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// A feed-forward chain of named layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<(String, LayerSpec)>,
}

#[derive(Debug, Clone)]
enum LayerCache {
    Input(Tensor),
    Conv { input_shape: Vec<usize>, cols: Vec<f64> },
    Gru(GruCache),
}

/// Activations recorded by [`Network::forward`].
#[derive(Debug, Clone, Default)]
pub struct NetworkCache {
    entries: Vec<Option<LayerCache>>,
}

impl Network {
    pub fn new(layers: Vec<(String, LayerSpec)>) -> Self {
        Self { layers }
    }

    pub fn init_params<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        for (name, spec) in &self.layers {
            spec.init_params(name, store, rng)?;
        }
        Ok(())
    }

    pub fn forward(&self, store: &ParamStore, input: &Tensor) -> Result<(Tensor, NetworkCache)> {
        let mut x = input.clone();
        let mut cache = NetworkCache::default();
        for (name, spec) in &self.layers {
            let (y, entry) = match *spec {
                LayerSpec::Dense { outputs, .. } => {
                    (layers::dense_forward(name, store, &x, outputs)?, LayerCache::Input(x))
                }
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                } => {
                    let (y, cols) =
                        layers::conv_forward(name, store, &x, (in_channels, out_channels, kernel, stride))?;
                    (
                        y,
                        LayerCache::Conv {
                            input_shape: x.shape().to_vec(),
                            cols,
                        },
                    )
                }
                LayerSpec::LeakyRelu { slope } => (layers::leaky_forward(&x, slope), LayerCache::Input(x)),
                LayerSpec::GruCell { hidden, .. } => {
                    let h = Tensor::zeros(vec![x.shape()[0], hidden]);
                    let (y, c) = layers::gru_forward(name, store, &x, &h)?;
                    (y, LayerCache::Gru(c))
                }
            };
            cache.entries.push(Some(entry));
            x = y;
        }
        Ok((x, cache))
    }

    /// Forward without keeping activations.
    pub fn infer(&self, store: &ParamStore, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward(store, input)?.0)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    /// The cache is consumed layer by layer.
    pub fn backward(&self, store: &mut ParamStore, cache: &mut NetworkCache, grad_out: &Tensor) -> Result<Tensor> {
        if cache.entries.len() != self.layers.len() {
            let missing = self.layers.get(cache.entries.len()).map(|l| l.0.clone());
            return Err(Error::MissingCache(missing.unwrap_or_else(|| "network".into())));
        }
        let mut grad = grad_out.clone();
        for (i, (name, spec)) in self.layers.iter().enumerate().rev() {
            let entry = cache.entries[i].take().ok_or_else(|| Error::MissingCache(name.clone()))?;
            grad = match (*spec, entry) {
                (LayerSpec::Dense { .. }, LayerCache::Input(x)) => layers::dense_backward(name, store, &x, &grad)?,
                (LayerSpec::Conv2d { kernel, stride, .. }, LayerCache::Conv { input_shape, cols }) => {
                    layers::conv_backward(name, store, &input_shape, &cols, &grad, kernel, stride)?
                }
                (LayerSpec::LeakyRelu { slope }, LayerCache::Input(x)) => layers::leaky_backward(&x, &grad, slope),
                (LayerSpec::GruCell { .. }, LayerCache::Gru(c)) => layers::gru_backward(name, store, &c, &grad)?.0,
                _ => return Err(Error::MissingCache(name.clone())),
            };
        }
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::{check_input_grad, check_param_grads};
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn sum_loss(net: &Network, store: &ParamStore, x: &Tensor, probe: &Tensor) -> f64 {
        let y = net.infer(store, x).unwrap();
        y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn dense_identity_passes_input_through() {
        let net = Network::new(vec![("fc".into(), LayerSpec::Dense { inputs: 3, outputs: 3 })]);
        let mut store = ParamStore::new();
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 4] = 1.0;
        }
        store.insert("fc.weight", Tensor::new(vec![3, 3], eye).unwrap()).unwrap();
        store.insert("fc.bias", Tensor::zeros(vec![3])).unwrap();
        let x = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 7.0, -1.0]).unwrap();
        assert_eq!(net.infer(&store, &x).unwrap(), x);
    }

    #[test]
    fn leaky_relu_slope() {
        assert_eq!(layers::leaky_relu(-1.0, 0.2), -0.2);
        assert_eq!(layers::leaky_relu(2.0, 0.2), 2.0);
    }

    #[test]
    fn conv_matches_nested_loops_on_ramp() {
        let spec = LayerSpec::Conv2d {
            in_channels: 1,
            out_channels: 2,
            kernel: 4,
            stride: 2,
        };
        let net = Network::new(vec![("c".into(), spec)]);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        net.init_params(&mut store, &mut rng).unwrap();
        let x = Tensor::new(vec![1, 8, 8, 1], (0..64).map(|i| i as f64 / 8.0).collect()).unwrap();
        let y = net.infer(&store, &x).unwrap();
        assert_eq!(y.shape(), &[1, 4, 4, 2]);
        let w = store.value("c.weight").unwrap().data();
        let b = store.value("c.bias").unwrap().data();
        // "Same" padding for 8 -> 4 with k=4, s=2 pads one row/column on each side.
        for oc in 0..2 {
            for oy in 0..4 {
                for ox in 0..4 {
                    let mut acc = b[oc];
                    for ky in 0..4 {
                        for kx in 0..4 {
                            let iy = (oy * 2 + ky) as i64 - 1;
                            let ix = (ox * 2 + kx) as i64 - 1;
                            if (0..8).contains(&iy) && (0..8).contains(&ix) {
                                acc += w[(oc * 4 + ky) * 4 + kx] * x.data()[(iy * 8 + ix) as usize];
                            }
                        }
                    }
                    let got = y.data()[(oy * 4 + ox) * 2 + oc];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_same_padding_shrinks_to_one() {
        for (n, expect) in [(64, 32), (8, 4), (2, 1), (1, 1), (5, 3)] {
            let g = layers::ConvGeometry::new(&[1, n, n, 1], 4, 2);
            assert_eq!(g.oh, expect);
        }
    }

    #[test]
    fn dense_input_gradient_is_weight_column_sums() {
        let net = Network::new(vec![("fc".into(), LayerSpec::Dense { inputs: 4, outputs: 3 })]);
        let mut store = ParamStore::new();
        net.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let x = random_tensor(&mut ChaCha8Rng::seed_from_u64(3), vec![1, 4]);
        let (_, mut cache) = net.forward(&store, &x).unwrap();
        let dx = net.backward(&mut store, &mut cache, &Tensor::new(vec![1, 3], vec![1.0; 3]).unwrap()).unwrap();
        let w = store.value("fc.weight").unwrap().data().to_vec();
        for j in 0..4 {
            let col: f64 = (0..3).map(|i| w[i * 4 + j]).sum();
            assert!((dx.data()[j] - col).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_output_gradient_gives_zero_param_gradients() {
        let net = small_chain();
        let mut store = ParamStore::new();
        net.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let x = random_tensor(&mut ChaCha8Rng::seed_from_u64(5), vec![2, 6, 6, 1]);
        let (y, mut cache) = net.forward(&store, &x).unwrap();
        net.backward(&mut store, &mut cache, &Tensor::zeros(y.shape().to_vec())).unwrap();
        assert!(store.iter().all(|(_, p)| p.grad.data().iter().all(|&g| g == 0.0)));
    }

    #[test]
    fn backward_without_cache_errors() {
        let net = small_chain();
        let mut store = ParamStore::new();
        net.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let err = net
            .backward(&mut store, &mut NetworkCache::default(), &Tensor::zeros(vec![1, 4]))
            .unwrap_err();
        assert!(matches!(err, Error::MissingCache(ref l) if l == "conv"));
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let net = Network::new(vec![("head".into(), LayerSpec::Dense { inputs: 4, outputs: 2 })]);
        let mut store = ParamStore::new();
        net.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let err = net.forward(&store, &Tensor::zeros(vec![1, 5])).unwrap_err();
        assert!(err.to_string().contains("`head`"));
    }

    fn small_chain() -> Network {
        Network::new(vec![
            (
                "conv".into(),
                LayerSpec::Conv2d {
                    in_channels: 1,
                    out_channels: 2,
                    kernel: 4,
                    stride: 2,
                },
            ),
            ("act".into(), LayerSpec::LeakyRelu { slope: 0.2 }),
            ("fc".into(), LayerSpec::Dense { inputs: 18, outputs: 4 }),
        ])
    }

    #[test]
    fn forward_is_pure() {
        let net = Network::new(vec![
            ("a".into(), LayerSpec::Dense { inputs: 5, outputs: 7 }),
            ("b".into(), LayerSpec::LeakyRelu { slope: 0.2 }),
            ("g".into(), LayerSpec::GruCell { inputs: 7, hidden: 3 }),
        ]);
        let mut store = ParamStore::new();
        net.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let x = random_tensor(&mut ChaCha8Rng::seed_from_u64(10), vec![4, 5]);
        let a = net.infer(&store, &x).unwrap();
        let b = net.infer(&store, &x).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn zero_weight_gru_maps_to_zero() {
        let spec = LayerSpec::GruCell { inputs: 4, hidden: 3 };
        let mut store = ParamStore::new();
        for (name, shape) in spec.param_shapes() {
            store.insert(format!("g.{name}"), Tensor::zeros(shape)).unwrap();
        }
        let x = random_tensor(&mut ChaCha8Rng::seed_from_u64(1), vec![5, 4]);
        let (h, _) = layers::gru_forward("g", &store, &x, &Tensor::zeros(vec![5, 3])).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
    }

    /// Every layer kind, 100+ random trials each: analytic parameter and input
    /// gradients against central differences at ε = 1e-4.
    #[test]
    fn every_layer_kind_matches_finite_differences() {
        let kinds: Vec<(LayerSpec, Vec<usize>)> = vec![
            (LayerSpec::Dense { inputs: 4, outputs: 3 }, vec![2, 4]),
            (
                LayerSpec::Conv2d {
                    in_channels: 2,
                    out_channels: 3,
                    kernel: 4,
                    stride: 2,
                },
                vec![2, 5, 6, 2],
            ),
            (LayerSpec::LeakyRelu { slope: 0.2 }, vec![3, 4]),
            (LayerSpec::GruCell { inputs: 3, hidden: 4 }, vec![2, 3]),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for (spec, shape) in kinds {
            let net = Network::new(vec![("l".into(), spec)]);
            let mut worst: f64 = 0.0;
            for _ in 0..100 {
                let mut store = ParamStore::new();
                net.init_params(&mut store, &mut rng).unwrap();
                let mut x = random_tensor(&mut rng, shape.clone());
                if matches!(spec, LayerSpec::LeakyRelu { .. }) {
                    // Keep the stencil away from the kink.
                    x.data_mut().iter_mut().for_each(|v| {
                        if v.abs() < 1e-2 {
                            *v += 0.05
                        }
                    });
                }
                let y = net.infer(&store, &x).unwrap();
                let probe = random_tensor(&mut rng, y.shape().to_vec());
                let (_, mut cache) = net.forward(&store, &x).unwrap();
                let dx = net.backward(&mut store, &mut cache, &probe).unwrap();
                let report = check_param_grads(&mut store, 1e-4, |s| sum_loss(&net, s, &x, &probe));
                worst = worst.max(report.max_rel_error);
                let input_report = check_input_grad(&x, &dx, 1e-4, |xi| sum_loss(&net, &store, xi, &probe));
                worst = worst.max(input_report.max_rel_error);
            }
            assert!(worst < 1e-3, "{spec:?}: max relative error {worst}");
        }
    }

    #[test]
    fn chain_gradient_matches_finite_differences() {
        let net = Network::new(vec![
            ("fc1".into(), LayerSpec::Dense { inputs: 6, outputs: 8 }),
            ("act".into(), LayerSpec::LeakyRelu { slope: 0.2 }),
            ("gru".into(), LayerSpec::GruCell { inputs: 8, hidden: 5 }),
            ("fc2".into(), LayerSpec::Dense { inputs: 5, outputs: 2 }),
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut store = ParamStore::new();
        net.init_params(&mut store, &mut rng).unwrap();
        let x = random_tensor(&mut rng, vec![3, 6]);
        let probe = random_tensor(&mut rng, vec![3, 2]);
        let (_, mut cache) = net.forward(&store, &x).unwrap();
        net.backward(&mut store, &mut cache, &probe).unwrap();
        let report = check_param_grads(&mut store, 1e-4, |s| sum_loss(&net, s, &x, &probe));
        assert!(report.max_rel_error < 1e-3, "{report:?}");
        assert_eq!(report.checked, store.scalar_count());
    }
}
