//! A minimal feedforward engine: linear, 1-D batch normalization, ReLU and
//! sigmoid layers with exact reverse-mode gradients.
//!
//! Networks are strictly moded. In [`Mode::Train`] batch normalization uses
//! the statistics of the current batch (biased variance) and updates its
//! running estimates; in [`Mode::Eval`] it uses the running estimates, which
//! makes the output of a row independent of the rest of the batch.

mod adam;

use std::io::{Read, Write};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use adam::Adam;

use crate::binio;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CNN1";

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `out × in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((fan_out, fan_in), || rng.gen_range(-limit..limit));
        Linear {
            weight,
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(dim: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
            running_mean: Array1::zeros(dim),
            running_var: Array1::ones(dim),
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Linear(Linear),
    BatchNorm(BatchNorm),
    Relu,
    Sigmoid,
}

impl Layer {
    fn tag(&self) -> u8 {
        match self {
            Layer::Linear(_) => 0,
            Layer::BatchNorm(_) => 1,
            Layer::Relu => 2,
            Layer::Sigmoid => 3,
        }
    }

    fn dims(&self) -> Option<(usize, usize)> {
        match self {
            Layer::Linear(l) => Some((l.in_dim(), l.out_dim())),
            Layer::BatchNorm(b) => Some((b.dim(), b.dim())),
            Layer::Relu | Layer::Sigmoid => None,
        }
    }
}

/// Per-layer parameter gradients, in the same order as
/// [`Network::params`].
#[derive(Debug, Clone, PartialEq)]
pub enum LayerGrad {
    Linear { weight: Array2<f64>, bias: Array1<f64> },
    BatchNorm { gamma: Array1<f64>, beta: Array1<f64> },
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
    /// dLoss/dInput for the batch that produced the cache.
    pub input: Array2<f64>,
}

impl Gradients {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for g in &self.layers {
            match g {
                LayerGrad::Linear { weight, bias } => {
                    out.push(weight.as_slice().expect("standard layout"));
                    out.push(bias.as_slice().expect("standard layout"));
                }
                LayerGrad::BatchNorm { gamma, beta } => {
                    out.push(gamma.as_slice().expect("standard layout"));
                    out.push(beta.as_slice().expect("standard layout"));
                }
                LayerGrad::None => {}
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

/// Activations recorded by a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    mode: Mode,
    /// `acts[i]` is the input of layer `i`; the last entry is the output.
    acts: Vec<Array2<f64>>,
    bn: Vec<Option<BnCache>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("at least the input")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    mode: Mode,
    version: u64,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let mut width: Option<usize> = None;
        for (i, layer) in layers.iter().enumerate() {
            if let Some((d_in, d_out)) = layer.dims() {
                if let Some(w) = width {
                    if w != d_in {
                        return Err(Error::ShapeError(format!(
                            "layer {i} expects {d_in} inputs but receives {w}"
                        )));
                    }
                }
                width = Some(d_out);
            }
        }
        if width.is_none() {
            return Err(Error::ShapeError("network has no parametrized layer".into()));
        }
        Ok(Network {
            layers,
            mode: Mode::Train,
            version: 0,
        })
    }

    /// `input → BatchNorm → [Linear → ReLU]* → Linear → Sigmoid`.
    pub fn gated_mlp(input: usize, hidden: &[usize], output: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = vec![Layer::BatchNorm(BatchNorm::new(input))];
        let mut width = input;
        for &h in hidden {
            layers.push(Layer::Linear(Linear::glorot(width, h, &mut rng)));
            layers.push(Layer::Relu);
            width = h;
        }
        layers.push(Layer::Linear(Linear::glorot(width, output, &mut rng)));
        layers.push(Layer::Sigmoid);
        Network::new(layers).expect("dimensions chain by construction")
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn input_dim(&self) -> usize {
        self.layers.iter().find_map(Layer::dims).expect("validated").0
    }

    pub fn output_dim(&self) -> usize {
        self.layers.iter().rev().find_map(Layer::dims).expect("validated").1
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Linear(l) => {
                    out.push(l.weight.as_slice().expect("standard layout"));
                    out.push(l.bias.as_slice().expect("standard layout"));
                }
                Layer::BatchNorm(b) => {
                    out.push(b.gamma.as_slice().expect("standard layout"));
                    out.push(b.beta.as_slice().expect("standard layout"));
                }
                Layer::Relu | Layer::Sigmoid => {}
            }
        }
        out
    }

    /// Mutable parameter tensors. Any caches recorded before this call
    /// become stale.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.version += 1;
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Linear(l) => {
                    out.push(l.weight.as_slice_mut().expect("standard layout"));
                    out.push(l.bias.as_slice_mut().expect("standard layout"));
                }
                Layer::BatchNorm(b) => {
                    out.push(b.gamma.as_slice_mut().expect("standard layout"));
                    out.push(b.beta.as_slice_mut().expect("standard layout"));
                }
                Layer::Relu | Layer::Sigmoid => {}
            }
        }
        out
    }

    pub fn adam_step(&mut self, grads: &Gradients, adam: &mut Adam) -> Result<()> {
        let g = grads.slices();
        let mut p = self.params_mut();
        adam.step(&mut p, &g)
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::ShapeError(format!(
                "network expects {} input features, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Eval-mode forward pass with running statistics; never mutates.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut h = x.to_owned();
        for layer in &self.layers {
            h = match layer {
                Layer::Linear(l) => h.dot(&l.weight.t()) + &l.bias,
                Layer::BatchNorm(b) => {
                    let scale = &b.gamma / &b.running_var.mapv(|v| (v + b.eps).sqrt());
                    let shift = &b.beta - &(&b.running_mean * &scale);
                    h * &scale + &shift
                }
                Layer::Relu => h.mapv_into(|v| v.max(0.0)),
                Layer::Sigmoid => h.mapv_into(sigmoid),
            };
        }
        Ok(h)
    }

    /// Forward pass in the network's current mode. Train mode needs at
    /// least two rows and updates batch-norm running statistics.
    pub fn forward(&mut self, x: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(&x)?;
        if self.mode == Mode::Eval {
            let out = self.predict(x)?;
            let cache = ForwardCache {
                version: self.version,
                mode: Mode::Eval,
                acts: vec![out.clone()],
                bn: Vec::new(),
            };
            return Ok((out, cache));
        }
        let batch = x.nrows();
        if batch < 2 && self.layers.iter().any(|l| matches!(l, Layer::BatchNorm(_))) {
            return Err(Error::BatchTooSmall(batch));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut bn = Vec::with_capacity(self.layers.len());
        acts.push(x.to_owned());
        for layer in &mut self.layers {
            let h = acts.last().expect("nonempty");
            let (next, cache) = match layer {
                Layer::Linear(l) => (h.dot(&l.weight.t()) + &l.bias, None),
                Layer::BatchNorm(b) => {
                    let n = batch as f64;
                    let mean = h.mean_axis(Axis(0)).expect("batch >= 2");
                    let centered = h - &mean;
                    let var = centered.mapv(|c| c * c).sum_axis(Axis(0)) / n;
                    let inv_std = var.mapv(|v| 1.0 / (v + b.eps).sqrt());
                    let xhat = &centered * &inv_std;
                    let y = &xhat * &b.gamma + &b.beta;
                    // running variance tracks the unbiased estimate
                    let unbiased = &var * (n / (n - 1.0));
                    b.running_mean = &b.running_mean * (1.0 - b.momentum) + &mean * b.momentum;
                    b.running_var = &b.running_var * (1.0 - b.momentum) + &unbiased * b.momentum;
                    (y, Some(BnCache { xhat, inv_std }))
                }
                Layer::Relu => (h.mapv(|v| v.max(0.0)), None),
                Layer::Sigmoid => (h.mapv(sigmoid), None),
            };
            acts.push(next);
            bn.push(cache);
        }
        let out = acts.last().expect("nonempty").clone();
        Ok((
            out,
            ForwardCache {
                version: self.version,
                mode: Mode::Train,
                acts,
                bn,
            },
        ))
    }

    /// Reverse pass for a train-mode cache produced by the current
    /// parameters. Gradients are sums over the batch rows.
    pub fn backward(&self, cache: &ForwardCache, d_out: ArrayView2<f64>) -> Result<Gradients> {
        if cache.mode != Mode::Train
            || cache.version != self.version
            || cache.acts.len() != self.layers.len() + 1
        {
            return Err(Error::CacheMismatch);
        }
        if d_out.dim() != cache.output().dim() {
            return Err(Error::ShapeError(format!(
                "upstream gradient has shape {:?}, output has {:?}",
                d_out.dim(),
                cache.output().dim()
            )));
        }
        let mut grad = d_out.to_owned();
        let mut layer_grads = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.acts[i];
            match layer {
                Layer::Linear(l) => {
                    // the product of a transposed view may come back column-major
                    let dw = grad.t().dot(input).as_standard_layout().into_owned();
                    let db = grad.sum_axis(Axis(0));
                    grad = grad.dot(&l.weight);
                    layer_grads.push(LayerGrad::Linear {
                        weight: dw,
                        bias: db,
                    });
                }
                Layer::BatchNorm(b) => {
                    let c = cache.bn[i].as_ref().ok_or(Error::CacheMismatch)?;
                    let n = grad.nrows() as f64;
                    let dgamma = (&grad * &c.xhat).sum_axis(Axis(0));
                    let dbeta = grad.sum_axis(Axis(0));
                    let dxhat = &grad * &b.gamma;
                    let sum_dxhat = dxhat.sum_axis(Axis(0));
                    let sum_dxhat_xhat = (&dxhat * &c.xhat).sum_axis(Axis(0));
                    let dx = (&dxhat * n - &sum_dxhat - &(&c.xhat * &sum_dxhat_xhat))
                        * &(&c.inv_std / n);
                    grad = dx;
                    layer_grads.push(LayerGrad::BatchNorm {
                        gamma: dgamma,
                        beta: dbeta,
                    });
                }
                Layer::Relu => {
                    grad.zip_mut_with(input, |g, &x| {
                        if x <= 0.0 {
                            *g = 0.0
                        }
                    });
                    layer_grads.push(LayerGrad::None);
                }
                Layer::Sigmoid => {
                    let y = &cache.acts[i + 1];
                    grad.zip_mut_with(y, |g, &s| *g *= s * (1.0 - s));
                    layer_grads.push(LayerGrad::None);
                }
            }
        }
        layer_grads.reverse();
        Ok(Gradients {
            layers: layer_grads,
            input: grad,
        })
    }

    /// `CNN1` checkpoint: magic, u32 layer count, then per layer a u8 kind
    /// tag (0 linear, 1 batchnorm, 2 relu, 3 sigmoid) followed by its dims
    /// and f32 parameters.
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        binio::write_magic(w, MAGIC)?;
        w.write_u32::<LE>(self.layers.len() as u32)?;
        for layer in &self.layers {
            w.write_u8(layer.tag())?;
            match layer {
                Layer::Linear(l) => {
                    w.write_u32::<LE>(l.in_dim() as u32)?;
                    w.write_u32::<LE>(l.out_dim() as u32)?;
                    binio::write_f32s(w, l.weight.iter().map(|&x| x as f32))?;
                    binio::write_f32s(w, l.bias.iter().map(|&x| x as f32))?;
                }
                Layer::BatchNorm(b) => {
                    w.write_u32::<LE>(b.dim() as u32)?;
                    w.write_f32::<LE>(b.eps as f32)?;
                    w.write_f32::<LE>(b.momentum as f32)?;
                    for v in [&b.gamma, &b.beta, &b.running_mean, &b.running_var] {
                        binio::write_f32s(w, v.iter().map(|&x| x as f32))?;
                    }
                }
                Layer::Relu | Layer::Sigmoid => {}
            }
        }
        Ok(())
    }

    /// Reads a `CNN1` checkpoint. The network comes back in eval mode.
    pub fn read_from<R: Read>(r: &mut R) -> std::io::Result<Network> {
        binio::expect_magic(r, MAGIC)?;
        let n = r.read_u32::<LE>()? as usize;
        let vec_of = |r: &mut R, n: usize| -> std::io::Result<Array1<f64>> {
            Ok(binio::read_f32s(r, n)?.into_iter().map(f64::from).collect())
        };
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let layer = match r.read_u8()? {
                0 => {
                    let d_in = r.read_u32::<LE>()? as usize;
                    let d_out = r.read_u32::<LE>()? as usize;
                    let w = vec_of(r, d_in * d_out)?;
                    let weight = w
                        .into_shape_with_order((d_out, d_in))
                        .map_err(|e| binio::invalid(e.to_string()))?;
                    Layer::Linear(Linear {
                        weight,
                        bias: vec_of(r, d_out)?,
                    })
                }
                1 => {
                    let dim = r.read_u32::<LE>()? as usize;
                    let eps = r.read_f32::<LE>()? as f64;
                    let momentum = r.read_f32::<LE>()? as f64;
                    let gamma = vec_of(r, dim)?;
                    let beta = vec_of(r, dim)?;
                    let running_mean = vec_of(r, dim)?;
                    let running_var = vec_of(r, dim)?;
                    if running_var.iter().any(|v| *v < 0.0) {
                        return Err(binio::invalid("negative running variance"));
                    }
                    Layer::BatchNorm(BatchNorm {
                        gamma,
                        beta,
                        running_mean,
                        running_var,
                        momentum,
                        eps,
                    })
                }
                2 => Layer::Relu,
                3 => Layer::Sigmoid,
                t => return Err(binio::invalid(format!("unknown layer tag {t}"))),
            };
            layers.push(layer);
        }
        let mut net = Network::new(layers).map_err(|e| binio::invalid(e.to_string()))?;
        net.mode = Mode::Eval;
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::Rng;

    fn random_batch(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn identity_linear() {
        let mut net = Network::new(vec![Layer::Linear(Linear {
            weight: Array2::eye(3),
            bias: Array1::zeros(3),
        })])
        .unwrap();
        let x = array![[1.0, -2.0, 3.5], [0.0, 4.0, -1.0]];
        let (y, _) = net.forward(x.view()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn batchnorm_two_rows() {
        let mut net = Network::new(vec![Layer::BatchNorm(BatchNorm::new(1))]).unwrap();
        let (y, _) = net.forward(array![[1.0], [3.0]].view()).unwrap();
        // mean 2, biased var 1: ±1/sqrt(1 + 1e-5)
        let s = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y[[0, 0]] + s).abs() < 1e-12);
        assert!((y[[1, 0]] - s).abs() < 1e-12);
        let Layer::BatchNorm(b) = &net.layers()[0] else { unreachable!() };
        assert!((b.running_mean[0] - 0.2).abs() < 1e-12);
        // unbiased var 2: 0.9·1 + 0.1·2
        assert!((b.running_var[0] - 1.1).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut net = Network::new(vec![
            Layer::Linear(Linear {
                weight: Array2::zeros((1, 2)),
                bias: Array1::zeros(1),
            }),
            Layer::Sigmoid,
        ])
        .unwrap();
        let (y, _) = net.forward(array![[3.0, 4.0]].view()).unwrap();
        assert_eq!(y[[0, 0]], 0.5);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
    }

    #[test]
    fn shape_and_batch_errors() {
        let mut net = Network::gated_mlp(2, &[4], 1, 0);
        assert!(matches!(
            net.forward(array![[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]].view()),
            Err(Error::ShapeError(_))
        ));
        assert!(matches!(
            net.forward(array![[1.0, 2.0]].view()),
            Err(Error::BatchTooSmall(1))
        ));
        net.set_mode(Mode::Eval);
        assert!(net.forward(array![[1.0, 2.0]].view()).is_ok());
        assert!(Network::new(vec![
            Layer::Linear(Linear::glorot(2, 3, &mut ChaCha8Rng::seed_from_u64(0))),
            Layer::Linear(Linear::glorot(4, 1, &mut ChaCha8Rng::seed_from_u64(0))),
        ])
        .is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut net = Network::gated_mlp(3, &[8, 8], 2, 1);
        let x = random_batch(5, 3, 2);
        let (y, cache) = net.forward(x.view()).unwrap();
        let g = net.backward(&cache, Array2::zeros(y.dim()).view()).unwrap();
        assert!(g.slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
        assert!(g.input.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_and_eval_caches_are_rejected() {
        let mut net = Network::gated_mlp(2, &[4], 1, 3);
        let x = random_batch(4, 2, 4);
        let (y, cache) = net.forward(x.view()).unwrap();
        let grads = net.backward(&cache, y.view()).unwrap();
        net.adam_step(&grads, &mut Adam::new(1e-3)).unwrap();
        assert!(matches!(
            net.backward(&cache, y.view()),
            Err(Error::CacheMismatch)
        ));
        net.set_mode(Mode::Eval);
        let (y, cache) = net.forward(x.view()).unwrap();
        assert!(matches!(
            net.backward(&cache, y.view()),
            Err(Error::CacheMismatch)
        ));
    }

    #[test]
    fn batchnorm_output_is_standardized() {
        let mut net = Network::new(vec![Layer::BatchNorm(BatchNorm::new(4))]).unwrap();
        let x = random_batch(37, 4, 9) * 5.0 + 3.0;
        let (y, _) = net.forward(x.view()).unwrap();
        for col in y.columns() {
            let mean = col.mean().unwrap();
            let var = col.mapv(|v| (v - mean).powi(2)).mean().unwrap();
            assert!(mean.abs() < 1e-6);
            // eps shrinks the variance by var/(var+eps)
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn eval_mode_is_batch_independent() {
        let mut net = Network::gated_mlp(3, &[16, 16], 4, 5);
        for s in 0..5 {
            net.forward(random_batch(8, 3, 10 + s).view()).unwrap();
        }
        net.set_mode(Mode::Eval);
        let big = random_batch(33, 3, 99);
        let all = net.predict(big.view()).unwrap();
        for r in [0, 7, 32] {
            let single = net.predict(big.slice(ndarray::s![r..r + 1, ..])).unwrap();
            for (a, b) in single.row(0).iter().zip(all.row(r)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert_eq!(net.predict(big.view()).unwrap(), all);
    }

    #[test]
    fn duplicated_row_doubles_its_contribution() {
        // Without batch-norm the gradient is a plain sum over rows.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut net = Network::new(vec![
            Layer::Linear(Linear::glorot(3, 6, &mut rng)),
            Layer::Relu,
            Layer::Linear(Linear::glorot(6, 1, &mut rng)),
            Layer::Sigmoid,
        ])
        .unwrap();
        let x = random_batch(3, 3, 8);
        let grad_of = |net: &mut Network, x: &Array2<f64>| {
            let (y, c) = net.forward(x.view()).unwrap();
            let g = net.backward(&c, Array2::ones(y.dim()).view()).unwrap();
            g.slices().concat()
        };
        let single = grad_of(&mut net, &x.slice(ndarray::s![0..1, ..]).to_owned());
        let base = grad_of(&mut net, &x);
        let mut dup = x.clone();
        dup.push_row(x.row(0)).unwrap();
        let with_dup = grad_of(&mut net, &dup);
        for ((d, b), s) in with_dup.iter().zip(&base).zip(&single) {
            assert!((d - (b + s)).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut net = Network::gated_mlp(4, &[5], 3, 11);
        net.forward(random_batch(6, 4, 1).view()).unwrap();
        let mut buf = Vec::new();
        net.write_to(&mut buf).unwrap();
        let back = Network::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.mode(), Mode::Eval);
        assert_eq!(back.layers().len(), net.layers().len());
        for (a, b) in back.params().iter().zip(net.params()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(*x, *y as f32 as f64);
            }
        }
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(again, buf);
    }
}
