use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sigmoid, softplus};
use crate::dataio::Fingerprint;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Fully connected layer. `weights` is row-major by input unit: the weights
/// leaving input `i` are `weights[i * n_out..(i + 1) * n_out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
        }
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.n_out..(i + 1) * self.n_out]
    }
}

/// Inverted-dropout multipliers (`0` or `1 / (1 - rate)`) for every hidden
/// layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub layers: Vec<Vec<f64>>,
}

impl DropoutMask {
    pub fn sample<R: Rng + ?Sized>(hidden_widths: &[usize], rate: f64, rng: &mut R) -> Self {
        let keep = 1.0 - rate;
        let scale = 1.0 / keep;
        Self {
            layers: hidden_widths
                .iter()
                .map(|&w| {
                    (0..w)
                        .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
                        .collect()
                })
                .collect(),
        }
    }
}

/// Parameters of a feed-forward network; also used as the gradient
/// container of the same shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Layer>,
}

#[derive(Default)]
struct Workspace {
    pre: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_in: Vec<f64>,
}

impl Network {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "a network needs input and output sizes");
        Self {
            layers: sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
        }
    }

    /// He-uniform weights `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`, zero biases.
    pub fn he_uniform<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        for layer in &mut net.layers {
            let bound = (6.0 / layer.n_in as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-bound..=bound);
            }
        }
        net
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].n_in];
        s.extend(self.layers.iter().map(|l| l.n_out));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.n_out)
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Weight and bias tensors in layer order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn fill(&mut self, value: f64) {
        for t in self.tensors_mut() {
            t.fill(value);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &Fingerprint) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Returns `(logit, probability)`. Train mode draws a fresh dropout mask
    /// from `rng` when `dropout_rate > 0`; eval mode never drops units.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &Fingerprint,
        dropout_rate: f64,
        mode: Mode,
        rng: Option<&mut R>,
    ) -> Result<(f64, f64)> {
        let mask = match mode {
            Mode::Train if dropout_rate > 0.0 => {
                let rng = rng.ok_or_else(|| {
                    Error::Contract("train-mode forward with dropout needs an RNG stream".into())
                })?;
                Some(DropoutMask::sample(&self.hidden_widths(), dropout_rate, rng))
            }
            _ => None,
        };
        let logit = self.logit(x, mask.as_ref())?;
        Ok((logit, sigmoid(logit)))
    }

    /// Output logit under an explicit (or no) dropout mask.
    pub fn logit(&self, x: &Fingerprint, mask: Option<&DropoutMask>) -> Result<f64> {
        self.check_input(x)?;
        let mut ws = Workspace::default();
        let z = self.forward_cached(x, mask, &mut ws);
        if !z.is_finite() {
            return Err(Error::Numerical(format!("non-finite logit {z}")));
        }
        Ok(z)
    }

    /// First hidden layer pre-activations, which no dropout mask affects.
    pub fn first_layer(&self, x: &Fingerprint) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let l0 = &self.layers[0];
        let mut pre = l0.bias.clone();
        for i in x.ones() {
            axpy(1.0, l0.row(i), &mut pre);
        }
        Ok(pre)
    }

    /// Completes the forward pass from precomputed first-layer
    /// pre-activations.
    pub fn logit_from_first(&self, first_pre: &[f64], mask: Option<&DropoutMask>) -> f64 {
        let mut act: Vec<f64> = first_pre.to_vec();
        for (l, layer) in self.layers.iter().enumerate().skip(1) {
            relu_mask(&mut act, mask.map(|m| m[l - 1].as_slice()));
            let mut out = layer.bias.clone();
            for (i, &a) in act.iter().enumerate() {
                if a != 0.0 {
                    axpy(a, layer.row(i), &mut out);
                }
            }
            act = out;
        }
        act[0]
    }

    fn forward_cached(&self, x: &Fingerprint, mask: Option<&DropoutMask>, ws: &mut Workspace) -> f64 {
        let n_layers = self.layers.len();
        ws.pre.resize_with(n_layers, Vec::new);
        ws.act.resize_with(n_layers - 1, Vec::new);

        let l0 = &self.layers[0];
        ws.pre[0].clear();
        ws.pre[0].extend_from_slice(&l0.bias);
        for i in x.ones() {
            axpy(1.0, l0.row(i), &mut ws.pre[0]);
        }
        for l in 1..n_layers {
            let (done, rest) = ws.pre.split_at_mut(l);
            let act = &mut ws.act[l - 1];
            act.clear();
            act.extend_from_slice(&done[l - 1]);
            relu_mask(act, mask.map(|m| m[l - 1].as_slice()));
            let layer = &self.layers[l];
            let out = &mut rest[0];
            out.clear();
            out.extend_from_slice(&layer.bias);
            for (i, &a) in act.iter().enumerate() {
                if a != 0.0 {
                    axpy(a, layer.row(i), out);
                }
            }
        }
        ws.pre[n_layers - 1][0]
    }

    /// Mean BCE over the batch plus `weight_decay / 2 * |theta|^2`, and its
    /// exact gradient accumulated into `grad` (which is overwritten).
    /// `masks`, when given, holds one dropout mask per sample.
    pub fn loss_and_grad(
        &self,
        fps: &[&Fingerprint],
        labels: &[bool],
        masks: Option<&[DropoutMask]>,
        weight_decay: f64,
        grad: &mut Network,
    ) -> Result<f64> {
        self.check_batch(fps, labels, masks)?;
        grad.fill(0.0);
        let n = fps.len() as f64;
        let mut ws = Workspace::default();
        let mut loss = 0.0;
        for (k, (&x, &y)) in fps.iter().zip(labels).enumerate() {
            let mask = masks.map(|m| &m[k]);
            let z = self.forward_cached(x, mask, &mut ws);
            let t = f64::from(u8::from(y));
            loss += softplus(z) - t * z;
            ws.delta.clear();
            ws.delta.push((sigmoid(z) - t) / n);
            self.backward(x, mask, &mut ws, grad);
        }
        loss /= n;
        if weight_decay > 0.0 {
            let mut sq = 0.0;
            for (g, p) in grad.tensors_mut().into_iter().zip(self.tensors()) {
                for (gi, &pi) in g.iter_mut().zip(p) {
                    *gi += weight_decay * pi;
                    sq += pi * pi;
                }
            }
            loss += 0.5 * weight_decay * sq;
        }
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite training loss {loss}")));
        }
        Ok(loss)
    }

    /// Loss only, with the same definition as [`Network::loss_and_grad`].
    pub fn batch_loss(
        &self,
        fps: &[&Fingerprint],
        labels: &[bool],
        masks: Option<&[DropoutMask]>,
        weight_decay: f64,
    ) -> Result<f64> {
        self.check_batch(fps, labels, masks)?;
        let mut ws = Workspace::default();
        let mut loss = 0.0;
        for (k, (&x, &y)) in fps.iter().zip(labels).enumerate() {
            let z = self.forward_cached(x, masks.map(|m| &m[k]), &mut ws);
            loss += softplus(z) - f64::from(u8::from(y)) * z;
        }
        loss /= fps.len() as f64;
        if weight_decay > 0.0 {
            let sq: f64 = self.tensors().iter().flat_map(|t| t.iter()).map(|p| p * p).sum();
            loss += 0.5 * weight_decay * sq;
        }
        Ok(loss)
    }

    fn check_batch(&self, fps: &[&Fingerprint], labels: &[bool], masks: Option<&[DropoutMask]>) -> Result<()> {
        if fps.is_empty() {
            return Err(Error::InsufficientData("empty batch".into()));
        }
        if fps.len() != labels.len() || masks.is_some_and(|m| m.len() != fps.len()) {
            return Err(Error::Dimension {
                expected: fps.len(),
                actual: labels.len(),
            });
        }
        for x in fps {
            self.check_input(x)?;
        }
        Ok(())
    }

    fn backward(&self, x: &Fingerprint, mask: Option<&DropoutMask>, ws: &mut Workspace, grad: &mut Network) {
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let g = &mut grad.layers[l];
            axpy(1.0, &ws.delta, &mut g.bias);
            if l == 0 {
                for i in x.ones() {
                    axpy(1.0, &ws.delta, &mut g.weights[i * layer.n_out..(i + 1) * layer.n_out]);
                }
                break;
            }
            let input = &ws.act[l - 1];
            ws.delta_in.clear();
            ws.delta_in.resize(layer.n_in, 0.0);
            for i in 0..layer.n_in {
                let row = layer.row(i);
                if input[i] != 0.0 {
                    axpy(input[i], &ws.delta, &mut g.weights[i * layer.n_out..(i + 1) * layer.n_out]);
                }
                ws.delta_in[i] = dot(row, &ws.delta);
            }
            let pre = &ws.pre[l - 1];
            let m = mask.map(|m| m[l - 1].as_slice());
            for i in 0..layer.n_in {
                let gate = if pre[i] > 0.0 { m.map_or(1.0, |m| m[i]) } else { 0.0 };
                ws.delta_in[i] *= gate;
            }
            std::mem::swap(&mut ws.delta, &mut ws.delta_in);
        }
    }
}

impl std::ops::Index<usize> for DropoutMask {
    type Output = Vec<f64>;

    fn index(&self, i: usize) -> &Vec<f64> {
        &self.layers[i]
    }
}

#[inline]
fn relu_mask(v: &mut [f64], mask: Option<&[f64]>) {
    match mask {
        Some(m) => {
            for (a, &k) in v.iter_mut().zip(m) {
                *a = if *a > 0.0 { *a * k } else { 0.0 };
            }
        }
        None => {
            for a in v.iter_mut() {
                if *a < 0.0 {
                    *a = 0.0;
                }
            }
        }
    }
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
