//! Dense tanh networks with exact reverse-mode gradients.
//!
//! Networks are small (two hidden layers of 128 units by default) and run on
//! the CPU in `f64`. A forward pass can record a [`GradientTape`] that
//! [`Mlp::backward`] consumes to produce parameter gradients of a scalar loss.

mod adam;
mod checkpoint;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::MlpCheckpoint;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("gradient tape was recorded against an older version of the network")]
    StaleTape,
    #[error("non-finite gradient; update rejected")]
    NonFiniteGradient,
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
}

/// Output nonlinearity applied to the last layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Head {
    Linear,
    /// Independent softmax over `branches` equal-width groups of logits.
    Softmax {
        branches: usize,
    },
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `(fan_in, fan_out)`; a batch row `x` maps to `x · weight + bias`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    layers: Vec<Dense>,
    head: Head,
    version: u64,
}

/// Forward intermediates needed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct GradientTape {
    version: u64,
    /// Input to every layer: the batch itself, then each hidden activation.
    inputs: Vec<Array2<f64>>,
    pub logits: Array2<f64>,
    pub output: Array2<f64>,
}

/// Per-layer `(d weight, d bias)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self { layers: net.layers.iter().map(|l| (Array2::zeros(l.weight.raw_dim()), Array1::zeros(l.bias.len()))).collect() }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            *w += ow;
            *b += ob;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (w, b) in &mut self.layers {
            *w *= s;
            *b *= s;
        }
    }

    pub fn norm(&self) -> f64 {
        self.layers.iter().map(|(w, b)| w.iter().chain(b.iter()).map(|g| g * g).sum::<f64>()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|(w, b)| w.iter().chain(b.iter()).all(|g| g.is_finite()))
    }

    /// Scales the whole gradient down so its L2 norm is at most `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let n = self.norm();
        if n > max_norm {
            self.scale(max_norm / n);
        }
        n
    }

    /// Flattened in the same order as [`Mlp::params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

impl Mlp {
    /// Zero-initialised network.
    pub fn zeros(widths: &[usize], head: Head) -> Self {
        assert!(widths.len() >= 2, "need at least an input and an output width");
        if let Head::Softmax { branches } = head {
            assert!(branches > 0 && widths[widths.len() - 1].is_multiple_of(branches), "softmax branches must divide output width");
        }
        let layers = widths.windows(2).map(|w| Dense { weight: Array2::zeros((w[0], w[1])), bias: Array1::zeros(w[1]) }).collect();
        Self { widths: widths.to_vec(), layers, head, version: 0 }
    }

    /// Orthogonal initialisation with gain `hidden_gain` on hidden layers and
    /// `output_gain` on the last layer; biases start at zero.
    pub fn new(widths: &[usize], head: Head, hidden_gain: f64, output_gain: f64, seed: u64) -> Self {
        let mut net = Self::zeros(widths, head);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = net.layers.len();
        for (i, layer) in net.layers.iter_mut().enumerate() {
            let gain = if i + 1 == n { output_gain } else { hidden_gain };
            layer.weight = orthogonal(layer.weight.nrows(), layer.weight.ncols(), gain, &mut rng);
        }
        net
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        self.widths[self.widths.len() - 1]
    }

    /// Incremented by every parameter update; tapes from older versions are rejected.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<(), NnError> {
        if flat.len() != self.param_count() {
            return Err(NnError::Shape { expected: self.param_count(), got: flat.len() });
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        self.version += 1;
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.iter().chain(l.bias.iter()).all(|p| p.is_finite()))
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Dense] {
        self.version += 1;
        &mut self.layers
    }

    fn check_input(&self, cols: usize) -> Result<(), NnError> {
        if cols != self.input_dim() {
            return Err(NnError::Shape { expected: self.input_dim(), got: cols });
        }
        Ok(())
    }

    /// Output for a single input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_input(input.len())?;
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    /// Row-wise outputs for a `(batch, input_dim)` matrix.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, NnError> {
        self.check_input(x.ncols())?;
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = h.dot(&l.weight) + &l.bias;
            if i < last {
                h.mapv_inplace(f64::tanh);
            }
        }
        Ok(self.apply_head(h))
    }

    /// Forward pass that keeps what the backward pass needs.
    pub fn forward_tape(&self, x: ArrayView2<'_, f64>) -> Result<GradientTape, NnError> {
        self.check_input(x.ncols())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let z = h.dot(&l.weight) + &l.bias;
            inputs.push(h);
            h = if i < last { z.mapv(f64::tanh) } else { z };
        }
        let output = self.apply_head(h.clone());
        Ok(GradientTape { version: self.version, inputs, logits: h, output })
    }

    fn apply_head(&self, mut z: Array2<f64>) -> Array2<f64> {
        match self.head {
            Head::Linear => z,
            Head::Sigmoid => {
                z.mapv_inplace(sigmoid);
                z
            }
            Head::Softmax { branches } => {
                let width = z.ncols() / branches;
                for mut row in z.rows_mut() {
                    for b in 0..branches {
                        let seg = &mut row.as_slice_mut().expect("contiguous row")[b * width..(b + 1) * width];
                        softmax_in_place(seg);
                    }
                }
                z
            }
        }
    }

    /// Gradients of a scalar loss given `d loss / d output` for every batch row.
    pub fn backward(&self, tape: &GradientTape, output_grad: &Array2<f64>) -> Result<Gradients, NnError> {
        let y = &tape.output;
        let logit_grad = match self.head {
            Head::Linear => output_grad.clone(),
            Head::Sigmoid => output_grad * &y.mapv(|v| v * (1.0 - v)),
            Head::Softmax { branches } => {
                let width = y.ncols() / branches;
                let mut g = Array2::zeros(y.raw_dim());
                for ((mut grow, yrow), orow) in g.rows_mut().into_iter().zip(y.rows()).zip(output_grad.rows()) {
                    for b in 0..branches {
                        let r = b * width..(b + 1) * width;
                        let dot: f64 = (r.clone()).map(|k| orow[k] * yrow[k]).sum();
                        for k in r {
                            grow[k] = yrow[k] * (orow[k] - dot);
                        }
                    }
                }
                g
            }
        };
        self.backward_logits(tape, &logit_grad)
    }

    /// Gradients given `d loss / d logits`, i.e. before the output head.
    pub fn backward_logits(&self, tape: &GradientTape, logit_grad: &Array2<f64>) -> Result<Gradients, NnError> {
        if tape.version != self.version {
            return Err(NnError::StaleTape);
        }
        if logit_grad.dim() != tape.logits.dim() {
            return Err(NnError::Shape { expected: tape.logits.ncols(), got: logit_grad.ncols() });
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = logit_grad.clone();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let a = &tape.inputs[i];
            let dw = a.t().dot(&delta);
            let db = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut next = delta.dot(&l.weight.t());
                next.zip_mut_with(a, |d, &h| *d *= 1.0 - h * h);
                delta = next;
            }
            grads.push((dw, db));
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Log-softmax of a slice, computed stably.
pub fn log_softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    v.iter().map(|x| x - lse).collect()
}

/// `rows x cols` matrix with orthonormal rows or columns (whichever is
/// shorter), scaled by `gain`. Modified Gram-Schmidt on Gaussian vectors.
fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let (long, short) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(short);
    while basis.len() < short {
        let mut v: Vec<f64> = (0..long).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }
    let mut m = Array2::zeros((rows, cols));
    for (j, b) in basis.iter().enumerate() {
        for (i, x) in b.iter().enumerate() {
            if rows >= cols {
                m[[i, j]] = gain * x;
            } else {
                m[[j, i]] = gain * x;
            }
        }
    }
    m
}
