//! Dense feed-forward networks with a softmax (or any) head.
//!
//! The one capability that sets this apart from a generic MLP is
//! [`Mlp::input_gradient`]: the derivative of the loss with respect to the
//! *input* vector. That is what lets a generator be trained through a frozen
//! classifier, see [`crate::gansynth`].
//!
//! Everything is `f64`. Weight matrices are stored row-major with shape
//! `out_dim x in_dim`.

mod blob;
mod train;

pub use blob::{deserialize, serialize, serialize_with_header, BlobError, ModelBlob, BLOB_VERSION};
pub use train::{mean_loss, train, Optimizer, OptimizerState, TrainConfig, TrainOutcome};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prob::ProbVector;

/// Probabilities are clamped from below at this value inside the loss.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("input has {got} features, network expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("layer {index} expects {expected} inputs but the previous layer emits {got}")]
    BrokenChain {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("softmax may only be used on the last layer (found on layer {0})")]
    MisplacedSoftmax(usize),
    #[error("network has no layers")]
    Empty,
    #[error("prediction has {pred} entries but target has {target}")]
    LengthMismatch { pred: usize, target: usize },
    #[error("target entry {0} is outside [0, 1]")]
    TargetOutOfRange(f64),
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("cannot train on an empty dataset")]
    EmptyDataset,
    #[error("label {label} is not a valid class index (network has {classes} outputs)")]
    BadLabel { label: usize, classes: usize },
    #[error("invalid training configuration: {0}")]
    BadConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Softmax,
    Linear,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Softmax => "softmax",
            Activation::Linear => "linear",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            "softmax" => Some(Activation::Softmax),
            "linear" => Some(Activation::Linear),
            _ => None,
        }
    }

    fn apply(self, z: &[f64]) -> Vec<f64> {
        match self {
            Activation::Relu => z.iter().map(|&v| v.max(0.0)).collect(),
            Activation::Tanh => z.iter().map(|&v| v.tanh()).collect(),
            Activation::Linear => z.to_vec(),
            Activation::Softmax => softmax(z),
        }
    }

    /// Pulls `d_out` (gradient w.r.t. the activation output) back to the
    /// pre-activation.
    fn backprop(self, z: &[f64], out: &[f64], d_out: &[f64]) -> Vec<f64> {
        match self {
            Activation::Relu => z
                .iter()
                .zip(d_out)
                .map(|(&zi, &g)| if zi > 0.0 { g } else { 0.0 })
                .collect(),
            Activation::Tanh => out
                .iter()
                .zip(d_out)
                .map(|(&y, &g)| g * (1.0 - y * y))
                .collect(),
            Activation::Linear => d_out.to_vec(),
            Activation::Softmax => {
                // Jacobian-vector product: dz_j = p_j (g_j - <g, p>)
                let dot: f64 = out.iter().zip(d_out).map(|(p, g)| p * g).sum();
                out.iter().zip(d_out).map(|(&p, &g)| p * (g - dot)).collect()
            }
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major, `out_dim x in_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        DenseLayer {
            in_dim,
            out_dim,
            weights,
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        DenseLayer {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    #[inline]
    pub fn weight(&self, out: usize, inp: usize) -> f64 {
        self.weights[out * self.in_dim + inp]
    }

    fn pre_activation(&self, input: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }
}

/// Gradients of a scalar loss with respect to every parameter of a network,
/// laid out exactly like the network's own parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        ParamGrads {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.weights
            .iter_mut()
            .chain(self.bias.iter_mut())
            .flat_map(|v| v.iter_mut())
            .for_each(|x| *x *= s);
    }
}

/// Intermediate values of one forward pass, kept for backprop.
#[derive(Clone, Debug)]
pub struct Trace {
    /// `inputs[i]` is the input to layer `i`.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

impl Mlp {
    /// Assembles a network from explicit layers, checking that dimensions
    /// chain and that softmax only appears at the head.
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self, NetError> {
        if layers.is_empty() {
            return Err(NetError::Empty);
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(NetError::BrokenChain {
                    index: i + 1,
                    expected: pair[1].in_dim,
                    got: pair[0].out_dim,
                });
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.activation == Activation::Softmax && i + 1 != layers.len() {
                return Err(NetError::MisplacedSoftmax(i));
            }
        }
        Ok(Mlp { layers })
    }

    /// Glorot-initialised network. `sizes` lists every width including input
    /// and output; hidden layers use `hidden`, the last layer uses `head`.
    pub fn random<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        head: Activation,
        rng: &mut R,
    ) -> Result<Self, NetError> {
        if sizes.len() < 2 {
            return Err(NetError::Empty);
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { head } else { hidden };
                DenseLayer::glorot(sizes[i], sizes[i + 1], act, rng)
            })
            .collect();
        Mlp::from_layers(layers)
    }

    /// The default classifier topology: one relu hidden layer of twice the
    /// feature count feeding a softmax head.
    pub fn default_classifier<R: Rng + ?Sized>(
        features: usize,
        classes: usize,
        rng: &mut R,
    ) -> Result<Self, NetError> {
        Mlp::random(
            &[features, 2 * features, classes],
            Activation::Relu,
            Activation::Softmax,
            rng,
        )
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn head(&self) -> Activation {
        self.layers[self.layers.len() - 1].activation
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    fn check_input(&self, input: &[f64]) -> Result<(), NetError> {
        if input.len() != self.input_dim() {
            return Err(NetError::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }

    /// Raw output vector. For a softmax head this is a probability
    /// distribution; see [`Mlp::predict_proba`] for the checked form.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NetError> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        for layer in &self.layers {
            x = layer.activation.apply(&layer.pre_activation(&x));
        }
        Ok(x)
    }

    /// Forward pass through a softmax-headed classifier.
    pub fn predict_proba(&self, input: &[f64]) -> Result<ProbVector, NetError> {
        let out = self.forward(input)?;
        Ok(ProbVector::from_softmax(out))
    }

    /// Index of the most probable class (lowest index on ties).
    pub fn predict_class(&self, input: &[f64]) -> Result<usize, NetError> {
        Ok(crate::prob::argmax(&self.forward(input)?))
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace, NetError> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for layer in &self.layers {
            let z = layer.pre_activation(&x);
            let y = layer.activation.apply(&z);
            inputs.push(x);
            pre.push(z);
            x = y;
        }
        Ok(Trace {
            inputs,
            pre,
            output: x,
        })
    }

    /// Backpropagates `d_out` (gradient of some scalar w.r.t. the network
    /// output) through a recorded trace. Returns the parameter gradients
    /// and the gradient w.r.t. the network input. The network itself is not
    /// touched.
    pub fn backward(&self, trace: &Trace, d_out: &[f64]) -> (ParamGrads, Vec<f64>) {
        let mut grads = ParamGrads::zeros_like(self);
        let d_input = self.backward_impl(trace, d_out, Some(&mut grads));
        (grads, d_input)
    }

    /// Like [`Mlp::backward`] but only computes the input gradient.
    pub fn backward_input(&self, trace: &Trace, d_out: &[f64]) -> Vec<f64> {
        self.backward_impl(trace, d_out, None)
    }

    fn backward_impl(
        &self,
        trace: &Trace,
        d_out: &[f64],
        mut grads: Option<&mut ParamGrads>,
    ) -> Vec<f64> {
        let mut delta = d_out.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let out = if i + 1 == self.layers.len() {
                &trace.output
            } else {
                &trace.inputs[i + 1]
            };
            let dz = layer.activation.backprop(&trace.pre[i], out, &delta);
            let x = &trace.inputs[i];
            if let Some(g) = grads.as_deref_mut() {
                let gw = &mut g.weights[i];
                for (o, &d) in dz.iter().enumerate() {
                    let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                    row.iter_mut().zip(x).for_each(|(w, &xi)| *w += d * xi);
                }
                g.bias[i].iter_mut().zip(&dz).for_each(|(b, &d)| *b += d);
            }
            let mut dx = vec![0.0; layer.in_dim];
            for (o, &d) in dz.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                dx.iter_mut().zip(row).for_each(|(g, &w)| *g += d * w);
            }
            delta = dx;
        }
        delta
    }

    /// Gradient of `loss(forward(input), target)` with respect to `input`.
    pub fn input_gradient(&self, input: &[f64], target: &[f64]) -> Result<Vec<f64>, NetError> {
        let trace = self.forward_trace(input)?;
        let d_out = loss_grad(trace.output(), target)?;
        Ok(self.backward_input(&trace, &d_out))
    }

    /// Loss and parameter gradients for one (input, target) pair.
    pub fn param_gradient(
        &self,
        input: &[f64],
        target: &[f64],
    ) -> Result<(f64, ParamGrads), NetError> {
        let trace = self.forward_trace(input)?;
        let l = loss(trace.output(), target)?;
        let d_out = loss_grad(trace.output(), target)?;
        let (grads, _) = self.backward(&trace, &d_out);
        Ok((l, grads))
    }

    /// Gradient-descent style update: `param -= step * grad`.
    pub fn apply_update(&mut self, grads: &ParamGrads, step: f64) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer
                .weights
                .iter_mut()
                .zip(&grads.weights[i])
                .for_each(|(w, g)| *w -= step * g);
            layer
                .bias
                .iter_mut()
                .zip(&grads.bias[i])
                .for_each(|(b, g)| *b -= step * g);
        }
    }

    /// All parameters flattened layer by layer (weights then bias).
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }
}

fn check_loss_args(pred: &[f64], target: &[f64]) -> Result<(), NetError> {
    if pred.len() != target.len() {
        return Err(NetError::LengthMismatch {
            pred: pred.len(),
            target: target.len(),
        });
    }
    if let Some(&t) = target.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(NetError::TargetOutOfRange(t));
    }
    Ok(())
}

/// Cross-entropy `-sum t_i ln max(p_i, 1e-12)`.
///
/// The target need not be normalised: the generator trainer uses a soft
/// one-hot vector with 0.99 in the class slot.
pub fn loss(pred: &[f64], target: &[f64]) -> Result<f64, NetError> {
    check_loss_args(pred, target)?;
    Ok(pred
        .iter()
        .zip(target)
        .filter(|(_, &t)| t != 0.0)
        .map(|(&p, &t)| -t * p.max(PROB_CLAMP).ln())
        .sum())
}

/// d loss / d pred. Entries below the clamp contribute nothing.
pub fn loss_grad(pred: &[f64], target: &[f64]) -> Result<Vec<f64>, NetError> {
    check_loss_args(pred, target)?;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| if p > PROB_CLAMP { -t / p } else { 0.0 })
        .collect())
}
