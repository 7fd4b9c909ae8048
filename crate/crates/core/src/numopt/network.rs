//! Affine layers and the two-hidden-layer sigmoid risk head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::sigmoid;
use super::{NumoptError, ParamBlock, ParamBlockMut, Parameters};

/// Width of both hidden layers of [`MlpRiskHead`].
pub const HIDDEN_WIDTH: usize = 128;

/// `y = W·x + b` with `W` stored row-major as `out_dim × in_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// The linear multi-label scorer `s = W·x + b`.
pub type LinearModel = Affine;

impl Affine {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            out_dim,
            in_dim,
            weights: vec![0.0; out_dim * in_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot<R: Rng + ?Sized>(out_dim: usize, in_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim).max(1) as f64).sqrt();
        let weights = (0..out_dim * in_dim)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self {
            out_dim,
            in_dim,
            weights,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.weights[r * self.in_dim..(r + 1) * self.in_dim]
    }

    pub fn check_input(&self, x: &[f64]) -> Result<(), NumoptError> {
        if x.len() != self.in_dim {
            return Err(NumoptError::DimensionMismatch {
                expected: self.in_dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Forward pass without shape checking.
    pub(crate) fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.out_dim)
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(x)
                    .fold(self.bias[r], |acc, (w, v)| acc + w * v)
            })
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NumoptError> {
        self.check_input(x)?;
        Ok(self.apply(x))
    }

    /// `grads.W += g·xᵀ`, `grads.b += g`.
    pub(crate) fn accumulate_param_grad(&self, x: &[f64], grad_out: &[f64], grads: &mut Affine) {
        for (r, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grads.bias[r] += g;
            let row = &mut grads.weights[r * self.in_dim..(r + 1) * self.in_dim];
            for (w, v) in row.iter_mut().zip(x) {
                *w += g * v;
            }
        }
    }

    /// `Wᵀ·g`.
    pub(crate) fn input_grad(&self, grad_out: &[f64]) -> Vec<f64> {
        let mut gx = vec![0.0; self.in_dim];
        for (r, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (acc, w) in gx.iter_mut().zip(self.row(r)) {
                *acc += g * w;
            }
        }
        gx
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

impl Parameters for Affine {
    fn zeros_like(&self) -> Self {
        Affine::zeros(self.out_dim, self.in_dim)
    }

    fn blocks(&self) -> Vec<ParamBlock<'_>> {
        vec![
            ParamBlock {
                values: &self.weights,
                regularized: true,
            },
            ParamBlock {
                values: &self.bias,
                regularized: false,
            },
        ]
    }

    fn blocks_mut(&mut self) -> Vec<ParamBlockMut<'_>> {
        vec![
            ParamBlockMut {
                values: &mut self.weights,
                regularized: true,
            },
            ParamBlockMut {
                values: &mut self.bias,
                regularized: false,
            },
        ]
    }
}

/// Feed-forward regressor: two sigmoid hidden layers of width
/// [`HIDDEN_WIDTH`] and a linear output with one unit per profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpRiskHead {
    pub layer1: Affine,
    pub layer2: Affine,
    pub output: Affine,
}

/// Intermediate activations kept for backpropagation.
#[derive(Debug, Clone)]
pub struct MlpActivations {
    pub hidden1: Vec<f64>,
    pub hidden2: Vec<f64>,
    pub output: Vec<f64>,
}

impl MlpRiskHead {
    pub fn zeros(input_dim: usize, outputs: usize) -> Self {
        Self {
            layer1: Affine::zeros(HIDDEN_WIDTH, input_dim),
            layer2: Affine::zeros(HIDDEN_WIDTH, HIDDEN_WIDTH),
            output: Affine::zeros(outputs, HIDDEN_WIDTH),
        }
    }

    pub fn init<R: Rng + ?Sized>(input_dim: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            layer1: Affine::glorot(HIDDEN_WIDTH, input_dim, rng),
            layer2: Affine::glorot(HIDDEN_WIDTH, HIDDEN_WIDTH, rng),
            output: Affine::glorot(outputs, HIDDEN_WIDTH, rng),
        }
    }

    /// Build from explicit layers, checking the fixed architecture.
    pub fn from_layers(layer1: Affine, layer2: Affine, output: Affine) -> Result<Self, NumoptError> {
        let shape_ok = layer1.out_dim == HIDDEN_WIDTH
            && layer2.in_dim == HIDDEN_WIDTH
            && layer2.out_dim == HIDDEN_WIDTH
            && output.in_dim == HIDDEN_WIDTH;
        if !shape_ok {
            return Err(NumoptError::Architecture(format!(
                "expected {}→{HIDDEN_WIDTH}→{HIDDEN_WIDTH}→{} layers, got {}→{} / {}→{} / {}→{}",
                layer1.in_dim,
                output.out_dim,
                layer1.in_dim,
                layer1.out_dim,
                layer2.in_dim,
                layer2.out_dim,
                output.in_dim,
                output.out_dim
            )));
        }
        let head = Self {
            layer1,
            layer2,
            output,
        };
        if !head.is_finite() {
            return Err(NumoptError::NonFinite("risk head parameters".into()));
        }
        Ok(head)
    }

    pub fn input_dim(&self) -> usize {
        self.layer1.in_dim
    }

    pub fn outputs(&self) -> usize {
        self.output.out_dim
    }

    pub fn is_finite(&self) -> bool {
        self.layer1.is_finite() && self.layer2.is_finite() && self.output.is_finite()
    }

    pub fn activations(&self, x: &[f64]) -> Result<MlpActivations, NumoptError> {
        self.layer1.check_input(x)?;
        let hidden1: Vec<f64> = self.layer1.apply(x).into_iter().map(sigmoid).collect();
        let hidden2: Vec<f64> = self.layer2.apply(&hidden1).into_iter().map(sigmoid).collect();
        let output = self.output.apply(&hidden2);
        Ok(MlpActivations {
            hidden1,
            hidden2,
            output,
        })
    }

    pub(crate) fn accumulate_backward(
        &self,
        x: &[f64],
        acts: &MlpActivations,
        grad_out: &[f64],
        grads: &mut MlpRiskHead,
    ) {
        self.output
            .accumulate_param_grad(&acts.hidden2, grad_out, &mut grads.output);
        let mut g2 = self.output.input_grad(grad_out);
        for (g, h) in g2.iter_mut().zip(&acts.hidden2) {
            *g *= h * (1.0 - h);
        }
        self.layer2
            .accumulate_param_grad(&acts.hidden1, &g2, &mut grads.layer2);
        let mut g1 = self.layer2.input_grad(&g2);
        for (g, h) in g1.iter_mut().zip(&acts.hidden1) {
            *g *= h * (1.0 - h);
        }
        self.layer1.accumulate_param_grad(x, &g1, &mut grads.layer1);
    }
}

/// `out = W3·σ(W2·σ(W1·x + b1) + b2) + b3`.
pub fn mlp_forward(head: &MlpRiskHead, x: &[f64]) -> Result<Vec<f64>, NumoptError> {
    head.activations(x).map(|a| a.output)
}

/// Parameter gradients of `grad_outᵀ · mlp_forward(head, x)`.
pub fn mlp_backward(head: &MlpRiskHead, x: &[f64], grad_out: &[f64]) -> Result<MlpRiskHead, NumoptError> {
    if grad_out.len() != head.outputs() {
        return Err(NumoptError::DimensionMismatch {
            expected: head.outputs(),
            actual: grad_out.len(),
        });
    }
    let acts = head.activations(x)?;
    let mut grads = head.zeros_like();
    head.accumulate_backward(x, &acts, grad_out, &mut grads);
    Ok(grads)
}

impl Parameters for MlpRiskHead {
    fn zeros_like(&self) -> Self {
        Self {
            layer1: self.layer1.zeros_like(),
            layer2: self.layer2.zeros_like(),
            output: self.output.zeros_like(),
        }
    }

    fn blocks(&self) -> Vec<ParamBlock<'_>> {
        let mut v = self.layer1.blocks();
        v.extend(self.layer2.blocks());
        v.extend(self.output.blocks());
        v
    }

    fn blocks_mut(&mut self) -> Vec<ParamBlockMut<'_>> {
        let mut v = self.layer1.blocks_mut();
        v.extend(self.layer2.blocks_mut());
        v.extend(self.output.blocks_mut());
        v
    }
}
