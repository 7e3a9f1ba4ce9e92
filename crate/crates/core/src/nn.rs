//! Dense feed-forward building blocks with ELU hidden activations.

use alloc::vec::Vec;

use rand::Rng as _;

use crate::autodiff::{elu, Tape, Var};
use crate::error::{invalid, Result};
use crate::math;
use crate::matrix::Matrix;
use crate::rng::Rng;

/// One affine layer: `x · weight + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let limit = math::sqrt(6.0 / (fan_in + fan_out) as f64);
        let mut weight = Matrix::zeros(fan_in, fan_out);
        for w in weight.as_mut_slice() {
            *w = rng.random_range(-limit..=limit);
        }
        Self {
            weight,
            bias: Matrix::zeros(1, fan_out),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }
}

/// Tape handles for one layer's parameters.
#[derive(Debug, Clone, Copy)]
pub struct BoundDense {
    pub weight: Var,
    pub bias: Var,
}

/// A stack of dense layers. Hidden layers use ELU; the output layer is
/// activated only when `activate_output` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub layers: Vec<Dense>,
    pub activate_output: bool,
}

impl FeedForward {
    /// `sizes` lists the width of every layer boundary, input first. A
    /// single entry yields the identity map.
    pub fn new(sizes: &[usize], activate_output: bool, rng: &mut Rng) -> Result<Self> {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(invalid("layer sizes must be nonempty and positive"));
        }
        let layers = sizes
            .windows(2)
            .map(|w| Dense::glorot(w[0], w[1], rng))
            .collect();
        Ok(Self {
            layers,
            activate_output,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn bind(&self, tape: &mut Tape) -> Vec<BoundDense> {
        self.layers
            .iter()
            .map(|l| BoundDense {
                weight: tape.leaf(l.weight.clone()),
                bias: tape.leaf(l.bias.clone()),
            })
            .collect()
    }

    pub fn forward(&self, tape: &mut Tape, bound: &[BoundDense], input: Var) -> Result<Var> {
        let last = bound.len().saturating_sub(1);
        let mut h = input;
        for (i, b) in bound.iter().enumerate() {
            h = tape.affine(h, b.weight, b.bias)?;
            if i < last || self.activate_output {
                h = tape.elu(h);
            }
        }
        Ok(h)
    }

    /// Gradient-free forward pass; bit-identical to [`FeedForward::forward`].
    pub fn predict(&self, input: &Matrix) -> Result<Matrix> {
        let last = self.layers.len().saturating_sub(1);
        let mut h = input.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = h.affine(&l.weight, &l.bias)?;
            if i < last || self.activate_output {
                h.as_mut_slice().iter_mut().for_each(|v| *v = elu(*v));
            }
        }
        Ok(h)
    }

    pub fn params(&self) -> impl Iterator<Item = &Matrix> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    /// Gradients in [`FeedForward::params`] order.
    pub fn collect_grads(tape: &Tape, bound: &[BoundDense], out: &mut Vec<Matrix>) {
        for b in bound {
            out.push(tape.grad(b.weight));
            out.push(tape.grad(b.bias));
        }
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        self.layers.last().map_or(input_dim, Dense::outputs)
    }
}
