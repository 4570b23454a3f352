use rand::Rng as _;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;
use crate::rng::Rng;

/// Affine layer `x W + b` with `W: [n_in, n_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Graph handles for a bound [`Linear`].
#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Linear {
            weight: Tensor::zeros(&[n_in, n_out]),
            bias: Tensor::zeros(&[n_out]),
        }
    }

    /// `W ~ U(-1/sqrt(n_in), 1/sqrt(n_in))`, `b = 0`.
    pub fn init(n_in: usize, n_out: usize, rng: &mut Rng) -> Self {
        Linear::init_scaled(n_in, n_out, 1.0 / (n_in as f64).sqrt(), rng)
    }

    /// `W ~ U(-bound, bound)`, `b = 0`.
    pub fn init_scaled(n_in: usize, n_out: usize, bound: f64, rng: &mut Rng) -> Self {
        let mut l = Linear::zeros(n_in, n_out);
        for w in l.weight.data_mut() {
            *w = rng.random_range(-bound..=bound);
        }
        l
    }

    pub fn n_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn n_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }

    /// Registers the layer on `g`, tracked when `trainable`.
    pub fn bind<'a>(&'a self, g: &mut Graph<'a>, trainable: bool) -> LinearVars {
        if trainable {
            LinearVars {
                weight: g.param(&self.weight),
                bias: g.param(&self.bias),
            }
        } else {
            LinearVars {
                weight: g.constant(&self.weight),
                bias: g.constant(&self.bias),
            }
        }
    }
}

impl LinearVars {
    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        g.linear(x, self.weight, self.bias)
    }

    pub fn vars(&self) -> [Var; 2] {
        [self.weight, self.bias]
    }
}

/// A set of named trainable tensors with a fixed visiting order.
pub trait ParamSet {
    fn named_params(&self) -> Vec<(String, &Tensor)>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn param_names(&self) -> Vec<String> {
        self.named_params().into_iter().map(|(n, _)| n).collect()
    }

    fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }
}

pub(crate) fn push_linear<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, l: &'a Linear) {
    out.push((format!("{prefix}.weight"), &l.weight));
    out.push((format!("{prefix}.bias"), &l.bias));
}
