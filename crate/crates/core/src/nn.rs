//! Layer building blocks shared by the encoder and both heads.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::params::{Bound, ParamId, ParamStore};

/// `y = x·W + b` over the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    /// Weights and bias drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, inputs: usize, outputs: usize) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Self {
            weight: store.uniform(rng, &format!("{name}.weight"), &[inputs, outputs], bound),
            bias: store.uniform(rng, &format!("{name}.bias"), &[outputs], bound),
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let y = g.matmul(x, p.var(self.weight));
        g.add_trailing(y, p.var(self.bias))
    }
}

/// Two fully connected layers with a tanh in between.
#[derive(Clone, Debug)]
pub struct Mlp2 {
    pub hidden: Linear,
    pub output: Linear,
}

impl Mlp2 {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, inputs: usize, hidden: usize, outputs: usize) -> Self {
        Self {
            hidden: Linear::new(store, rng, &format!("{name}.0"), inputs, hidden),
            output: Linear::new(store, rng, &format!("{name}.1"), hidden, outputs),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let h = self.hidden.forward(g, p, x);
        let h = g.tanh(h);
        self.output.forward(g, p, h)
    }
}

/// Learnable affine parameters of a normalization layer.
#[derive(Clone, Debug)]
pub struct NormAffine {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl NormAffine {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gamma: store.constant(&format!("{name}.gamma"), &[width], 1.0),
            beta: store.constant(&format!("{name}.beta"), &[width], 0.0),
        }
    }
}
