//! Next-step series forecast from the initial representation, the inception
//! features and the batch-normalized hidden states.
//!
//! The three `(1, c)` convolutions span the whole window, so each is a dense
//! map from the flattened `[c·d]` node features to `d` channels; their
//! outputs are summed per node before the output network.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::config::ModelConfig;
use crate::nn::{Linear, Mlp2, NormAffine};
use crate::params::{Bound, ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct TsHead {
    pub f1: Linear,
    pub f2: Linear,
    pub f3: Linear,
    pub bn: NormAffine,
    /// Buffers, not optimized.
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub f_o: Mlp2,
    bn_eps: f64,
    bn_momentum: f64,
}

/// Forecast plus the normalization node (training mode) for statistic updates.
#[derive(Clone, Copy, Debug)]
pub struct TsOutput {
    /// `[B, N]`
    pub y_hat: Var,
    pub bn: Var,
}

impl TsHead {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, cfg: &ModelConfig) -> Self {
        let (d, c) = (cfg.d, cfg.c());
        Self {
            f1: Linear::new(store, rng, "ts_head.f1", c * d, d),
            f2: Linear::new(store, rng, "ts_head.f2", c * d, d),
            f3: Linear::new(store, rng, "ts_head.f3", c * d, d),
            bn: NormAffine::new(store, "ts_head.bn", d),
            running_mean: store.add("ts_head.bn.running_mean", crate::tensor::Tensor::zeros(&[d]), false),
            running_var: store.add("ts_head.bn.running_var", crate::tensor::Tensor::full(&[d], 1.0), false),
            f_o: Mlp2::new(store, rng, "ts_head.f_o", d, d, 1),
            bn_eps: cfg.bn_eps,
            bn_momentum: cfg.bn_momentum,
        }
    }

    /// Hidden states concatenated over time and normalized per channel, `[B, N, c, d]`.
    pub fn assemble_m(&self, g: &mut Graph, p: &Bound, store: &ParamStore, hidden: &[Var], training: bool) -> Var {
        let cat = g.concat(hidden, 2);
        let stats = (!training).then(|| (store.get(self.running_mean).data(), store.get(self.running_var).data()));
        g.batch_norm(cat, p.var(self.bn.gamma), p.var(self.bn.beta), self.bn_eps, stats)
    }

    /// `ŷ_i = f_o(f1(C) + f2(Z) + f3(M))` per node.
    pub fn forecast(&self, g: &mut Graph, p: &Bound, c_rep: Var, z: Var, m: Var) -> Var {
        let s = g.shape(c_rep).to_vec();
        let (b, n) = (s[0], s[1]);
        let flat = |g: &mut Graph, v: Var| g.reshape(v, &[b, n, s[2] * s[3]]);
        let c_flat = flat(g, c_rep);
        let z_flat = flat(g, z);
        let m_flat = flat(g, m);
        let u1 = self.f1.forward(g, p, c_flat);
        let u2 = self.f2.forward(g, p, z_flat);
        let u3 = self.f3.forward(g, p, m_flat);
        let sum = g.add(u1, u2);
        let sum = g.add(sum, u3);
        let y = self.f_o.forward(g, p, sum);
        g.reshape(y, &[b, n])
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        store: &ParamStore,
        c_rep: Var,
        z: Var,
        hidden: &[Var],
        training: bool,
    ) -> TsOutput {
        let bn = self.assemble_m(g, p, store, hidden, training);
        let y_hat = self.forecast(g, p, c_rep, z, bn);
        TsOutput { y_hat, bn }
    }

    /// Folds the batch statistics of a training-mode pass into the running
    /// estimates (variance unbiased, as the stored estimate of the population).
    pub fn update_running_stats(&self, store: &mut ParamStore, g: &Graph, bn: Var) {
        let Some((mean, var)) = g.batch_norm_stats(bn) else {
            return;
        };
        let shape = g.shape(bn);
        let d = *shape.last().unwrap();
        let rows = (shape.iter().product::<usize>() / d) as f64;
        let correction = if rows > 1.0 { rows / (rows - 1.0) } else { 1.0 };
        let mom = self.bn_momentum;
        let (mean, var) = (mean.to_vec(), var.to_vec());
        for (r, m) in store.get_mut(self.running_mean).data_mut().iter_mut().zip(&mean) {
            *r = (1.0 - mom) * *r + mom * m;
        }
        for (r, v) in store.get_mut(self.running_var).data_mut().iter_mut().zip(&var) {
            *r = (1.0 - mom) * *r + mom * v * correction;
        }
    }
}
