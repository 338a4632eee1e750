//! Graph encoder: per-scalar embedding, dilated inception over time, a
//! learned static graph blended with each dynamic graph, and mix-hop graph
//! convolution per segment.
//!
//! Feature tensors are laid out `[B, N, time, d]` (channels last).

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::config::{Activation, ModelConfig};
use crate::nn::{Linear, Mlp2};
use crate::params::{Bound, ParamId, ParamStore};

/// One inception layer: parallel causal convolutions, fused by a projection.
#[derive(Clone, Debug)]
pub struct InceptionLayer {
    /// `(kernel size, weights over k·d inputs)` per branch.
    pub branches: Vec<(usize, Linear)>,
    pub projection: Linear,
    pub dilation: usize,
}

impl InceptionLayer {
    /// Output of branch `i` alone, `[B, N, c, d]`.
    pub fn branch(&self, g: &mut Graph, p: &Bound, x: Var, i: usize) -> Var {
        let s = g.shape(x).to_vec();
        let (b, n, c, d) = (s[0], s[1], s[2], s[3]);
        let (k, linear) = &self.branches[i];
        let flat = g.reshape(x, &[b * n, c, d]);
        let cols = g.causal_unfold(flat, *k, self.dilation);
        let y = linear.forward(g, p, cols);
        g.reshape(y, &[b, n, c, linear.outputs])
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub init: Linear,
    pub inception: Vec<InceptionLayer>,
    /// Node embeddings `ξ`, `[N, d]`.
    pub node_embed: ParamId,
    /// Static/dynamic gate logits, `[N, N]`.
    pub w1: ParamId,
    /// Graph generator over `ξ_i ∥ ξ_j`.
    pub f_a: Mlp2,
    /// Channel mixing over the concatenated hops `[(K+1)·d -> d]`.
    pub mixhop: Linear,
    d: usize,
    w: usize,
    m: usize,
    mixhop_depth: usize,
    mixhop_beta: f64,
    activation: Activation,
}

/// Everything the heads consume from one encoder pass.
#[derive(Clone, Debug)]
pub struct Encoded {
    /// Initial representation `C`, `[B, N, c, d]`.
    pub c: Var,
    /// Inception output `Z`, `[B, N, c, d]`.
    pub z: Var,
    /// `Z` cut into `m` segments of `[B, N, w, d]`.
    pub z_segments: Vec<Var>,
    /// Static graph `Q` when in use.
    pub q: Option<Var>,
    /// Hidden states `H^s`, `[B, N, w, d]`, for the segments that were requested.
    pub hidden: Vec<Var>,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, cfg: &ModelConfig) -> Self {
        let d = cfg.d;
        let init = Linear::new(store, rng, "encoder.init_conv", 1, d);
        let inception = (0..cfg.dil_layers)
            .map(|l| {
                let branches = cfg
                    .dil_kernels
                    .iter()
                    .map(|&k| (k, Linear::new(store, rng, &format!("encoder.inception{l}.k{k}"), k * d, d)))
                    .collect();
                let projection = Linear::new(store, rng, &format!("encoder.inception{l}.proj"), cfg.dil_kernels.len() * d, d);
                InceptionLayer {
                    branches,
                    projection,
                    dilation: 1 << l,
                }
            })
            .collect();
        let node_embed = store.uniform(rng, "encoder.node_embed", &[cfg.n_series, d], 1.0);
        // zero is symmetric and starts the gate at an even blend
        let w1 = store.constant("encoder.w1", &[cfg.n_series, cfg.n_series], 0.0);
        let f_a = Mlp2::new(store, rng, "encoder.f_a", 2 * d, d, 1);
        let mixhop = Linear::new(store, rng, "encoder.mixhop", (cfg.mixhop_depth + 1) * d, d);
        Self {
            init,
            inception,
            node_embed,
            w1,
            f_a,
            mixhop,
            d,
            w: cfg.w,
            m: cfg.m,
            mixhop_depth: cfg.mixhop_depth,
            mixhop_beta: cfg.mixhop_beta,
            activation: cfg.dil_activation,
        }
    }

    /// `[B, N, c] -> [B, N, c, d]`, the same affine map applied to every scalar.
    pub fn init_rep(&self, g: &mut Graph, p: &Bound, window: Var) -> Var {
        let s = g.shape(window).to_vec();
        let x = g.reshape(window, &[s[0], s[1], s[2], 1]);
        self.init.forward(g, p, x)
    }

    /// Stacked inception layers over time with causal (left) zero padding.
    pub fn dilated_inception(&self, g: &mut Graph, p: &Bound, c_rep: Var) -> Var {
        let mut x = c_rep;
        for layer in &self.inception {
            let outs: Vec<Var> = (0..layer.branches.len()).map(|i| layer.branch(g, p, x, i)).collect();
            let cat = g.concat(&outs, 3);
            let y = layer.projection.forward(g, p, cat);
            x = match self.activation {
                Activation::Tanh => g.tanh(y),
                Activation::None => y,
            };
        }
        x
    }

    /// `Q = sigmoid((R + Rᵀ)/2)` with `R_ij = f_a(ξ_i ∥ ξ_j)`.
    pub fn static_graph(&self, g: &mut Graph, p: &Bound) -> Var {
        let xi = p.var(self.node_embed);
        let n = g.shape(xi)[0];
        let w = p.var(self.f_a.hidden.weight);
        let w_left = g.slice(w, 0, 0, self.d);
        let w_right = g.slice(w, 0, self.d, self.d);
        let u = g.matmul(xi, w_left);
        let v = g.matmul(xi, w_right);
        let pairs = g.outer_add(u, v);
        let pairs = g.add_trailing(pairs, p.var(self.f_a.hidden.bias));
        let h = g.tanh(pairs);
        let raw = self.f_a.output.forward(g, p, h);
        let raw = g.reshape(raw, &[n, n]);
        let raw_t = g.permute(raw, &[1, 0]);
        let sum = g.add(raw, raw_t);
        let sym = g.affine(sum, 0.5, 0.0);
        g.sigmoid(sym)
    }

    /// `Ã = σ(W1) ⊙ Q + (1 - σ(W1)) ⊙ A` for a batch of dynamic graphs `[B, N, N]`.
    pub fn blend_adjacency(&self, g: &mut Graph, p: &Bound, q: Var, a: Var) -> Var {
        let gate = g.sigmoid(p.var(self.w1));
        let static_part = g.mul(gate, q);
        let keep = g.affine(gate, -1.0, 1.0);
        let dynamic_part = g.mul_trailing(a, keep);
        g.add_trailing(dynamic_part, static_part)
    }

    /// Mix-hop propagation on `D⁻¹(Ã + I)`:
    /// `H0 = Z`, `Hk = β·Z + (1-β)·Â·H(k-1)`, output `[H0 … HK]·W + b`.
    pub fn mixhop_conv(&self, g: &mut Graph, p: &Bound, z_seg: Var, adj: Var) -> Var {
        let s = g.shape(z_seg).to_vec();
        let (b, n, w, d) = (s[0], s[1], s[2], s[3]);
        let norm = g.row_normalize_self_loops(adj);
        let z_flat = g.reshape(z_seg, &[b, n, w * d]);
        let retained = g.affine(z_flat, self.mixhop_beta, 0.0);
        let mut hops = vec![z_seg];
        let mut h = z_flat;
        for _ in 0..self.mixhop_depth {
            let spread = g.bmm(norm, h);
            let spread = g.affine(spread, 1.0 - self.mixhop_beta, 0.0);
            h = g.add(retained, spread);
            hops.push(g.reshape(h, &[b, n, w, d]));
        }
        let cat = g.concat(&hops, 3);
        self.mixhop.forward(g, p, cat)
    }

    /// Full encoder pass. `graphs` holds the `m` dynamic graphs `[B, N, N]`;
    /// hidden states are computed for segments `0..hidden_count`.
    pub fn encode(
        &self,
        g: &mut Graph,
        p: &Bound,
        window: Var,
        graphs: &[Var],
        use_static: bool,
        hidden_count: usize,
    ) -> Encoded {
        assert_eq!(graphs.len(), self.m, "one dynamic graph per segment");
        let c = self.init_rep(g, p, window);
        let z = self.dilated_inception(g, p, c);
        let z_segments: Vec<Var> = (0..self.m).map(|s| g.slice(z, 2, s * self.w, self.w)).collect();
        let q = (use_static && hidden_count > 0).then(|| self.static_graph(g, p));
        let hidden = (0..hidden_count)
            .map(|s| {
                let adj = match q {
                    Some(q) => self.blend_adjacency(g, p, q, graphs[s]),
                    None => graphs[s],
                };
                self.mixhop_conv(g, p, z_segments[s], adj)
            })
            .collect();
        Encoded {
            c,
            z,
            z_segments,
            q,
            hidden,
        }
    }
}
