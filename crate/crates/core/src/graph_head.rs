//! Graph forecasting head: pooled segment embeddings run through causal
//! pre-norm transformer blocks per node, decoded into a cosine-similarity
//! graph and blended with the most recent observed graph.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::config::ModelConfig;
use crate::nn::{Linear, Mlp2, NormAffine};
use crate::params::{Bound, ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub norm1: NormAffine,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub norm2: NormAffine,
    pub ff_in: Linear,
    pub ff_out: Linear,
}

impl TransformerBlock {
    fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, d: usize, ff: usize) -> Self {
        Self {
            norm1: NormAffine::new(store, &format!("{name}.norm1"), d),
            query: Linear::new(store, rng, &format!("{name}.attn.q"), d, d),
            key: Linear::new(store, rng, &format!("{name}.attn.k"), d, d),
            value: Linear::new(store, rng, &format!("{name}.attn.v"), d, d),
            out: Linear::new(store, rng, &format!("{name}.attn.out"), d, d),
            norm2: NormAffine::new(store, &format!("{name}.norm2"), d),
            ff_in: Linear::new(store, rng, &format!("{name}.ff.0"), d, ff),
            ff_out: Linear::new(store, rng, &format!("{name}.ff.1"), ff, d),
        }
    }

    /// `[R, S, d] -> [R, S, d]`; each row `r` is an independent sequence.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, heads: usize, eps: f64) -> Var {
        let s = g.shape(x).to_vec();
        let (r, len, d) = (s[0], s[1], s[2]);
        let dh = d / heads;
        let h = g.layer_norm(x, p.var(self.norm1.gamma), p.var(self.norm1.beta), eps);
        let split = |g: &mut Graph, v: Var, perm: &[usize]| {
            let v = g.reshape(v, &[r, len, heads, dh]);
            let v = g.permute(v, perm);
            let shape = g.shape(v).to_vec();
            g.reshape(v, &[r * heads, shape[2], shape[3]])
        };
        let q = self.query.forward(g, p, h);
        let q = split(g, q, &[0, 2, 1, 3]);
        let k = self.key.forward(g, p, h);
        let k = split(g, k, &[0, 2, 3, 1]);
        let v = self.value.forward(g, p, h);
        let v = split(g, v, &[0, 2, 1, 3]);
        let scores = g.bmm(q, k);
        let scores = g.affine(scores, 1.0 / (dh as f64).sqrt(), 0.0);
        let attn = g.causal_softmax(scores);
        let ctx = g.bmm(attn, v);
        let ctx = g.reshape(ctx, &[r, heads, len, dh]);
        let ctx = g.permute(ctx, &[0, 2, 1, 3]);
        let ctx = g.reshape(ctx, &[r, len, d]);
        let attended = self.out.forward(g, p, ctx);
        let x = g.add(x, attended);

        let h = g.layer_norm(x, p.var(self.norm2.gamma), p.var(self.norm2.beta), eps);
        let h = self.ff_in.forward(g, p, h);
        let h = g.gelu(h);
        let h = self.ff_out.forward(g, p, h);
        g.add(x, h)
    }
}

#[derive(Clone, Debug)]
pub struct GraphHead {
    /// `[m-1, d]`
    pub pos_embed: ParamId,
    pub blocks: Vec<TransformerBlock>,
    pub f_d: Mlp2,
    /// Decoded/recent gate logits, `[N, N]`.
    pub w2: ParamId,
    heads: usize,
    ln_eps: f64,
    l2_eps: f64,
}

impl GraphHead {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, cfg: &ModelConfig) -> Self {
        let d = cfg.d;
        let pos_embed = store.uniform(rng, "graph_head.pos_embed", &[cfg.m - 1, d], 1.0 / (d as f64).sqrt());
        let blocks = (0..cfg.layers)
            .map(|l| TransformerBlock::new(store, rng, &format!("graph_head.block{l}"), d, cfg.ff_mult * d))
            .collect();
        let f_d = Mlp2::new(store, rng, "graph_head.f_d", d, d, d);
        let w2 = store.constant("graph_head.w2", &[cfg.n_series, cfg.n_series], 0.0);
        Self {
            pos_embed,
            blocks,
            f_d,
            w2,
            heads: cfg.heads,
            ln_eps: cfg.ln_eps,
            l2_eps: cfg.l2_eps,
        }
    }

    /// Mean over time of each hidden state `[B, N, w, d]`, stacked to `[B, N, S, d]`.
    pub fn pool_states(g: &mut Graph, hidden: &[Var]) -> Var {
        let pooled: Vec<Var> = hidden
            .iter()
            .map(|&h| {
                let s = g.shape(h).to_vec();
                let m = g.mean_axis(h, 2);
                g.reshape(m, &[s[0], s[1], 1, s[3]])
            })
            .collect();
        g.concat(&pooled, 2)
    }

    /// Block outputs per position before pooling, `[B, N, S, d]`.
    pub fn sequence_states(&self, g: &mut Graph, p: &Bound, pooled: Var) -> Var {
        let s = g.shape(pooled).to_vec();
        let (b, n, len, d) = (s[0], s[1], s[2], s[3]);
        let x = g.add_trailing(pooled, p.var(self.pos_embed));
        let mut x = g.reshape(x, &[b * n, len, d]);
        for block in &self.blocks {
            x = block.forward(g, p, x, self.heads, self.ln_eps);
        }
        g.reshape(x, &[b, n, len, d])
    }

    /// `O`: block outputs averaged over positions, `[B, N, d]`.
    pub fn encode_sequence(&self, g: &mut Graph, p: &Bound, pooled: Var) -> Var {
        let states = self.sequence_states(g, p, pooled);
        g.mean_axis(states, 2)
    }

    /// `E = J Jᵀ` with `J` the row-normalized decoder output, `[B, N, N]`.
    pub fn decode(&self, g: &mut Graph, p: &Bound, o: Var) -> Var {
        let j = self.f_d.forward(g, p, o);
        let j = g.l2_normalize_rows(j, self.l2_eps);
        Self::outer_product(g, j)
    }

    /// `J Jᵀ` for `J` of shape `[B, N, d]`.
    pub fn outer_product(g: &mut Graph, j: Var) -> Var {
        let jt = g.permute(j, &[0, 2, 1]);
        g.bmm(j, jt)
    }

    /// `σ(W2) ⊙ E + (1 - σ(W2)) ⊙ A_recent`.
    pub fn recent_update(&self, g: &mut Graph, p: &Bound, e: Var, recent: Var) -> Var {
        let gate = g.sigmoid(p.var(self.w2));
        let keep = g.affine(gate, -1.0, 1.0);
        let decoded = g.mul_trailing(e, gate);
        let kept = g.mul_trailing(recent, keep);
        g.add(decoded, kept)
    }

    /// Decoded graph `E` from the first `m-1` hidden states.
    pub fn predict(&self, g: &mut Graph, p: &Bound, hidden: &[Var]) -> Var {
        let pooled = Self::pool_states(g, hidden);
        let o = self.encode_sequence(g, p, pooled);
        self.decode(g, p, o)
    }
}
