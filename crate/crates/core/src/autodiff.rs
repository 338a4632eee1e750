//! A small reverse-mode automatic differentiation tape over [`Tensor`]s.
//!
//! Every forward pass records onto a fresh [`Graph`]; [`Graph::backward`]
//! walks the tape in reverse and returns gradients for every node. Shape
//! errors are programming errors here and panic; public model entry points
//! validate their inputs before touching the tape.

use crate::tensor::{gemm_acc, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Bmm(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddTrailing(Var, Var),
    MulTrailing(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Slice { x: Var, axis: usize, start: usize },
    MeanAxis(Var, usize),
    SumAll(Var),
    Tile(Var, usize),
    CausalSoftmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64>, batch_stats: bool, mean: Vec<f64>, var: Vec<f64> },
    L2NormRows { x: Var, norms: Vec<f64>, eps: f64 },
    CausalUnfold { x: Var, k: usize, dilation: usize },
    RowNormSelfLoops(Var),
    OuterAdd(Var, Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Reverse-mode tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node of a [`Graph`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf (input or parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// `x[.., K] · w[K, P] -> [.., P]`
    pub fn matmul(&mut self, x: Var, w: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w);
        assert_eq!(ws.len(), 2, "matmul weight must be 2-D");
        let (k, p) = (ws[0], ws[1]);
        assert_eq!(*xs.last().unwrap(), k, "matmul inner dim mismatch {:?} x {:?}", xs, ws);
        let m = self.value(x).numel() / k.max(1);
        let mut out = vec![0.0; m * p];
        gemm_acc(m, k, p, self.value(x).data(), false, self.value(w).data(), false, &mut out, 0.0);
        let mut shape = xs;
        *shape.last_mut().unwrap() = p;
        self.push(Tensor::new(&shape, out), Op::MatMul(x, w))
    }

    /// Batched `[B,M,K] · [B,K,P] -> [B,M,P]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        assert!(sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0] && sa[2] == sb[1], "bmm shapes {:?} {:?}", sa, sb);
        let (bs, m, k, p) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; bs * m * p];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for i in 0..bs {
            gemm_acc(m, k, p, &ad[i * m * k..], false, &bd[i * k * p..], false, &mut out[i * m * p..], 0.0);
        }
        self.push(Tensor::new(&[bs, m, p], out), Op::Bmm(a, b))
    }

    fn zip_same(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "element-wise shape mismatch");
        Tensor::new(ta.shape(), ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let t = self.zip_same(a, b, |x, y| x + y);
        self.push(t, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let t = self.zip_same(a, b, |x, y| x - y);
        self.push(t, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let t = self.zip_same(a, b, |x, y| x * y);
        self.push(t, Op::Mul(a, b))
    }

    fn trailing(&self, x: Var, y: Var) -> usize {
        let (xs, ys) = (self.shape(x), self.shape(y));
        assert!(
            ys.len() <= xs.len() && xs[xs.len() - ys.len()..] == *ys,
            "trailing broadcast {:?} over {:?}",
            ys,
            xs
        );
        self.value(y).numel()
    }

    /// `x + y` with `y` broadcast over the leading axes of `x`.
    pub fn add_trailing(&mut self, x: Var, y: Var) -> Var {
        let n = self.trailing(x, y);
        let yd = self.value(y).data().to_vec();
        let mut t = self.value(x).clone();
        for chunk in t.data_mut().chunks_mut(n) {
            for (a, b) in chunk.iter_mut().zip(&yd) {
                *a += b;
            }
        }
        self.push(t, Op::AddTrailing(x, y))
    }

    /// `x * y` with `y` broadcast over the leading axes of `x`.
    pub fn mul_trailing(&mut self, x: Var, y: Var) -> Var {
        let n = self.trailing(x, y);
        let yd = self.value(y).data().to_vec();
        let mut t = self.value(x).clone();
        for chunk in t.data_mut().chunks_mut(n) {
            for (a, b) in chunk.iter_mut().zip(&yd) {
                *a *= b;
            }
        }
        self.push(t, Op::MulTrailing(x, y))
    }

    /// `scale * x + shift`
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let t = self.value(x).map(|v| scale * v + shift);
        self.push(t, Op::Affine(x, scale))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(sigmoid);
        self.push(t, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x).map(f64::tanh);
        self.push(t, Op::Tanh(x))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(gelu);
        self.push(t, Op::Gelu(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let t = self.value(x).clone().reshape(shape);
        self.push(t, Op::Reshape(x))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Var {
        let t = self.value(x).permute(perm);
        self.push(t, Op::Permute(x, perm.to_vec()))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Var {
        assert!(!xs.is_empty());
        let first = self.shape(xs[0]).to_vec();
        let (outer, _, inner) = outer_inner(&first, axis);
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            assert!(s.len() == first.len() && s[..axis] == first[..axis] && s[axis + 1..] == first[axis + 1..], "concat shape mismatch");
            total += s[axis];
        }
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let len = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        self.push(Tensor::new(&shape, out), Op::Concat(xs.to_vec(), axis))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        let xs = self.shape(x).to_vec();
        assert!(start + len <= xs[axis], "slice out of range");
        let (outer, full, inner) = outer_inner(&xs, axis);
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&d[base..base + len * inner]);
        }
        let mut shape = xs;
        shape[axis] = len;
        self.push(Tensor::new(&shape, out), Op::Slice { x, axis, start })
    }

    /// Mean over `axis`, removing it.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Var {
        let xs = self.shape(x).to_vec();
        let (outer, len, inner) = outer_inner(&xs, axis);
        let d = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let row = &d[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        let inv = 1.0 / len as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let mut shape = xs;
        shape.remove(axis);
        self.push(Tensor::new(&shape, out), Op::MeanAxis(x, axis))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    /// Stacks `count` copies of `x` along a new leading axis.
    pub fn tile(&mut self, x: Var, count: usize) -> Var {
        let t = self.value(x);
        let mut shape = vec![count];
        shape.extend_from_slice(t.shape());
        let mut out = Vec::with_capacity(count * t.numel());
        for _ in 0..count {
            out.extend_from_slice(t.data());
        }
        self.push(Tensor::new(&shape, out), Op::Tile(x, count))
    }

    /// Softmax over the last axis of square `[.., P, P]` blocks, restricted
    /// to the lower triangle (column `j` visible from row `i` iff `j <= i`).
    pub fn causal_softmax(&mut self, x: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let p = xs[xs.len() - 1];
        assert_eq!(xs[xs.len() - 2], p, "causal softmax needs square blocks");
        let mut out = vec![0.0; self.value(x).numel()];
        let d = self.value(x).data();
        for (r, row) in d.chunks(p).enumerate() {
            let i = r % p;
            let o = &mut out[r * p..(r + 1) * p];
            let mx = row[..=i].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..=i {
                o[j] = (row[j] - mx).exp();
                sum += o[j];
            }
            for v in &mut o[..=i] {
                *v /= sum;
            }
        }
        self.push(Tensor::new(&xs, out), Op::CausalSoftmax(x))
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xs = self.shape(x).to_vec();
        let n = *xs.last().unwrap();
        assert_eq!(self.shape(gamma), [n]);
        assert_eq!(self.shape(beta), [n]);
        let d = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = d.len() / n;
        let mut xhat = vec![0.0; d.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; d.len()];
        for r in 0..rows {
            let row = &d[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..n {
                let h = (row[j] - mean) * rs;
                xhat[r * n + j] = h;
                out[r * n + j] = g[j] * h + b[j];
            }
        }
        self.push(Tensor::new(&xs, out), Op::LayerNorm { x, gamma, beta, xhat, rstd })
    }

    /// Batch normalization over every axis except the last (channels).
    ///
    /// With `stats = None` the batch statistics are used (training mode);
    /// otherwise the supplied `(mean, var)` are used as constants.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64, stats: Option<(&[f64], &[f64])>) -> Var {
        let xs = self.shape(x).to_vec();
        let ch = *xs.last().unwrap();
        let d = self.value(x).data();
        let rows = d.len() / ch;
        let (mean, var) = match stats {
            Some((m, v)) => (m.to_vec(), v.to_vec()),
            None => {
                let mut mean = vec![0.0; ch];
                for row in d.chunks(ch) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= rows as f64);
                let mut var = vec![0.0; ch];
                for row in d.chunks(ch) {
                    for c in 0..ch {
                        var[c] += (row[c] - mean[c]) * (row[c] - mean[c]);
                    }
                }
                var.iter_mut().for_each(|v| *v /= rows as f64);
                (mean, var)
            }
        };
        let rstd: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; d.len()];
        let mut out = vec![0.0; d.len()];
        for r in 0..rows {
            for c in 0..ch {
                let h = (d[r * ch + c] - mean[c]) * rstd[c];
                xhat[r * ch + c] = h;
                out[r * ch + c] = g[c] * h + b[c];
            }
        }
        let batch_stats = stats.is_none();
        self.push(
            Tensor::new(&xs, out),
            Op::BatchNorm { x, gamma, beta, xhat, rstd, batch_stats, mean, var },
        )
    }

    /// Batch mean and biased variance recorded by a training-mode batch norm.
    pub fn batch_norm_stats(&self, v: Var) -> Option<(&[f64], &[f64])> {
        match &self.nodes[v.0].op {
            Op::BatchNorm { batch_stats: true, mean, var, .. } => Some((mean, var)),
            _ => None,
        }
    }

    /// Rows of the last axis divided by `max(‖row‖, eps)`.
    pub fn l2_normalize_rows(&mut self, x: Var, eps: f64) -> Var {
        let xs = self.shape(x).to_vec();
        let n = *xs.last().unwrap();
        let d = self.value(x).data();
        let mut norms = Vec::with_capacity(d.len() / n);
        let mut out = Vec::with_capacity(d.len());
        for row in d.chunks(n) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            norms.push(norm);
            out.extend(row.iter().map(|v| v / norm.max(eps)));
        }
        self.push(Tensor::new(&xs, out), Op::L2NormRows { x, norms, eps })
    }

    /// Causal im2col along time: `[R, T, C] -> [R, T, k*C]`, where tap `j`
    /// holds `x[r, t - (k-1-j)·dilation, :]` (zero before the start).
    pub fn causal_unfold(&mut self, x: Var, k: usize, dilation: usize) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 3, "causal_unfold expects [R, T, C]");
        let (r, t, c) = (xs[0], xs[1], xs[2]);
        let d = self.value(x).data();
        let mut out = vec![0.0; r * t * k * c];
        for ri in 0..r {
            for ti in 0..t {
                for j in 0..k {
                    let src = ti as isize - ((k - 1 - j) * dilation) as isize;
                    if src < 0 {
                        continue;
                    }
                    let s = (ri * t + src as usize) * c;
                    let o = ((ri * t + ti) * k + j) * c;
                    out[o..o + c].copy_from_slice(&d[s..s + c]);
                }
            }
        }
        self.push(Tensor::new(&[r, t, k * c], out), Op::CausalUnfold { x, k, dilation })
    }

    /// `D^-1 (X + I)` for each `[N, N]` block, `D` the row sums of `X + I`.
    pub fn row_normalize_self_loops(&mut self, x: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let n = *xs.last().unwrap();
        assert_eq!(xs[xs.len() - 2], n);
        let d = self.value(x).data();
        let mut out = vec![0.0; d.len()];
        for (r, row) in d.chunks(n).enumerate() {
            let i = r % n;
            let sum: f64 = row.iter().sum::<f64>() + 1.0;
            for j in 0..n {
                let v = row[j] + if i == j { 1.0 } else { 0.0 };
                out[r * n + j] = v / sum;
            }
        }
        self.push(Tensor::new(&xs, out), Op::RowNormSelfLoops(x))
    }

    /// `[N, D] ⊕ [M, D] -> [N, M, D]` with `out[i, j] = u[i] + v[j]`.
    pub fn outer_add(&mut self, u: Var, v: Var) -> Var {
        let (us, vs) = (self.shape(u).to_vec(), self.shape(v).to_vec());
        assert!(us.len() == 2 && vs.len() == 2 && us[1] == vs[1]);
        let (n, m, dd) = (us[0], vs[0], us[1]);
        let (ud, vd) = (self.value(u).data(), self.value(v).data());
        let mut out = Vec::with_capacity(n * m * dd);
        for i in 0..n {
            for j in 0..m {
                out.extend((0..dd).map(|k| ud[i * dd + k] + vd[j * dd + k]));
            }
        }
        self.push(Tensor::new(&[n, m, dd], out), Op::OuterAdd(u, v))
    }

    /// Gradients of the scalar node `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).numel(), 1, "backward from a non-scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(x, w) => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (k, p) = (wv.shape()[0], wv.shape()[1]);
                let m = xv.numel() / k.max(1);
                let mut dx = vec![0.0; m * k];
                gemm_acc(m, p, k, gd, false, wv.data(), true, &mut dx, 0.0);
                let mut dw = vec![0.0; k * p];
                gemm_acc(k, m, p, xv.data(), true, gd, false, &mut dw, 0.0);
                acc(grads, *x, Tensor::new(xv.shape(), dx));
                acc(grads, *w, Tensor::new(wv.shape(), dw));
            }
            Op::Bmm(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (bs, m, k, p) = (av.shape()[0], av.shape()[1], av.shape()[2], bv.shape()[2]);
                let mut da = vec![0.0; bs * m * k];
                let mut db = vec![0.0; bs * k * p];
                for i in 0..bs {
                    let gi = &gd[i * m * p..];
                    gemm_acc(m, p, k, gi, false, &bv.data()[i * k * p..], true, &mut da[i * m * k..], 0.0);
                    gemm_acc(k, m, p, &av.data()[i * m * k..], true, gi, false, &mut db[i * k * p..], 0.0);
                }
                acc(grads, *a, Tensor::new(av.shape(), da));
                acc(grads, *b, Tensor::new(bv.shape(), db));
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let da = gd.iter().zip(bv.data()).map(|(g, b)| g * b).collect();
                let db = gd.iter().zip(av.data()).map(|(g, a)| g * a).collect();
                acc(grads, *a, Tensor::new(av.shape(), da));
                acc(grads, *b, Tensor::new(bv.shape(), db));
            }
            Op::AddTrailing(x, t) => {
                let tv = self.value(*t);
                let n = tv.numel();
                let mut dt = vec![0.0; n];
                for chunk in gd.chunks(n) {
                    for (a, b) in dt.iter_mut().zip(chunk) {
                        *a += b;
                    }
                }
                acc(grads, *x, g.clone());
                acc(grads, *t, Tensor::new(tv.shape(), dt));
            }
            Op::MulTrailing(x, t) => {
                let (xv, tv) = (self.value(*x), self.value(*t));
                let n = tv.numel();
                let mut dt = vec![0.0; n];
                let mut dx = vec![0.0; xv.numel()];
                for (c, (gc, xc)) in gd.chunks(n).zip(xv.data().chunks(n)).enumerate() {
                    for j in 0..n {
                        dt[j] += gc[j] * xc[j];
                        dx[c * n + j] = gc[j] * tv.data()[j];
                    }
                }
                acc(grads, *x, Tensor::new(xv.shape(), dx));
                acc(grads, *t, Tensor::new(tv.shape(), dt));
            }
            Op::Affine(x, scale) => acc(grads, *x, g.map(|v| v * scale)),
            Op::Sigmoid(x) => {
                let d = gd.iter().zip(y.data()).map(|(g, s)| g * s * (1.0 - s)).collect();
                acc(grads, *x, Tensor::new(y.shape(), d));
            }
            Op::Tanh(x) => {
                let d = gd.iter().zip(y.data()).map(|(g, t)| g * (1.0 - t * t)).collect();
                acc(grads, *x, Tensor::new(y.shape(), d));
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let d = gd.iter().zip(xv.data()).map(|(g, v)| g * gelu_grad(*v)).collect();
                acc(grads, *x, Tensor::new(y.shape(), d));
            }
            Op::Reshape(x) => acc(grads, *x, g.clone().reshape(self.shape(*x))),
            Op::Permute(x, perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                acc(grads, *x, g.permute(&inv));
            }
            Op::Concat(xs, axis) => {
                let (outer, total, inner) = outer_inner(y.shape(), *axis);
                let mut offset = 0;
                for &v in xs {
                    let s = self.shape(v);
                    let len = s[*axis];
                    let mut d = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        d.extend_from_slice(&gd[base..base + len * inner]);
                    }
                    acc(grads, v, Tensor::new(s, d));
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let xs = self.shape(*x);
                let (outer, full, inner) = outer_inner(xs, *axis);
                let len = y.shape()[*axis];
                let mut d = vec![0.0; self.value(*x).numel()];
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    d[base..base + len * inner].copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
                }
                acc(grads, *x, Tensor::new(xs, d));
            }
            Op::MeanAxis(x, axis) => {
                let xs = self.shape(*x);
                let (outer, len, inner) = outer_inner(xs, *axis);
                let inv = 1.0 / len as f64;
                let mut d = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    for _ in 0..len {
                        d.extend(gd[o * inner..(o + 1) * inner].iter().map(|v| v * inv));
                    }
                }
                acc(grads, *x, Tensor::new(xs, d));
            }
            Op::SumAll(x) => acc(grads, *x, Tensor::full(self.shape(*x), gd[0])),
            Op::Tile(x, count) => {
                let xv = self.value(*x);
                let n = xv.numel();
                let mut d = vec![0.0; n];
                for c in 0..*count {
                    for (a, b) in d.iter_mut().zip(&gd[c * n..(c + 1) * n]) {
                        *a += b;
                    }
                }
                acc(grads, *x, Tensor::new(xv.shape(), d));
            }
            Op::CausalSoftmax(x) => {
                let p = *y.shape().last().unwrap();
                let mut d = vec![0.0; y.numel()];
                for (r, (yr, gr)) in y.data().chunks(p).zip(gd.chunks(p)).enumerate() {
                    let i = r % p;
                    let dot: f64 = (0..=i).map(|j| yr[j] * gr[j]).sum();
                    for j in 0..=i {
                        d[r * p + j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(grads, *x, Tensor::new(y.shape(), d));
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let n = *y.shape().last().unwrap();
                let gam = self.value(*gamma).data();
                let mut dx = vec![0.0; y.numel()];
                let mut dg = vec![0.0; n];
                let mut db = vec![0.0; n];
                for r in 0..rstd.len() {
                    let gr = &gd[r * n..(r + 1) * n];
                    let hr = &xhat[r * n..(r + 1) * n];
                    let mut s1 = 0.0;
                    let mut s2 = 0.0;
                    for j in 0..n {
                        let gh = gr[j] * gam[j];
                        s1 += gh;
                        s2 += gh * hr[j];
                        dg[j] += gr[j] * hr[j];
                        db[j] += gr[j];
                    }
                    for j in 0..n {
                        let gh = gr[j] * gam[j];
                        dx[r * n + j] = rstd[r] * (gh - s1 / n as f64 - hr[j] * s2 / n as f64);
                    }
                }
                acc(grads, *x, Tensor::new(y.shape(), dx));
                acc(grads, *gamma, Tensor::new(&[n], dg));
                acc(grads, *beta, Tensor::new(&[n], db));
            }
            Op::BatchNorm { x, gamma, beta, xhat, rstd, batch_stats, .. } => {
                let ch = *y.shape().last().unwrap();
                let rows = y.numel() / ch;
                let gam = self.value(*gamma).data();
                let mut dg = vec![0.0; ch];
                let mut db = vec![0.0; ch];
                for r in 0..rows {
                    for c in 0..ch {
                        dg[c] += gd[r * ch + c] * xhat[r * ch + c];
                        db[c] += gd[r * ch + c];
                    }
                }
                let mut dx = vec![0.0; y.numel()];
                let m = rows as f64;
                for r in 0..rows {
                    for c in 0..ch {
                        let i = r * ch + c;
                        dx[i] = if *batch_stats {
                            gam[c] * rstd[c] * (gd[i] - db[c] / m - xhat[i] * dg[c] / m)
                        } else {
                            gam[c] * rstd[c] * gd[i]
                        };
                    }
                }
                acc(grads, *x, Tensor::new(y.shape(), dx));
                acc(grads, *gamma, Tensor::new(&[ch], dg));
                acc(grads, *beta, Tensor::new(&[ch], db));
            }
            Op::L2NormRows { x, norms, eps } => {
                let n = *y.shape().last().unwrap();
                let xv = self.value(*x).data();
                let mut d = vec![0.0; y.numel()];
                for (r, &norm) in norms.iter().enumerate() {
                    let s = norm.max(*eps);
                    let xr = &xv[r * n..(r + 1) * n];
                    let gr = &gd[r * n..(r + 1) * n];
                    let dot: f64 = xr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        let radial = if norm > *eps { xr[j] * dot / (s * s * norm) } else { 0.0 };
                        d[r * n + j] = gr[j] / s - radial;
                    }
                }
                acc(grads, *x, Tensor::new(y.shape(), d));
            }
            Op::CausalUnfold { x, k, dilation } => {
                let xs = self.shape(*x);
                let (r, t, c) = (xs[0], xs[1], xs[2]);
                let mut d = vec![0.0; r * t * c];
                for ri in 0..r {
                    for ti in 0..t {
                        for j in 0..*k {
                            let src = ti as isize - ((*k - 1 - j) * dilation) as isize;
                            if src < 0 {
                                continue;
                            }
                            let s = (ri * t + src as usize) * c;
                            let o = ((ri * t + ti) * k + j) * c;
                            for ch in 0..c {
                                d[s + ch] += gd[o + ch];
                            }
                        }
                    }
                }
                acc(grads, *x, Tensor::new(xs, d));
            }
            Op::RowNormSelfLoops(x) => {
                let xv = self.value(*x).data();
                let n = *y.shape().last().unwrap();
                let mut d = vec![0.0; y.numel()];
                for r in 0..y.numel() / n {
                    let row_sum: f64 = xv[r * n..(r + 1) * n].iter().sum::<f64>() + 1.0;
                    let yr = &y.data()[r * n..(r + 1) * n];
                    let gr = &gd[r * n..(r + 1) * n];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        d[r * n + j] = (gr[j] - dot) / row_sum;
                    }
                }
                acc(grads, *x, Tensor::new(y.shape(), d));
            }
            Op::OuterAdd(u, v) => {
                let s = y.shape();
                let (n, m, dd) = (s[0], s[1], s[2]);
                let mut du = vec![0.0; n * dd];
                let mut dv = vec![0.0; m * dd];
                for i in 0..n {
                    for j in 0..m {
                        for k in 0..dd {
                            let gv = gd[(i * m + j) * dd + k];
                            du[i * dd + k] += gv;
                            dv[j * dd + k] += gv;
                        }
                    }
                }
                acc(grads, *u, Tensor::new(&[n, dd], du));
                acc(grads, *v, Tensor::new(&[m, dd], dv));
            }
        }
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
