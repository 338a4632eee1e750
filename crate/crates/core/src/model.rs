//! The full detector: encoder, graph head and series head behind one
//! forward pass, with ablation routing and checkpoint I/O.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::config::ModelConfig;
use crate::dataio::{LabeledSeries, Windowing};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::graph_head::GraphHead;
use crate::graphs::SeriesGraphs;
use crate::params::{Bound, ParamStore};
use crate::tensor::Tensor;
use crate::ts_head::TsHead;

/// Dense inputs for a batch of samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `[B, N, c]`
    pub windows: Tensor,
    /// `m` tensors `[B, N, N]`, oldest segment first.
    pub graphs: Vec<Tensor>,
    /// Next-step values `[B, N]` when known.
    pub targets: Option<Tensor>,
    pub ends: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ends.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ends.is_empty()
    }
}

/// Gathers windows, per-segment graphs and targets for the given window ends.
pub fn assemble_batch(series: &LabeledSeries, graphs: &SeriesGraphs, geometry: Windowing, ends: &[usize]) -> Batch {
    let (n, c, len) = (series.n_series(), geometry.width(), series.len());
    let b = ends.len();
    let mut windows = Vec::with_capacity(b * n * c);
    let mut gs: Vec<Vec<f64>> = vec![Vec::with_capacity(b * n * n); geometry.m];
    let with_targets = ends.iter().all(|&t| t + 1 < len);
    let mut targets = Vec::with_capacity(b * n);
    for &t in ends {
        for row in &series.values {
            windows.extend_from_slice(&row[t + 1 - c..=t]);
        }
        for (s, adj) in graphs.sequence(geometry, t).into_iter().enumerate() {
            gs[s].extend_from_slice(adj.data());
        }
        if with_targets {
            targets.extend(series.values.iter().map(|r| r[t + 1]));
        }
    }
    Batch {
        windows: Tensor::new(&[b, n, c], windows),
        graphs: gs.into_iter().map(|d| Tensor::new(&[b, n, n], d)).collect(),
        targets: with_targets.then(|| Tensor::new(&[b, n], targets)),
        ends: ends.to_vec(),
    }
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// `[B, N]`, absent when the series task is ablated.
    pub y_hat: Option<Var>,
    /// `[B, N, N]`, absent when the graph task is ablated.
    pub a_hat: Option<Var>,
    /// Training-mode normalization node of the series head.
    pub bn: Option<Var>,
    /// Last observed graph `A^m`, the graph target.
    pub graph_target: Var,
}

/// Scalar loss parts of a batch (means over samples).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub ts: f64,
    pub graph: f64,
}

/// Joint forecasting loss for one sample: `(1/N)‖y − ŷ‖² + (1/N²)‖A − Â‖²`.
pub fn joint_loss(y: &[f64], y_hat: &[f64], a: &[f64], a_hat: &[f64]) -> Result<LossParts> {
    let n = y.len();
    if y_hat.len() != n || a.len() != n * n || a_hat.len() != n * n || n == 0 {
        return Err(Error::Shape(format!(
            "joint_loss: y {} / y_hat {} / A {} / A_hat {}",
            n,
            y_hat.len(),
            a.len(),
            a_hat.len()
        )));
    }
    let ts = y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64;
    let graph = a.iter().zip(a_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (n * n) as f64;
    Ok(LossParts {
        total: ts + graph,
        ts,
        graph,
    })
}

#[derive(Debug)]
pub struct DyGraphAd {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub graph_head: GraphHead,
    pub ts_head: TsHead,
    graph_head_calls: AtomicUsize,
}

impl Clone for DyGraphAd {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            store: self.store.clone(),
            encoder: self.encoder.clone(),
            graph_head: self.graph_head.clone(),
            ts_head: self.ts_head.clone(),
            graph_head_calls: AtomicUsize::new(self.graph_head_calls()),
        }
    }
}

impl DyGraphAd {
    /// Fresh parameters drawn from a ChaCha8 stream seeded with `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, &mut rng, &config);
        let graph_head = GraphHead::new(&mut store, &mut rng, &config);
        let ts_head = TsHead::new(&mut store, &mut rng, &config);
        Ok(Self {
            config,
            store,
            encoder,
            graph_head,
            ts_head,
            graph_head_calls: AtomicUsize::new(0),
        })
    }

    pub fn geometry(&self) -> Windowing {
        Windowing {
            m: self.config.m,
            w: self.config.w,
        }
    }

    /// How many forward passes have evaluated the graph head.
    pub fn graph_head_calls(&self) -> usize {
        self.graph_head_calls.load(Ordering::Relaxed)
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, batch: &Batch, training: bool) -> Forward {
        let cfg = &self.config;
        let ab = cfg.ablation;
        let m = cfg.m;
        let window = g.leaf(batch.windows.clone());
        let graphs: Vec<Var> = batch.graphs.iter().map(|t| g.leaf(t.clone())).collect();
        let hidden_count = if ab.ts_task() && ab.mixhop_in_ts() {
            m
        } else if ab.graph_head_active() {
            m - 1
        } else {
            0
        };
        let enc = self.encoder.encode(g, p, window, &graphs, ab.static_graph(), hidden_count);

        let (y_hat, bn) = if ab.ts_task() {
            let states = if ab.mixhop_in_ts() { &enc.hidden } else { &enc.z_segments };
            let out = self.ts_head.forward(g, p, &self.store, enc.c, enc.z, states, training);
            (Some(out.y_hat), training.then_some(out.bn))
        } else {
            (None, None)
        };

        let recent = graphs[m - 2];
        let a_hat = if !ab.graph_task() {
            None
        } else if ab.recent_graph_only {
            Some(recent)
        } else {
            self.graph_head_calls.fetch_add(1, Ordering::Relaxed);
            let e = self.graph_head.predict(g, p, &enc.hidden[..m - 1]);
            Some(if ab.recent_update() {
                self.graph_head.recent_update(g, p, e, recent)
            } else {
                e
            })
        };
        Forward {
            y_hat,
            a_hat,
            bn,
            graph_target: graphs[m - 1],
        }
    }

    /// Batch-mean joint loss on the tape; parts of ablated tasks are zero.
    pub fn loss(&self, g: &mut Graph, fwd: &Forward, batch: &Batch) -> (Var, LossParts) {
        let n = self.config.n_series as f64;
        let b = batch.len() as f64;
        let mut parts = LossParts {
            total: 0.0,
            ts: 0.0,
            graph: 0.0,
        };
        let mut terms = Vec::new();
        if let Some(y_hat) = fwd.y_hat {
            let y = g.leaf(batch.targets.clone().expect("training batches carry targets"));
            let diff = g.sub(y, y_hat);
            let sq = g.mul(diff, diff);
            let s = g.sum_all(sq);
            let ts = g.affine(s, 1.0 / (b * n), 0.0);
            parts.ts = g.value(ts).item();
            terms.push(ts);
        }
        if let Some(a_hat) = fwd.a_hat {
            let diff = g.sub(fwd.graph_target, a_hat);
            let sq = g.mul(diff, diff);
            let s = g.sum_all(sq);
            let gp = g.affine(s, 1.0 / (b * n * n), 0.0);
            parts.graph = g.value(gp).item();
            terms.push(gp);
        }
        let total = match terms[..] {
            [one] => one,
            [a, b] => g.add(a, b),
            _ => unreachable!("at least one task is active"),
        };
        parts.total = g.value(total).item();
        (total, parts)
    }

    /// Eval-mode predictions without gradient bookkeeping beyond the tape.
    pub fn predict(&self, batch: &Batch) -> Prediction {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let fwd = self.forward(&mut g, &p, batch, false);
        Prediction {
            y_hat: fwd.y_hat.map(|v| g.value(v).clone()),
            a_hat: fwd.a_hat.map(|v| g.value(v).clone()),
        }
    }

    /// Eval-mode loss parts of a batch.
    pub fn evaluate_loss(&self, batch: &Batch) -> LossParts {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let fwd = self.forward(&mut g, &p, batch, false);
        self.loss(&mut g, &fwd, batch).1
    }

    /// Folds a training pass's batch statistics into the running estimates.
    pub fn update_running_stats(&mut self, g: &Graph, fwd: &Forward) {
        if let Some(bn) = fwd.bn {
            self.ts_head.update_running_stats(&mut self.store, g, bn);
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::to_string(&self.config).expect("config serializes");
        self.store.save(path, &meta)
    }

    /// Rebuilds the architecture from the stored config and restores every tensor.
    pub fn load(path: &Path) -> Result<Self> {
        let (store, meta) = ParamStore::load(path)?;
        let config: ModelConfig =
            serde_json::from_str(&meta).map_err(|e| Error::format(path, format!("checkpoint config: {e}")))?;
        let mut model = Self::new(config, 0)?;
        model.store.copy_from(&store).map_err(|e| Error::format(path, e.to_string()))?;
        Ok(model)
    }
}

/// Eval-mode outputs as plain tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub y_hat: Option<Tensor>,
    pub a_hat: Option<Tensor>,
}
