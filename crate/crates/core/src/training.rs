//! Joint optimization with Adam, best-epoch selection by validation loss,
//! and the gradient-check harness.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::config::{Ablation, ModelConfig};
use crate::dataio::{train_val_split, LabeledSeries, Windowing};
use crate::error::{Error, Result};
use crate::gradcheck::{self, GroupError};
use crate::graphs::{ReferenceKernel, SeriesGraphs};
use crate::model::{assemble_batch, DyGraphAd, LossParts};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Training run settings, read from a flat TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub d: usize,
    /// Transformer blocks.
    pub layers: usize,
    pub heads: usize,
    pub m: usize,
    pub w: usize,
    pub tau: f64,
    pub stride: usize,
    pub val_fraction: f64,
    /// Global gradient-norm clip; off when absent.
    pub grad_clip: Option<f64>,
    /// Multiplicative learning-rate decay per epoch; off when absent.
    pub lr_decay: Option<f64>,
    pub wo_ts: bool,
    pub wo_graph: bool,
    pub recent_graph_only: bool,
    pub wo_recent_graph: bool,
    pub wo_static_graph: bool,
    pub wo_recent_and_static: bool,
    pub wo_static_and_dynamic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            epochs: 10,
            batch_size: 64,
            seed: 0,
            d: 64,
            layers: 2,
            heads: 4,
            m: 6,
            w: 5,
            tau: 1.0,
            stride: 1,
            val_fraction: 0.2,
            grad_clip: None,
            lr_decay: None,
            wo_ts: false,
            wo_graph: false,
            recent_graph_only: false,
            wo_recent_graph: false,
            wo_static_graph: false,
            wo_recent_and_static: false,
            wo_static_and_dynamic: false,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn ablation(&self) -> Ablation {
        Ablation {
            wo_ts: self.wo_ts,
            wo_graph: self.wo_graph,
            recent_graph_only: self.recent_graph_only,
            wo_recent_graph: self.wo_recent_graph,
            wo_static_graph: self.wo_static_graph,
            wo_recent_and_static: self.wo_recent_and_static,
            wo_static_and_dynamic: self.wo_static_and_dynamic,
        }
    }

    pub fn set_ablation(&mut self, a: Ablation) {
        self.wo_ts = a.wo_ts;
        self.wo_graph = a.wo_graph;
        self.recent_graph_only = a.recent_graph_only;
        self.wo_recent_graph = a.wo_recent_graph;
        self.wo_static_graph = a.wo_static_graph;
        self.wo_recent_and_static = a.wo_recent_and_static;
        self.wo_static_and_dynamic = a.wo_static_and_dynamic;
    }

    pub fn geometry(&self) -> Windowing {
        Windowing { m: self.m, w: self.w }
    }

    pub fn model_config(&self, n_series: usize) -> ModelConfig {
        let mut cfg = ModelConfig::new(n_series, self.d, self.layers, self.m, self.w);
        cfg.heads = self.heads;
        cfg.ablation = self.ablation();
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.stride == 0 {
            return Err(Error::Config("epochs, batch_size and stride must be at least 1".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!("val_fraction must lie in (0, 1), got {}", self.val_fraction)));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config("grad_clip must be positive".into()));
            }
        }
        if let Some(d) = self.lr_decay {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::Config("lr_decay must lie in (0, 1]".into()));
            }
        }
        self.model_config(1).validate()
    }
}

/// Adam with bias correction over the trainable entries of a store.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros = || -> Vec<Option<Tensor>> {
            store
                .entries()
                .iter()
                .map(|e| e.trainable.then(|| Tensor::zeros(e.tensor.shape())))
                .collect()
        };
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update; `grads` is indexed like the store's entries.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (i, entry) in store.entries_mut().iter_mut().enumerate() {
            let (Some(g), Some(m), Some(v)) = (&grads[i], &mut self.m[i], &mut self.v[i]) else {
                continue;
            };
            let params = entry.tensor.data_mut();
            for (k, &gk) in g.data().iter().enumerate() {
                let mk = &mut m.data_mut()[k];
                *mk = self.beta1 * *mk + (1.0 - self.beta1) * gk;
                let vk = &mut v.data_mut()[k];
                *vk = self.beta2 * *vk + (1.0 - self.beta2) * gk * gk;
                let m_hat = *mk / c1;
                let v_hat = *vk / c2;
                params[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Gradients of every store entry for one training batch.
fn batch_gradients(model: &mut DyGraphAd, batch: &crate::model::Batch) -> (LossParts, Vec<Option<Tensor>>) {
    let mut g = Graph::new();
    let p = model.store.bind(&mut g);
    let fwd = model.forward(&mut g, &p, batch, true);
    let (loss, parts) = model.loss(&mut g, &fwd, batch);
    let mut grads = g.backward(loss);
    let out = model
        .store
        .ids()
        .map(|id| p.get(id).map(|v| grads.take(v).unwrap_or_else(|| Tensor::zeros(model.store.get(id).shape()))))
        .collect();
    model.update_running_stats(&g, &fwd);
    (parts, out)
}

fn clip_global_norm(grads: &mut [Option<Tensor>], max_norm: f64) {
    let norm = grads
        .iter()
        .flatten()
        .flat_map(|t| t.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for t in grads.iter_mut().flatten() {
            t.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
}

/// Loss summary of one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_ts: f64,
    pub train_graph: f64,
    pub train_total: f64,
    pub val_ts: f64,
    pub val_graph: f64,
    pub val_total: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub train_samples: usize,
    pub val_samples: usize,
    pub wall_seconds: f64,
}

impl TrainReport {
    /// The report with timing fields zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.wall_seconds = 0.0;
        r.epochs.iter_mut().for_each(|e| e.seconds = 0.0);
        r
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// One row per epoch.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        for e in &self.epochs {
            w.serialize(e).map_err(|e| Error::format(path, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Window ends of `series` that have a next-step target.
pub fn training_ends(len: usize, geometry: Windowing, stride: usize) -> Result<Vec<usize>> {
    let ends: Vec<usize> = geometry.ends(len, stride)?.into_iter().filter(|&t| t + 1 < len).collect();
    if ends.is_empty() {
        return Err(Error::DatasetTooShort {
            len,
            needed: geometry.width() + 1,
        });
    }
    Ok(ends)
}

fn mean_loss(model: &DyGraphAd, series: &LabeledSeries, graphs: &SeriesGraphs, ends: &[usize], batch: usize) -> LossParts {
    let mut acc = LossParts {
        total: 0.0,
        ts: 0.0,
        graph: 0.0,
    };
    for chunk in ends.chunks(batch) {
        let b = assemble_batch(series, graphs, model.geometry(), chunk);
        let l = model.evaluate_loss(&b);
        let wgt = chunk.len() as f64;
        acc.ts += l.ts * wgt;
        acc.graph += l.graph * wgt;
    }
    let n = ends.len() as f64;
    acc.ts /= n;
    acc.graph /= n;
    acc.total = acc.ts + acc.graph;
    acc
}

/// Eval-mode validation loss of a model over the given window ends.
pub fn validation_loss(model: &DyGraphAd, series: &LabeledSeries, graphs: &SeriesGraphs, ends: &[usize], batch: usize) -> LossParts {
    mean_loss(model, series, graphs, ends, batch)
}

/// Train/validation window ends for a config: the tail fraction validates.
pub fn split_ends(config: &TrainConfig, len: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let ends = training_ends(len, config.geometry(), config.stride)?;
    train_val_split(ends, config.val_fraction)
}

/// Trains on normalized `series` whose graphs are `graphs`, keeping the
/// parameters of the epoch with the lowest validation loss.
pub fn train(
    config: &TrainConfig,
    series: &LabeledSeries,
    graphs: &SeriesGraphs,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(DyGraphAd, TrainReport)> {
    config.validate()?;
    if !graphs.matches(series.n_series(), series.len(), config.w, config.tau) {
        return Err(Error::Argument("graph store does not match the series, w or tau".into()));
    }
    let started = Instant::now();
    let mut model = DyGraphAd::new(config.model_config(series.n_series()), config.seed)?;
    let (mut train_ends, val_ends) = split_ends(config, series.len())?;
    let mut shuffle = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle.set_stream(1);
    let mut adam = Adam::new(&model.store, config.lr);
    let mut records = Vec::new();
    let mut best: Option<(usize, f64, ParamStore)> = None;

    for epoch in 1..=config.epochs {
        let epoch_start = Instant::now();
        train_ends.shuffle(&mut shuffle);
        let mut sums = (0.0, 0.0);
        for (bi, chunk) in train_ends.chunks(config.batch_size).enumerate() {
            let batch = assemble_batch(series, graphs, model.geometry(), chunk);
            let (parts, mut grads) = batch_gradients(&mut model, &batch);
            let grads_finite = grads.iter().flatten().all(Tensor::is_finite);
            if !parts.total.is_finite() || !grads_finite {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            if let Some(c) = config.grad_clip {
                clip_global_norm(&mut grads, c);
            }
            adam.step(&mut model.store, &grads);
            sums.0 += parts.ts * chunk.len() as f64;
            sums.1 += parts.graph * chunk.len() as f64;
        }
        let n = train_ends.len() as f64;
        let val = mean_loss(&model, series, graphs, &val_ends, config.batch_size);
        if !val.total.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: usize::MAX });
        }
        let record = EpochRecord {
            epoch,
            train_ts: sums.0 / n,
            train_graph: sums.1 / n,
            train_total: sums.0 / n + sums.1 / n,
            val_ts: val.ts,
            val_graph: val.graph,
            val_total: val.total,
            seconds: epoch_start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        if best.as_ref().is_none_or(|b| val.total < b.1) {
            best = Some((epoch, val.total, model.store.clone()));
        }
        records.push(record);
        if let Some(decay) = config.lr_decay {
            adam.lr *= decay;
        }
    }
    let (best_epoch, best_val_loss, store) = best.expect("at least one epoch");
    model.store = store;
    let report = TrainReport {
        epochs: records,
        best_epoch,
        best_val_loss,
        train_samples: train_ends.len(),
        val_samples: val_ends.len(),
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

/// Outcome of the gradient check harness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub step: f64,
    pub groups: Vec<GradcheckGroup>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckGroup {
    pub name: String,
    pub error: f64,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }

    /// First failing group as an error.
    pub fn into_result(self) -> Result<Self> {
        if let Some(g) = self.groups.iter().find(|g| !g.passed) {
            return Err(Error::GradCheck {
                group: g.name.clone(),
                error: g.error,
                tolerance: self.tolerance,
            });
        }
        Ok(self)
    }
}

/// Harness options. `corrupt` scales the analytic gradient of the named
/// parameter group, which the check must then flag.
#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub tolerance: f64,
    pub step: f64,
    pub ablation: Ablation,
    pub zero_heads: bool,
    pub corrupt: Option<String>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            tolerance: 1e-4,
            step: 1e-5,
            ablation: Ablation::default(),
            zero_heads: false,
            corrupt: None,
        }
    }
}

/// Central-difference check of the joint loss at N=4, d=8, m=3, w=4, L=1 on a batch of two.
pub fn gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let (n, d, m, w) = (4, 8, 3, 4);
    let mut cfg = ModelConfig::new(n, d, 1, m, w);
    cfg.ablation = opts.ablation;
    let mut model = DyGraphAd::new(cfg, opts.seed)?;
    if opts.zero_heads {
        for e in model.store.entries_mut() {
            let head = e.name.starts_with("graph_head.") || e.name.starts_with("ts_head.");
            if head && e.trainable && e.name.ends_with(".weight") {
                e.tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(2);
    let len = m * w + 8;
    let values = (0..n)
        .map(|i| {
            (0..len)
                .map(|t| 0.5 + 0.3 * (0.4 * t as f64 + i as f64).sin() + rng.random_range(-0.1..0.1))
                .collect()
        })
        .collect();
    let series = LabeledSeries::from_values(values, None)?;
    let graphs = SeriesGraphs::build(&series, w, 1.0, &ReferenceKernel)?;
    let batch = assemble_batch(&series, &graphs, model.geometry(), &[m * w - 1, m * w + 4]);
    let loss = |g: &mut Graph, p: &crate::params::Bound| {
        let fwd = model.forward(g, p, &batch, true);
        model.loss(g, &fwd, &batch).0
    };
    let mut analytic = gradcheck::analytic(&model.store, loss);
    if let Some(name) = &opts.corrupt {
        let id = model
            .store
            .id(name)
            .ok_or_else(|| Error::Argument(format!("unknown parameter group {name}")))?;
        let idx = model.store.ids().position(|i| i == id).unwrap();
        if let Some(t) = analytic[idx].as_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = *v * 1.5 + 1e-3);
        }
    }
    let numeric = gradcheck::numeric(&model.store, opts.step, |_| true, loss);
    let groups = gradcheck::compare(&model.store, &analytic, &numeric)
        .into_iter()
        .map(|GroupError { group, error, .. }| GradcheckGroup {
            passed: error <= opts.tolerance,
            name: group,
            error,
        })
        .collect();
    Ok(GradcheckReport {
        tolerance: opts.tolerance,
        step: opts.step,
        groups,
    })
}
