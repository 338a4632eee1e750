//! Model hyperparameters and ablation switches.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Component removals used by the ablation study.
///
/// Graph-task variants (`recent_graph_only`, `wo_recent_graph`,
/// `wo_recent_and_static`) are mutually exclusive, as are the encoder
/// variants (`wo_static_graph`, `wo_static_and_dynamic`).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Drop the series forecasting task from loss and score.
    pub wo_ts: bool,
    /// Drop the graph forecasting task from loss and score.
    pub wo_graph: bool,
    /// Predict the next graph as the most recent observed graph.
    pub recent_graph_only: bool,
    /// Use the decoded graph without the recent-graph update.
    pub wo_recent_graph: bool,
    /// Feed the raw dynamic graph to graph convolution (no static graph).
    pub wo_static_graph: bool,
    /// `wo_recent_graph` and `wo_static_graph` together.
    pub wo_recent_and_static: bool,
    /// Feed the inception features straight to the series head, skipping graph convolution.
    pub wo_static_and_dynamic: bool,
}

impl Ablation {
    pub fn validate(&self) -> Result<()> {
        if self.wo_ts && self.wo_graph {
            return Err(Error::Config("wo_ts and wo_graph cannot both be set".into()));
        }
        let graph_variants = [self.recent_graph_only, self.wo_recent_graph, self.wo_recent_and_static];
        if graph_variants.iter().filter(|&&f| f).count() > 1 {
            return Err(Error::Config(
                "recent_graph_only, wo_recent_graph and wo_recent_and_static are mutually exclusive".into(),
            ));
        }
        if self.wo_graph && graph_variants.iter().any(|&f| f) {
            return Err(Error::Config("graph-forecasting variants require the graph task (wo_graph is set)".into()));
        }
        if self.wo_static_graph && self.wo_static_and_dynamic {
            return Err(Error::Config("wo_static_graph and wo_static_and_dynamic are mutually exclusive".into()));
        }
        if self.wo_static_and_dynamic && self.wo_ts {
            return Err(Error::Config("wo_static_and_dynamic changes the series head, which wo_ts removes".into()));
        }
        Ok(())
    }

    pub fn ts_task(&self) -> bool {
        !self.wo_ts
    }

    pub fn graph_task(&self) -> bool {
        !self.wo_graph
    }

    /// Whether the graph head (transformer + decoder) runs at all.
    pub fn graph_head_active(&self) -> bool {
        self.graph_task() && !self.recent_graph_only
    }

    pub fn static_graph(&self) -> bool {
        !(self.wo_static_graph || self.wo_recent_and_static)
    }

    pub fn recent_update(&self) -> bool {
        !(self.wo_recent_graph || self.wo_recent_and_static)
    }

    pub fn mixhop_in_ts(&self) -> bool {
        !self.wo_static_and_dynamic
    }

    /// Short label used in reports.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.wo_ts {
            parts.push("graph-only");
        }
        if self.wo_graph {
            parts.push("ts-only");
        }
        for (flag, name) in [
            (self.recent_graph_only, "recent graph only"),
            (self.wo_recent_graph, "wo. recent graph"),
            (self.wo_static_graph, "wo. static graph"),
            (self.wo_recent_and_static, "wo. recent&static graph"),
            (self.wo_static_and_dynamic, "wo. static&dynamic graph"),
        ] {
            if flag {
                parts.push(name);
            }
        }
        if parts.is_empty() {
            "full".into()
        } else {
            parts.join(", ")
        }
    }
}

/// Nonlinearity applied to the inception projection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    None,
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_series: usize,
    /// Hidden width `d`.
    pub d: usize,
    /// Transformer blocks `L`.
    pub layers: usize,
    pub heads: usize,
    /// Feed-forward width as a multiple of `d`.
    pub ff_mult: usize,
    /// Segments per sample.
    pub m: usize,
    /// Segment width.
    pub w: usize,
    pub dil_kernels: Vec<usize>,
    /// Stacked inception layers; layer `l` uses dilation `2^l`.
    pub dil_layers: usize,
    pub dil_activation: Activation,
    pub mixhop_depth: usize,
    pub mixhop_beta: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub ln_eps: f64,
    pub l2_eps: f64,
    pub ablation: Ablation,
}

impl ModelConfig {
    pub fn new(n_series: usize, d: usize, layers: usize, m: usize, w: usize) -> Self {
        Self {
            n_series,
            d,
            layers,
            heads: 4,
            ff_mult: 4,
            m,
            w,
            dil_kernels: vec![2, 3, 5, 7],
            dil_layers: 1,
            dil_activation: Activation::Tanh,
            mixhop_depth: 2,
            mixhop_beta: 0.05,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            ln_eps: 1e-5,
            l2_eps: 1e-12,
            ablation: Ablation::default(),
        }
    }

    /// Window width `c = m·w`.
    pub fn c(&self) -> usize {
        self.m * self.w
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_series == 0 || self.d == 0 || self.w == 0 {
            return Err(Error::Config("n_series, d and w must be positive".into()));
        }
        if self.m < 2 {
            return Err(Error::Config("m must be at least 2 (graph head needs m-1 >= 1 inputs)".into()));
        }
        if self.layers == 0 {
            return Err(Error::Config("at least one transformer block is required".into()));
        }
        if self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::Config(format!("heads ({}) must divide d ({})", self.heads, self.d)));
        }
        if self.dil_kernels.is_empty() || self.dil_layers == 0 {
            return Err(Error::Config("inception needs at least one kernel and one layer".into()));
        }
        let widest = *self.dil_kernels.iter().max().unwrap();
        if self.c() < widest {
            return Err(Error::Config(format!(
                "window too short for inception kernels: c = {} < {widest}",
                self.c()
            )));
        }
        if !(0.0..=1.0).contains(&self.mixhop_beta) {
            return Err(Error::Config("mixhop_beta must lie in [0, 1]".into()));
        }
        self.ablation.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_window_rejected() {
        let cfg = ModelConfig::new(3, 8, 1, 2, 3);
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("window too short"), "{err}");
        assert!(ModelConfig::new(3, 8, 1, 6, 5).validate().is_ok());
    }

    #[test]
    fn heads_must_divide_d() {
        let mut cfg = ModelConfig::new(3, 10, 1, 6, 5);
        assert!(cfg.validate().is_err());
        cfg.heads = 5;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn incompatible_ablations_rejected() {
        let both = Ablation { wo_ts: true, wo_graph: true, ..Default::default() };
        assert!(both.validate().is_err());
        let two = Ablation { recent_graph_only: true, wo_recent_graph: true, ..Default::default() };
        assert!(two.validate().is_err());
        let ok = Ablation { wo_ts: true, wo_recent_and_static: true, ..Default::default() };
        assert!(ok.validate().is_ok());
        assert!(!ok.static_graph() && !ok.recent_update());
    }
}
