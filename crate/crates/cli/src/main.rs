mod commands;
mod manifest;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dygraphad::graphs::KernelChoice;

#[derive(Parser, Debug)]
#[command(name = "dygraphad", version, about = "Multivariate time-series anomaly detection with dynamic correlation graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Training configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Input CSV: training data for prep/build-graphs/train/ablate/tau-sweep, test data for score.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Name of the 0/1 label column; files without it are read unlabelled.
    #[arg(long, global = true, default_value = "label")]
    pub labels_column: String,
    /// Run directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    /// Stride between training windows.
    #[arg(long, global = true)]
    pub stride: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = KernelArg::Auto)]
    pub use_native_kernel: KernelArg,
    /// Robust-scale each series' score by its median and IQR on the training data.
    #[arg(long, global = true)]
    pub scale_scores: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Auto,
    On,
    Off,
}

impl From<KernelArg> for KernelChoice {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Auto => KernelChoice::Auto,
            KernelArg::On => KernelChoice::On,
            KernelArg::Off => KernelChoice::Off,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit min-max statistics on --data and write normalized copies.
    Prep {
        /// Test CSV normalized with the training statistics.
        #[arg(long)]
        test: Option<PathBuf>,
        /// Median down-sampling factor applied before normalization.
        #[arg(long, default_value_t = 1)]
        downsample: usize,
    },
    /// Precompute the correlation graphs of --data.
    BuildGraphs {
        /// Statistics to normalize with; fitted on --data when absent.
        #[arg(long)]
        norm_stats: Option<PathBuf>,
    },
    /// Train on --data and write the checkpoint into --out.
    Train {
        /// Graph store from build-graphs for the training data.
        #[arg(long)]
        graphs: Option<PathBuf>,
    },
    /// Score --data with the model in --out.
    Score {
        /// Graph store from build-graphs for the scored data.
        #[arg(long)]
        graphs: Option<PathBuf>,
    },
    /// Evaluate the scores in --out against their labels.
    Eval,
    /// Train and evaluate every ablation setting.
    Ablate {
        #[arg(long)]
        test: PathBuf,
    },
    /// Train and evaluate over the tau grid 0.1, 0.5, 1, 5, 10.
    TauSweep {
        #[arg(long)]
        test: PathBuf,
    },
    /// Generate the synthetic benchmark into --out.
    Synth {
        /// Generator settings (TOML); defaults otherwise.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Check analytic against numeric gradients on a small model.
    Gradcheck {
        /// Zero the head weights before checking.
        #[arg(long)]
        zero_heads: bool,
    },
    /// Render score and loss plots for the run in --out.
    Plot,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
