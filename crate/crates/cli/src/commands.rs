use std::error::Error;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use dygraphad::config::Ablation;
use dygraphad::dataio::{downsample_median, load_csv, minmax_normalize, write_csv, LabeledSeries, NormStats};
use dygraphad::detection::{best_f1, evaluate_at, iqr_scale, score, EvalReport, ScoreSeries, ScoreTable};
use dygraphad::graphs::{select_kernel, CorrelationKernel, SeriesGraphs};
use dygraphad::model::DyGraphAd;
use dygraphad::synthetic::{generate, SynthSpec};
use dygraphad::training::{self, gradcheck, GradcheckOptions, TrainConfig, TrainReport};
use serde::{Deserialize, Serialize};

use crate::manifest::{outputs, FileRecord, RunManifest, Step};
use crate::plot::{line_chart, Series};
use crate::{Cli, Command};

type Res<T> = Result<T, Box<dyn Error>>;

pub const CONFIG: &str = "config.toml";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const NORM_STATS: &str = "norm_stats.json";
pub const TRAIN_REPORT: &str = "train_report.json";
pub const TRAIN_HISTORY: &str = "train_history.csv";
pub const SCORES: &str = "scores.csv";
pub const SCORE_SUMMARY: &str = "score_summary.json";
pub const REPORT: &str = "report.json";
pub const PLOTS: &str = "plots";

const SCORE_BATCH: usize = 256;
const TAU_GRID: [f64; 5] = [0.1, 0.5, 1.0, 5.0, 10.0];
const KERNEL_NAME: &str = "reference";

pub fn run(cli: &Cli) -> Res<()> {
    match &cli.command {
        Command::Prep { test, downsample } => prep(cli, test.as_deref(), *downsample),
        Command::BuildGraphs { norm_stats } => build_graphs(cli, norm_stats.as_deref()),
        Command::Train { graphs } => {
            let config = train_config(cli)?;
            let kernel = kernel(cli)?;
            let report = train_into(&config, data_path(cli)?, &out_dir(cli)?, kernel.as_ref(), graphs.as_deref(), &cli.labels_column)?;
            let best = &report.epochs[report.best_epoch - 1];
            println!(
                "trained {} epochs; best epoch {} (val loss {:.4e}, train loss {:.4e})",
                report.epochs.len(),
                report.best_epoch,
                report.best_val_loss,
                best.train_total
            );
            Ok(())
        }
        Command::Score { graphs } => {
            let kernel = kernel(cli)?;
            let summary = score_into(&out_dir(cli)?, data_path(cli)?, kernel.as_ref(), cli.scale_scores, graphs.as_deref(), &cli.labels_column)?;
            println!(
                "scored {} of {} steps; validation threshold {:.6e}",
                summary.scored_steps, summary.steps, summary.val_threshold
            );
            Ok(())
        }
        Command::Eval => {
            let out = eval_into(&out_dir(cli)?)?;
            println!(
                "F1 {:.4} (precision {:.4}, recall {:.4}) at threshold {:.6e}, point-adjusted; unadjusted F1 {:.4}",
                out.best.f1, out.best.precision, out.best.recall, out.best.threshold, out.raw.f1
            );
            Ok(())
        }
        Command::Ablate { test } => ablate(cli, test),
        Command::TauSweep { test } => tau_sweep(cli, test),
        Command::Synth { spec } => synth(cli, spec.as_deref()),
        Command::Gradcheck { zero_heads } => run_gradcheck(cli, *zero_heads),
        Command::Plot => plot(&out_dir(cli)?),
    }
}

fn out_dir(cli: &Cli) -> Res<PathBuf> {
    let dir = cli.out.clone().ok_or("--out is required")?;
    fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    Ok(dir)
}

fn data_path(cli: &Cli) -> Res<&Path> {
    Ok(cli.data.as_deref().ok_or("--data is required")?)
}

fn kernel(cli: &Cli) -> Res<Box<dyn CorrelationKernel>> {
    Ok(select_kernel(cli.use_native_kernel.into())?)
}

fn train_config(cli: &Cli) -> Res<TrainConfig> {
    let mut config = match &cli.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(tau) = cli.tau {
        config.tau = tau;
    }
    if let Some(stride) = cli.stride {
        config.stride = stride;
    }
    config.validate()?;
    Ok(config)
}

/// Loads `path`, reading `labels_column` as labels only when the header has it.
fn load_series(path: &Path, labels_column: &str) -> Res<LabeledSeries> {
    let file = fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut header = String::new();
    BufReader::new(file).read_line(&mut header)?;
    let has_labels = header.trim().split(',').any(|h| h.trim() == labels_column);
    Ok(load_csv(path, has_labels.then_some(labels_column))?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Res<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Res<T> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn graphs_for(
    series: &LabeledSeries,
    w: usize,
    tau: f64,
    kernel: &dyn CorrelationKernel,
    stored: Option<&Path>,
) -> Res<SeriesGraphs> {
    match stored {
        Some(path) => {
            let graphs = SeriesGraphs::load(path)?;
            if !graphs.matches(series.n_series(), series.len(), w, tau) {
                return Err(format!(
                    "{}: graph store (N={}, w={}, tau={}) does not match the data and config (N={}, w={w}, tau={tau}); rebuild it with build-graphs",
                    path.display(),
                    graphs.n(),
                    graphs.w(),
                    graphs.tau(),
                    series.n_series()
                )
                .into());
            }
            Ok(graphs)
        }
        None => Ok(SeriesGraphs::build(series, w, tau, kernel)?),
    }
}

fn prep(cli: &Cli, test: Option<&Path>, downsample: usize) -> Res<()> {
    let dir = out_dir(cli)?;
    let data_path = data_path(cli)?;
    let load = |p: &Path| -> Res<LabeledSeries> {
        let s = load_series(p, &cli.labels_column)?;
        Ok(if downsample > 1 { downsample_median(&s, downsample)? } else { s })
    };
    let train = load(data_path)?;
    let stats = NormStats::fit(&train);
    stats.save(&dir.join(NORM_STATS))?;
    write_csv(&minmax_normalize(&train, &stats)?, &dir.join("train.csv"), &cli.labels_column)?;
    let mut inputs = vec![FileRecord::new("train_data", data_path)?];
    if let Some(test) = test {
        write_csv(&minmax_normalize(&load(test)?, &stats)?, &dir.join("test.csv"), &cli.labels_column)?;
        inputs.push(FileRecord::new("test_data", test)?);
    }
    RunManifest::record(
        &dir,
        Step {
            command: format!("prep --downsample {downsample}"),
            seed: None,
            config: None,
            kernel: KERNEL_NAME.into(),
            inputs,
            outputs: outputs(&dir, &[NORM_STATS, "train.csv", "test.csv"])?,
        },
    )?;
    println!("normalized {} series of {} steps into {}", train.n_series(), train.len(), dir.display());
    Ok(())
}

fn build_graphs(cli: &Cli, norm_stats: Option<&Path>) -> Res<()> {
    let config = train_config(cli)?;
    let dir = out_dir(cli)?;
    let data_path = data_path(cli)?;
    let series = load_series(data_path, &cli.labels_column)?;
    let stats = match norm_stats {
        Some(p) => NormStats::load(p)?,
        None => NormStats::fit(&series),
    };
    let norm = minmax_normalize(&series, &stats)?;
    let graphs = SeriesGraphs::build(&norm, config.w, config.tau, kernel(cli)?.as_ref())?;
    let stem = data_path.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    let name = format!("{stem}.graphs.bin");
    graphs.save(&dir.join(&name))?;
    let mut inputs = vec![FileRecord::new("graph_data", data_path)?];
    if let Some(p) = norm_stats {
        inputs.push(FileRecord::new("norm_stats", p)?);
    }
    RunManifest::record(
        &dir,
        Step {
            command: "build-graphs".into(),
            seed: None,
            config: Some(config.clone()),
            kernel: KERNEL_NAME.into(),
            inputs,
            outputs: outputs(&dir, &[&name])?,
        },
    )?;
    println!("{} graphs (w={}, tau={}) -> {}", graphs.len(), config.w, config.tau, dir.join(&name).display());
    Ok(())
}

/// Trains on the CSV at `data` and writes the run artifacts into `dir`.
fn train_into(
    config: &TrainConfig,
    data: &Path,
    dir: &Path,
    kernel: &dyn CorrelationKernel,
    graphs: Option<&Path>,
    labels_column: &str,
) -> Res<TrainReport> {
    fs::create_dir_all(dir)?;
    let series = load_series(data, labels_column)?;
    if series.labels.as_ref().is_some_and(|l| l.contains(&1)) {
        eprintln!("warning: training data carries anomaly labels; they are ignored and the data is treated as normal");
    }
    let stats = NormStats::fit(&series);
    let norm = minmax_normalize(&series, &stats)?;
    let store = graphs_for(&norm, config.w, config.tau, kernel, graphs)?;
    let (model, report) = training::train(config, &norm, &store, |e| {
        eprintln!(
            "epoch {:>3}  train {:.4e} (ts {:.4e}, graph {:.4e})  val {:.4e}  {:.1}s",
            e.epoch, e.train_total, e.train_ts, e.train_graph, e.val_total, e.seconds
        )
    })?;
    fs::write(dir.join(CONFIG), config.to_toml())?;
    model.save(&dir.join(CHECKPOINT))?;
    stats.save(&dir.join(NORM_STATS))?;
    report.save_json(&dir.join(TRAIN_REPORT))?;
    report.save_csv(&dir.join(TRAIN_HISTORY))?;
    let mut inputs = vec![FileRecord::new("train_data", &data.canonicalize()?)?];
    if let Some(g) = graphs {
        inputs.push(FileRecord::new("train_graphs", g)?);
    }
    RunManifest::record(
        dir,
        Step {
            command: "train".into(),
            seed: Some(config.seed),
            config: Some(config.clone()),
            kernel: KERNEL_NAME.into(),
            inputs,
            outputs: outputs(dir, &[CONFIG, CHECKPOINT, NORM_STATS, TRAIN_HISTORY])?,
        },
    )?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    /// Largest aggregate score over the validation tail of the training data.
    pub val_threshold: f64,
    pub scaled: bool,
    pub steps: usize,
    pub scored_steps: usize,
}

/// Replaces each series' combined score by its robust z-score against `reference`.
fn scale_combined(scores: &mut ScoreSeries, reference: &ScoreSeries) -> Res<()> {
    for i in 0..scores.n_series {
        let train: Vec<f64> = (0..reference.len()).filter(|&t| reference.scored[t]).map(|t| reference.combined[t][i]).collect();
        let column: Vec<f64> = scores.combined.iter().map(|r| r[i]).collect();
        for (row, v) in scores.combined.iter_mut().zip(iqr_scale(&column, &train)?) {
            row[i] = v;
        }
    }
    Ok(())
}

/// Scores the CSV at `data` with the model stored in `dir`.
fn score_into(
    dir: &Path,
    data: &Path,
    kernel: &dyn CorrelationKernel,
    scale: bool,
    graphs: Option<&Path>,
    labels_column: &str,
) -> Res<ScoreSummary> {
    let config = TrainConfig::load(&dir.join(CONFIG))?;
    let model = DyGraphAd::load(&dir.join(CHECKPOINT))?;
    let stats = NormStats::load(&dir.join(NORM_STATS))?;
    let manifest = RunManifest::open(dir)?;
    let train_record = manifest
        .latest_input("train_data")
        .ok_or_else(|| format!("{}: no training step recorded; run train first", dir.display()))?
        .clone();
    if crate::manifest::sha256_file(&train_record.path)? != train_record.sha256 {
        return Err(format!("training data {} changed since training", train_record.path.display()).into());
    }

    let test = minmax_normalize(&load_series(data, labels_column)?, &stats)?;
    let test_graphs = graphs_for(&test, config.w, config.tau, kernel, graphs)?;
    let mut scores = score(&model, &test, &test_graphs, SCORE_BATCH)?;

    let train = minmax_normalize(&load_series(&train_record.path, labels_column)?, &stats)?;
    let train_graphs = SeriesGraphs::build(&train, config.w, config.tau, kernel)?;
    let mut train_scores = score(&model, &train, &train_graphs, SCORE_BATCH)?;
    if scale {
        let reference = train_scores.clone();
        scale_combined(&mut scores, &reference)?;
        scale_combined(&mut train_scores, &reference)?;
    }
    let (_, val_ends) = training::split_ends(&config, train.len())?;
    let train_agg = train_scores.aggregate();
    let val_threshold = val_ends
        .iter()
        .map(|&t| t + 1)
        .filter(|&s| s < train.len() && train_scores.scored[s])
        .map(|s| train_agg[s])
        .fold(f64::NEG_INFINITY, f64::max);
    if !val_threshold.is_finite() {
        return Err("validation split has no scored steps".into());
    }

    scores.save_csv(&dir.join(SCORES), test.labels.as_deref())?;
    let summary = ScoreSummary {
        val_threshold,
        scaled: scale,
        steps: scores.len(),
        scored_steps: scores.scored.iter().filter(|&&s| s).count(),
    };
    write_json(&dir.join(SCORE_SUMMARY), &summary)?;
    let mut inputs = vec![FileRecord::new("test_data", data)?];
    if let Some(g) = graphs {
        inputs.push(FileRecord::new("test_graphs", g)?);
    }
    RunManifest::record(
        dir,
        Step {
            command: format!("score{}", if scale { " --scale-scores" } else { "" }),
            seed: Some(config.seed),
            config: Some(config),
            kernel: KERNEL_NAME.into(),
            inputs,
            outputs: outputs(dir, &[SCORES, SCORE_SUMMARY])?,
        },
    )?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    /// Best point-adjusted F1 over all thresholds.
    #[serde(flatten)]
    pub best: EvalReport,
    /// Best F1 without point adjustment.
    pub raw: EvalReport,
    pub val_threshold: Option<f64>,
    /// Point-adjusted counts at the validation threshold.
    pub at_val_threshold: Option<EvalReport>,
    pub ts_only: Option<EvalReport>,
    pub graph_only: Option<EvalReport>,
}

fn eval_into(dir: &Path) -> Res<EvalOutput> {
    let table = ScoreTable::load_csv(&dir.join(SCORES))?;
    let labels = table
        .labels
        .as_deref()
        .ok_or("scores.csv has no label column; score labelled data to evaluate")?;
    let mask = Some(&table.scored[..]);
    let summary_path = dir.join(SCORE_SUMMARY);
    let summary: Option<ScoreSummary> = if summary_path.exists() { Some(read_json(&summary_path)?) } else { None };
    let val_threshold = summary.map(|s| s.val_threshold);
    let single = |col: &Option<Vec<f64>>| -> Res<Option<EvalReport>> {
        Ok(match col {
            Some(c) => Some(best_f1(c, labels, true, mask)?),
            None => None,
        })
    };
    let out = EvalOutput {
        best: best_f1(&table.combined, labels, true, mask)?,
        raw: best_f1(&table.combined, labels, false, mask)?,
        val_threshold,
        at_val_threshold: match val_threshold {
            Some(theta) => Some(evaluate_at(&table.combined, labels, theta, true, mask)?),
            None => None,
        },
        ts_only: single(&table.err_ts)?,
        graph_only: single(&table.err_graph)?,
    };
    write_json(&dir.join(REPORT), &out)?;
    RunManifest::record(
        dir,
        Step {
            command: "eval".into(),
            seed: None,
            config: None,
            kernel: KERNEL_NAME.into(),
            inputs: outputs(dir, &[SCORES, SCORE_SUMMARY])?,
            outputs: outputs(dir, &[REPORT])?,
        },
    )?;
    Ok(out)
}

/// The eight settings of the ablation table: full model, each task alone,
/// and each graph component removed.
pub fn ablation_rows() -> Vec<(&'static str, Ablation)> {
    let mut rows = vec![("full", Ablation::default())];
    let set = |f: fn(&mut Ablation)| {
        let mut a = Ablation::default();
        f(&mut a);
        a
    };
    rows.push(("wo_ts", set(|a| a.wo_ts = true)));
    rows.push(("wo_graph", set(|a| a.wo_graph = true)));
    rows.push(("recent_graph_only", set(|a| a.recent_graph_only = true)));
    rows.push(("wo_recent_graph", set(|a| a.wo_recent_graph = true)));
    rows.push(("wo_recent_and_static", set(|a| a.wo_recent_and_static = true)));
    rows.push(("wo_static_graph", set(|a| a.wo_static_graph = true)));
    rows.push(("wo_static_and_dynamic", set(|a| a.wo_static_and_dynamic = true)));
    rows
}

struct Row {
    name: String,
    setting: String,
    eval: EvalOutput,
    best_val_loss: f64,
}

fn full_run(cli: &Cli, config: &TrainConfig, test: &Path, dir: &Path) -> Res<Row> {
    let kernel = kernel(cli)?;
    let report = train_into(config, data_path(cli)?, dir, kernel.as_ref(), None, &cli.labels_column)?;
    score_into(dir, test, kernel.as_ref(), cli.scale_scores, None, &cli.labels_column)?;
    Ok(Row {
        name: String::new(),
        setting: String::new(),
        eval: eval_into(dir)?,
        best_val_loss: report.best_val_loss,
    })
}

fn write_table(dir: &Path, file: &str, rows: &[Row]) -> Res<()> {
    let mut csv = String::from("name,setting,precision,recall,f1,f1_unadjusted,f1_at_val_threshold,best_val_loss\n");
    println!("{:<24} {:>9} {:>9} {:>9} {:>9}", "setting", "precision", "recall", "f1", "raw f1");
    for r in rows {
        let at_val = r.eval.at_val_threshold.as_ref().map(|e| e.f1.to_string()).unwrap_or_default();
        csv.push_str(&format!(
            "{},\"{}\",{},{},{},{},{at_val},{}\n",
            r.name, r.setting, r.eval.best.precision, r.eval.best.recall, r.eval.best.f1, r.eval.raw.f1, r.best_val_loss
        ));
        println!(
            "{:<24} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
            r.setting, r.eval.best.precision, r.eval.best.recall, r.eval.best.f1, r.eval.raw.f1
        );
    }
    fs::write(dir.join(file), csv)?;
    Ok(())
}

fn sweep_step(cli: &Cli, config: &TrainConfig, command: &str, test: &Path, dir: &Path, file: &str) -> Res<()> {
    RunManifest::record(
        dir,
        Step {
            command: command.into(),
            seed: Some(config.seed),
            config: Some(config.clone()),
            kernel: KERNEL_NAME.into(),
            inputs: vec![FileRecord::new("train_data", data_path(cli)?)?, FileRecord::new("test_data", test)?],
            outputs: outputs(dir, &[file])?,
        },
    )
}

fn ablate(cli: &Cli, test: &Path) -> Res<()> {
    let base = train_config(cli)?;
    let dir = out_dir(cli)?;
    let mut rows = Vec::new();
    for (name, ablation) in ablation_rows() {
        let mut config = base.clone();
        config.set_ablation(ablation);
        config.validate()?;
        eprintln!("== {}", ablation.label());
        let mut row = full_run(cli, &config, test, &dir.join(name))?;
        row.name = name.into();
        row.setting = ablation.label();
        rows.push(row);
    }
    write_table(&dir, "ablation.csv", &rows)?;
    sweep_step(cli, &base, "ablate", test, &dir, "ablation.csv")
}

fn tau_sweep(cli: &Cli, test: &Path) -> Res<()> {
    let base = train_config(cli)?;
    let dir = out_dir(cli)?;
    let mut rows = Vec::new();
    for tau in TAU_GRID {
        let config = TrainConfig { tau, ..base.clone() };
        eprintln!("== tau {tau}");
        let mut row = full_run(cli, &config, test, &dir.join(format!("tau_{tau}")))?;
        row.name = format!("tau_{tau}");
        row.setting = format!("tau = {tau}");
        rows.push(row);
    }
    write_table(&dir, "tau_sweep.csv", &rows)?;
    sweep_step(cli, &base, "tau-sweep", test, &dir, "tau_sweep.csv")
}

fn synth(cli: &Cli, spec_path: Option<&Path>) -> Res<()> {
    let dir = out_dir(cli)?;
    let mut spec = match spec_path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            toml::from_str::<SynthSpec>(&text).map_err(|e| format!("{}: {}", p.display(), e.message()))?
        }
        None => SynthSpec::default(),
    };
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    let data = generate(&spec)?;
    write_csv(&data.train, &dir.join("train.csv"), &cli.labels_column)?;
    write_csv(&data.test, &dir.join("test.csv"), &cli.labels_column)?;
    data.manifest.save(&dir.join("anomalies.json"))?;
    let inputs = match spec_path {
        Some(p) => vec![FileRecord::new("synth_spec", p)?],
        None => Vec::new(),
    };
    RunManifest::record(
        &dir,
        Step {
            command: "synth".into(),
            seed: Some(spec.seed),
            config: None,
            kernel: KERNEL_NAME.into(),
            inputs,
            outputs: outputs(&dir, &["train.csv", "test.csv", "anomalies.json"])?,
        },
    )?;
    println!(
        "{} series, {} train and {} test steps, {} anomalies -> {}",
        spec.n,
        spec.t_train,
        spec.t_test,
        data.manifest.anomalies.len(),
        dir.display()
    );
    Ok(())
}

fn run_gradcheck(cli: &Cli, zero_heads: bool) -> Res<()> {
    let ablation = match &cli.config {
        Some(p) => TrainConfig::load(p)?.ablation(),
        None => Ablation::default(),
    };
    let opts = GradcheckOptions {
        seed: cli.seed.unwrap_or(0),
        ablation,
        zero_heads,
        ..Default::default()
    };
    let report = gradcheck(&opts)?;
    for g in &report.groups {
        println!("{:<6} {:<40} {:.3e}", if g.passed { "ok" } else { "FAIL" }, g.name, g.error);
    }
    if let Some(dir) = &cli.out {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("gradcheck.json"), &report)?;
    }
    report.into_result()?;
    Ok(())
}

fn plot(dir: &Path) -> Res<()> {
    let plots = dir.join(PLOTS);
    fs::create_dir_all(&plots)?;
    let mut written = Vec::new();
    let scores_path = dir.join(SCORES);
    if scores_path.exists() {
        let table = ScoreTable::load_csv(&scores_path)?;
        let masked = |v: &[f64]| -> Vec<Option<f64>> {
            v.iter().zip(&table.scored).map(|(&x, &s)| s.then_some(x)).collect()
        };
        let report_path = dir.join(REPORT);
        let threshold = if report_path.exists() { Some(read_json::<EvalOutput>(&report_path)?.best.threshold) } else { None };
        let combined = masked(&table.combined);
        let svg = line_chart(
            "combined anomaly score",
            &[Series { name: "combined", color: "#1f4e9c", values: &combined }],
            table.labels.as_deref(),
            threshold,
        );
        fs::write(plots.join("scores.svg"), svg)?;
        written.push("scores.svg");
        let ts = table.err_ts.as_deref().map(masked);
        let graph = table.err_graph.as_deref().map(masked);
        let mut parts = Vec::new();
        if let Some(v) = &ts {
            parts.push(Series { name: "series error", color: "#c0392b", values: v });
        }
        if let Some(v) = &graph {
            parts.push(Series { name: "graph error", color: "#27825a", values: v });
        }
        fs::write(plots.join("errors.svg"), line_chart("task errors", &parts, table.labels.as_deref(), None))?;
        written.push("errors.svg");
    }
    let report_path = dir.join(TRAIN_REPORT);
    if report_path.exists() {
        let report: TrainReport = read_json(&report_path)?;
        let train: Vec<Option<f64>> = report.epochs.iter().map(|e| Some(e.train_total)).collect();
        let val: Vec<Option<f64>> = report.epochs.iter().map(|e| Some(e.val_total)).collect();
        let svg = line_chart(
            "loss per epoch",
            &[
                Series { name: "train", color: "#1f4e9c", values: &train },
                Series { name: "validation", color: "#c0392b", values: &val },
            ],
            None,
            None,
        );
        fs::write(plots.join("loss.svg"), svg)?;
        written.push("loss.svg");
    }
    if written.is_empty() {
        return Err(format!("{}: nothing to plot (no scores.csv or train_report.json)", dir.display()).into());
    }
    println!("wrote {} to {}", written.join(", "), plots.display());
    Ok(())
}
