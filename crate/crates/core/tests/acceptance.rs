//! Acceptance gate. Each test prints one `PASS`/`FAIL` line with the measured
//! numbers, then asserts.

use std::io::Write;
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use dygraphad::autodiff::Graph;
use dygraphad::dataio::{make_windows, minmax_normalize, LabeledSeries, NormStats};
use dygraphad::detection::{best_f1, deviation_report, point_adjust, score, EvalReport, ScoreSeries};
use dygraphad::graph_head::GraphHead;
use dygraphad::graphs::{build_sequence, correlation_graph, dtw_sq, GraphCache, ReferenceKernel, SeriesGraphs};
use dygraphad::model::{assemble_batch, DyGraphAd};
use dygraphad::synthetic::{generate, AnomalyClass, SynthData, SynthManifest, SynthSpec};
use dygraphad::tensor::Tensor;
use dygraphad::training::{gradcheck, train, validation_loss, GradcheckOptions, TrainConfig, TrainReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Writes to the process stdout directly so the line survives test output capture.
fn verdict(name: &str, pass: bool, detail: String) {
    let line = format!("{} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "{name}: {detail}");
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn fixture_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/synthetic_seed0.json")
}

fn run_config() -> TrainConfig {
    TrainConfig {
        d: 16,
        layers: 2,
        m: 6,
        w: 5,
        tau: 1.0,
        epochs: 10,
        seed: 0,
        ..Default::default()
    }
}

/// Everything produced by one end-to-end run on the seed-0 synthetic data.
struct Run {
    data: SynthData,
    train: LabeledSeries,
    test: LabeledSeries,
    train_graphs: SeriesGraphs,
    test_graphs: SeriesGraphs,
    model: DyGraphAd,
    report: TrainReport,
    scores: ScoreSeries,
    csv: String,
    train_seconds: f64,
}

fn pipeline() -> Run {
    let config = run_config();
    let data = generate(&SynthSpec::default()).unwrap();
    let stats = NormStats::fit(&data.train);
    let train_s = minmax_normalize(&data.train, &stats).unwrap();
    let test_s = minmax_normalize(&data.test, &stats).unwrap();
    let started = Instant::now();
    let train_graphs = SeriesGraphs::build(&train_s, config.w, config.tau, &ReferenceKernel).unwrap();
    let test_graphs = SeriesGraphs::build(&test_s, config.w, config.tau, &ReferenceKernel).unwrap();
    let (model, report) = train(&config, &train_s, &train_graphs, |_| {}).unwrap();
    let train_seconds = started.elapsed().as_secs_f64();
    let scores = score(&model, &test_s, &test_graphs, 256).unwrap();
    let csv = scores.to_csv(test_s.labels.as_deref());
    Run {
        data,
        train: train_s,
        test: test_s,
        train_graphs,
        test_graphs,
        model,
        report,
        scores,
        csv,
        train_seconds,
    }
}

fn shared() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(pipeline)
}

// ---------------------------------------------------------------- DTW oracle

/// Minimum squared cost over every monotone warping path, by explicit enumeration.
fn dtw_brute(a: &[f64], b: &[f64]) -> f64 {
    fn walk(a: &[f64], b: &[f64], i: usize, j: usize, acc: f64, best: &mut f64) {
        let d = a[i] - b[j];
        let acc = acc + d * d;
        if i + 1 == a.len() && j + 1 == b.len() {
            *best = best.min(acc);
            return;
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, acc, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, acc, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    best
}

#[test]
fn dtw_matches_exhaustive_paths() {
    let started = Instant::now();
    let mut r = rng(11);
    let mut mismatches = 0;
    for _ in 0..500 {
        let len = r.random_range(1..=6);
        let a: Vec<f64> = (0..len).map(|_| r.random_range(-5i32..=5) as f64).collect();
        let b: Vec<f64> = (0..len).map(|_| r.random_range(-5i32..=5) as f64).collect();
        if dtw_sq(&a, &b).unwrap() != dtw_brute(&a, &b) {
            mismatches += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        "dtw oracle",
        mismatches == 0 && secs < 10.0,
        format!("500 pairs, {mismatches} mismatches, {secs:.2}s (limit 10s)"),
    );
}

// ---------------------------------------------------------- graph invariants

#[test]
fn graph_invariants_hold() {
    let mut r = rng(12);
    let mut failures = Vec::new();
    for k in 0..1000 {
        let n = r.random_range(1..=8);
        let w = r.random_range(1..=8);
        let seg: Vec<Vec<f64>> = (0..n).map(|_| (0..w).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
        let graphs: Vec<_> = [0.5, 1.0, 5.0].iter().map(|&tau| correlation_graph(&seg, tau).unwrap()).collect();
        for a in &graphs {
            for i in 0..n {
                if a.get(i, i) != 1.0 {
                    failures.push(format!("window {k}: diagonal {}", a.get(i, i)));
                }
                for j in 0..n {
                    let v = a.get(i, j);
                    if v != a.get(j, i) {
                        failures.push(format!("window {k}: asymmetric at ({i},{j})"));
                    }
                    if !(v > 0.0 && v <= 1.0) {
                        failures.push(format!("window {k}: entry {v} outside (0,1]"));
                    }
                }
            }
        }
        for pair in graphs.windows(2) {
            if pair[0].data().iter().zip(pair[1].data()).any(|(lo, hi)| lo > hi) {
                failures.push(format!("window {k}: tau monotonicity violated"));
            }
        }
    }
    verdict(
        "graph invariants",
        failures.is_empty(),
        format!("1000 windows, tau in {{0.5, 1, 5}}, {} violations {:?}", failures.len(), failures.first()),
    );
}

// ------------------------------------------------------- cache transparency

#[test]
fn cache_is_transparent() {
    let (n, len, m, w, tau) = (4, 500, 3, 5, 1.0);
    let mut r = rng(13);
    let values = (0..n).map(|_| (0..len).map(|_| r.random_range(0.0..1.0)).collect()).collect();
    let series = LabeledSeries::from_values(values, None).unwrap();
    let samples = make_windows(&series, m, w, 1).unwrap();
    let cache = GraphCache::new(w, tau, None).unwrap();
    let mut differing = 0;
    for s in &samples {
        let cached = build_sequence(s, tau, Some(&cache)).unwrap();
        let plain = build_sequence(s, tau, None).unwrap();
        let same = cached.graphs.iter().zip(&plain.graphs).all(|(a, b)| {
            a.window_end == b.window_end
                && a.adjacency.data().iter().zip(b.adjacency.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        });
        differing += usize::from(!same);
    }
    let distinct = cache.len();
    let limit = len - w + 1;
    verdict(
        "cache transparency",
        differing == 0 && distinct <= limit && cache.misses() == distinct,
        format!(
            "{} samples, {distinct} distinct graphs (limit {limit}), {} hits, {differing} differing sequences",
            samples.len(),
            cache.hits()
        ),
    );
}

// ----------------------------------------------------------- gradient suite

#[test]
fn gradient_suite_passes() {
    let started = Instant::now();
    let report = gradcheck(&GradcheckOptions::default()).unwrap();
    let secs = started.elapsed().as_secs_f64();
    let worst = report.groups.iter().max_by(|a, b| a.error.total_cmp(&b.error)).unwrap();
    verdict(
        "gradient suite",
        report.passed() && worst.error <= 1e-4 && secs < 120.0,
        format!(
            "{} groups, worst {} at {:.2e} (limit 1e-4), {secs:.1}s (limit 120s)",
            report.groups.len(),
            worst.name,
            worst.error
        ),
    );
}

// ----------------------------------------------------- structural invariants

#[test]
fn structural_invariants_hold() {
    let run = shared();
    let model = &run.model;
    let geometry = model.geometry();
    let m = geometry.m;
    let ends: Vec<usize> = (geometry.width() - 1..run.test.len() - 1).step_by(97).collect();
    let batch = assemble_batch(&run.test, &run.test_graphs, geometry, &ends);
    let (b, n) = (ends.len(), model.config.n_series);
    let mut problems = Vec::new();

    let mut g = Graph::new();
    let p = model.store.bind(&mut g);
    let window = g.leaf(batch.windows.clone());
    let graphs: Vec<_> = batch.graphs.iter().map(|t| g.leaf(t.clone())).collect();
    let enc = model.encoder.encode(&mut g, &p, window, &graphs, true, m - 1);
    let e = model.graph_head.predict(&mut g, &p, &enc.hidden);
    let ev = g.value(e).clone();
    let mut worst_diag: f64 = 0.0;
    let mut worst_sym: f64 = 0.0;
    let mut worst_range: f64 = 0.0;
    for k in 0..b {
        for i in 0..n {
            worst_diag = worst_diag.max((ev.data()[(k * n + i) * n + i] - 1.0).abs());
            for j in 0..n {
                let v = ev.data()[(k * n + i) * n + j];
                worst_sym = worst_sym.max((v - ev.data()[(k * n + j) * n + i]).abs());
                worst_range = worst_range.max(v.abs() - 1.0);
            }
        }
    }
    if worst_diag > 1e-12 || worst_sym > 1e-12 || worst_range > 1e-12 {
        problems.push(format!("E: diag {worst_diag:.1e}, sym {worst_sym:.1e}, range {worst_range:.1e}"));
    }

    let a_hat = model.predict(&batch).a_hat.unwrap();
    let a_diag = (0..b * n).map(|r| (a_hat.data()[r * n + r % n] - 1.0).abs()).fold(0.0, f64::max);
    if a_diag > 1e-12 {
        problems.push(format!("A_hat diagonal off by {a_diag:.1e}"));
    }

    // perturbing the last position leaves earlier positions untouched
    let pooled = GraphHead::pool_states(&mut g, &enc.hidden);
    let base = model.graph_head.sequence_states(&mut g, &p, pooled);
    let base = g.value(base).clone();
    let mut bumped = g.value(pooled).clone();
    let (s_len, d) = (m - 1, model.config.d);
    for row in 0..b * n {
        for c in 0..d {
            bumped.data_mut()[(row * s_len + s_len - 1) * d + c] += 0.7;
        }
    }
    let bumped_var = g.leaf(bumped);
    let after = model.graph_head.sequence_states(&mut g, &p, bumped_var);
    let after = g.value(after).clone();
    let mut causal_leaks = 0;
    let mut last_changed = false;
    for row in 0..b * n {
        for s in 0..s_len {
            for c in 0..d {
                let idx = (row * s_len + s) * d + c;
                let same = base.data()[idx].to_bits() == after.data()[idx].to_bits();
                if s + 1 < s_len && !same {
                    causal_leaks += 1;
                }
                last_changed |= s + 1 == s_len && !same;
            }
        }
    }
    if causal_leaks > 0 || !last_changed {
        problems.push(format!("causal mask: {causal_leaks} leaked values, last position changed {last_changed}"));
    }

    // with no edges, one node's input never reaches another node's output
    let w = geometry.w;
    let z_seg = g.slice(enc.z, 2, 0, w);
    let z_val = g.value(z_seg).clone();
    let empty = g.leaf(Tensor::zeros(&[b, n, n]));
    let out_base = model.encoder.mixhop_conv(&mut g, &p, z_seg, empty);
    let out_base = g.value(out_base).clone();
    let mut z_bumped = z_val.clone();
    for k in 0..b {
        for x in 0..w * d {
            z_bumped.data_mut()[(k * n) * w * d + x] += 1.3;
        }
    }
    let zb = g.leaf(z_bumped);
    let out_after = model.encoder.mixhop_conv(&mut g, &p, zb, empty);
    let out_after = g.value(out_after).clone();
    let mut mixed = 0;
    for k in 0..b {
        for i in 1..n {
            for x in 0..w * d {
                let idx = (k * n + i) * w * d + x;
                mixed += usize::from(out_base.data()[idx].to_bits() != out_after.data()[idx].to_bits());
            }
        }
    }
    if mixed > 0 {
        problems.push(format!("mixhop: {mixed} values of other nodes changed"));
    }

    verdict(
        "structural invariants",
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "{b} windows: E diag {worst_diag:.1e}, sym {worst_sym:.1e}, |E|-1 {worst_range:.1e}; A_hat diag {a_diag:.1e}; causal mask and mixhop isolation hold"
            )
        } else {
            problems.join("; ")
        },
    );
}

// ---------------------------------------------------------- training sanity

#[test]
fn training_reduces_loss() {
    let run = shared();
    let first = run.report.epochs.first().unwrap().train_total;
    let last = run.report.epochs.last().unwrap().train_total;
    let config = run_config();
    let (_, val_ends) = dygraphad::training::split_ends(&config, run.train.len()).unwrap();
    let reval = validation_loss(&run.model, &run.train, &run.train_graphs, &val_ends, config.batch_size).total;
    let rel = (reval - run.report.best_val_loss).abs() / run.report.best_val_loss.abs().max(f64::MIN_POSITIVE);
    verdict(
        "training sanity",
        last <= 0.5 * first && rel <= 1e-12 && run.train_seconds < 600.0,
        format!(
            "epoch 1 {first:.4e}, epoch {} {last:.4e} (ratio {:.3}, limit 0.5); best epoch {} val {:.6e}, re-evaluated {reval:.6e} (rel diff {rel:.1e}); {:.0}s (limit 600s)",
            run.report.epochs.len(),
            last / first,
            run.report.best_epoch,
            run.report.best_val_loss,
            run.train_seconds
        ),
    );
}

// --------------------------------------------------------- detection quality

fn class_f1(run: &Run, class: AnomalyClass, scores: &[f64]) -> EvalReport {
    let labels = run.test.labels.as_ref().unwrap();
    let own = run.data.manifest.class_labels(class);
    let include: Vec<bool> = (0..labels.len())
        .map(|t| run.scores.scored[t] && !(labels[t] != 0 && own[t] == 0))
        .collect();
    best_f1(scores, &own, true, Some(&include)).unwrap()
}

#[test]
fn fixture_is_unchanged() {
    let expected = SynthManifest::load(&fixture_path()).unwrap();
    let actual = generate(&SynthSpec::default()).unwrap().manifest;
    verdict(
        "synthetic fixture",
        expected == actual,
        format!("{} anomalies, generator version {}", actual.anomalies.len(), actual.generator_version),
    );
}

#[test]
fn detection_quality() {
    let run = shared();
    let labels = run.test.labels.as_ref().unwrap();
    let combined = best_f1(&run.scores.aggregate(), labels, true, Some(&run.scores.scored)).unwrap();
    let graph = run.scores.aggregate_graph().unwrap();
    let ts = run.scores.aggregate_ts().unwrap();
    let breaks_graph = class_f1(run, AnomalyClass::CorrelationBreak, &graph);
    let breaks_ts = class_f1(run, AnomalyClass::CorrelationBreak, &ts);
    let spikes_graph = class_f1(run, AnomalyClass::Spike, &graph);
    let spikes_ts = class_f1(run, AnomalyClass::Spike, &ts);
    let checks = [
        combined.f1 >= 0.90,
        breaks_graph.f1 > breaks_ts.f1,
        spikes_ts.f1 > spikes_graph.f1,
    ];
    verdict(
        "detection quality",
        checks.iter().all(|&c| c),
        format!(
            "combined PA-F1 {:.4} (limit 0.90); breaks graph {:.4} vs ts {:.4}; spikes ts {:.4} vs graph {:.4}",
            combined.f1, breaks_graph.f1, breaks_ts.f1, spikes_ts.f1, spikes_graph.f1
        ),
    );
}

// ------------------------------------------------------- deviation diagnostic

#[test]
fn deviation_is_larger_entering_anomalies() {
    let run = shared();
    let report = deviation_report(&run.test_graphs, run.test.labels.as_ref().unwrap()).unwrap();
    let nodes = report.normal.len();
    let drastic = report.nodes_more_drastic().unwrap_or(0);
    verdict(
        "deviation diagnostic",
        4 * drastic >= 3 * nodes,
        format!(
            "{drastic}/{nodes} nodes (limit 75%); {} normal and {} abnormal transitions",
            report.normal_transitions, report.abnormal_transitions
        ),
    );
}

// ---------------------------------------------------------- evaluation oracle

fn adjust_brute(labels: &[u8], preds: &[u8]) -> Vec<u8> {
    let mut out = preds.to_vec();
    let mut segments: Vec<(usize, usize)> = Vec::new();
    for t in 0..labels.len() {
        if labels[t] == 1 {
            match segments.last_mut() {
                Some((_, end)) if *end == t => *end = t + 1,
                _ => segments.push((t, t + 1)),
            }
        }
    }
    for (s, e) in segments {
        if (s..e).any(|t| preds[t] == 1) {
            (s..e).for_each(|t| out[t] = 1);
        }
    }
    out
}

fn f1_brute(scores: &[f64], labels: &[u8], theta: f64, adjust: bool) -> (f64, usize, usize, usize) {
    let preds: Vec<u8> = scores.iter().map(|&s| u8::from(s >= theta)).collect();
    let preds = if adjust { adjust_brute(labels, &preds) } else { preds };
    let tp = (0..labels.len()).filter(|&t| labels[t] == 1 && preds[t] == 1).count();
    let fp = (0..labels.len()).filter(|&t| labels[t] == 0 && preds[t] == 1).count();
    let fn_ = (0..labels.len()).filter(|&t| labels[t] == 1 && preds[t] == 0).count();
    let p = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let r = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (f1, tp, fp, fn_)
}

#[test]
fn evaluation_matches_brute_force() {
    let mut r = rng(14);
    let mut failures = Vec::new();
    for k in 0..100 {
        let len = r.random_range(2..40);
        let mut labels: Vec<u8> = (0..len).map(|_| u8::from(r.random_bool(0.3))).collect();
        labels[r.random_range(0..len)] = 1;
        let scores: Vec<f64> = (0..len).map(|_| r.random_range(0..12) as f64 / 4.0).collect();
        let preds: Vec<u8> = (0..len).map(|_| u8::from(r.random_bool(0.4))).collect();
        if point_adjust(&labels, &preds).unwrap() != adjust_brute(&labels, &preds) {
            failures.push(format!("instance {k}: point_adjust"));
        }
        for adjust in [false, true] {
            let mut candidates = scores.clone();
            candidates.sort_by(f64::total_cmp);
            candidates.dedup();
            // ascending with >=, so equal F1 resolves to the larger threshold
            let mut best = (f64::NEG_INFINITY, 0.0, 0, 0, 0);
            for &theta in &candidates {
                let (f1, tp, fp, fn_) = f1_brute(&scores, &labels, theta, adjust);
                if f1 >= best.0 {
                    best = (f1, theta, tp, fp, fn_);
                }
            }
            let got = best_f1(&scores, &labels, adjust, None).unwrap();
            if (got.f1, got.threshold, got.tp, got.fp, got.fn_) != best {
                failures.push(format!("instance {k} adjust {adjust}: got {got:?}, expected {best:?}"));
            }
        }
    }
    verdict(
        "evaluation oracle",
        failures.is_empty(),
        format!("100 instances, {} mismatches {:?}", failures.len(), failures.first()),
    );
}

// --------------------------------------------------------------- determinism

#[test]
fn end_to_end_is_deterministic() {
    let first = &shared().csv;
    let second = pipeline().csv;
    let differing = first.lines().zip(second.lines()).filter(|(a, b)| a != b).count();
    verdict(
        "determinism",
        *first == second,
        format!("scores.csv {} bytes, {differing} differing lines", first.len()),
    );
}
