//! Anomaly scores from forecast errors, and threshold evaluation.
//!
//! The score at step `t` comes from the sample whose window ends at `t-1`:
//! its series error is for the forecast of `y_t`, its graph error for the
//! forecast of the graph over the segment ending at `t-1`. Steps before the
//! first full window plus one carry no score.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::LabeledSeries;
use crate::error::{Error, Result};
use crate::graphs::{node_weight_deviation, SeriesGraphs};
use crate::model::{assemble_batch, DyGraphAd};

/// `a·b/(a+b)`, with the limit 0 when both errors vanish.
pub fn combine(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        a * b / (a + b)
    }
}

/// Per-step, per-series errors. Rows are steps; unscored steps hold zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSeries {
    pub n_series: usize,
    /// `T × N`, absent when the series task is ablated.
    pub err_ts: Option<Vec<Vec<f64>>>,
    /// `T × N`, absent when the graph task is ablated.
    pub err_graph: Option<Vec<Vec<f64>>>,
    /// `T × N`
    pub combined: Vec<Vec<f64>>,
    /// Which steps carry a score.
    pub scored: Vec<bool>,
}

fn row_mean(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().map(|r| r.iter().sum::<f64>() / r.len().max(1) as f64).collect()
}

impl ScoreSeries {
    pub fn len(&self) -> usize {
        self.scored.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scored.is_empty()
    }

    /// Mean over series of the combined score, per step.
    pub fn aggregate(&self) -> Vec<f64> {
        row_mean(&self.combined)
    }

    pub fn aggregate_ts(&self) -> Option<Vec<f64>> {
        self.err_ts.as_deref().map(row_mean)
    }

    pub fn aggregate_graph(&self) -> Option<Vec<f64>> {
        self.err_graph.as_deref().map(row_mean)
    }

    /// CSV with columns `t, err_ts, err_graph, combined[, label]` (series means).
    /// Unscored steps and ablated tasks leave their cells empty.
    pub fn to_csv(&self, labels: Option<&[u8]>) -> String {
        let ts = self.aggregate_ts();
        let graph = self.aggregate_graph();
        let combined = self.aggregate();
        let mut out = String::from("t,err_ts,err_graph,combined");
        if labels.is_some() {
            out.push_str(",label");
        }
        out.push('\n');
        let opt = |v: &Option<Vec<f64>>, t: usize| v.as_ref().map(|v| v[t].to_string()).unwrap_or_default();
        for t in 0..self.len() {
            if self.scored[t] {
                let _ = write!(out, "{t},{},{},{}", opt(&ts, t), opt(&graph, t), combined[t]);
            } else {
                let _ = write!(out, "{t},,,");
            }
            if let Some(l) = labels {
                let _ = write!(out, ",{}", l[t]);
            }
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: &Path, labels: Option<&[u8]>) -> Result<()> {
        std::fs::write(path, self.to_csv(labels)).map_err(|e| Error::io(path, e))
    }
}

/// Scores every step of a normalized series with an eval-mode model.
pub fn score(model: &DyGraphAd, series: &LabeledSeries, graphs: &SeriesGraphs, batch_size: usize) -> Result<ScoreSeries> {
    let geometry = model.geometry();
    let (len, n) = (series.len(), series.n_series());
    if n != model.config.n_series {
        return Err(Error::Shape(format!("model expects {} series, data has {n}", model.config.n_series)));
    }
    if !graphs.matches(n, len, model.config.w, graphs.tau()) {
        return Err(Error::Argument("graph store does not match the series".into()));
    }
    let ends: Vec<usize> = geometry.ends(len, 1)?.into_iter().filter(|&t| t + 1 < len).collect();
    let ab = model.config.ablation;
    let mut err_ts = ab.ts_task().then(|| vec![vec![0.0; n]; len]);
    let mut err_graph = ab.graph_task().then(|| vec![vec![0.0; n]; len]);
    let mut scored = vec![false; len];
    for chunk in ends.chunks(batch_size.max(1)) {
        let batch = assemble_batch(series, graphs, geometry, chunk);
        let pred = model.predict(&batch);
        for (b, &t) in chunk.iter().enumerate() {
            let step = t + 1;
            scored[step] = true;
            if let (Some(rows), Some(y_hat)) = (err_ts.as_mut(), pred.y_hat.as_ref()) {
                for i in 0..n {
                    let d = series.values[i][step] - y_hat.data()[b * n + i];
                    rows[step][i] = d * d;
                }
            }
            if let (Some(rows), Some(a_hat)) = (err_graph.as_mut(), pred.a_hat.as_ref()) {
                let target = batch.graphs[geometry.m - 1].data();
                for i in 0..n {
                    let base = (b * n + i) * n;
                    rows[step][i] = (0..n)
                        .map(|j| {
                            let d = target[base + j] - a_hat.data()[base + j];
                            d * d
                        })
                        .sum::<f64>()
                        / n as f64;
                }
            }
        }
    }
    let combined = (0..len)
        .map(|t| {
            (0..n)
                .map(|i| match (&err_ts, &err_graph) {
                    (Some(a), Some(b)) => combine(a[t][i], b[t][i]),
                    (Some(a), None) => a[t][i],
                    (None, Some(b)) => b[t][i],
                    (None, None) => 0.0,
                })
                .collect()
        })
        .collect();
    Ok(ScoreSeries {
        n_series: n,
        err_ts,
        err_graph,
        combined,
        scored,
    })
}

/// Aggregate scores read back from [`ScoreSeries::to_csv`] output.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable {
    pub err_ts: Option<Vec<f64>>,
    pub err_graph: Option<Vec<f64>>,
    pub combined: Vec<f64>,
    pub scored: Vec<bool>,
    pub labels: Option<Vec<u8>>,
}

impl ScoreTable {
    pub fn load_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        let headers = reader.headers().map_err(|e| Error::format(path, e.to_string()))?.clone();
        let expected = ["t", "err_ts", "err_graph", "combined"];
        if headers.len() < 4 || headers.iter().take(4).ne(expected) {
            return Err(Error::format(path, "expected header t,err_ts,err_graph,combined[,label]"));
        }
        let has_labels = headers.get(4) == Some("label");
        let mut cols: [Vec<Option<f64>>; 3] = Default::default();
        let mut labels = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::format(path, e.to_string()))?;
            let cell = |i: usize| -> Result<Option<f64>> {
                let text = record.get(i).unwrap_or("");
                if text.is_empty() {
                    return Ok(None);
                }
                text.parse::<f64>()
                    .map(Some)
                    .map_err(|_| Error::format(path, format!("row {}: bad number `{text}`", row + 1)))
            };
            for (k, col) in cols.iter_mut().enumerate() {
                col.push(cell(k + 1)?);
            }
            if has_labels {
                labels.push(match record.get(4) {
                    Some("0") => 0,
                    Some("1") => 1,
                    other => return Err(Error::format(path, format!("row {}: bad label {other:?}", row + 1))),
                });
            }
        }
        let [ts, graph, combined] = cols;
        let scored: Vec<bool> = combined.iter().map(Option::is_some).collect();
        let column = |c: Vec<Option<f64>>| {
            let present = c.iter().zip(&scored).any(|(v, &s)| s && v.is_some());
            present.then(|| c.into_iter().map(|v| v.unwrap_or(0.0)).collect())
        };
        Ok(Self {
            err_ts: column(ts),
            err_graph: column(graph),
            combined: combined.into_iter().map(|v| v.unwrap_or(0.0)).collect(),
            scored,
            labels: has_labels.then_some(labels),
        })
    }
}

/// Linear-interpolation quantile of sorted data (`q` in `[0, 1]`).
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// `(s - median) / IQR` with statistics from `train_scores`; an IQR of 0 divides by 1.
pub fn iqr_scale(scores: &[f64], train_scores: &[f64]) -> Result<Vec<f64>> {
    if train_scores.is_empty() {
        return Err(Error::Argument("iqr_scale needs training scores".into()));
    }
    let mut sorted = train_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = quantile_sorted(&sorted, 0.5);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let denom = if iqr > 0.0 { iqr } else { 1.0 };
    Ok(scores.iter().map(|s| (s - median) / denom).collect())
}

/// Marks every labeled run that contains at least one prediction as fully predicted.
pub fn point_adjust(labels: &[u8], preds: &[u8]) -> Result<Vec<u8>> {
    if labels.len() != preds.len() {
        return Err(Error::Shape(format!("labels {} vs preds {}", labels.len(), preds.len())));
    }
    let mut out = preds.to_vec();
    let mut t = 0;
    while t < labels.len() {
        if labels[t] == 0 {
            t += 1;
            continue;
        }
        let start = t;
        while t < labels.len() && labels[t] != 0 {
            t += 1;
        }
        if out[start..t].iter().any(|&p| p != 0) {
            out[start..t].iter_mut().for_each(|p| *p = 1);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub point_adjusted: bool,
}

fn report(threshold: f64, tp: usize, fp: usize, fn_: usize, tn: usize, adjust: bool) -> EvalReport {
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    EvalReport {
        threshold,
        tp,
        fp,
        fn_,
        tn,
        precision,
        recall,
        f1,
        point_adjusted: adjust,
    }
}

fn check_inputs(scores: &[f64], labels: &[u8], include: Option<&[bool]>) -> Result<()> {
    if scores.len() != labels.len() || include.is_some_and(|m| m.len() != scores.len()) {
        return Err(Error::Shape("scores, labels and mask must have equal length".into()));
    }
    let any_positive = (0..labels.len()).any(|t| labels[t] != 0 && include.is_none_or(|m| m[t]));
    if !any_positive {
        return Err(Error::Argument("labels contain no anomalies; recall is undefined".into()));
    }
    Ok(())
}

/// Counts at a fixed threshold; steps with `include[t] == false` are ignored.
pub fn evaluate_at(scores: &[f64], labels: &[u8], threshold: f64, adjust: bool, include: Option<&[bool]>) -> Result<EvalReport> {
    check_inputs(scores, labels, include)?;
    let keep = |t: usize| include.is_none_or(|m| m[t]);
    let eff_labels: Vec<u8> = (0..labels.len()).map(|t| u8::from(keep(t) && labels[t] != 0)).collect();
    let preds: Vec<u8> = (0..scores.len()).map(|t| u8::from(keep(t) && scores[t] >= threshold)).collect();
    let preds = if adjust { point_adjust(&eff_labels, &preds)? } else { preds };
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for t in (0..scores.len()).filter(|&t| keep(t)) {
        match (eff_labels[t], preds[t]) {
            (1, 1) => tp += 1,
            (0, 1) => fp += 1,
            (1, 0) => fn_ += 1,
            _ => tn += 1,
        }
    }
    Ok(report(threshold, tp, fp, fn_, tn, adjust))
}

/// Best F1 over thresholds at the distinct included score values, predicting
/// `score >= θ`; ties go to the larger threshold.
pub fn best_f1(scores: &[f64], labels: &[u8], adjust: bool, include: Option<&[bool]>) -> Result<EvalReport> {
    check_inputs(scores, labels, include)?;
    let keep = |t: usize| include.is_none_or(|m| m[t]);
    if let Some(t) = (0..scores.len()).find(|&t| keep(t) && !scores[t].is_finite()) {
        return Err(Error::Argument(format!("non-finite score at step {t}")));
    }
    // Label runs over included steps, split wherever a step is excluded.
    let mut run_of = vec![usize::MAX; scores.len()];
    let mut run_len = Vec::new();
    for t in 0..scores.len() {
        if keep(t) && labels[t] != 0 {
            if t == 0 || run_of[t - 1] == usize::MAX {
                run_len.push(0);
            }
            run_of[t] = run_len.len() - 1;
            *run_len.last_mut().unwrap() += 1;
        }
    }
    let positives: usize = run_len.iter().sum();
    let total = (0..scores.len()).filter(|&t| keep(t)).count();
    let mut order: Vec<usize> = (0..scores.len()).filter(|&t| keep(t)).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut detected = vec![false; run_len.len()];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best: Option<EvalReport> = None;
    let mut i = 0;
    while i < order.len() {
        let theta = scores[order[i]];
        while i < order.len() && scores[order[i]] == theta {
            let t = order[i];
            match run_of[t] {
                usize::MAX => fp += 1,
                r if adjust => {
                    if !detected[r] {
                        detected[r] = true;
                        tp += run_len[r];
                    }
                }
                _ => tp += 1,
            }
            i += 1;
        }
        let fn_ = positives - tp;
        let tn = total - positives - fp;
        let r = report(theta, tp, fp, fn_, tn, adjust);
        if best.as_ref().is_none_or(|b| r.f1 > b.f1) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one positive, so at least one candidate"))
}

/// Node-weight deviation between consecutive non-overlapping segments,
/// split by whether the later segment enters an anomaly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    /// Mean deviation per node over normal→normal transitions.
    pub normal: Vec<f64>,
    /// Mean deviation per node over normal→abnormal transitions; absent when none occur.
    pub abnormal: Option<Vec<f64>>,
    pub normal_transitions: usize,
    pub abnormal_transitions: usize,
}

impl DeviationReport {
    /// Nodes whose abnormal-transition deviation exceeds the normal one.
    pub fn nodes_more_drastic(&self) -> Option<usize> {
        self.abnormal
            .as_ref()
            .map(|a| a.iter().zip(&self.normal).filter(|(a, n)| a > n).count())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("node,normal,abnormal\n");
        for (i, n) in self.normal.iter().enumerate() {
            let a = self.abnormal.as_ref().map(|a| a[i].to_string()).unwrap_or_default();
            let _ = writeln!(out, "{i},{n},{a}");
        }
        out
    }
}

/// Compares node-weight changes at normal→normal and normal→abnormal
/// transitions between consecutive width-`w` segments ending at `w-1+k·w`.
pub fn deviation_report(graphs: &SeriesGraphs, labels: &[u8]) -> Result<DeviationReport> {
    let w = graphs.w();
    let len = graphs.len() + w - 1;
    if labels.len() != len {
        return Err(Error::Shape(format!("labels {} vs series length {len}", labels.len())));
    }
    let ends: Vec<usize> = (w - 1..len).step_by(w).collect();
    let seq: Vec<_> = ends.iter().map(|&e| graphs.at(e)).collect();
    let n = graphs.n();
    let dev = if seq.len() >= 2 { node_weight_deviation(&seq)? } else { vec![Vec::new(); n] };
    let segment_normal = |e: usize| labels[e + 1 - w..=e].iter().all(|&l| l == 0);
    let mut normal = vec![0.0; n];
    let mut abnormal = vec![0.0; n];
    let (mut nn, mut na) = (0, 0);
    for k in 0..seq.len().saturating_sub(1) {
        if !segment_normal(ends[k]) {
            continue;
        }
        let target = if segment_normal(ends[k + 1]) {
            nn += 1;
            &mut normal
        } else {
            na += 1;
            &mut abnormal
        };
        for i in 0..n {
            target[i] += dev[i][k];
        }
    }
    if nn > 0 {
        normal.iter_mut().for_each(|v| *v /= nn as f64);
    }
    abnormal.iter_mut().for_each(|v| *v /= na.max(1) as f64);
    Ok(DeviationReport {
        normal,
        abnormal: (na > 0).then_some(abnormal),
        normal_transitions: nn,
        abnormal_transitions: na,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{Adjacency, ReferenceKernel};
    use proptest::prelude::*;

    #[test]
    fn combine_examples() {
        assert_eq!(combine(2.0, 2.0), 1.0);
        assert_eq!(combine(1.0, 3.0), 0.75);
        assert_eq!(combine(0.0, 0.0), 0.0);
        assert_eq!(combine(0.0, 5.0), 0.0);
    }

    proptest! {
        #[test]
        fn combine_is_below_both(a in 0.0f64..10.0, b in 0.0f64..10.0) {
            let c = combine(a, b);
            prop_assert!(c <= a.min(b) + 1e-15);
            prop_assert!(c >= 0.0);
        }

        #[test]
        fn point_adjust_only_raises_within_runs(
            pairs in proptest::collection::vec((0u8..2, 0u8..2), 0..40)
        ) {
            let (labels, preds): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let out = point_adjust(&labels, &preds).unwrap();
            for t in 0..labels.len() {
                prop_assert!(out[t] >= preds[t]);
                if labels[t] == 0 {
                    prop_assert_eq!(out[t], preds[t]);
                }
            }
            prop_assert_eq!(point_adjust(&labels, &out).unwrap(), out);
        }
    }

    #[test]
    fn iqr_examples() {
        let s = iqr_scale(&[5.0, 3.0], &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(s, vec![1.0, 0.0]);
        let s = iqr_scale(&[5.0], &[2.0, 2.0, 2.0]).unwrap();
        assert_eq!(s, vec![3.0]);
        assert!(iqr_scale(&[1.0], &[]).is_err());
    }

    #[test]
    fn point_adjust_examples() {
        assert_eq!(point_adjust(&[0, 1, 1, 1, 0], &[0, 0, 1, 0, 0]).unwrap(), vec![0, 1, 1, 1, 0]);
        assert_eq!(point_adjust(&[0, 1, 1, 0], &[0, 0, 0, 0]).unwrap(), vec![0, 0, 0, 0]);
        assert_eq!(point_adjust(&[1, 1, 0, 1], &[1, 0, 0, 0]).unwrap(), vec![1, 1, 0, 0]);
        assert!(point_adjust(&[1], &[1, 0]).is_err());
    }

    #[test]
    fn best_f1_examples() {
        let r = best_f1(&[0.1, 0.9, 0.2], &[0, 1, 0], false, None).unwrap();
        assert_eq!((r.threshold, r.precision, r.recall, r.f1), (0.9, 1.0, 1.0, 1.0));
        // one candidate: everything predicted positive, F1 = 2a/(a + len)
        let r = best_f1(&[0.5; 5], &[1, 0, 1, 0, 0], false, None).unwrap();
        assert!((r.f1 - 2.0 * 2.0 / (2.0 + 5.0)).abs() < 1e-15);
        assert!(best_f1(&[0.1, 0.2], &[0, 0], false, None).is_err());
    }

    #[test]
    fn tie_breaks_to_larger_threshold() {
        // θ = 0.8 and θ = 0.1 both give F1 = 2/3
        let r = best_f1(&[0.8, 0.5, 0.4, 0.1], &[1, 0, 0, 1], false, None).unwrap();
        assert_eq!(r.threshold, 0.8);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn excluded_steps_do_not_count() {
        let include = [false, true, true, true];
        let r = best_f1(&[9.0, 0.1, 0.9, 0.2], &[0, 0, 1, 0], false, Some(&include)).unwrap();
        assert_eq!((r.threshold, r.f1, r.tn), (0.9, 1.0, 2));
        // an excluded step splits a label run in two
        let r = evaluate_at(&[0.0, 1.0, 0.0, 0.0], &[1, 1, 1, 1], 0.5, true, Some(&[true, true, false, true])).unwrap();
        assert_eq!((r.tp, r.fn_), (2, 1));
    }

    #[test]
    fn sweep_agrees_with_fixed_threshold_counts() {
        let scores = [0.3, 0.7, 0.2, 0.9, 0.7, 0.1, 0.4];
        let labels = [0, 1, 1, 0, 0, 1, 1];
        for adjust in [false, true] {
            let best = best_f1(&scores, &labels, adjust, None).unwrap();
            let again = evaluate_at(&scores, &labels, best.threshold, adjust, None).unwrap();
            assert_eq!(best, again);
        }
    }

    fn series_graphs(adjs: Vec<Vec<f64>>, n: usize, w: usize) -> SeriesGraphs {
        // SeriesGraphs only round-trips through its store format
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.bin");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"DGADGRPH");
        bytes.extend_from_slice(&(n as u64).to_le_bytes());
        bytes.extend_from_slice(&(w as u64).to_le_bytes());
        bytes.extend_from_slice(&1.0f64.to_le_bytes());
        bytes.extend_from_slice(&(adjs.len() as u64).to_le_bytes());
        for a in &adjs {
            Adjacency::new(n, a.clone()).unwrap();
            for v in a {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(&path, bytes).unwrap();
        SeriesGraphs::load(&path).unwrap()
    }

    #[test]
    fn deviation_of_static_graphs_is_zero() {
        let w = 2;
        let len = 12;
        let adj = vec![1.0, 0.5, 0.5, 1.0];
        let graphs = series_graphs(vec![adj; len - w + 1], 2, w);
        let mut labels = vec![0u8; len];
        labels[8] = 1;
        let r = deviation_report(&graphs, &labels).unwrap();
        assert_eq!(r.normal, vec![0.0, 0.0]);
        assert_eq!(r.abnormal, Some(vec![0.0, 0.0]));
        assert_eq!((r.normal_transitions, r.abnormal_transitions), (3, 1));
        let r = deviation_report(&graphs, &vec![0u8; len]).unwrap();
        assert!(r.abnormal.is_none());
        assert_eq!(r.nodes_more_drastic(), None);
    }

    #[test]
    fn deviation_tracks_weight_changes() {
        let (n, w) = (2, 1);
        let adjs = vec![
            vec![1.0, 0.9, 0.9, 1.0],
            vec![1.0, 0.8, 0.8, 1.0],
            vec![1.0, 0.2, 0.2, 1.0],
            vec![1.0, 0.2, 0.2, 1.0],
        ];
        let graphs = series_graphs(adjs, n, w);
        let r = deviation_report(&graphs, &[0, 0, 1, 1]).unwrap();
        let node_weight = |a: f64| graphs.at(0).node_weights()[0] - 0.9 + a;
        let expect_normal = (node_weight(0.8) - node_weight(0.9)).abs();
        assert!((r.normal[0] - expect_normal).abs() < 1e-12);
        assert_eq!(r.abnormal_transitions, 1);
        assert!(r.abnormal.as_ref().unwrap()[0] > r.normal[0]);
    }

    #[test]
    fn scores_align_with_forecast_steps() {
        use crate::config::ModelConfig;
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let values: Vec<Vec<f64>> = (0..3).map(|_| (0..40).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let series = LabeledSeries::from_values(values, None).unwrap();
        let graphs = SeriesGraphs::build(&series, 3, 1.0, &ReferenceKernel).unwrap();
        let mut cfg = ModelConfig::new(3, 4, 1, 3, 3);
        cfg.heads = 2;
        let model = DyGraphAd::new(cfg, 1).unwrap();
        let s = score(&model, &series, &graphs, 7).unwrap();
        assert!(s.scored[..9].iter().all(|&x| !x));
        assert!(s.scored[9..].iter().all(|&x| x));
        // step 20 is the forecast made from the window ending at 19
        let batch = assemble_batch(&series, &graphs, model.geometry(), &[19]);
        let pred = model.predict(&batch);
        let y = pred.y_hat.unwrap();
        let a = pred.a_hat.unwrap();
        let ts = s.err_ts.as_ref().unwrap();
        let gr = s.err_graph.as_ref().unwrap();
        for i in 0..3 {
            let d = series.values[i][20] - y.data()[i];
            assert!((ts[20][i] - d * d).abs() < 1e-15);
            let target = graphs.at(19);
            let row: f64 = (0..3).map(|j| (target.get(i, j) - a.data()[i * 3 + j]).powi(2)).sum::<f64>() / 3.0;
            assert!((gr[20][i] - row).abs() < 1e-15);
            assert_eq!(s.combined[20][i], combine(ts[20][i], gr[20][i]));
        }
        let csv = s.to_csv(None);
        assert_eq!(csv.lines().count(), 41);
        assert!(csv.starts_with("t,err_ts,err_graph,combined\n0,,,\n"));

        let f = tempfile::NamedTempFile::new().unwrap();
        let labels: Vec<u8> = (0..40).map(|t| u8::from(t % 7 == 0)).collect();
        s.save_csv(f.path(), Some(&labels)).unwrap();
        let back = ScoreTable::load_csv(f.path()).unwrap();
        assert_eq!(back.scored, s.scored);
        assert_eq!(back.combined, s.aggregate());
        assert_eq!(back.err_ts, s.aggregate_ts());
        assert_eq!(back.err_graph, s.aggregate_graph());
        assert_eq!(back.labels, Some(labels));
    }

    #[test]
    fn ablated_columns_read_back_as_absent() {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), "t,err_ts,err_graph,combined\n0,,,\n1,0.5,,0.5\n").unwrap();
        let back = ScoreTable::load_csv(f.path()).unwrap();
        assert_eq!(back.err_ts, Some(vec![0.0, 0.5]));
        assert_eq!(back.err_graph, None);
        assert_eq!(back.scored, vec![false, true]);
        assert_eq!(back.labels, None);
        std::fs::write(f.path(), "a,b\n1,2\n").unwrap();
        assert!(matches!(ScoreTable::load_csv(f.path()), Err(Error::Format { .. })));
    }
}
