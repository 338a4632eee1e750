//! Loading, down-sampling, normalization, windowing and splitting of
//! multivariate series.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A multivariate series with `N` named channels over `T` steps.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSeries {
    /// One row per series, each of length `T`.
    pub values: Vec<Vec<f64>>,
    /// Optional per-step anomaly labels (1 = anomalous).
    pub labels: Option<Vec<u8>>,
    pub series_names: Vec<String>,
    /// Sampling period.
    pub step_seconds: f64,
}

impl LabeledSeries {
    /// Validates shapes, finiteness and labels.
    pub fn new(
        values: Vec<Vec<f64>>,
        labels: Option<Vec<u8>>,
        series_names: Vec<String>,
        step_seconds: f64,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Argument("series has no channels".into()));
        }
        if series_names.len() != values.len() {
            return Err(Error::Argument(format!(
                "{} names for {} series",
                series_names.len(),
                values.len()
            )));
        }
        let len = values[0].len();
        for (name, row) in series_names.iter().zip(&values) {
            if row.len() != len {
                return Err(Error::Argument(format!("series {name} has {} steps, expected {len}", row.len())));
            }
            if let Some(pos) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::Argument(format!("series {name} has a non-finite value at step {pos}")));
            }
        }
        if let Some(l) = &labels {
            if l.len() != len {
                return Err(Error::Argument(format!("{} labels for {len} steps", l.len())));
            }
            if l.iter().any(|&v| v > 1) {
                return Err(Error::Argument("labels must be 0 or 1".into()));
            }
        }
        if !(step_seconds > 0.0) {
            return Err(Error::Argument("step_seconds must be positive".into()));
        }
        Ok(Self {
            values,
            labels,
            series_names,
            step_seconds,
        })
    }

    /// Builds a series with generated names `s0, s1, ...` and unit step.
    pub fn from_values(values: Vec<Vec<f64>>, labels: Option<Vec<u8>>) -> Result<Self> {
        let names = (0..values.len()).map(|i| format!("s{i}")).collect();
        Self::new(values, labels, names, 1.0)
    }

    pub fn n_series(&self) -> usize {
        self.values.len()
    }

    pub fn len(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Contiguous step range `[start, end)` as a new series.
    pub fn slice(&self, start: usize, end: usize) -> LabeledSeries {
        LabeledSeries {
            values: self.values.iter().map(|r| r[start..end].to_vec()).collect(),
            labels: self.labels.as_ref().map(|l| l[start..end].to_vec()),
            series_names: self.series_names.clone(),
            step_seconds: self.step_seconds,
        }
    }
}

/// Reads a CSV with a header row naming the series, one column per series.
///
/// When `label_column` is given, that column is read as 0/1 labels and
/// excluded from the series.
pub fn load_csv(path: &Path, label_column: Option<&str>) -> Result<LabeledSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let label_idx = match label_column {
        Some(name) => Some(
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::format(path, format!("label column `{name}` not in header")))?,
        ),
        None => None,
    };
    let names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != label_idx)
        .map(|(_, h)| h.clone())
        .collect();
    if names.is_empty() {
        return Err(Error::format(path, "no series columns"));
    }
    let mut values = vec![Vec::new(); names.len()];
    let mut labels = label_idx.map(|_| Vec::new());
    for (row_idx, record) in reader.records().enumerate() {
        let row = row_idx + 1;
        let record = record.map_err(|e| csv_error(path, e))?;
        let mut series = 0;
        for (col, cell) in record.iter().enumerate() {
            let bad = |message: String| Error::Load {
                path: path.to_path_buf(),
                row,
                column: headers[col].clone(),
                message,
            };
            let v: f64 = cell
                .parse()
                .map_err(|_| bad(format!("non-numeric cell `{cell}`")))?;
            if !v.is_finite() {
                return Err(bad(format!("non-finite cell `{cell}`")));
            }
            if Some(col) == label_idx {
                let label = match v {
                    x if x == 0.0 => 0,
                    x if x == 1.0 => 1,
                    _ => return Err(bad(format!("label `{cell}` is not 0 or 1"))),
                };
                labels.as_mut().unwrap().push(label);
            } else {
                values[series].push(v);
                series += 1;
            }
        }
    }
    LabeledSeries::new(values, labels, names, 1.0)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        csv::ErrorKind::UnequalLengths { pos, expected_len, len } => Error::Load {
            path: path.to_path_buf(),
            row: pos.as_ref().map_or(0, |p| p.record() as usize),
            column: format!("{len} fields"),
            message: format!("ragged row: expected {expected_len} fields"),
        },
        _ => Error::format(path, e.to_string()),
    }
}

/// Writes `series` in the format [`load_csv`] reads; labels go to `label_column`.
pub fn write_csv(series: &LabeledSeries, path: &Path, label_column: &str) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut header = series.series_names.join(",");
    if series.labels.is_some() {
        header.push(',');
        header.push_str(label_column);
    }
    let io = |e| Error::io(path, e);
    writeln!(out, "{header}").map_err(io)?;
    for t in 0..series.len() {
        let mut line = series
            .values
            .iter()
            .map(|row| format!("{}", row[t]))
            .collect::<Vec<_>>()
            .join(",");
        if let Some(labels) = &series.labels {
            line.push_str(&format!(",{}", labels[t]));
        }
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Replaces each disjoint block of `factor` steps by its per-series median.
///
/// A block is labeled anomalous if any step in it is; a trailing partial
/// block is kept as the median of what remains.
pub fn downsample_median(series: &LabeledSeries, factor: usize) -> Result<LabeledSeries> {
    if factor < 1 {
        return Err(Error::Argument("down-sample factor must be at least 1".into()));
    }
    let values = series
        .values
        .iter()
        .map(|row| row.chunks(factor).map(|c| median(&mut c.to_vec())).collect())
        .collect();
    let labels = series
        .labels
        .as_ref()
        .map(|l| l.chunks(factor).map(|c| u8::from(c.contains(&1))).collect());
    Ok(LabeledSeries {
        values,
        labels,
        series_names: series.series_names.clone(),
        step_seconds: series.step_seconds * factor as f64,
    })
}

/// Per-series min and max of the training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub series_names: Vec<String>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormStats {
    pub fn fit(series: &LabeledSeries) -> Self {
        let fold = |init: f64, f: fn(f64, f64) -> f64| -> Vec<f64> {
            series.values.iter().map(|r| r.iter().copied().fold(init, f)).collect()
        };
        Self {
            series_names: series.series_names.clone(),
            min: fold(f64::INFINITY, f64::min),
            max: fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("stats serialize");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let stats: NormStats = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if stats.min.len() != stats.max.len() || stats.min.len() != stats.series_names.len() {
            return Err(Error::format(path, "min/max/name lengths differ"));
        }
        Ok(stats)
    }
}

/// `(x - min) / (max - min)` per series; constant training series map to 0.
/// Values outside the training range are not clipped.
pub fn minmax_normalize(series: &LabeledSeries, stats: &NormStats) -> Result<LabeledSeries> {
    if stats.min.len() != series.n_series() || stats.max.len() != series.n_series() {
        return Err(Error::Argument(format!(
            "normalization stats cover {} series, data has {}",
            stats.min.len(),
            series.n_series()
        )));
    }
    let values = series
        .values
        .iter()
        .zip(stats.min.iter().zip(&stats.max))
        .map(|(row, (&lo, &hi))| {
            let span = hi - lo;
            row.iter()
                .map(|&x| if span > 0.0 { (x - lo) / span } else { 0.0 })
                .collect()
        })
        .collect();
    Ok(LabeledSeries {
        values,
        ..series.clone()
    })
}

/// Segment geometry of a sample: `m` consecutive segments of width `w`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Windowing {
    pub m: usize,
    pub w: usize,
}

impl Windowing {
    pub fn new(m: usize, w: usize) -> Result<Self> {
        if m == 0 || w == 0 {
            return Err(Error::Argument("m and w must be positive".into()));
        }
        Ok(Self { m, w })
    }

    /// Window width `c = m·w`.
    pub fn width(&self) -> usize {
        self.m * self.w
    }

    /// Original index of the last step of segment `s` (0-based) for a
    /// window ending at `t`.
    pub fn segment_end(&self, t: usize, s: usize) -> usize {
        t + 1 + self.w * (s + 1) - self.width() - 1
    }

    /// Window end indices for `len` steps at the given stride.
    pub fn ends(&self, len: usize, stride: usize) -> Result<Vec<usize>> {
        if stride == 0 {
            return Err(Error::Argument("stride must be at least 1".into()));
        }
        let c = self.width();
        if len < c {
            return Err(Error::DatasetTooShort { len, needed: c });
        }
        Ok((c - 1..len).step_by(stride).collect())
    }
}

/// One training or scoring sample ending at `end_index`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample {
    pub end_index: usize,
    /// `N × c` slice of the series ending at `end_index`.
    pub window: Vec<Vec<f64>>,
    /// Values at `end_index + 1`, absent for the final step.
    pub target: Option<Vec<f64>>,
    /// Inclusive window-relative column bounds of each segment.
    pub segment_bounds: Vec<(usize, usize)>,
}

/// Cuts `series` into windows of `m·w` steps ending at `c-1, c-1+stride, ...`.
pub fn make_windows(series: &LabeledSeries, m: usize, w: usize, stride: usize) -> Result<Vec<WindowSample>> {
    let geometry = Windowing::new(m, w)?;
    let c = geometry.width();
    let len = series.len();
    let segment_bounds: Vec<(usize, usize)> = (0..m).map(|s| (s * w, (s + 1) * w - 1)).collect();
    Ok(geometry
        .ends(len, stride)?
        .into_iter()
        .map(|t| WindowSample {
            end_index: t,
            window: series.values.iter().map(|r| r[t + 1 - c..=t].to_vec()).collect(),
            target: (t + 1 < len).then(|| series.values.iter().map(|r| r[t + 1]).collect()),
            segment_bounds: segment_bounds.clone(),
        })
        .collect())
}

/// Splits off the last `max(1, floor(len·fraction))` items as validation.
pub fn train_val_split<T>(mut samples: Vec<T>, fraction: f64) -> Result<(Vec<T>, Vec<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Argument(format!("validation fraction {fraction} outside (0, 1)")));
    }
    if samples.len() < 2 {
        return Err(Error::Argument("need at least two samples to split".into()));
    }
    let val = ((samples.len() as f64 * fraction).floor() as usize).max(1);
    let tail = samples.split_off(samples.len() - val);
    Ok((samples, tail))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn csv_file(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    fn one(row: Vec<f64>) -> LabeledSeries {
        LabeledSeries::from_values(vec![row], None).unwrap()
    }

    #[test]
    fn loads_plain_csv() {
        let f = csv_file("a,b,c\n1,2,3\n4,5,6\n7,8,9\n1,1,1\n0,0,0\n");
        let s = load_csv(f.path(), None).unwrap();
        assert_eq!((s.n_series(), s.len()), (3, 5));
        assert!(s.labels.is_none());
        assert_eq!(s.series_names, ["a", "b", "c"]);
        assert_eq!(s.values[1], [2., 5., 8., 1., 0.]);
    }

    #[test]
    fn loads_label_column() {
        let f = csv_file("a,attack,b\n1,0,2\n3,0,4\n5,0,6\n7,0,8\n9,0,1\n");
        let s = load_csv(f.path(), Some("attack")).unwrap();
        assert_eq!(s.labels.as_deref(), Some(&[0u8; 5][..]));
        assert_eq!(s.series_names, ["a", "b"]);
    }

    #[test]
    fn rejects_nan_with_position() {
        let f = csv_file("a,b\n1,2\n3,NaN\n");
        match load_csv(f.path(), None) {
            Err(Error::Load { row, column, .. }) => assert_eq!((row, column.as_str()), (2, "b")),
            other => panic!("expected load error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_non_numeric_and_ragged_rows() {
        let f = csv_file("a,b\n1,x\n");
        assert!(matches!(load_csv(f.path(), None), Err(Error::Load { .. })));
        let f = csv_file("a,b\n1,2\n3\n");
        assert!(matches!(load_csv(f.path(), None), Err(Error::Load { .. })));
        assert!(matches!(
            load_csv(Path::new("/nonexistent/file.csv"), None),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn csv_write_then_load_round_trips() {
        let s = LabeledSeries::from_values(vec![vec![0.1, 0.25], vec![-3.0, 1e-9]], Some(vec![0, 1])).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_csv(&s, f.path(), "label").unwrap();
        assert_eq!(load_csv(f.path(), Some("label")).unwrap(), s);
    }

    #[test]
    fn downsample_takes_block_medians() {
        let s = one(vec![1., 2., 3., 4., 5., 6.]);
        assert_eq!(downsample_median(&s, 2).unwrap().values[0], [1.5, 3.5, 5.5]);
        assert_eq!(downsample_median(&s, 1).unwrap(), s);
        assert!(downsample_median(&s, 0).is_err());
        // trailing partial block keeps the median of the remainder
        assert_eq!(downsample_median(&s, 4).unwrap().values[0], [2.5, 5.5]);
    }

    #[test]
    fn downsample_labels_any_anomalous() {
        let s = LabeledSeries::from_values(vec![vec![0.; 4]], Some(vec![0, 1, 0, 0])).unwrap();
        assert_eq!(downsample_median(&s, 2).unwrap().labels.unwrap(), [1, 0]);
    }

    #[test]
    fn minmax_contract() {
        let s = one(vec![2., 4., 6.]);
        let stats = NormStats::fit(&s);
        assert_eq!(minmax_normalize(&s, &stats).unwrap().values[0], [0., 0.5, 1.]);
        let c = one(vec![3., 3., 3.]);
        assert_eq!(minmax_normalize(&c, &NormStats::fit(&c)).unwrap().values[0], [0., 0., 0.]);
        let test = one(vec![8.]);
        assert!(minmax_normalize(&test, &stats).unwrap().values[0][0] > 1.0);
        let two = LabeledSeries::from_values(vec![vec![1.], vec![2.]], None).unwrap();
        assert!(minmax_normalize(&two, &stats).is_err());
    }

    #[test]
    fn norm_stats_file_round_trips() {
        let stats = NormStats::fit(&one(vec![0.5, -2.0]));
        let f = tempfile::NamedTempFile::new().unwrap();
        stats.save(f.path()).unwrap();
        assert_eq!(NormStats::load(f.path()).unwrap(), stats);
    }

    #[test]
    fn window_ends_and_targets() {
        let s = one((0..31).map(f64::from).collect());
        let w = make_windows(&s, 6, 5, 1).unwrap();
        assert_eq!(w.iter().map(|x| x.end_index).collect::<Vec<_>>(), [29, 30]);
        assert_eq!(w[0].target.as_deref(), Some(&[30.0][..]));
        assert!(w[1].target.is_none());

        let s = one((0..30).map(f64::from).collect());
        let w = make_windows(&s, 6, 5, 1).unwrap();
        assert_eq!(w.len(), 1);
        assert!(w[0].target.is_none());

        let s = one((0..29).map(f64::from).collect());
        assert!(matches!(make_windows(&s, 6, 5, 1), Err(Error::DatasetTooShort { .. })));
    }

    #[test]
    fn segment_bounds_within_window() {
        let s = one((0..8).map(f64::from).collect());
        let w = make_windows(&s, 2, 3, 1).unwrap();
        let at5 = w.iter().find(|x| x.end_index == 5).unwrap();
        assert_eq!(at5.segment_bounds, [(0, 2), (3, 5)]);
        let g = Windowing::new(2, 3).unwrap();
        assert_eq!((g.segment_end(5, 0), g.segment_end(5, 1)), (2, 5));
    }

    #[test]
    fn split_is_contiguous_tail() {
        let (tr, va) = train_val_split((0..10).collect::<Vec<_>>(), 0.2).unwrap();
        assert_eq!((tr.len(), va), (8, vec![8, 9]));
        let (tr, va) = train_val_split(vec![1, 2, 3], 0.5).unwrap();
        assert_eq!((tr.len(), va.len()), (2, 1));
        let (_, va) = train_val_split((0..100).collect::<Vec<_>>(), 0.2).unwrap();
        assert_eq!(va, (80..100).collect::<Vec<_>>());
        assert!(train_val_split(vec![1, 2], 1.0).is_err());
        assert!(train_val_split(vec![1, 2], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn windows_reproduce_series_slices(len in 6usize..40, m in 1usize..4, w in 1usize..4, stride in 1usize..4) {
            prop_assume!(len >= m * w);
            let s = LabeledSeries::from_values(
                vec![(0..len).map(|i| i as f64 * 0.5).collect(), (0..len).map(|i| (i * i) as f64).collect()],
                None,
            ).unwrap();
            for sample in make_windows(&s, m, w, stride).unwrap() {
                let start = sample.end_index + 1 - m * w;
                for (row, orig) in sample.window.iter().zip(&s.values) {
                    prop_assert_eq!(&row[..], &orig[start..=sample.end_index]);
                }
            }
        }

        #[test]
        fn downsample_step_count_composes(blocks in 1usize..20, a in 1usize..4, b in 1usize..4) {
            let s = one((0..blocks * a * b).map(|i| i as f64).collect());
            let direct = downsample_median(&s, a * b).unwrap();
            let staged = downsample_median(&downsample_median(&s, a).unwrap(), b).unwrap();
            prop_assert_eq!(direct.len(), staged.len());
        }

        #[test]
        fn train_stats_keep_train_in_unit_interval(row in proptest::collection::vec(-1e3f64..1e3, 1..50)) {
            let s = one(row);
            let n = minmax_normalize(&s, &NormStats::fit(&s)).unwrap();
            prop_assert!(n.values[0].iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
