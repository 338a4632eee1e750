//! Dynamic correlation graphs built from squared DTW distances.
//!
//! `A_ij = exp(-dtw_sq(S_i, S_j) / tau)` over the segment ending at a given
//! step. Every segment a sample needs is the window `[u - w + 1, u]` for some
//! end `u`, so graphs are cached and stored by window end.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};

use crate::dataio::{LabeledSeries, WindowSample, Windowing};
use crate::error::{Error, Result};

/// Squared-cost DTW with a full warping band.
///
/// Returns the minimum accumulated `(a_i - b_j)^2` over monotone warping
/// paths from `(0, 0)` to `(w-1, w-1)`; no square root is taken.
pub fn dtw_sq(a: &[f64], b: &[f64]) -> Result<f64> {
    dtw_sq_band(a, b, None)
}

/// [`dtw_sq`] restricted to `|i - j| <= band` when a band radius is given.
pub fn dtw_sq_band(a: &[f64], b: &[f64], band: Option<usize>) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Argument("dtw of an empty sequence".into()));
    }
    if a.len() != b.len() {
        return Err(Error::Argument(format!("dtw length mismatch: {} vs {}", a.len(), b.len())));
    }
    Ok(dtw_kernel(a, b, band))
}

/// Row-major DP; `min(min(up, left), diag)` in that order so other
/// implementations can reproduce results bit-for-bit.
fn dtw_kernel(a: &[f64], b: &[f64], band: Option<usize>) -> f64 {
    let n = a.len();
    let radius = band.unwrap_or(n);
    let mut prev = vec![f64::INFINITY; n];
    let mut cur = vec![f64::INFINITY; n];
    for i in 0..n {
        let lo = i.saturating_sub(radius);
        let hi = (i + radius).min(n - 1);
        cur.iter_mut().for_each(|v| *v = f64::INFINITY);
        for j in lo..=hi {
            let diff = a[i] - b[j];
            let cost = diff * diff;
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let up = if i > 0 { prev[j] } else { f64::INFINITY };
                let left = if j > 0 { cur[j - 1] } else { f64::INFINITY };
                let diag = if i > 0 && j > 0 { prev[j - 1] } else { f64::INFINITY };
                up.min(left).min(diag)
            };
            cur[j] = cost + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[n - 1]
}

/// Dense symmetric `N × N` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Adjacency {
    n: usize,
    data: Vec<f64>,
}

impl Adjacency {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Shape(format!("{} values for a {n}x{n} matrix", data.len())));
        }
        Ok(Self { n, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { n, data }
    }

    pub fn filled(n: usize, value: f64) -> Self {
        Self { n, data: vec![value; n * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Node weight: row sum of edge weights.
    pub fn node_weights(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).iter().sum()).collect()
    }
}

/// The correlation graph of the segment ending at `window_end`.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationGraph {
    pub adjacency: Adjacency,
    pub window_end: usize,
    pub tau: f64,
}

/// The `m` graphs of one sample, in segment order.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphSequence {
    pub graphs: Vec<Arc<CorrelationGraph>>,
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Argument(format!("tau must be positive, got {tau}")))
    }
}

fn correlation_rows(rows: &[&[f64]], tau: f64, band: Option<usize>, out: &mut [f64]) {
    let n = rows.len();
    for i in 0..n {
        out[i * n + i] = 1.0;
        for j in i + 1..n {
            let v = (-dtw_kernel(rows[i], rows[j], band) / tau).exp();
            out[i * n + j] = v;
            out[j * n + i] = v;
        }
    }
}

/// `A_ij = exp(-dtw_sq(row_i, row_j) / tau)` for `i < j`, mirrored, unit diagonal.
pub fn correlation_graph(segment: &[Vec<f64>], tau: f64) -> Result<Adjacency> {
    correlation_graph_band(segment, tau, None)
}

pub fn correlation_graph_band(segment: &[Vec<f64>], tau: f64, band: Option<usize>) -> Result<Adjacency> {
    check_tau(tau)?;
    let w = segment.first().map_or(0, Vec::len);
    if w == 0 || segment.iter().any(|r| r.len() != w) {
        return Err(Error::Argument("segment rows must be non-empty and of equal length".into()));
    }
    let rows: Vec<&[f64]> = segment.iter().map(Vec::as_slice).collect();
    let n = rows.len();
    let mut data = vec![0.0; n * n];
    correlation_rows(&rows, tau, band, &mut data);
    Ok(Adjacency { n, data })
}

/// Batched graph construction over a flat `count × N × w` buffer.
///
/// Implementations must match [`ReferenceKernel`] bit-for-bit.
pub trait CorrelationKernel: Send + Sync {
    fn name(&self) -> &'static str;

    /// Writes `count × N × N` adjacency values into `out`.
    fn batch_correlation_graphs(&self, windows: &[f64], n: usize, w: usize, count: usize, tau: f64, out: &mut [f64]) -> Result<()>;
}

/// Portable implementation of [`CorrelationKernel`].
#[derive(Clone, Copy, Debug, Default)]
pub struct ReferenceKernel;

impl CorrelationKernel for ReferenceKernel {
    fn name(&self) -> &'static str {
        "reference"
    }

    fn batch_correlation_graphs(&self, windows: &[f64], n: usize, w: usize, count: usize, tau: f64, out: &mut [f64]) -> Result<()> {
        check_tau(tau)?;
        if windows.len() != count * n * w {
            return Err(Error::Shape(format!("window buffer has {} values, expected {}", windows.len(), count * n * w)));
        }
        if out.len() != count * n * n {
            return Err(Error::Shape(format!("output buffer has {} values, expected {}", out.len(), count * n * n)));
        }
        if w == 0 && count > 0 {
            return Err(Error::Argument("segment width must be positive".into()));
        }
        for k in 0..count {
            let block = &windows[k * n * w..(k + 1) * n * w];
            let rows: Vec<&[f64]> = block.chunks(w).collect();
            correlation_rows(&rows, tau, None, &mut out[k * n * n..(k + 1) * n * n]);
        }
        Ok(())
    }
}

/// Which batch kernel graph construction should use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum KernelChoice {
    #[default]
    Auto,
    On,
    Off,
}

impl std::str::FromStr for KernelChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "on" => Ok(Self::On),
            "off" => Ok(Self::Off),
            _ => Err(Error::Argument(format!("kernel choice `{s}` is not auto, on or off"))),
        }
    }
}

/// Resolves a kernel; this build carries no native kernel, so `On` fails
/// and `Auto` falls back to the reference implementation.
pub fn select_kernel(choice: KernelChoice) -> Result<Box<dyn CorrelationKernel>> {
    match choice {
        KernelChoice::On => Err(Error::Config("native kernel requested but not built".into())),
        KernelChoice::Auto | KernelChoice::Off => Ok(Box::new(ReferenceKernel)),
    }
}

/// Thread-safe cache of graphs keyed by window end for one series.
///
/// The cache is only valid for a single series, `w` and `tau`.
#[derive(Debug)]
pub struct GraphCache {
    w: usize,
    tau: f64,
    capacity: Option<usize>,
    entries: RwLock<BTreeMap<usize, Arc<CorrelationGraph>>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl GraphCache {
    /// A cache holding at most `capacity` graphs (unbounded when `None`);
    /// when full, the graph with the smallest window end is evicted.
    pub fn new(w: usize, tau: f64, capacity: Option<usize>) -> Result<Self> {
        check_tau(tau)?;
        if w == 0 {
            return Err(Error::Argument("segment width must be positive".into()));
        }
        Ok(Self {
            w,
            tau,
            capacity,
            entries: RwLock::new(BTreeMap::new()),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Returns the cached graph for `end`, computing it with `compute` on a miss.
    ///
    /// Concurrent misses on the same key may both compute; the results are
    /// identical and the first insert wins.
    pub fn get_or_insert_with(&self, end: usize, compute: impl FnOnce() -> Result<Adjacency>) -> Result<Arc<CorrelationGraph>> {
        if let Some(g) = self.entries.read().unwrap().get(&end) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(Arc::clone(g));
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let graph = Arc::new(CorrelationGraph {
            adjacency: compute()?,
            window_end: end,
            tau: self.tau,
        });
        let mut entries = self.entries.write().unwrap();
        if let Some(cap) = self.capacity {
            while entries.len() >= cap.max(1) {
                let first = *entries.keys().next().unwrap();
                entries.remove(&first);
            }
        }
        Ok(Arc::clone(entries.entry(end).or_insert(graph)))
    }

    /// Graph of `series` over the segment ending at `end`.
    pub fn series_graph(&self, series: &LabeledSeries, end: usize) -> Result<Arc<CorrelationGraph>> {
        if end + 1 < self.w || end >= series.len() {
            return Err(Error::Argument(format!("no full segment ends at {end}")));
        }
        self.get_or_insert_with(end, || {
            let rows: Vec<&[f64]> = series.values.iter().map(|r| &r[end + 1 - self.w..=end]).collect();
            let mut data = vec![0.0; rows.len() * rows.len()];
            correlation_rows(&rows, self.tau, None, &mut data);
            Adjacency::new(rows.len(), data)
        })
    }
}

/// Builds the `m` graphs of `sample`, consulting `cache` by window end.
pub fn build_sequence(sample: &WindowSample, tau: f64, cache: Option<&GraphCache>) -> Result<GraphSequence> {
    check_tau(tau)?;
    let m = sample.segment_bounds.len();
    if m == 0 {
        return Err(Error::Argument("sample has no segments".into()));
    }
    let c = sample.window.first().map_or(0, Vec::len);
    let mut graphs = Vec::with_capacity(m);
    for &(start, end) in &sample.segment_bounds {
        if end >= c || start > end {
            return Err(Error::Argument("segment bounds outside the window".into()));
        }
        let window_end = sample.end_index + 1 + end - c;
        let compute = || {
            let segment: Vec<Vec<f64>> = sample.window.iter().map(|r| r[start..=end].to_vec()).collect();
            correlation_graph(&segment, tau)
        };
        let graph = match cache {
            Some(cache) => {
                if (cache.tau - tau).abs() > 0.0 || cache.w != end - start + 1 {
                    return Err(Error::Argument("cache built for a different tau or segment width".into()));
                }
                cache.get_or_insert_with(window_end, compute)?
            }
            None => Arc::new(CorrelationGraph {
                adjacency: compute()?,
                window_end,
                tau,
            }),
        };
        graphs.push(graph);
    }
    Ok(GraphSequence { graphs })
}

/// `|weight_i(G_{k+1}) - weight_i(G_k)|` for consecutive graphs; `N × (len-1)`.
pub fn node_weight_deviation(seq: &[&Adjacency]) -> Result<Vec<Vec<f64>>> {
    if seq.len() < 2 {
        return Err(Error::Argument("node weight deviation needs at least two graphs".into()));
    }
    let n = seq[0].n();
    if seq.iter().any(|g| g.n() != n) {
        return Err(Error::Argument("graphs differ in node count".into()));
    }
    let weights: Vec<Vec<f64>> = seq.iter().map(|g| g.node_weights()).collect();
    Ok((0..n)
        .map(|i| weights.windows(2).map(|p| (p[1][i] - p[0][i]).abs()).collect())
        .collect())
}

/// Graphs for every window end `w-1 ..= T-1` of one series.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesGraphs {
    n: usize,
    w: usize,
    tau: f64,
    graphs: Vec<Adjacency>,
}

const STORE_MAGIC: &[u8; 8] = b"DGADGRPH";

impl SeriesGraphs {
    /// Computes all graphs of `series` with the given kernel.
    pub fn build(series: &LabeledSeries, w: usize, tau: f64, kernel: &dyn CorrelationKernel) -> Result<Self> {
        check_tau(tau)?;
        let n = series.n_series();
        let len = series.len();
        if w == 0 || len < w {
            return Err(Error::DatasetTooShort { len, needed: w.max(1) });
        }
        let count = len - w + 1;
        // Chunked so memory for the flattened windows stays bounded.
        let chunk = 1024;
        let mut graphs = Vec::with_capacity(count);
        let mut start = 0;
        while start < count {
            let k = chunk.min(count - start);
            let mut buffer = Vec::with_capacity(k * n * w);
            for e in start..start + k {
                for row in &series.values {
                    buffer.extend_from_slice(&row[e..e + w]);
                }
            }
            let mut out = vec![0.0; k * n * n];
            kernel.batch_correlation_graphs(&buffer, n, w, k, tau, &mut out)?;
            graphs.extend(out.chunks(n * n).map(|c| Adjacency { n, data: c.to_vec() }));
            start += k;
        }
        Ok(Self { n, w, tau, graphs })
    }

    /// Fills from a [`GraphCache`] sweep, computing each window end once.
    pub fn from_cache(series: &LabeledSeries, cache: &GraphCache) -> Result<Self> {
        let len = series.len();
        if len < cache.w {
            return Err(Error::DatasetTooShort { len, needed: cache.w });
        }
        let graphs = (cache.w - 1..len)
            .map(|e| cache.series_graph(series, e).map(|g| g.adjacency.clone()))
            .collect::<Result<_>>()?;
        Ok(Self {
            n: series.n_series(),
            w: cache.w,
            tau: cache.tau,
            graphs,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    /// Graph of the segment ending at `end`.
    pub fn at(&self, end: usize) -> &Adjacency {
        &self.graphs[end + 1 - self.w]
    }

    /// Graphs of the `m` segments of the window ending at `t`.
    pub fn sequence(&self, geometry: Windowing, t: usize) -> Vec<&Adjacency> {
        (0..geometry.m).map(|s| self.at(geometry.segment_end(t, s))).collect()
    }

    /// Writes the store: magic, `N`, `w`, `tau`, `count`, then graphs in
    /// window-end order, all little-endian 64-bit.
    pub fn save(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        out.write_all(STORE_MAGIC).map_err(io)?;
        out.write_all(&(self.n as u64).to_le_bytes()).map_err(io)?;
        out.write_all(&(self.w as u64).to_le_bytes()).map_err(io)?;
        out.write_all(&self.tau.to_le_bytes()).map_err(io)?;
        out.write_all(&(self.graphs.len() as u64).to_le_bytes()).map_err(io)?;
        for g in &self.graphs {
            for v in &g.data {
                out.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        out.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let io = |e| Error::io(path, e);
        let mut input = BufReader::new(File::open(path).map_err(io)?);
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(io)?;
        if &magic != STORE_MAGIC {
            return Err(Error::format(path, "not a graph store"));
        }
        let mut word = [0u8; 8];
        let mut next = |input: &mut BufReader<File>| -> Result<[u8; 8]> {
            input.read_exact(&mut word).map_err(|e| Error::format(path, format!("truncated: {e}")))?;
            Ok(word)
        };
        let n = u64::from_le_bytes(next(&mut input)?) as usize;
        let w = u64::from_le_bytes(next(&mut input)?) as usize;
        let tau = f64::from_le_bytes(next(&mut input)?);
        let count = u64::from_le_bytes(next(&mut input)?) as usize;
        let mut graphs = Vec::with_capacity(count);
        for _ in 0..count {
            let mut data = Vec::with_capacity(n * n);
            for _ in 0..n * n {
                data.push(f64::from_le_bytes(next(&mut input)?));
            }
            graphs.push(Adjacency { n, data });
        }
        let mut rest = Vec::new();
        input.read_to_end(&mut rest).map_err(io)?;
        if !rest.is_empty() {
            return Err(Error::format(path, "trailing bytes after graphs"));
        }
        Ok(Self { n, w, tau, graphs })
    }

    /// True when this store matches a series of `n` channels and `len` steps.
    pub fn matches(&self, n: usize, len: usize, w: usize, tau: f64) -> bool {
        self.n == n && self.w == w && self.tau == tau && len + 1 == self.graphs.len() + w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive minimum over all monotone warping paths.
    fn brute_force_dtw(a: &[f64], b: &[f64]) -> f64 {
        fn walk(a: &[f64], b: &[f64], i: usize, j: usize, acc: f64, best: &mut f64) {
            let acc = acc + (a[i] - b[j]) * (a[i] - b[j]);
            if i == a.len() - 1 && j == b.len() - 1 {
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
    fn dtw_examples() {
        assert_eq!(dtw_sq(&[0.3, -1.0, 2.0], &[0.3, -1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(dtw_sq(&[0., 0., 1.], &[0., 1., 1.]).unwrap(), 0.0);
        assert_eq!(brute_force_dtw(&[0., 0., 1.], &[0., 1., 1.]), 0.0);
        assert_eq!(dtw_sq(&[0., 1.], &[2., 3.]).unwrap(), 8.0);
        assert_eq!(brute_force_dtw(&[0., 1.], &[2., 3.]), 8.0);
        assert!(dtw_sq(&[], &[]).is_err());
        assert!(dtw_sq(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn band_zero_is_euclidean() {
        let (a, b) = ([0., 1., 3., 2.], [1., 1., 0., 2.]);
        let euclid: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
        assert_eq!(dtw_sq_band(&a, &b, Some(0)).unwrap(), euclid);
        assert_eq!(dtw_sq_band(&a, &b, Some(3)).unwrap(), dtw_sq(&a, &b).unwrap());
    }

    #[test]
    fn correlation_graph_examples() {
        let same = vec![vec![0.5, 1.0, 2.0]; 3];
        assert!(correlation_graph(&same, 1.0).unwrap().data().iter().all(|&v| v == 1.0));
        let rows = vec![vec![0., 1.], vec![2., 3.]];
        let g1 = correlation_graph(&rows, 1.0).unwrap();
        assert_eq!(g1.get(0, 1), (-8.0f64).exp());
        assert!((g1.get(0, 1) - 3.3546e-4).abs() < 1e-8);
        let g5 = correlation_graph(&rows, 5.0).unwrap();
        assert!((g5.get(1, 0) - 0.2019).abs() < 1e-4);
        assert!(correlation_graph(&rows, 0.0).is_err());
        assert!(correlation_graph(&rows, -1.0).is_err());
    }

    fn constant_sample(m: usize, w: usize, end: usize) -> WindowSample {
        WindowSample {
            end_index: end,
            window: vec![vec![0.7; m * w]; 3],
            target: None,
            segment_bounds: (0..m).map(|s| (s * w, (s + 1) * w - 1)).collect(),
        }
    }

    #[test]
    fn build_sequence_constant_sample() {
        let seq = build_sequence(&constant_sample(2, 2, 3), 1.0, None).unwrap();
        assert_eq!(seq.graphs.len(), 2);
        assert_eq!(seq.graphs.iter().map(|g| g.window_end).collect::<Vec<_>>(), [1, 3]);
        for g in &seq.graphs {
            assert!(g.adjacency.data().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn shifted_samples_share_cached_graphs() {
        let (m, w) = (4, 3);
        let series = LabeledSeries::from_values(
            (0..3).map(|i| (0..40).map(|t| ((t * (i + 2)) as f64).sin()).collect()).collect(),
            None,
        )
        .unwrap();
        let samples = crate::dataio::make_windows(&series, m, w, 1).unwrap();
        let cache = GraphCache::new(w, 1.0, None).unwrap();
        let first = &samples[0];
        let second = samples.iter().find(|s| s.end_index == first.end_index + w).unwrap();
        build_sequence(first, 1.0, Some(&cache)).unwrap();
        let hits = cache.hits();
        build_sequence(second, 1.0, Some(&cache)).unwrap();
        assert_eq!(cache.hits() - hits, m - 1);
    }

    #[test]
    fn stride_one_sweep_computes_each_end_once() {
        let (m, w, len) = (3, 4, 60);
        let series = LabeledSeries::from_values(
            (0..2).map(|i| (0..len).map(|t| ((t + i) as f64 * 0.3).cos()).collect()).collect(),
            None,
        )
        .unwrap();
        let cache = GraphCache::new(w, 0.5, None).unwrap();
        for s in crate::dataio::make_windows(&series, m, w, 1).unwrap() {
            let cached = build_sequence(&s, 0.5, Some(&cache)).unwrap();
            let fresh = build_sequence(&s, 0.5, None).unwrap();
            assert_eq!(cached, fresh);
        }
        assert!(cache.misses() <= len - w + 1);
        assert_eq!(cache.misses(), cache.len());
    }

    #[test]
    fn cache_capacity_evicts_oldest() {
        let cache = GraphCache::new(1, 1.0, Some(2)).unwrap();
        for e in 0..3 {
            cache.get_or_insert_with(e, || Ok(Adjacency::identity(2))).unwrap();
        }
        assert_eq!(cache.len(), 2);
        cache.get_or_insert_with(0, || Ok(Adjacency::identity(2))).unwrap();
        assert_eq!(cache.misses(), 4);
    }

    #[test]
    fn deviation_examples() {
        let a = Adjacency::filled(3, 1.0);
        let dev = node_weight_deviation(&[&a, &a]).unwrap();
        assert_eq!(dev, vec![vec![0.0]; 3]);
        let id = Adjacency::identity(3);
        let dev = node_weight_deviation(&[&a, &id]).unwrap();
        assert_eq!(dev, vec![vec![2.0]; 3]);
        assert!(node_weight_deviation(&[&a]).is_err());
        assert!(node_weight_deviation(&[&a, &Adjacency::identity(2)]).is_err());
    }

    #[test]
    fn batch_kernel_contract() {
        let k = ReferenceKernel;
        let mut out = vec![0.0; 4];
        k.batch_correlation_graphs(&[0., 1., 2., 3.], 2, 2, 1, 1.0, &mut out).unwrap();
        assert_eq!(out, [1.0, (-8.0f64).exp(), (-8.0f64).exp(), 1.0]);
        let mut empty: Vec<f64> = vec![];
        k.batch_correlation_graphs(&[], 2, 2, 0, 1.0, &mut empty).unwrap();
        assert!(k.batch_correlation_graphs(&[0.; 3], 2, 2, 1, 1.0, &mut out).is_err());
        assert!(select_kernel(KernelChoice::On).is_err());
        assert_eq!(select_kernel(KernelChoice::Auto).unwrap().name(), "reference");
    }

    #[test]
    fn store_round_trip_and_cache_agreement() {
        let series = LabeledSeries::from_values(
            (0..3).map(|i| (0..25).map(|t| ((t * i) as f64 * 0.21).sin()).collect()).collect(),
            None,
        )
        .unwrap();
        let built = SeriesGraphs::build(&series, 5, 1.0, &ReferenceKernel).unwrap();
        let cached = SeriesGraphs::from_cache(&series, &GraphCache::new(5, 1.0, None).unwrap()).unwrap();
        assert_eq!(built, cached);
        assert!(built.matches(3, 25, 5, 1.0));
        let f = tempfile::NamedTempFile::new().unwrap();
        built.save(f.path()).unwrap();
        assert_eq!(SeriesGraphs::load(f.path()).unwrap(), built);
        std::fs::write(f.path(), b"garbage!").unwrap();
        assert!(SeriesGraphs::load(f.path()).is_err());
    }

    proptest! {
        #[test]
        fn dtw_matches_exhaustive_enumeration(pairs in (1usize..=6).prop_flat_map(|n| (
            proptest::collection::vec(-5i32..5, n),
            proptest::collection::vec(-5i32..5, n),
        ))) {
            let a: Vec<f64> = pairs.0.iter().map(|&v| v as f64).collect();
            let b: Vec<f64> = pairs.1.iter().map(|&v| v as f64).collect();
            prop_assert_eq!(dtw_sq(&a, &b).unwrap(), brute_force_dtw(&a, &b));
        }

        #[test]
        fn dtw_symmetric_and_below_euclidean(a in proptest::collection::vec(-3.0f64..3.0, 1..10), seed in 0u64..1000) {
            let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| v * 0.5 + ((i as u64 * 31 + seed) % 7) as f64 * 0.3).collect();
            let d = dtw_sq(&a, &b).unwrap();
            prop_assert_eq!(d, dtw_sq(&b, &a).unwrap());
            let euclid: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
            prop_assert!(d <= euclid + 1e-12);
        }

        #[test]
        fn graph_monotone_in_tau(rows in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 4), 2..5)) {
            let lo = correlation_graph(&rows, 0.5).unwrap();
            let hi = correlation_graph(&rows, 5.0).unwrap();
            for (a, b) in lo.data().iter().zip(hi.data()) {
                prop_assert!(a <= b);
            }
        }
    }
}
