//! Seeded multivariate series with two labeled anomaly classes:
//! correlation breaks (one series drifts out of phase with its driver for a
//! while, keeping its level and spread) and short additive spikes.
//!
//! Each series is `D_p(t - lag_i) + o_i + e_i(t)`, where `D_p` is the driver of
//! its pair (a shared sinusoid mixture plus a slow pair-specific latent
//! term), `o_i` a fixed offset and `e_i` AR(1) noise with marginal standard deviation `sigma`.
//! The first `t_train` steps form the anomaly-free training split.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataio::LabeledSeries;
use crate::error::{Error, Result};

/// Version tag of the generation procedure, recorded in every manifest.
pub const GENERATOR_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n: usize,
    pub t_train: usize,
    pub t_test: usize,
    pub seed: u64,
    /// Marginal standard deviation of the AR(1) noise.
    pub sigma: f64,
    /// AR(1) coefficient of the noise.
    pub phi: f64,
    /// Periods of the shared sinusoid mixture.
    pub periods: Vec<f64>,
    /// Largest per-series lag in steps.
    pub max_lag: usize,
    /// Amplitude of the slow pair-specific latent term.
    pub pair_latent: f64,
    /// Number of correlation-break segments.
    pub breaks: usize,
    pub break_len: (usize, usize),
    /// Number of spike segments.
    pub spikes: usize,
    pub spike_len: (usize, usize),
    /// Spike height in units of `sigma`.
    pub spike_sigmas: f64,
    /// Minimum gap between anomalies and from the test start.
    pub gap: usize,
    /// Steps over which a break fades in and out.
    pub fade: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n: 8,
            t_train: 4000,
            t_test: 4000,
            seed: 0,
            sigma: 0.05,
            phi: 0.3,
            periods: vec![48.0, 131.0],
            max_lag: 2,
            pair_latent: 0.15,
            breaks: 8,
            break_len: (60, 120),
            spikes: 12,
            spike_len: (2, 5),
            spike_sigmas: 4.0,
            gap: 60,
            fade: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyClass {
    CorrelationBreak,
    Spike,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyRecord {
    pub class: AnomalyClass,
    pub series: usize,
    /// Start step within the test split.
    pub start: usize,
    pub length: usize,
    /// Phase shift in steps (breaks) or signed height (spikes).
    pub magnitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub generator_version: u32,
    pub rng: String,
    pub spec: SynthSpec,
    pub lags: Vec<usize>,
    pub anomalies: Vec<AnomalyRecord>,
}

impl SynthManifest {
    /// Test-split labels restricted to one class.
    pub fn class_labels(&self, class: AnomalyClass) -> Vec<u8> {
        let mut labels = vec![0u8; self.spec.t_test];
        for a in self.anomalies.iter().filter(|a| a.class == class) {
            labels[a.start..a.start + a.length].iter_mut().for_each(|l| *l = 1);
        }
        labels
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthData {
    pub train: LabeledSeries,
    pub test: LabeledSeries,
    pub manifest: SynthManifest,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.n < 2 {
            return bad("need at least two series");
        }
        if self.t_train == 0 || self.t_test == 0 {
            return bad("t_train and t_test must be positive");
        }
        if !(self.sigma > 0.0) || !(self.phi.abs() < 1.0) {
            return bad("sigma must be positive and |phi| < 1");
        }
        if self.periods.is_empty() || self.periods.iter().any(|p| !(*p > 1.0)) {
            return bad("periods must be > 1");
        }
        for (name, (lo, hi)) in [("break_len", self.break_len), ("spike_len", self.spike_len)] {
            if lo == 0 || lo > hi {
                return bad(&format!("{name} must satisfy 1 <= min <= max"));
            }
        }
        if 2 * self.fade >= self.break_len.0 {
            return bad("fade too long for the shortest break");
        }
        let worst = self.breaks * (self.break_len.1 + self.gap) + self.spikes * (self.spike_len.1 + self.gap) + self.gap;
        if worst > self.t_test {
            return Err(Error::Config(format!(
                "synthetic spec: anomalies need up to {worst} test steps but t_test is {}",
                self.t_test
            )));
        }
        Ok(())
    }
}

/// Sinusoid mixture at `t`; the first (fastest) component is delayed by `shift`.
fn sinusoids(periods: &[f64], phases: &[f64], t: f64, shift: f64) -> f64 {
    periods
        .iter()
        .zip(phases)
        .enumerate()
        .map(|(k, (p, ph))| {
            let tk = if k == 0 { t - shift } else { t };
            (2.0 * PI * tk / p + ph).sin() / (k + 1) as f64
        })
        .sum()
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Draws non-overlapping `(start, len)` placements separated by `gap`.
fn place(rng: &mut ChaCha8Rng, lens: &[usize], total: usize, gap: usize) -> Result<Vec<usize>> {
    for _ in 0..1000 {
        let mut taken: Vec<(usize, usize)> = Vec::new();
        let mut ok = true;
        let mut starts = Vec::with_capacity(lens.len());
        for &len in lens {
            let mut placed = false;
            for _ in 0..200 {
                let s = rng.random_range(gap..total - len - gap);
                if taken.iter().all(|&(a, l)| s + len + gap <= a || a + l + gap <= s) {
                    taken.push((s, len));
                    starts.push(s);
                    placed = true;
                    break;
                }
            }
            if !placed {
                ok = false;
                break;
            }
        }
        if ok {
            return Ok(starts);
        }
    }
    Err(Error::Config("could not place anomalies without overlap; lengthen t_test".into()))
}

/// Generates the train and test splits and the anomaly manifest.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let total = spec.t_train + spec.t_test;
    let n = spec.n;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let phases: Vec<f64> = spec.periods.iter().map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let lags: Vec<usize> = (0..n).map(|_| rng.random_range(0..=spec.max_lag)).collect();
    let offsets: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let pairs = n.div_ceil(2);
    // slow pair latent: heavily smoothed AR(1), scaled to unit marginal variance
    let latent_phi: f64 = 0.98;
    let latent: Vec<Vec<f64>> = (0..pairs)
        .map(|_| {
            let mut v = Vec::with_capacity(total + spec.max_lag + 1);
            let mut x = std_normal.sample(&mut rng);
            for _ in 0..total + spec.max_lag + 1 {
                x = latent_phi * x + (1.0 - latent_phi * latent_phi).sqrt() * std_normal.sample(&mut rng);
                v.push(x);
            }
            v
        })
        .collect();
    let innovation = spec.sigma * (1.0 - spec.phi * spec.phi).sqrt();
    let noise: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let mut e = spec.sigma * std_normal.sample(&mut rng);
            (0..total)
                .map(|_| {
                    e = spec.phi * e + innovation * std_normal.sample(&mut rng);
                    e
                })
                .collect()
        })
        .collect();

    // driver of series i at (possibly shifted) time t
    let driver = |i: usize, t: f64, shift: f64| -> f64 {
        let idx = (t.max(0.0) as usize).min(total + spec.max_lag);
        sinusoids(&spec.periods, &phases, t, shift) + spec.pair_latent * latent[i / 2][idx]
    };
    let shifted = |i: usize, t: usize, shift: f64| {
        driver(i, t as f64 + spec.max_lag as f64 - lags[i] as f64, shift) + offsets[i]
    };
    let clean = |i: usize, t: usize| shifted(i, t, 0.0);
    let mut values: Vec<Vec<f64>> = (0..n).map(|i| (0..total).map(|t| clean(i, t) + noise[i][t]).collect()).collect();

    // anomaly placement in the test split
    let break_lens: Vec<usize> = (0..spec.breaks).map(|_| rng.random_range(spec.break_len.0..=spec.break_len.1)).collect();
    let spike_lens: Vec<usize> = (0..spec.spikes).map(|_| rng.random_range(spec.spike_len.0..=spec.spike_len.1)).collect();
    let all_lens: Vec<usize> = break_lens.iter().chain(&spike_lens).copied().collect();
    let starts = place(&mut rng, &all_lens, spec.t_test, spec.gap)?;
    let base_period = spec.periods[0];
    let mut anomalies = Vec::new();
    let mut labels = vec![0u8; spec.t_test];

    for (k, &len) in break_lens.iter().enumerate() {
        let series = k % n;
        let start = starts[k];
        let t0 = spec.t_train + start;
        let reference: Vec<f64> = (t0..t0 + len).map(|t| clean(series, t)).collect();
        let (ref_mean, ref_std) = mean_std(&reference);
        let normal_std = mean_std(&(0..spec.t_train).map(|t| clean(series, t)).collect::<Vec<_>>()).1;
        // phase shifts of the fast component that keep the segment's level and spread
        let mut chosen = None;
        for _ in 0..200 {
            let shift = rng.random_range(0.3 * base_period..0.7 * base_period);
            let raw: Vec<f64> = (t0..t0 + len).map(|t| shifted(series, t, shift)).collect();
            let (m, s) = mean_std(&raw);
            let gain = ref_std / s;
            if !(0.67..1.5).contains(&gain) {
                continue;
            }
            // match the clean segment's level and spread exactly
            let candidate: Vec<f64> = raw.iter().map(|v| ref_mean + (v - m) * gain).collect();
            let (cm, cs) = mean_std(&candidate);
            if (cm - ref_mean).abs() < 0.1 * normal_std && (cs - ref_std).abs() < 0.1 * normal_std {
                chosen = Some((shift, candidate));
                break;
            }
        }
        let (shift, candidate) = chosen.ok_or_else(|| {
            Error::Config(format!("break {k} (series {series}, length {len}): no phase shift keeps marginal statistics within 10%"))
        })?;
        for (j, t) in (t0..t0 + len).enumerate() {
            let fade_in = ((j + 1) as f64 / (spec.fade + 1) as f64).min(1.0);
            let fade_out = ((len - j) as f64 / (spec.fade + 1) as f64).min(1.0);
            let a = fade_in.min(fade_out);
            values[series][t] = (1.0 - a) * reference[j] + a * candidate[j] + noise[series][t];
        }
        labels[start..start + len].iter_mut().for_each(|l| *l = 1);
        anomalies.push(AnomalyRecord {
            class: AnomalyClass::CorrelationBreak,
            series,
            start,
            length: len,
            magnitude: shift,
        });
    }

    let height = spec.spike_sigmas * spec.sigma;
    for (k, &len) in spike_lens.iter().enumerate() {
        let series = rng.random_range(0..n);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let start = starts[spec.breaks + k];
        for t in spec.t_train + start..spec.t_train + start + len {
            values[series][t] += sign * height;
        }
        labels[start..start + len].iter_mut().for_each(|l| *l = 1);
        anomalies.push(AnomalyRecord {
            class: AnomalyClass::Spike,
            series,
            start,
            length: len,
            magnitude: sign * height,
        });
    }
    anomalies.sort_by_key(|a| a.start);

    // spikes must stand out from the local noise
    for a in anomalies.iter().filter(|a| a.class == AnomalyClass::Spike) {
        let t = spec.t_train + a.start;
        let lo = t.saturating_sub(50);
        let local: Vec<f64> = (lo..t).map(|u| noise[a.series][u]).collect();
        let (_, local_std) = mean_std(&local);
        if a.magnitude.abs() <= 3.0 * local_std {
            return Err(Error::Config(format!(
                "spike at test step {} does not exceed 3 local standard deviations",
                a.start
            )));
        }
    }

    let names: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
    let train_values: Vec<Vec<f64>> = values.iter().map(|r| r[..spec.t_train].to_vec()).collect();
    let test_values: Vec<Vec<f64>> = values.iter().map(|r| r[spec.t_train..].to_vec()).collect();
    let train = LabeledSeries::new(train_values, Some(vec![0; spec.t_train]), names.clone(), 1.0)?;
    let test = LabeledSeries::new(test_values, Some(labels), names, 1.0)?;
    Ok(SynthData {
        train,
        test,
        manifest: SynthManifest {
            generator_version: GENERATOR_VERSION,
            rng: "ChaCha8".into(),
            spec: spec.clone(),
            lags,
            anomalies,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(breaks: usize, spikes: usize) -> SynthSpec {
        SynthSpec {
            t_train: 500,
            t_test: 1500,
            breaks,
            spikes,
            ..Default::default()
        }
    }

    fn runs(labels: &[u8]) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut t = 0;
        while t < labels.len() {
            if labels[t] == 1 {
                let s = t;
                while t < labels.len() && labels[t] == 1 {
                    t += 1;
                }
                out.push((s, t - s));
            } else {
                t += 1;
            }
        }
        out
    }

    #[test]
    fn same_seed_same_output() {
        let spec = small(2, 3);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = SynthSpec { seed: 1, ..spec };
        assert_ne!(generate(&other).unwrap().test.values, generate(&small(2, 3)).unwrap().test.values);
    }

    #[test]
    fn no_anomalies_means_no_labels() {
        let d = generate(&small(0, 0)).unwrap();
        assert!(d.test.labels.as_ref().unwrap().iter().all(|&l| l == 0));
        assert!(d.manifest.anomalies.is_empty());
    }

    #[test]
    fn label_runs_match_manifest() {
        let d = generate(&small(2, 3)).unwrap();
        let labels = d.test.labels.as_ref().unwrap();
        let r = runs(labels);
        assert_eq!(r.len(), 5);
        let from_manifest: Vec<(usize, usize)> = d.manifest.anomalies.iter().map(|a| (a.start, a.length)).collect();
        assert_eq!(r, from_manifest);
        assert!(d.train.labels.as_ref().unwrap().iter().all(|&l| l == 0));
        let breaks = d.manifest.class_labels(AnomalyClass::CorrelationBreak);
        assert_eq!(runs(&breaks).len(), 2);
        for a in &d.manifest.anomalies {
            let (lo, hi) = match a.class {
                AnomalyClass::CorrelationBreak => (60, 120),
                AnomalyClass::Spike => (2, 5),
            };
            assert!(a.length >= lo && a.length <= hi);
        }
    }

    #[test]
    fn breaks_keep_marginal_statistics() {
        let spec = small(4, 0);
        let d = generate(&spec).unwrap();
        for a in &d.manifest.anomalies {
            let row = &d.test.values[a.series];
            let seg = &row[a.start..a.start + a.length];
            let (_, train_std) = mean_std(&d.train.values[a.series]);
            let (m, s) = mean_std(seg);
            let before = &row[a.start - a.length.min(a.start)..a.start];
            let (mb, _) = mean_std(before);
            assert!(s < 1.5 * train_std && s > 0.3 * train_std, "{s} vs {train_std}");
            assert!((m - mb).abs() < train_std, "{m} vs {mb}");
        }
    }

    #[test]
    fn overflowing_anomalies_rejected() {
        let spec = SynthSpec {
            t_test: 300,
            breaks: 5,
            ..small(0, 0)
        };
        assert!(matches!(generate(&spec), Err(Error::Config(_))));
    }
}
