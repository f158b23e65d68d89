// Copyright 2026 The spinreg Authors
// SPDX-License-Identifier: Apache-2.0

//! Telegraph analysis of photon-count traces: segmentation into on and off
//! dwells, dwell histograms, exponential rate fits, rate-against-power
//! regression and occupancy.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimize::{nelder_mead, Bound, NelderMeadOptions};
use crate::readout::{sample_telegraph, BlinkRates, BlinkState, Dwell};
use crate::rng::{substream, tag};

/// Binned photon counts at one excitation power.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountTrace {
    /// Bin width in s.
    pub bin_width: f64,
    pub counts: Vec<u32>,
    /// Excitation power in nW.
    pub power: f64,
}

impl CountTrace {
    pub fn new(bin_width: f64, counts: Vec<u32>, power: f64) -> Result<Self> {
        if !(bin_width > 0.0 && bin_width.is_finite()) {
            return Err(Error::Config(format!("bin_width {bin_width} must be positive")));
        }
        if !power.is_finite() {
            return Err(Error::Config(format!("power {power} must be finite")));
        }
        Ok(Self { bin_width, counts, power })
    }

    pub fn duration(&self) -> f64 {
        self.counts.len() as f64 * self.bin_width
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentOptions {
    /// Counts per bin separating off from on. Defaults to half the on-state
    /// mean from a two-level split of the counts.
    #[serde(default)]
    pub threshold: Option<f64>,
    /// Runs shorter than this many bins are merged into their neighbours.
    pub min_dwell_bins: usize,
}

impl Default for SegmentOptions {
    fn default() -> Self {
        Self { threshold: None, min_dwell_bins: 2 }
    }
}

/// Dwells recovered from a trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub dwells: Vec<Dwell>,
    pub threshold: f64,
}

impl Segmentation {
    /// Dwells not cut by the ends of the trace.
    pub fn complete(&self) -> &[Dwell] {
        if self.dwells.len() <= 2 {
            return &[];
        }
        &self.dwells[1..self.dwells.len() - 1]
    }

    pub fn durations(&self, state: BlinkState) -> Vec<f64> {
        self.complete().iter().filter(|d| d.state == state).map(|d| d.duration).collect()
    }
}

/// Half the upper level of a two-means split of the counts.
pub fn default_threshold(counts: &[u32]) -> f64 {
    if counts.is_empty() {
        return 0.0;
    }
    let min = *counts.iter().min().unwrap_or(&0) as f64;
    let max = *counts.iter().max().unwrap_or(&0) as f64;
    let (mut lo, mut hi) = (min, max);
    for _ in 0..100 {
        let cut = 0.5 * (lo + hi);
        let (mut s_lo, mut n_lo, mut s_hi, mut n_hi) = (0.0, 0usize, 0.0, 0usize);
        for &c in counts {
            let c = c as f64;
            if c > cut {
                s_hi += c;
                n_hi += 1;
            } else {
                s_lo += c;
                n_lo += 1;
            }
        }
        let new_lo = if n_lo > 0 { s_lo / n_lo as f64 } else { lo };
        let new_hi = if n_hi > 0 { s_hi / n_hi as f64 } else { hi };
        if new_lo == lo && new_hi == hi {
            break;
        }
        lo = new_lo;
        hi = new_hi;
    }
    0.5 * hi
}

/// Classifies bins as on (`counts > threshold`) or off and returns dwells.
pub fn segment_trace(trace: &CountTrace, opts: &SegmentOptions) -> Result<Segmentation> {
    if trace.counts.is_empty() {
        return Err(Error::InsufficientData("count trace is empty".into()));
    }
    let threshold = opts.threshold.unwrap_or_else(|| default_threshold(&trace.counts));
    let mut runs: Vec<(BlinkState, usize)> = Vec::new();
    for &c in &trace.counts {
        let s = if c as f64 > threshold { BlinkState::On } else { BlinkState::Off };
        match runs.last_mut() {
            Some((state, n)) if *state == s => *n += 1,
            _ => runs.push((s, 1)),
        }
    }
    merge_short_runs(&mut runs, opts.min_dwell_bins);
    let dwells = runs
        .into_iter()
        .map(|(state, n)| Dwell { state, duration: n as f64 * trace.bin_width })
        .collect();
    Ok(Segmentation { dwells, threshold })
}

/// Absorbs runs shorter than `min_bins`, shortest first, into the neighbours.
/// Ties go to the earliest run.
fn merge_short_runs(runs: &mut Vec<(BlinkState, usize)>, min_bins: usize) {
    let n = runs.len();
    let mut len: Vec<usize> = runs.iter().map(|r| r.1).collect();
    let mut prev: Vec<Option<usize>> = (0..n).map(|i| i.checked_sub(1)).collect();
    let mut next: Vec<Option<usize>> = (0..n).map(|i| (i + 1 < n).then_some(i + 1)).collect();
    let mut alive = vec![true; n];
    let mut count = n;
    let mut short: BTreeSet<(usize, usize)> = (0..n).filter(|&i| len[i] < min_bins).map(|i| (len[i], i)).collect();
    while count > 1 {
        let Some((l, i)) = short.pop_first() else { break };
        if !alive[i] || len[i] != l {
            continue;
        }
        let mut unlink = |j: usize, prev: &mut Vec<Option<usize>>, next: &mut Vec<Option<usize>>| {
            alive[j] = false;
            if let Some(p) = prev[j] {
                next[p] = next[j];
            }
            if let Some(q) = next[j] {
                prev[q] = prev[j];
            }
        };
        let grown = match (prev[i], next[i]) {
            (None, Some(q)) => {
                len[q] += l;
                unlink(i, &mut prev, &mut next);
                count -= 1;
                q
            }
            (Some(p), None) => {
                len[p] += l;
                unlink(i, &mut prev, &mut next);
                count -= 1;
                p
            }
            (Some(p), Some(q)) => {
                len[p] += l + len[q];
                unlink(i, &mut prev, &mut next);
                unlink(q, &mut prev, &mut next);
                count -= 2;
                p
            }
            (None, None) => break,
        };
        if len[grown] < min_bins {
            short.insert((len[grown], grown));
        }
    }
    let kept: Vec<(BlinkState, usize)> = (0..n).filter(|&i| alive[i]).map(|i| (runs[i].0, len[i])).collect();
    *runs = kept;
}

/// Fraction of the total dwell time spent off.
pub fn off_fraction(dwells: &[Dwell]) -> Result<f64> {
    let total: f64 = dwells.iter().map(|d| d.duration).sum();
    if dwells.is_empty() || total <= 0.0 {
        return Err(Error::InsufficientData("no dwell time to average over".into()));
    }
    let off: f64 = dwells.iter().filter(|d| d.state == BlinkState::Off).map(|d| d.duration).sum();
    Ok(off / total)
}

/// Histogram of dwell durations in one state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DwellHistogram {
    pub state: BlinkState,
    /// Edges in s, `frequencies.len() + 1` of them.
    pub bin_edges: Vec<f64>,
    pub frequencies: Vec<u64>,
}

impl DwellHistogram {
    /// Equal bins of width `bin_width` from zero past the longest dwell.
    pub fn new(durations: &[f64], state: BlinkState, bin_width: f64) -> Result<Self> {
        if !(bin_width > 0.0 && bin_width.is_finite()) {
            return Err(Error::Config(format!("histogram bin width {bin_width} must be positive")));
        }
        let max = durations.iter().copied().fold(0.0, f64::max);
        let n_bins = ((max / bin_width).floor() as usize + 1).max(1);
        let mut frequencies = vec![0u64; n_bins];
        for &d in durations {
            let k = ((d / bin_width).floor() as usize).min(n_bins - 1);
            frequencies[k] += 1;
        }
        let bin_edges = (0..=n_bins).map(|i| i as f64 * bin_width).collect();
        Ok(Self { state, bin_edges, frequencies })
    }

    /// Bin width of a quarter of the mean dwell.
    pub fn auto(durations: &[f64], state: BlinkState) -> Result<Self> {
        if durations.is_empty() {
            return Err(Error::InsufficientData(format!("no complete {state:?} dwells")));
        }
        let mean = durations.iter().sum::<f64>() / durations.len() as f64;
        Self::new(durations, state, 0.25 * mean)
    }

    pub fn total(&self) -> u64 {
        self.frequencies.iter().sum()
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_edges[1] - self.bin_edges[0]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpFitMethod {
    /// Weighted straight line through the log-frequencies.
    #[default]
    LogLinear,
    /// Least squares on the frequencies themselves.
    Nonlinear,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub rate_hz: f64,
    pub rate_stderr_hz: f64,
    pub r_squared: f64,
    pub method: ExpFitMethod,
    pub bins_used: usize,
}

/// Exponential decay of the dwell histogram by the log-linear method.
pub fn fit_exponential(hist: &DwellHistogram) -> Result<RateFit> {
    fit_exponential_with(hist, ExpFitMethod::LogLinear)
}

pub fn fit_exponential_with(hist: &DwellHistogram, method: ExpFitMethod) -> Result<RateFit> {
    let points: Vec<(f64, f64)> = hist
        .frequencies
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > 0)
        .map(|(i, &n)| (0.5 * (hist.bin_edges[i] + hist.bin_edges[i + 1]), n as f64))
        .collect();
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "exponential fit needs at least 3 nonempty bins, got {}",
            points.len()
        )));
    }
    let log = log_linear(&points)?;
    match method {
        ExpFitMethod::LogLinear => Ok(log),
        ExpFitMethod::Nonlinear => nonlinear(&points, &log),
    }
}

/// Weights approximate the inverse variance of `ln n` for Poisson bins: the
/// observed counts first, then the fitted counts, which keeps upward
/// fluctuations in the sparse tail from flattening the slope.
fn log_linear(points: &[(f64, f64)]) -> Result<RateFit> {
    let mut weights: Vec<f64> = points.iter().map(|p| p.1).collect();
    let mut line = weighted_line(points, &weights)?;
    for _ in 0..LOG_FIT_REWEIGHTS {
        weights = points.iter().map(|p| (line.0 + line.1 * p.0).exp()).collect();
        line = weighted_line(points, &weights)?;
    }
    let (intercept, slope, sxx) = line;
    let rate = -slope;
    if !(rate > 0.0) {
        return Err(Error::Fit(format!("histogram does not decay (slope {slope:e})")));
    }
    let sw: f64 = weights.iter().sum();
    let ym = points.iter().zip(&weights).map(|(p, w)| w * p.1.ln()).sum::<f64>() / sw;
    let ss_res: f64 = points.iter().zip(&weights).map(|(p, w)| w * (p.1.ln() - intercept - slope * p.0).powi(2)).sum();
    let ss_tot: f64 = points.iter().zip(&weights).map(|(p, w)| w * (p.1.ln() - ym).powi(2)).sum();
    Ok(RateFit {
        rate_hz: rate,
        rate_stderr_hz: (1.0 / sxx).sqrt(),
        r_squared: if ss_tot > 0.0 { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) } else { 1.0 },
        method: ExpFitMethod::LogLinear,
        bins_used: points.len(),
    })
}

const LOG_FIT_REWEIGHTS: usize = 4;

/// Weighted straight line through `(t, ln n)`; returns intercept, slope and
/// the weighted spread of `t`.
fn weighted_line(points: &[(f64, f64)], weights: &[f64]) -> Result<(f64, f64, f64)> {
    let sw: f64 = weights.iter().sum();
    let tm = points.iter().zip(weights).map(|(p, w)| w * p.0).sum::<f64>() / sw;
    let ym = points.iter().zip(weights).map(|(p, w)| w * p.1.ln()).sum::<f64>() / sw;
    let sxx: f64 = points.iter().zip(weights).map(|(p, w)| w * (p.0 - tm).powi(2)).sum();
    let sxy: f64 = points.iter().zip(weights).map(|(p, w)| w * (p.0 - tm) * (p.1.ln() - ym)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Fit("dwell histogram has no spread".into()));
    }
    let slope = sxy / sxx;
    Ok((ym - slope * tm, slope, sxx))
}

fn nonlinear(points: &[(f64, f64)], start: &RateFit) -> Result<RateFit> {
    let model = |a: f64, k: f64, t: f64| a * (-k * t).exp();
    let sw: f64 = points.iter().map(|p| p.1).sum();
    let sm: f64 = points.iter().map(|p| (-start.rate_hz * p.0).exp()).sum();
    let a0 = sw / sm;
    let ss = |x: &[f64]| points.iter().map(|p| (p.1 - model(x[0].exp(), x[1].exp(), p.0)).powi(2)).sum::<f64>();
    let x0 = [a0.ln(), start.rate_hz.ln()];
    let bounds = [Bound::new(x0[0] - 10.0, x0[0] + 10.0), Bound::new(x0[1] - 5.0, x0[1] + 5.0)];
    let m = nelder_mead(ss, &x0, &[0.1, 0.1], &bounds, NelderMeadOptions { max_evals: 4000, ..Default::default() });
    let (a, k) = (m.x[0].exp(), m.x[1].exp());
    let n = points.len() as f64;
    let s2 = m.value / (n - 2.0).max(1.0);
    let (mut jaa, mut jak, mut jkk) = (0.0, 0.0, 0.0);
    for p in points {
        let e = (-k * p.0).exp();
        let da = e;
        let dk = -a * p.0 * e;
        jaa += da * da;
        jak += da * dk;
        jkk += dk * dk;
    }
    let det = jaa * jkk - jak * jak;
    let var_k = if det > 0.0 { s2 * jaa / det } else { f64::INFINITY };
    let mean = sw / n;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - mean).powi(2)).sum();
    Ok(RateFit {
        rate_hz: k,
        rate_stderr_hz: var_k.sqrt(),
        r_squared: if ss_tot > 0.0 { (1.0 - m.value / ss_tot).clamp(0.0, 1.0) } else { 1.0 },
        method: ExpFitMethod::Nonlinear,
        bins_used: points.len(),
    })
}

/// Zero-intercept regression `power = gradient · rate`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    /// nW/Hz.
    pub gradient: f64,
    pub gradient_stderr: f64,
    /// `None` when the rates or powers do not vary.
    pub r_squared: Option<f64>,
}

pub fn fit_linear_rates(powers: &[f64], rates: &[f64]) -> Result<LinearFit> {
    if powers.len() != rates.len() {
        return Err(Error::InsufficientData(format!("{} powers but {} rates", powers.len(), rates.len())));
    }
    if powers.len() < 3 {
        return Err(Error::InsufficientData(format!("linear fit needs at least 3 points, got {}", powers.len())));
    }
    let sxx: f64 = rates.iter().map(|x| x * x).sum();
    if sxx <= 0.0 {
        return Err(Error::Fit("all rates are zero".into()));
    }
    let sxy: f64 = rates.iter().zip(powers).map(|(x, y)| x * y).sum();
    let gradient = sxy / sxx;
    let n = powers.len() as f64;
    let ss_res: f64 = rates.iter().zip(powers).map(|(x, y)| (y - gradient * x).powi(2)).sum();
    let y_mean = powers.iter().sum::<f64>() / n;
    let x_mean = rates.iter().sum::<f64>() / n;
    let ss_tot: f64 = powers.iter().map(|y| (y - y_mean).powi(2)).sum();
    let x_var: f64 = rates.iter().map(|x| (x - x_mean).powi(2)).sum();
    let scale = sxx.max(powers.iter().map(|y| y * y).sum());
    let r_squared = if ss_tot > 1e-24 * scale && x_var > 1e-24 * sxx {
        Some((1.0 - ss_res / ss_tot).clamp(0.0, 1.0))
    } else {
        None
    };
    Ok(LinearFit { gradient, gradient_stderr: (ss_res / (n - 1.0) / sxx).sqrt(), r_squared })
}

/// Photon emission of a synthetic trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceEmission {
    /// Mean counts per bin while on.
    pub on_counts_per_bin: f64,
    /// Mean counts per bin while off.
    #[serde(default)]
    pub off_counts_per_bin: f64,
}

impl Default for TraceEmission {
    fn default() -> Self {
        Self { on_counts_per_bin: 40.0, off_counts_per_bin: 0.0 }
    }
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u32 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|p| p.sample(rng) as u32).unwrap_or(0)
}

/// Telegraph trajectory and its binned counts. Partial bins mix the on and
/// off emission in proportion to the time spent in each.
pub fn synthesize_trace(
    rates: &BlinkRates,
    emission: &TraceEmission,
    bin_width: f64,
    duration: f64,
    seed: u64,
) -> Result<(CountTrace, Vec<Dwell>)> {
    if !(bin_width > 0.0 && duration >= bin_width) {
        return Err(Error::Config("duration must cover at least one positive bin".into()));
    }
    let mut rng = substream(seed, tag::TELEGRAPH, 0);
    let dwells = sample_telegraph(rates, duration, &mut rng)?;
    let n_bins = (duration / bin_width).floor() as usize;
    let mut counts = Vec::with_capacity(n_bins);
    let mut count_rng = substream(seed, tag::COUNTS, 0);
    let mut idx = 0usize;
    let mut left = dwells.first().map(|d| d.duration).unwrap_or(0.0);
    for _ in 0..n_bins {
        let mut need = bin_width;
        let mut on = 0.0;
        while need > 0.0 && idx < dwells.len() {
            let step = need.min(left);
            if dwells[idx].state == BlinkState::On {
                on += step;
            }
            need -= step;
            left -= step;
            if left <= 0.0 {
                idx += 1;
                left = dwells.get(idx).map(|d| d.duration).unwrap_or(0.0);
            }
        }
        let frac = on / bin_width;
        let mean = frac * emission.on_counts_per_bin + (1.0 - frac) * emission.off_counts_per_bin;
        counts.push(poisson(mean, &mut count_rng));
    }
    Ok((CountTrace::new(bin_width, counts, rates.power)?, dwells))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisOptions {
    #[serde(default)]
    pub segment: SegmentOptions,
    #[serde(default)]
    pub method: ExpFitMethod,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceAnalysis {
    pub power_nw: f64,
    pub threshold_counts: f64,
    pub n_on_dwells: usize,
    pub n_off_dwells: usize,
    /// From the on-dwell histogram.
    pub rate_on_off: RateFit,
    /// From the off-dwell histogram.
    pub rate_off_on: RateFit,
    pub off_fraction: f64,
}

pub fn analyze_trace(trace: &CountTrace, opts: &AnalysisOptions) -> Result<TraceAnalysis> {
    let seg = segment_trace(trace, &opts.segment)?;
    let on = seg.durations(BlinkState::On);
    let off = seg.durations(BlinkState::Off);
    let fit = |d: &[f64], s: BlinkState| fit_exponential_with(&DwellHistogram::auto(d, s)?, opts.method);
    Ok(TraceAnalysis {
        power_nw: trace.power,
        threshold_counts: seg.threshold,
        n_on_dwells: on.len(),
        n_off_dwells: off.len(),
        rate_on_off: fit(&on, BlinkState::On)?,
        rate_off_on: fit(&off, BlinkState::Off)?,
        off_fraction: off_fraction(&seg.dwells)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerPoint {
    pub analysis: TraceAnalysis,
    /// Off fraction implied by the fitted gradients.
    pub predicted_off_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlinkReport {
    pub points: Vec<PowerPoint>,
    pub gradient_on_off: LinearFit,
    pub gradient_off_on: LinearFit,
    pub mean_off_fraction: f64,
}

/// Per-trace analysis followed by rate-against-power regression.
pub fn analyze_power_series(traces: &[CountTrace], opts: &AnalysisOptions) -> Result<BlinkReport> {
    let analyses: Vec<TraceAnalysis> = traces.par_iter().map(|t| analyze_trace(t, opts)).collect::<Result<_>>()?;
    let powers: Vec<f64> = analyses.iter().map(|a| a.power_nw).collect();
    let on_off: Vec<f64> = analyses.iter().map(|a| a.rate_on_off.rate_hz).collect();
    let off_on: Vec<f64> = analyses.iter().map(|a| a.rate_off_on.rate_hz).collect();
    let g1 = fit_linear_rates(&powers, &on_off)?;
    let g2 = fit_linear_rates(&powers, &off_on)?;
    let predicted = g2.gradient / (g1.gradient + g2.gradient);
    let mean_off_fraction = analyses.iter().map(|a| a.off_fraction).sum::<f64>() / analyses.len() as f64;
    Ok(BlinkReport {
        points: analyses
            .into_iter()
            .map(|analysis| PowerPoint { analysis, predicted_off_fraction: predicted })
            .collect(),
        gradient_on_off: g1,
        gradient_off_on: g2,
        mean_off_fraction,
    })
}

#[derive(Deserialize)]
struct Sidecar {
    bin_width: Option<f64>,
    power: Option<f64>,
}

#[derive(Deserialize)]
struct TraceRow {
    #[allow(dead_code)]
    time_bin: f64,
    counts: u32,
}

/// Trace from a `time_bin,counts` CSV and a JSON sidecar holding `bin_width`
/// (s) and `power` (nW).
pub fn parse_trace<R: Read>(csv_data: R, sidecar_json: &str) -> Result<CountTrace> {
    let meta: Sidecar =
        serde_json::from_str(sidecar_json).map_err(|e| Error::Config(format!("trace sidecar: {e}")))?;
    let bin_width = meta.bin_width.ok_or(Error::MissingParameter("bin_width"))?;
    let power = meta.power.ok_or(Error::MissingParameter("power"))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(csv_data);
    let mut counts = Vec::new();
    for (i, row) in reader.deserialize::<TraceRow>().enumerate() {
        let row = row.map_err(|e| Error::Config(format!("trace row {}: {e}", i + 1)))?;
        counts.push(row.counts);
    }
    CountTrace::new(bin_width, counts, power)
}

/// Loads `path` and the sidecar with the same stem and a `.json` extension.
pub fn load_trace(path: &Path) -> Result<CountTrace> {
    let sidecar = path.with_extension("json");
    let meta = std::fs::read_to_string(&sidecar)
        .map_err(|e| Error::Config(format!("cannot read sidecar {}: {e}", sidecar.display())))?;
    parse_trace(std::fs::File::open(path)?, &meta)
}

pub fn write_trace_csv<W: Write>(trace: &CountTrace, mut w: W) -> Result<()> {
    writeln!(w, "time_bin,counts")?;
    for (i, c) in trace.counts.iter().enumerate() {
        writeln!(w, "{i},{c}")?;
    }
    Ok(())
}

pub fn sidecar_json(trace: &CountTrace) -> String {
    serde_json::json!({ "bin_width": trace.bin_width, "power": trace.power }).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_distr::Exp;

    fn trace(counts: Vec<u32>) -> CountTrace {
        CountTrace::new(1e-3, counts, 1.0).unwrap()
    }

    fn merge_reference(runs: &mut Vec<(BlinkState, usize)>, min_bins: usize) {
        while runs.len() > 1 {
            let Some((i, _)) = runs.iter().enumerate().filter(|(_, r)| r.1 < min_bins).min_by_key(|(i, r)| (r.1, *i)) else {
                break;
            };
            let len = runs[i].1;
            if i == 0 {
                runs[1].1 += len;
                runs.remove(0);
            } else if i == runs.len() - 1 {
                runs[i - 1].1 += len;
                runs.pop();
            } else {
                let next = runs[i + 1].1;
                runs[i - 1].1 += len + next;
                runs.drain(i..=i + 1);
            }
        }
    }

    #[test]
    fn all_zero_trace_is_one_off_dwell() {
        let seg = segment_trace(&trace(vec![0; 100]), &SegmentOptions::default()).unwrap();
        assert_eq!(seg.dwells.len(), 1);
        assert_eq!(seg.dwells[0].state, BlinkState::Off);
        assert!((seg.dwells[0].duration - 0.1).abs() < 1e-12);
        assert!(segment_trace(&trace(vec![]), &SegmentOptions::default()).is_err());
    }

    #[test]
    fn alternating_blocks() {
        let k = 7;
        let counts: Vec<u32> = (0..10 * k).map(|i| if (i / k) % 2 == 0 { 20 } else { 0 }).collect();
        let seg = segment_trace(&trace(counts), &SegmentOptions::default()).unwrap();
        assert_eq!(seg.dwells.len(), 10);
        for (i, d) in seg.dwells.iter().enumerate() {
            assert!((d.duration - k as f64 * 1e-3).abs() < 1e-12);
            assert_eq!(d.state, if i % 2 == 0 { BlinkState::On } else { BlinkState::Off });
        }
    }

    #[test]
    fn short_runs_merge_into_neighbours() {
        let counts = vec![20, 20, 20, 0, 20, 20, 0, 0, 0, 20];
        let seg = segment_trace(&trace(counts), &SegmentOptions::default()).unwrap();
        let states: Vec<_> = seg.dwells.iter().map(|d| d.state).collect();
        assert_eq!(states, vec![BlinkState::On, BlinkState::Off]);
        assert!((seg.dwells[0].duration - 6e-3).abs() < 1e-12);
        assert!((seg.dwells[1].duration - 4e-3).abs() < 1e-12);
    }

    #[test]
    fn threshold_is_half_the_on_level() {
        let counts: Vec<u32> = (0..100).map(|i| if i % 2 == 0 { 0 } else { 30 }).collect();
        assert!((default_threshold(&counts) - 15.0).abs() < 1e-12);
    }

    #[test]
    fn synthetic_dwell_count_matches_generator() {
        let rates = BlinkRates::reference(20.0);
        let rmax = rates.rate_on_off().max(rates.rate_off_on());
        let bw = 0.01 / rmax;
        let (tr, truth) = synthesize_trace(&rates, &TraceEmission::default(), bw, 200.0, 3).unwrap();
        let seg = segment_trace(&tr, &SegmentOptions::default()).unwrap();
        let rel = (seg.dwells.len() as f64 / truth.len() as f64 - 1.0).abs();
        assert!(rel < 0.05, "{} vs {}", seg.dwells.len(), truth.len());
    }

    fn exp_samples(rate: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = substream(seed, tag::NOISE, 0);
        let e = Exp::new(rate).unwrap();
        (0..n).map(|_| e.sample(&mut rng)).collect()
    }

    #[test]
    fn exponential_rate_recovered() {
        let d = exp_samples(10.0, 10_000, 1);
        for method in [ExpFitMethod::LogLinear, ExpFitMethod::Nonlinear] {
            let fit = fit_exponential_with(&DwellHistogram::auto(&d, BlinkState::On).unwrap(), method).unwrap();
            assert!((fit.rate_hz / 10.0 - 1.0).abs() < 0.03, "{method:?} {fit:?}");
            assert!(fit.r_squared > 0.9 && fit.r_squared <= 1.0);
        }
    }

    #[test]
    fn two_bins_are_not_enough() {
        let h = DwellHistogram { state: BlinkState::Off, bin_edges: vec![0.0, 1.0, 2.0], frequencies: vec![10, 5] };
        assert!(matches!(fit_exponential(&h), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn rate_stable_under_bin_halving() {
        let d = exp_samples(10.0, 10_000, 2);
        let coarse = DwellHistogram::new(&d, BlinkState::On, 0.02).unwrap();
        let fine = DwellHistogram::new(&d, BlinkState::On, 0.01).unwrap();
        assert_eq!(coarse.total(), 10_000);
        let (a, b) = (fit_exponential(&coarse).unwrap(), fit_exponential(&fine).unwrap());
        let sigma = a.rate_stderr_hz.hypot(b.rate_stderr_hz);
        assert!((a.rate_hz - b.rate_hz).abs() < 2.0 * sigma, "{a:?} {b:?}");
    }

    #[test]
    fn exact_line() {
        let rates = [5.0, 10.0, 20.0, 40.0];
        let powers: Vec<f64> = rates.iter().map(|r| 0.690 * r).collect();
        let fit = fit_linear_rates(&powers, &rates).unwrap();
        assert!((fit.gradient - 0.690).abs() < 1e-12);
        assert!((fit.r_squared.unwrap() - 1.0).abs() < 1e-12);
        assert!(fit_linear_rates(&powers[..2], &rates[..2]).is_err());
    }

    #[test]
    fn replicated_rate_flags_r_squared() {
        let fit = fit_linear_rates(&[7.0, 7.0, 7.0], &[10.0, 10.0, 10.0]).unwrap();
        assert!(fit.r_squared.is_none());
        assert!((fit.gradient - 0.7).abs() < 1e-12);
    }

    #[test]
    fn noisy_line_recovers_gradient() {
        let rates: Vec<f64> = [2.0, 5.0, 10.0, 20.0, 40.0, 80.0].to_vec();
        let mut rng = substream(4, tag::NOISE, 0);
        for &m in &[0.690, 0.2966] {
            let powers: Vec<f64> = rates.iter().map(|r| m * r * (1.0 + 0.05 * (rng.random::<f64>() * 2.0 - 1.0))).collect();
            let fit = fit_linear_rates(&powers, &rates).unwrap();
            assert!((fit.gradient - m).abs() < 2.0 * fit.gradient_stderr.max(0.01 * m));
            assert!(fit.r_squared.unwrap() > 0.99);
        }
    }

    proptest! {
        #[test]
        fn merge_matches_reference(lens in proptest::collection::vec(1usize..6, 1..60), min_bins in 1usize..5, first_on: bool) {
            let mut runs: Vec<(BlinkState, usize)> = lens
                .iter()
                .enumerate()
                .map(|(i, &n)| (if (i % 2 == 0) == first_on { BlinkState::On } else { BlinkState::Off }, n))
                .collect();
            let mut expected = runs.clone();
            merge_reference(&mut expected, min_bins);
            merge_short_runs(&mut runs, min_bins);
            prop_assert_eq!(runs, expected);
        }
    }

    proptest! {
        #[test]
        fn gradient_is_scale_equivariant(scale in 0.01f64..100.0, seed in 0u64..100) {
            let mut rng = substream(seed, tag::NOISE, 1);
            let rates: Vec<f64> = (0..6).map(|_| rng.random::<f64>() * 50.0 + 1.0).collect();
            let powers: Vec<f64> = rates.iter().map(|r| 0.69 * r + rng.random::<f64>()).collect();
            let scaled: Vec<f64> = powers.iter().map(|p| p * scale).collect();
            let a = fit_linear_rates(&powers, &rates).unwrap();
            let b = fit_linear_rates(&scaled, &rates).unwrap();
            prop_assert!((b.gradient - scale * a.gradient).abs() <= 1e-12 * b.gradient.abs());
        }
    }

    #[test]
    fn off_fraction_cases() {
        let on = [Dwell { state: BlinkState::On, duration: 2.0 }];
        assert_eq!(off_fraction(&on).unwrap(), 0.0);
        let half = [Dwell { state: BlinkState::On, duration: 1.5 }, Dwell { state: BlinkState::Off, duration: 1.5 }];
        assert_eq!(off_fraction(&half).unwrap(), 0.5);
        assert!(off_fraction(&[]).is_err());
    }

    #[test]
    fn stationary_off_fraction_is_power_independent() {
        let expected = BlinkRates::reference(1.0).stationary_off_fraction();
        assert!((expected - 0.3006).abs() < 1e-4);
        for (i, power) in [5.0, 50.0].into_iter().enumerate() {
            let rates = BlinkRates::reference(power);
            let mean_cycle = 1.0 / rates.rate_on_off() + 1.0 / rates.rate_off_on();
            let mut rng = substream(i as u64, tag::TELEGRAPH, 9);
            let d = sample_telegraph(&rates, 1e4 * mean_cycle, &mut rng).unwrap();
            // Over n exponential on/off cycles the standard deviation is sqrt(2/n) p (1 - p).
            let sd = (2.0f64 / 1e4).sqrt() * expected * (1.0 - expected);
            let f = off_fraction(&d).unwrap();
            assert!((f - expected).abs() < 3.0 * sd, "{power}: {f}");
        }
    }

    #[test]
    fn pipeline_recovers_rates() {
        for power in [2.0, 200.0] {
            let rates = BlinkRates::reference(power);
            let rmax = rates.rate_on_off().max(rates.rate_off_on());
            let mean_cycle = 1.0 / rates.rate_on_off() + 1.0 / rates.rate_off_on();
            let (tr, _) = synthesize_trace(&rates, &TraceEmission::default(), 0.01 / rmax, 1e4 * mean_cycle, 8).unwrap();
            let a = analyze_trace(&tr, &AnalysisOptions::default()).unwrap();
            assert!((a.rate_on_off.rate_hz / rates.rate_on_off() - 1.0).abs() < 0.05, "{a:?}");
            assert!((a.rate_off_on.rate_hz / rates.rate_off_on() - 1.0).abs() < 0.05, "{a:?}");
        }
    }

    #[test]
    fn csv_round_trip_and_missing_fields() {
        let tr = CountTrace::new(2e-4, vec![0, 3, 17, 20], 12.5).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&tr, &mut buf).unwrap();
        let back = parse_trace(buf.as_slice(), &sidecar_json(&tr)).unwrap();
        assert_eq!(back, tr);
        match parse_trace(buf.as_slice(), r#"{"power": 1.0}"#) {
            Err(Error::MissingParameter(name)) => assert_eq!(name, "bin_width"),
            other => panic!("{other:?}"),
        }
        match parse_trace(buf.as_slice(), r#"{"bin_width": 1.0}"#) {
            Err(e) => assert!(e.to_string().contains("power")),
            Ok(_) => panic!("missing power accepted"),
        }
        assert!(parse_trace("time_bin,counts\n0,-1\n".as_bytes(), &sidecar_json(&tr)).is_err());
    }
}
