// Copyright 2026 The spinreg Authors
// SPDX-License-Identifier: Apache-2.0

//! XY8 spectra, order sweeps, correlation spectroscopy, nuclear Ramsey,
//! Welch spectral estimates, peak extraction and parameter fits.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{Matrix3, Vector3};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    apply_dephasing, apply_free_induction_dephasing, coherence_factor, conditional_frequencies, HyperfineVector,
    RegisterConfig,
};
use crate::error::{Error, Result};
use crate::optimize::{nelder_mead, Bound, NelderMeadOptions};
use crate::readout::{classify, sample_counts, EmitterState, Outcome, PhotonModel};
use crate::rng::{derive_seed, substream, tag};
use crate::sequences::{
    half_pi_pulse, pi_pulse, Compiler, PulseElement, PHASE_MINUS_X, PHASE_X, PHASE_Y, XY8_PHASES,
};
use crate::spin::{c, identity, kron, maximally_mixed, ComplexMatrix, DensityState, HermitianEigen};

/// Pulse model used by the spectroscopy sequences.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PulseOptions {
    /// Rabi frequency in Hz.
    pub rabi: f64,
    /// Instantaneous electron-only rotations instead of rectangular pulses.
    #[serde(default)]
    pub ideal: bool,
}

impl Default for PulseOptions {
    fn default() -> Self {
        Self { rabi: 7.65e6, ideal: false }
    }
}

impl PulseOptions {
    pub fn ideal() -> Self {
        Self { ideal: true, ..Self::default() }
    }

    pub fn finite(rabi: f64) -> Self {
        Self { rabi, ideal: false }
    }

    /// Time a π pulse occupies on the timeline.
    pub fn pi_duration(&self) -> f64 {
        if self.ideal {
            0.0
        } else {
            1.0 / (2.0 * self.rabi)
        }
    }
}

fn with_ideal(e: PulseElement, ideal: bool) -> PulseElement {
    match e {
        PulseElement::Drive { drive, .. } => PulseElement::Drive { drive, ideal },
        other => other,
    }
}

/// Cached pulse propagators of one register for fast XY8 construction.
pub struct GateKernel {
    cfg: RegisterConfig,
    pulses: PulseOptions,
    free: HermitianEigen,
    pi_x: ComplexMatrix,
    pi_y: ComplexMatrix,
    half_x: ComplexMatrix,
    half_y: ComplexMatrix,
    half_mx: ComplexMatrix,
}

impl GateKernel {
    pub fn new(cfg: &RegisterConfig, pulses: PulseOptions) -> Result<Self> {
        let mut comp = Compiler::new(cfg)?;
        let mut el = |e: PulseElement| comp.element(&with_ideal(e, pulses.ideal));
        let pi_x = el(pi_pulse(pulses.rabi, PHASE_X, 0.0)?)?;
        let pi_y = el(pi_pulse(pulses.rabi, PHASE_Y, 0.0)?)?;
        let half_x = el(half_pi_pulse(pulses.rabi, PHASE_X)?)?;
        let half_y = el(half_pi_pulse(pulses.rabi, PHASE_Y)?)?;
        let half_mx = el(half_pi_pulse(pulses.rabi, PHASE_MINUS_X)?)?;
        Ok(Self { cfg: cfg.clone(), pulses, free: comp.free_eigen().clone(), pi_x, pi_y, half_x, half_y, half_mx })
    }

    pub fn config(&self) -> &RegisterConfig {
        &self.cfg
    }

    pub fn pulses(&self) -> PulseOptions {
        self.pulses
    }

    pub fn free(&self, t: f64) -> ComplexMatrix {
        self.free.propagator(t)
    }

    fn check_tau(&self, tau_dd: f64, order: usize) -> Result<()> {
        if order == 0 {
            return Err(Error::Sequence("XY8 order must be at least 1".into()));
        }
        let t_pi = 1.0 / (2.0 * self.pulses.rabi);
        if !(tau_dd.is_finite() && tau_dd > t_pi) {
            return Err(Error::Sequence(format!(
                "tau_dd {tau_dd:e} s must exceed the pi pulse duration {t_pi:e} s"
            )));
        }
        Ok(())
    }

    /// Duration of an XY8-N block with edge-to-edge spacing `tau_dd`.
    pub fn xy8_duration(&self, tau_dd: f64, order: usize) -> f64 {
        8.0 * order as f64 * (tau_dd + self.pulses.pi_duration())
    }

    /// XY8-N propagator, identical to compiling [`crate::sequences::xy8_block`].
    pub fn xy8(&self, tau_dd: f64, order: usize) -> Result<ComplexMatrix> {
        self.check_tau(tau_dd, order)?;
        let h = self.free(tau_dd / 2.0);
        let cell_x = &h * &self.pi_x * &h;
        let cell_y = &h * &self.pi_y * &h;
        let mut block = identity(h.nrows());
        for &p in XY8_PHASES.iter() {
            let cell = if p == PHASE_X { &cell_x } else { &cell_y };
            block = cell * block;
        }
        let mut u = block.clone();
        for _ in 1..order {
            u = &block * u;
        }
        Ok(u)
    }

    /// `π/2(x) · XY8-N · π/2(y)`.
    pub fn cnnote(&self, tau_dd: f64, order: usize) -> Result<ComplexMatrix> {
        Ok(&self.half_y * self.xy8(tau_dd, order)? * &self.half_x)
    }

    /// State after `π/2(x) · XY8-N · π/2(-x)` with decoupled dephasing over the block.
    fn spectroscopy_state(&self, rho: &DensityState, tau_dd: f64, order: usize) -> Result<DensityState> {
        let u = self.xy8(tau_dd, order)?;
        let mid = rho.evolve(&self.half_x).evolve(&u);
        let mid = apply_dephasing(&mid, self.xy8_duration(tau_dd, order), &self.cfg);
        Ok(mid.evolve(&self.half_mx))
    }
}

/// Edge-to-edge spacing resonant with nucleus `nucleus` at harmonic `k`.
///
/// The pulse centres are spaced by `(2k+1)/(f↑+f↓)`. This is exact for weak
/// coupling; for `A_zx` comparable with the Larmor frequency the dip shifts.
pub fn resonant_tau_dd(cfg: &RegisterConfig, nucleus: usize, k: usize, pulses: PulseOptions) -> Result<f64> {
    let (fu, fd) = conditional_frequencies(cfg, nucleus)?;
    Ok((2 * k + 1) as f64 / (fu + fd) - pulses.pi_duration())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPoint {
    /// Inter-pulse spacing in s.
    pub tau_dd_s: f64,
    /// Electron `|↓⟩` population.
    pub survival: f64,
}

/// Electron survival after `π/2(x) – XY8-N – π/2(-x)` from `|↓⟩` and thermal nuclei.
pub fn simulate_xy8_spectrum(
    cfg: &RegisterConfig,
    tau_dd_grid: &[f64],
    order: usize,
    pulses: PulseOptions,
) -> Result<Vec<SpectrumPoint>> {
    if tau_dd_grid.is_empty() {
        return Err(Error::Sequence("tau_dd grid is empty".into()));
    }
    let kernel = GateKernel::new(cfg, pulses)?;
    let rho = DensityState::electron_down_thermal(cfg.n_nuclei());
    tau_dd_grid
        .par_iter()
        .map(|&tau| {
            let s = kernel.spectroscopy_state(&rho, tau, order)?;
            Ok(SpectrumPoint { tau_dd_s: tau, survival: s.electron_down_population() })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderPoint {
    pub order: usize,
    /// Number of π pulses `8N`.
    pub pulses: usize,
    /// XY8 block duration in s.
    pub duration_s: f64,
    pub survival: f64,
    /// `⟨σz⟩ = P↑ − P↓`.
    pub sigma_z: f64,
}

/// Spectroscopy signal against XY8 order at fixed spacing.
pub fn simulate_order_sweep(
    cfg: &RegisterConfig,
    tau_dd: f64,
    orders: &[usize],
    pulses: PulseOptions,
) -> Result<Vec<OrderPoint>> {
    let kernel = GateKernel::new(cfg, pulses)?;
    let rho = DensityState::electron_down_thermal(cfg.n_nuclei());
    orders
        .par_iter()
        .map(|&n| {
            let s = kernel.spectroscopy_state(&rho, tau_dd, n)?;
            let survival = s.electron_down_population();
            Ok(OrderPoint {
                order: n,
                pulses: 8 * n,
                duration_s: kernel.xy8_duration(tau_dd, n),
                survival,
                sigma_z: 1.0 - 2.0 * survival,
            })
        })
        .collect()
}

/// Order at the first zero crossing of `⟨σz⟩`, where the electron is maximally
/// entangled with the resonant nucleus. `None` if no crossing up to `max_order`.
pub fn entangling_order(cfg: &RegisterConfig, tau_dd: f64, max_order: usize, pulses: PulseOptions) -> Result<Option<usize>> {
    let orders: Vec<usize> = (1..=max_order).collect();
    let sweep = simulate_order_sweep(cfg, tau_dd, &orders, pulses)?;
    let mut prev: Option<&OrderPoint> = None;
    for p in &sweep {
        if p.sigma_z >= 0.0 {
            return Ok(Some(match prev {
                Some(q) if q.sigma_z.abs() < p.sigma_z.abs() => q.order,
                _ => p.order,
            }));
        }
        prev = Some(p);
    }
    Ok(None)
}

// ---------------------------------------------------------------------------
// Correlation spectroscopy

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryMode {
    /// Nuclei return to the thermal state before every τ point.
    #[default]
    Memoryless,
    /// The post-measurement nuclear state seeds the next acquired point.
    Memory,
}

/// Electron readout after the second CS block.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CsReadout {
    /// Projective and noiseless.
    #[default]
    Ideal,
    /// Photon counts from the readout model, classified at `threshold`.
    Photon { model: PhotonModel, threshold: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsPlan {
    /// XY8 spacing of both blocks in s.
    pub tau_dd: f64,
    pub order: usize,
    /// Correlation times in s, strictly ascending and uniformly spaced.
    pub tau_grid: Vec<f64>,
    #[serde(default)]
    pub randomize_tau: bool,
    #[serde(default)]
    pub memory_mode: MemoryMode,
    /// Shots per τ point. Zero returns expectation values.
    #[serde(default)]
    pub shots_per_point: u32,
    #[serde(default)]
    pub pulses: PulseOptions,
    #[serde(default)]
    pub readout: CsReadout,
}

impl CsPlan {
    /// `count` points `start, start + step, …`.
    pub fn uniform_grid(start: f64, step: f64, count: usize) -> Vec<f64> {
        (0..count).map(|i| start + step * i as f64).collect()
    }

    pub fn validate(&self, cfg: &RegisterConfig) -> Result<()> {
        let n = self.tau_grid.len();
        if n < 2 {
            return Err(Error::Sequence("CS tau grid needs at least two points".into()));
        }
        if self.tau_grid.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::Sequence("CS tau values must be finite and non-negative".into()));
        }
        if self.tau_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Sequence("CS tau grid must be strictly ascending".into()));
        }
        let step = (self.tau_grid[n - 1] - self.tau_grid[0]) / (n - 1) as f64;
        if self.tau_grid.windows(2).any(|w| ((w[1] - w[0]) - step).abs() > 1e-6 * step) {
            return Err(Error::Sequence("CS tau grid must be uniformly spaced".into()));
        }
        let (lo, hi) = (self.tau_grid[0], self.tau_grid[n - 1]);
        if let Some(t2) = cfg.t2_star_e {
            if lo <= t2 {
                return Err(Error::Sequence(format!(
                    "shortest tau {lo:e} s must exceed the electron T2* {t2:e} s"
                )));
            }
        }
        if let Some(t1) = cfg.t1_e {
            if hi >= t1 {
                return Err(Error::Sequence(format!("longest tau {hi:e} s must stay below the electron T1 {t1:e} s")));
            }
        }
        if let CsReadout::Photon { model, .. } = &self.readout {
            model.validate()?;
            if self.shots_per_point == 0 {
                return Err(Error::Config("photon readout needs shots_per_point > 0".into()));
            }
        }
        if !(self.pulses.rabi > 0.0 && self.pulses.rabi.is_finite()) {
            return Err(Error::Pulse(format!("rabi frequency must be positive, got {}", self.pulses.rabi)));
        }
        let t_pi = 1.0 / (2.0 * self.pulses.rabi);
        if !(self.tau_dd > t_pi && self.tau_dd.is_finite()) {
            return Err(Error::Sequence(format!("tau_dd {:e} s must exceed the pi pulse duration", self.tau_dd)));
        }
        if self.order == 0 {
            return Err(Error::Sequence("XY8 order must be at least 1".into()));
        }
        Ok(())
    }
}

/// CS outcome per τ in ascending τ order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsSignal {
    pub tau_s: Vec<f64>,
    /// Fraction of dark outcomes (expected `P(↓)` without shots).
    pub signal: Vec<f64>,
    /// Grid indices in the order the first sweep acquired them.
    pub acquisition_order: Vec<usize>,
}

impl CsSignal {
    pub fn sample_interval(&self) -> f64 {
        let n = self.tau_s.len();
        (self.tau_s[n - 1] - self.tau_s[0]) / (n - 1) as f64
    }

    /// Welch estimate with `params` or the defaults for this length.
    pub fn psd(&self, params: Option<PsdParams>) -> Result<PsdResult> {
        let params = params.unwrap_or_else(|| PsdParams::for_length(self.signal.len()));
        welch_psd(&self.signal, self.sample_interval(), &params)
    }
}

struct CsEngine<'a> {
    cfg: &'a RegisterConfig,
    block: ComplexMatrix,
    free: Vec<ComplexMatrix>,
    tau: &'a [f64],
}

impl CsEngine<'_> {
    /// State before readout for nuclear input `rho_n` at grid point `i`.
    fn run(&self, rho_n: &ComplexMatrix, i: usize) -> DensityState {
        let s = DensityState::electron_down_with(rho_n).evolve(&self.block);
        let s = apply_free_induction_dephasing(&s, self.tau[i], self.cfg).evolve(&self.free[i]);
        s.evolve(&self.block)
    }
}

fn readout_is_dark<R: Rng + ?Sized>(electron_down: bool, readout: &CsReadout, rng: &mut R) -> bool {
    match readout {
        CsReadout::Ideal => electron_down,
        CsReadout::Photon { model, threshold } => {
            let state = if electron_down { EmitterState::Dark } else { EmitterState::Bright };
            classify(sample_counts(state, model, rng).counts, *threshold) == Outcome::D
        }
    }
}

/// Correlation spectroscopy: two CnNOTe blocks around a free interval τ.
pub fn simulate_cs(cfg: &RegisterConfig, plan: &CsPlan, seed: u64) -> Result<CsSignal> {
    plan.validate(cfg)?;
    let kernel = GateKernel::new(cfg, plan.pulses)?;
    let engine = CsEngine {
        cfg,
        block: kernel.cnnote(plan.tau_dd, plan.order)?,
        free: plan.tau_grid.par_iter().map(|&t| kernel.free(t)).collect(),
        tau: &plan.tau_grid,
    };
    let n = plan.tau_grid.len();
    let thermal = maximally_mixed(cfg.n_nuclei());
    let shots = plan.shots_per_point;
    let order_for = |sweep: u64| {
        let mut order: Vec<usize> = (0..n).collect();
        if plan.randomize_tau {
            order.shuffle(&mut substream(seed, tag::CS_ORDER, sweep));
        }
        order
    };
    let acquisition_order = order_for(0);

    let signal = match plan.memory_mode {
        MemoryMode::Memoryless => (0..n)
            .into_par_iter()
            .map(|i| {
                let p_d = engine.run(&thermal, i).electron_down_population().clamp(0.0, 1.0);
                if shots == 0 {
                    return Ok(p_d);
                }
                let mut rng = substream(seed, tag::CS_POINT, i as u64);
                let dark = match &plan.readout {
                    CsReadout::Ideal => Binomial::new(shots as u64, p_d)
                        .map_err(|e| Error::Config(format!("binomial: {e}")))?
                        .sample(&mut rng),
                    readout => (0..shots)
                        .filter(|_| {
                            let down = rng.random::<f64>() < p_d;
                            readout_is_dark(down, readout, &mut rng)
                        })
                        .count() as u64,
                };
                Ok(dark as f64 / shots as f64)
            })
            .collect::<Result<Vec<f64>>>()?,
        MemoryMode::Memory => {
            let mut rho_n = thermal;
            let mut out = vec![0.0; n];
            let mut rng = substream(seed, tag::CS_POINT, u64::MAX >> 16);
            for sweep in 0..shots.max(1) as u64 {
                let order = if sweep == 0 { acquisition_order.clone() } else { order_for(sweep) };
                for &i in &order {
                    let s = engine.run(&rho_n, i);
                    if shots == 0 {
                        out[i] = s.electron_down_population().clamp(0.0, 1.0);
                        rho_n = s.nuclear_state();
                    } else {
                        let p_d = s.electron_down_population();
                        let down = rng.random::<f64>() < p_d;
                        let (_, post) = s.project_electron(!down);
                        rho_n = post.map(|p| p.nuclear_state()).unwrap_or_else(|| s.nuclear_state());
                        if readout_is_dark(down, &plan.readout, &mut rng) {
                            out[i] += 1.0;
                        }
                    }
                }
            }
            if shots > 0 {
                out.iter_mut().for_each(|v| *v /= shots as f64);
            }
            out
        }
    };
    Ok(CsSignal { tau_s: plan.tau_grid.clone(), signal, acquisition_order })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cs2dRow {
    pub tau_dd_s: f64,
    pub signal: CsSignal,
    pub psd: PsdResult,
    pub peaks: PeakSet,
}

/// CS repeated over a range of XY8 spacings, one spectrum per spacing.
pub fn simulate_cs_2d(
    cfg: &RegisterConfig,
    tau_dd_grid: &[f64],
    plan: &CsPlan,
    psd: Option<PsdParams>,
    peaks: &PeakOptions,
    seed: u64,
) -> Result<Vec<Cs2dRow>> {
    if tau_dd_grid.is_empty() {
        return Err(Error::Sequence("tau_dd grid is empty".into()));
    }
    tau_dd_grid
        .par_iter()
        .enumerate()
        .map(|(row, &tau_dd)| {
            let row_plan = CsPlan { tau_dd, ..plan.clone() };
            let signal = simulate_cs(cfg, &row_plan, derive_seed(seed, tag::SWEEP, row as u64))?;
            let spectrum = signal.psd(psd)?;
            let found = extract_peaks_with(&spectrum, peaks);
            Ok(Cs2dRow { tau_dd_s: tau_dd, signal, psd: spectrum, peaks: found })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Nuclear Ramsey

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElectronBranch {
    Up,
    Dn,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RamseyOptions {
    /// XY8 spacing of the gate in s before the shift.
    pub tau_dd: f64,
    pub order: usize,
    /// Offset added to `tau_dd` in s.
    #[serde(default)]
    pub tau_dd_shift: f64,
    #[serde(default)]
    pub pulses: PulseOptions,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RamseyPoint {
    pub tau_free_s: f64,
    /// Dark-outcome probability of the final readout.
    pub p_dark: f64,
    /// `2 p_dark − 1`.
    pub contrast: f64,
}

/// MBI, conditional free precession, CnNOTe and readout.
///
/// The electron is projected onto `|↓⟩` after the first gate. For the `Up`
/// branch instantaneous π pulses bracket the free interval.
pub fn simulate_nuclear_ramsey(
    cfg: &RegisterConfig,
    branch: ElectronBranch,
    tau_free_grid: &[f64],
    opts: &RamseyOptions,
) -> Result<Vec<RamseyPoint>> {
    if cfg.n_nuclei() == 0 {
        return Err(Error::Config("nuclear Ramsey needs at least one nucleus".into()));
    }
    let kernel = GateKernel::new(cfg, opts.pulses)?;
    let gate = kernel.cnnote(opts.tau_dd + opts.tau_dd_shift, opts.order)?;
    let after = DensityState::electron_down_thermal(cfg.n_nuclei()).evolve(&gate);
    let (p, post) = after.project_electron(false);
    let initialized = post.ok_or_else(|| Error::Sequence(format!("MBI post-selection probability {p:e} is zero")))?;
    let flip = kron(
        &ComplexMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, -1.0), c(0.0, -1.0), c(0.0, 0.0)]),
        &identity(1 << cfg.n_nuclei()),
    );
    let start = match branch {
        ElectronBranch::Up => initialized.evolve(&flip),
        ElectronBranch::Dn => initialized,
    };
    tau_free_grid
        .par_iter()
        .map(|&t| {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::Sequence(format!("free time {t} must be finite and non-negative")));
            }
            let mut s = start.evolve(&kernel.free(t));
            if branch == ElectronBranch::Up {
                s = s.evolve(&flip);
            }
            let p_dark = s.evolve(&gate).electron_down_population();
            Ok(RamseyPoint { tau_free_s: t, p_dark, contrast: 2.0 * p_dark - 1.0 })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Welch spectral estimate

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    Hann,
    Rectangular,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detrend {
    #[default]
    Mean,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsdParams {
    pub segment_length: usize,
    pub overlap_fraction: f64,
    #[serde(default)]
    pub window: Window,
    #[serde(default)]
    pub detrend: Detrend,
}

impl PsdParams {
    /// Hann window, half overlap, mean removal and a power-of-two segment of
    /// about an eighth of the signal, capped at 4096.
    pub fn for_length(len: usize) -> Self {
        let target = (len / 8).max(8);
        let mut seg = 8usize;
        while seg * 2 <= target && seg < 4096 {
            seg *= 2;
        }
        Self { segment_length: seg, overlap_fraction: 0.5, window: Window::Hann, detrend: Detrend::Mean }
    }

    pub fn validate(&self) -> Result<()> {
        if self.segment_length < 8 {
            return Err(Error::Config(format!("segment_length {} must be at least 8", self.segment_length)));
        }
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(Error::Config(format!("overlap_fraction {} must lie in [0, 1)", self.overlap_fraction)));
        }
        Ok(())
    }
}

/// One-sided power spectral density.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsdResult {
    /// Hz, ascending from zero.
    pub frequencies: Vec<f64>,
    /// Power per Hz.
    pub power: Vec<f64>,
    /// Bin spacing in Hz.
    pub resolution: f64,
    pub segments: usize,
}

impl PsdResult {
    /// Sum of power times bin width.
    pub fn integrated_power(&self) -> f64 {
        self.power.iter().sum::<f64>() * self.resolution
    }

    pub fn bin_of(&self, f: f64) -> usize {
        ((f / self.resolution).round().max(0.0) as usize).min(self.power.len() - 1)
    }
}

/// Averaged windowed periodograms of `signal` sampled every `sample_interval`.
pub fn welch_psd(signal: &[f64], sample_interval: f64, params: &PsdParams) -> Result<PsdResult> {
    params.validate()?;
    let m = params.segment_length;
    if signal.len() < m {
        return Err(Error::SignalTooShort { len: signal.len(), needed: m });
    }
    if !(sample_interval.is_finite() && sample_interval > 0.0) {
        return Err(Error::Config(format!("sample interval {sample_interval} must be positive")));
    }
    let fs = 1.0 / sample_interval;
    let window: Vec<f64> = match params.window {
        Window::Hann => (0..m).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / m as f64).cos()).collect(),
        Window::Rectangular => vec![1.0; m],
    };
    let w2: f64 = window.iter().map(|w| w * w).sum();
    let step = (m - (params.overlap_fraction * m as f64).floor() as usize).max(1);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(m);
    let n_bins = m / 2 + 1;
    let mut acc = vec![0.0; n_bins];
    let mut segments = 0usize;
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    let mut start = 0usize;
    while start + m <= signal.len() {
        let seg = &signal[start..start + m];
        let mean = match params.detrend {
            Detrend::Mean => seg.iter().sum::<f64>() / m as f64,
            Detrend::None => 0.0,
        };
        for (b, (&x, &w)) in buf.iter_mut().zip(seg.iter().zip(&window)) {
            *b = Complex64::new((x - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, z) in acc.iter_mut().zip(&buf) {
            *a += z.norm_sqr();
        }
        segments += 1;
        start += step;
    }
    let scale = 1.0 / (fs * w2 * segments as f64);
    let power: Vec<f64> = acc
        .iter()
        .enumerate()
        .map(|(k, &a)| {
            let one_sided = if k == 0 || (m % 2 == 0 && k == m / 2) { 1.0 } else { 2.0 };
            a * scale * one_sided
        })
        .collect();
    let resolution = fs / m as f64;
    Ok(PsdResult {
        frequencies: (0..n_bins).map(|k| k as f64 * resolution).collect(),
        power,
        resolution,
        segments,
    })
}

// ---------------------------------------------------------------------------
// Peaks

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub frequency_hz: f64,
    pub power: f64,
}

/// Spectral peaks, strongest first.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PeakSet {
    pub peaks: Vec<Peak>,
    /// Absolute acceptance level used for the search.
    pub floor: f64,
}

impl PeakSet {
    pub fn len(&self) -> usize {
        self.peaks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peaks.is_empty()
    }

    /// Peak closest to `f`.
    pub fn nearest(&self, f: f64) -> Option<&Peak> {
        self.peaks.iter().min_by(|a, b| (a.frequency_hz - f).abs().total_cmp(&(b.frequency_hz - f).abs()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PeakOptions {
    pub max_peaks: usize,
    /// Peaks must exceed this multiple of the median power.
    pub floor_factor: f64,
    /// Peaks must also exceed this fraction of the strongest bin.
    #[serde(default)]
    pub min_relative_power: f64,
}

impl Default for PeakOptions {
    fn default() -> Self {
        Self { max_peaks: 16, floor_factor: 10.0, min_relative_power: 0.0 }
    }
}

/// Local maxima above `floor_factor` times the median power.
pub fn extract_peaks(psd: &PsdResult, max_peaks: usize, floor_factor: f64) -> PeakSet {
    extract_peaks_with(psd, &PeakOptions { max_peaks, floor_factor, min_relative_power: 0.0 })
}

pub fn extract_peaks_with(psd: &PsdResult, opts: &PeakOptions) -> PeakSet {
    let p = &psd.power;
    if p.len() < 3 {
        return PeakSet::default();
    }
    let mut sorted = p.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let max = sorted[sorted.len() - 1];
    let floor = (opts.floor_factor * median).max(opts.min_relative_power * max);
    let tiny = f64::MIN_POSITIVE;
    let mut peaks: Vec<Peak> = (1..p.len() - 1)
        .filter(|&i| p[i] > p[i - 1] && p[i] >= p[i + 1] && p[i] > floor && p[i] > 0.0)
        .map(|i| {
            let (a, b, g) = (p[i - 1].max(tiny).ln(), p[i].ln(), p[i + 1].max(tiny).ln());
            let denom = a - 2.0 * b + g;
            let delta = if denom < 0.0 { (0.5 * (a - g) / denom).clamp(-0.5, 0.5) } else { 0.0 };
            Peak {
                frequency_hz: psd.frequencies[i] + delta * psd.resolution,
                power: (b - 0.25 * (a - g) * delta).exp(),
            }
        })
        .collect();
    peaks.sort_by(|x, y| y.power.total_cmp(&x.power));
    peaks.truncate(opts.max_peaks);
    PeakSet { peaks, floor }
}

// ---------------------------------------------------------------------------
// Hyperfine fit

/// Search box for one nucleus.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingBounds {
    pub a_zx: (f64, f64),
    pub a_zz: (f64, f64),
}

impl CouplingBounds {
    /// Box of relative half-width `frac` around `v`.
    pub fn around(v: &HyperfineVector, frac: f64) -> Self {
        let span = |x: f64| {
            let d = frac * x.abs().max(1e3);
            (x - d, x + d)
        };
        Self { a_zx: span(v.a_zx), a_zz: span(v.a_zz) }
    }

    fn bounds(&self) -> [Bound; 2] {
        [Bound::new(self.a_zx.0, self.a_zx.1), Bound::new(self.a_zz.0, self.a_zz.1)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperfineFitOptions {
    pub order: usize,
    #[serde(default)]
    pub pulses: PulseOptions,
    /// Coarse grid points per axis when no start is given.
    pub grid_points: usize,
    pub max_evals: usize,
    /// Per-point residual level below which differences count as noise.
    pub noise_floor: f64,
    /// Null-model excess, in units of the noise level, needed for detection.
    pub detection_factor: f64,
}

impl Default for HyperfineFitOptions {
    fn default() -> Self {
        Self {
            order: 1,
            pulses: PulseOptions::default(),
            grid_points: 9,
            max_evals: 600,
            noise_floor: 1e-3,
            detection_factor: 4.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedCoupling {
    /// Index of the nucleus in the template.
    pub nucleus: usize,
    pub a_zx: f64,
    pub a_zz: f64,
    /// `false` when removing the transverse coupling does not worsen the fit.
    pub detected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperfineFit {
    pub couplings: Vec<FittedCoupling>,
    pub residual_ss: f64,
    pub residual_rms: f64,
    pub evaluations: usize,
}

struct SpectrumObjective<'a> {
    measured: &'a [SpectrumPoint],
    taus: Vec<f64>,
    template: &'a RegisterConfig,
    opts: &'a HyperfineFitOptions,
}

impl SpectrumObjective<'_> {
    fn config(&self, targets: &[usize], x: &[f64]) -> RegisterConfig {
        let mut cfg = self.template.clone();
        for (j, &t) in targets.iter().enumerate() {
            cfg.nuclei[t].a_zx = x[2 * j];
            cfg.nuclei[t].a_zz = x[2 * j + 1];
        }
        cfg
    }

    fn ss_of(&self, cfg: &RegisterConfig) -> f64 {
        match simulate_xy8_spectrum(cfg, &self.taus, self.opts.order, self.opts.pulses) {
            Ok(sim) => sim.iter().zip(self.measured).map(|(s, m)| (s.survival - m.survival).powi(2)).sum(),
            Err(_) => f64::INFINITY,
        }
    }

    fn ss(&self, targets: &[usize], x: &[f64]) -> f64 {
        self.ss_of(&self.config(targets, x))
    }
}

/// Least-squares fit of `(A_zx, A_zz)` for the template nuclei in `targets`.
///
/// Each target is located in turn by a coarse grid over its box, with later
/// targets left out of the model, and refined by simplex. `start` values join
/// the grid as extra candidates. All targets are then refined together.
/// Nuclei not in `targets` stay fixed.
pub fn fit_hyperfine(
    measured: &[SpectrumPoint],
    template: &RegisterConfig,
    targets: &[usize],
    bounds: &[CouplingBounds],
    start: Option<&[HyperfineVector]>,
    opts: &HyperfineFitOptions,
) -> Result<HyperfineFit> {
    if measured.is_empty() {
        return Err(Error::InsufficientData("hyperfine fit needs a measured spectrum".into()));
    }
    if targets.is_empty() || bounds.len() != targets.len() || start.is_some_and(|s| s.len() != targets.len()) {
        return Err(Error::Fit("targets, bounds and start values must have matching lengths".into()));
    }
    for &t in targets {
        template.nucleus(t)?;
    }
    let obj = SpectrumObjective { measured, taus: measured.iter().map(|p| p.tau_dd_s).collect(), template, opts };
    let box_of: Vec<Bound> = bounds.iter().flat_map(|b| b.bounds()).collect();
    let mut evals = 0usize;

    let mut x: Vec<f64> = Vec::with_capacity(2 * targets.len());
    for (j, &t) in targets.iter().enumerate() {
        let mut partial = template.clone();
        let map: Vec<usize> = (0..template.n_nuclei()).filter(|i| !targets[j + 1..].contains(i)).collect();
        partial.nuclei = map.iter().map(|&i| template.nuclei[i]).collect();
        for (k, &done) in targets[..j].iter().enumerate() {
            if let Some(pos) = map.iter().position(|&i| i == done) {
                partial.nuclei[pos].a_zx = x[2 * k];
                partial.nuclei[pos].a_zz = x[2 * k + 1];
            }
        }
        let pos = map.iter().position(|&i| i == t).unwrap_or(0);
        let sub = obj.clone_with(&partial);
        let [bx, bz] = bounds[j].bounds();
        let mut candidates: Vec<(f64, f64)> = bx
            .grid(opts.grid_points)
            .into_iter()
            .flat_map(|a| bz.grid(opts.grid_points).into_iter().map(move |z| (a, z)))
            .collect();
        if let Some(s) = start {
            candidates.push((bx.clamp(s[j].a_zx), bz.clamp(s[j].a_zz)));
        }
        evals += candidates.len();
        let best = candidates
            .par_iter()
            .map(|&(a, z)| (sub.ss(&[pos], &[a, z]), a, z))
            .min_by(|p, q| p.0.total_cmp(&q.0))
            .map(|(_, a, z)| [a, z])
            .unwrap_or([bx.lo, bz.lo]);
        let step = [bx.width() / opts.grid_points as f64, bz.width() / opts.grid_points as f64];
        let m = nelder_mead(
            |p| sub.ss(&[pos], p),
            &best,
            &step,
            &[bx, bz],
            NelderMeadOptions { max_evals: opts.max_evals, ..Default::default() },
        );
        evals += m.evals;
        x.extend(m.x);
    }

    let step: Vec<f64> = x
        .iter()
        .zip(&box_of)
        .map(|(v, b)| (0.05 * v.abs()).max(0.02 * b.width()).max(1.0))
        .collect();
    let m = nelder_mead(
        |p| obj.ss(targets, p),
        &x,
        &step,
        &box_of,
        NelderMeadOptions { max_evals: opts.max_evals * targets.len(), ..Default::default() },
    );
    evals += m.evals;
    x = m.x;
    let ss = m.value;
    let n = measured.len() as f64;
    let noise = opts.detection_factor * ss.max(n * opts.noise_floor.powi(2));

    let mut couplings = Vec::with_capacity(targets.len());
    for (j, &t) in targets.iter().enumerate() {
        let mut null_cfg = obj.config(targets, &x);
        null_cfg.nuclei[t].a_zx = 0.0;
        null_cfg.nuclei[t].a_zy = 0.0;
        let null_ss = obj.ss_of(&null_cfg);
        evals += 1;
        let detected = null_ss - ss > noise;
        if detected {
            for k in [2 * j, 2 * j + 1] {
                let b = box_of[k];
                let edge = 1e-6 * b.width();
                if (x[k] - b.lo).abs() <= edge || (b.hi - x[k]).abs() <= edge {
                    return Err(Error::Fit(format!(
                        "no minimum inside the bounds for nucleus {t}: parameter {} settled at {:e}",
                        if k % 2 == 0 { "a_zx" } else { "a_zz" },
                        x[k]
                    )));
                }
            }
        }
        couplings.push(FittedCoupling {
            nucleus: t,
            a_zx: if detected { x[2 * j] } else { 0.0 },
            a_zz: if detected { x[2 * j + 1] } else { 0.0 },
            detected,
        });
    }
    Ok(HyperfineFit { couplings, residual_ss: ss, residual_rms: (ss / n).sqrt(), evaluations: evals })
}

impl<'a> SpectrumObjective<'a> {
    fn clone_with(&self, template: &'a RegisterConfig) -> SpectrumObjective<'a> {
        SpectrumObjective { measured: self.measured, taus: self.taus.clone(), template, opts: self.opts }
    }
}

/// Adds independent Gaussian noise of standard deviation `sigma`.
pub fn with_gaussian_noise(values: &[f64], sigma: f64, seed: u64) -> Result<Vec<f64>> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(format!("noise level: {e}")))?;
    let mut rng = substream(seed, tag::NOISE, 0);
    Ok(values.iter().map(|v| v + normal.sample(&mut rng)).collect())
}

// ---------------------------------------------------------------------------
// Ramsey envelope fit

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct T2StarFit {
    pub t2_star_s: f64,
    /// Apparent (possibly aliased) oscillation frequency in Hz.
    pub frequency_hz: f64,
    pub amplitude: f64,
    pub phase: f64,
    pub offset: f64,
    pub exponent: f64,
    pub residual_rms: f64,
    /// Fitted decay time exceeds ten times the sampled window.
    pub unbounded: bool,
}

/// Linear part of the model for fixed `(T, f)`: returns residual SS and
/// coefficients of `env·cos`, `env·sin` and the offset.
fn project_linear(t: &[f64], y: &[f64], t2: f64, f: f64, p: f64) -> (f64, [f64; 3]) {
    let mut ata = Matrix3::<f64>::zeros();
    let mut aty = Vector3::<f64>::zeros();
    let cols = |ti: f64| {
        let env = coherence_factor(ti, t2, p);
        let ph = 2.0 * PI * f * ti;
        Vector3::new(env * ph.cos(), env * ph.sin(), 1.0)
    };
    for (&ti, &yi) in t.iter().zip(y) {
        let r = cols(ti);
        ata += r * r.transpose();
        aty += r * yi;
    }
    let coef = ata.svd(true, true).solve(&aty, 1e-12 * ata.norm().max(1e-300)).unwrap_or_else(|_| Vector3::zeros());
    let ss = t
        .iter()
        .zip(y)
        .map(|(&ti, &yi)| (yi - cols(ti).dot(&coef)).powi(2))
        .sum();
    (ss, [coef[0], coef[1], coef[2]])
}

/// Fit of `A exp(-(t/T2*)^p) cos(2π f t + φ) + c`.
///
/// The frequency is searched up to the Nyquist limit of the sampling, so an
/// undersampled record returns the aliased frequency.
pub fn fit_t2star(signal: &[f64], times: &[f64], exponent: f64) -> Result<T2StarFit> {
    if signal.len() != times.len() {
        return Err(Error::Fit(format!("{} samples but {} times", signal.len(), times.len())));
    }
    if signal.len() < 8 {
        return Err(Error::InsufficientData(format!("T2* fit needs at least 8 samples, got {}", signal.len())));
    }
    if signal.iter().chain(times).any(|v| !v.is_finite()) || !(exponent > 0.0) {
        return Err(Error::Fit("non-finite samples or exponent".into()));
    }
    let t0 = times.iter().copied().fold(f64::INFINITY, f64::min);
    let t1 = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let window = t1 - t0;
    if !(window > 0.0) {
        return Err(Error::Fit("time grid spans no interval".into()));
    }
    let mut diffs: Vec<f64> = times.windows(2).map(|w| (w[1] - w[0]).abs()).filter(|d| *d > 0.0).collect();
    diffs.sort_by(f64::total_cmp);
    let dt = diffs.get(diffs.len() / 2).copied().unwrap_or(window);
    let f_max = 0.5 / dt;

    let n_f = 4 * signal.len();
    let t_grid: Vec<f64> = (0..24).map(|i| window / 20.0 * (2e4f64).powf(i as f64 / 23.0)).collect();
    let coarse = (0..=n_f)
        .into_par_iter()
        .flat_map_iter(|i| {
            let f = f_max * i as f64 / n_f as f64;
            t_grid.iter().map(move |&t2| (project_linear(times, signal, t2, f, exponent).0, t2, f))
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .ok_or_else(|| Error::Fit("empty search grid".into()))?;

    let bounds = [Bound::new((window / 50.0).ln(), (window * 1e5).ln()), Bound::new(0.0, f_max)];
    let m = nelder_mead(
        |x| project_linear(times, signal, x[0].exp(), x[1], exponent).0,
        &[coarse.1.ln(), coarse.2],
        &[0.3, f_max / n_f as f64],
        &bounds,
        NelderMeadOptions { max_evals: 4000, ftol: 1e-15, xtol: 1e-10 },
    );
    if !m.value.is_finite() {
        return Err(Error::Fit("T2* fit did not converge".into()));
    }
    let (t2, f) = (m.x[0].exp(), m.x[1]);
    let (ss, [a, b, offset]) = project_linear(times, signal, t2, f, exponent);
    Ok(T2StarFit {
        t2_star_s: t2,
        frequency_hz: f,
        amplitude: a.hypot(b),
        phase: (-b).atan2(a),
        offset,
        exponent,
        residual_rms: (ss / signal.len() as f64).sqrt(),
        unbounded: t2 > 10.0 * window,
    })
}

// ---------------------------------------------------------------------------
// Serialisation

pub fn write_psd_csv<W: Write>(psd: &PsdResult, mut w: W) -> Result<()> {
    writeln!(w, "frequency_hz,power_per_hz")?;
    for (f, p) in psd.frequencies.iter().zip(&psd.power) {
        writeln!(w, "{f:.9e},{p:.9e}")?;
    }
    Ok(())
}

pub fn write_spectrum_csv<W: Write>(points: &[SpectrumPoint], mut w: W) -> Result<()> {
    writeln!(w, "tau_dd_s,survival")?;
    for p in points {
        writeln!(w, "{:.9e},{:.12}", p.tau_dd_s, p.survival)?;
    }
    Ok(())
}

pub fn write_cs_csv<W: Write>(signal: &CsSignal, mut w: W) -> Result<()> {
    writeln!(w, "tau_s,signal")?;
    for (t, s) in signal.tau_s.iter().zip(&signal.signal) {
        writeln!(w, "{t:.9e},{s:.12}")?;
    }
    Ok(())
}
