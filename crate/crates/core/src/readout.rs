// Copyright 2026 The spinreg Authors
// SPDX-License-Identifier: Apache-2.0

//! Photon-count readout model, SSR and QND estimators, anti-correlation
//! rejection, repeated nuclear readout and measurement-based initialisation.
//!
//! The emitter is bright (electron `|↑⟩`), dark (electron `|↓⟩`) or off
//! (blinking). A bright readout emits at `λ_B = ⟨n_B⟩ / t_RO` until the spin
//! flips, with flip hazard `λ_B / (η χ)`, so `η χ` photons are detected on
//! average before a flip.

use std::f64::consts::FRAC_1_SQRT_2;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{RegisterConfig, RegisterOps};
use crate::error::{Error, Result};
use crate::rng::{substream, tag};
use crate::sequences::{
    inversion_probability, narrowband_cnnote, pi_pulse, strongest_nucleus, u5b_inversion, CompositePhaseSet,
    HyperfineLine, PulseElement, PulseSequence,
};
use crate::spin::{c, kron, projector_down, projector_up, ComplexMatrix, DensityState, HermitianEigen, C64};

/// Blinking gradients in nW/Hz: rate = power / gradient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlinkRates {
    pub grad_on_off: f64,
    pub grad_off_on: f64,
    /// Excitation power in nW.
    pub power: f64,
}

impl BlinkRates {
    /// Reference gradients in nW/Hz.
    pub const REFERENCE_GRADIENTS: (f64, f64) = (0.690, 0.2966);
    /// Alternative gradient set in nW/Hz.
    pub const ALTERNATE_GRADIENTS: (f64, f64) = (0.701, 0.297);

    pub fn new(grad_on_off: f64, grad_off_on: f64, power: f64) -> Result<Self> {
        let r = Self { grad_on_off, grad_off_on, power };
        r.validate()?;
        Ok(r)
    }

    /// Reference gradients at `power`.
    pub fn reference(power: f64) -> Self {
        Self { grad_on_off: Self::REFERENCE_GRADIENTS.0, grad_off_on: Self::REFERENCE_GRADIENTS.1, power }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.grad_on_off > 0.0 && self.grad_off_on > 0.0) {
            return Err(Error::Config("blink gradients must be positive".into()));
        }
        if !(self.power >= 0.0 && self.power.is_finite()) {
            return Err(Error::Config("blink power must be non-negative".into()));
        }
        Ok(())
    }

    pub fn rate_on_off(&self) -> f64 {
        self.power / self.grad_on_off
    }

    pub fn rate_off_on(&self) -> f64 {
        self.power / self.grad_off_on
    }

    /// Stationary probability of the off state, `m_off→on / (m_on→off + m_off→on)`.
    pub fn stationary_off_fraction(&self) -> f64 {
        self.grad_off_on / (self.grad_on_off + self.grad_off_on)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhotonModel {
    /// Mean detected photons per readout in the bright state.
    pub n_bright_mean: f64,
    /// Mean detected photons per readout in the dark state.
    pub n_dark_mean: f64,
    /// Readout window in s.
    pub readout_duration: f64,
    /// Cyclicity; `None` disables readout-induced spin flips.
    #[serde(default)]
    pub cyclicity: Option<f64>,
    pub collection_efficiency: f64,
    /// Count rate in Hz while the emitter is off.
    #[serde(default)]
    pub dark_count_rate: f64,
    pub init_fidelity_e: f64,
    #[serde(default)]
    pub blink: Option<BlinkRates>,
}

impl PhotonModel {
    /// Measured count statistics with cyclicity-limited readout and 98 % initialisation.
    pub fn reference() -> Self {
        Self {
            n_bright_mean: 4.38,
            n_dark_mean: 0.05,
            readout_duration: 20e-6,
            cyclicity: Some(11_000.0),
            collection_efficiency: 9e-4,
            dark_count_rate: 0.0,
            init_fidelity_e: 0.98,
            blink: None,
        }
    }

    /// Reference model with a 4 % stationary off fraction. Together with
    /// readout-induced flips this puts the unmitigated `P(D|B)` of a single
    /// π pulse near 0.17 and rejects about 16 % of dark-prepared shots.
    pub fn calibrated() -> Self {
        Self { blink: Some(BlinkRates { grad_on_off: 0.690, grad_off_on: 0.029, power: 7.0 }), ..Self::reference() }
    }

    /// Pure Poisson statistics: perfect initialisation, no flips, no blinking.
    pub fn ideal(n_bright_mean: f64, n_dark_mean: f64) -> Self {
        Self {
            n_bright_mean,
            n_dark_mean,
            readout_duration: 20e-6,
            cyclicity: None,
            collection_efficiency: 1.0,
            dark_count_rate: 0.0,
            init_fidelity_e: 1.0,
            blink: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.n_bright_mean >= 0.0 && self.n_dark_mean >= 0.0) {
            return bad("photon means must be non-negative");
        }
        if !(self.readout_duration > 0.0 && self.readout_duration.is_finite()) {
            return bad("readout_duration must be positive");
        }
        if !(self.collection_efficiency > 0.0 && self.collection_efficiency <= 1.0) {
            return bad("collection_efficiency must lie in (0, 1]");
        }
        if let Some(chi) = self.cyclicity {
            if !(chi > 0.0) {
                return bad("cyclicity must be positive");
            }
        }
        if !(self.dark_count_rate >= 0.0 && self.dark_count_rate.is_finite()) {
            return bad("dark_count_rate must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.init_fidelity_e) {
            return bad("init_fidelity_e must lie in [0, 1]");
        }
        if let Some(b) = &self.blink {
            b.validate()?;
        }
        Ok(())
    }

    fn bright_rate(&self) -> f64 {
        self.n_bright_mean / self.readout_duration
    }

    /// Spin-flip hazard in Hz while bright.
    pub fn flip_rate(&self) -> f64 {
        match self.cyclicity {
            Some(chi) => self.bright_rate() / (self.collection_efficiency * chi),
            None => 0.0,
        }
    }

    /// Mean detected photons before a readout-induced flip, `η χ`.
    pub fn photons_before_flip(&self) -> Option<f64> {
        self.cyclicity.map(|chi| self.collection_efficiency * chi)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmitterState {
    Bright,
    Dark,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    B,
    D,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Classification {
    B,
    D,
    Rejected,
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Outcome::B => "B",
            Outcome::D => "D",
        })
    }
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Classification::B => "B",
            Classification::D => "D",
            Classification::Rejected => "rejected",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlinkState {
    On,
    Off,
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u32 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as u32
}

fn exponential<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    if rate <= 0.0 {
        return f64::INFINITY;
    }
    Exp::new(rate).expect("positive rate").sample(rng)
}

/// Counts of one readout window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CountSample {
    pub counts: u32,
    /// Whether a bright emitter flipped to dark during the window.
    pub flipped: bool,
}

/// One readout of an emitter with `on_time` of the window spent emitting.
fn readout_window<R: Rng + ?Sized>(spin_up: bool, on_time: f64, model: &PhotonModel, rng: &mut R) -> CountSample {
    let t = model.readout_duration;
    let off_time = (t - on_time).max(0.0);
    let dark_rate = model.n_dark_mean / t;
    let mut counts = poisson(model.dark_count_rate * off_time, rng);
    let mut flipped = false;
    if spin_up {
        let t_flip = exponential(model.flip_rate(), rng);
        let t_bright = on_time.min(t_flip);
        flipped = t_flip < on_time;
        counts += poisson(model.bright_rate() * t_bright, rng);
        counts += poisson(dark_rate * (on_time - t_bright), rng);
    } else {
        counts += poisson(dark_rate * on_time, rng);
    }
    CountSample { counts, flipped }
}

/// Counts for a full readout window in a fixed emitter state.
pub fn sample_counts<R: Rng + ?Sized>(state: EmitterState, model: &PhotonModel, rng: &mut R) -> CountSample {
    let t = model.readout_duration;
    match state {
        EmitterState::Bright => readout_window(true, t, model, rng),
        EmitterState::Dark => readout_window(false, t, model, rng),
        EmitterState::Off => readout_window(false, 0.0, model, rng),
    }
}

/// `B` iff `counts ≥ threshold`.
pub fn classify(counts: u32, threshold: u32) -> Outcome {
    if counts >= threshold {
        Outcome::B
    } else {
        Outcome::D
    }
}

/// Classification on the total of several readouts.
pub fn repeated_readout(counts: &[u32], total_threshold: u32) -> Result<Outcome> {
    if counts.is_empty() {
        return Err(Error::Config("at least one readout is required".into()));
    }
    if total_threshold < 1 {
        return Err(Error::Config("threshold must be at least 1".into()));
    }
    Ok(classify(counts.iter().sum(), total_threshold))
}

/// `P(i|j)` of a binary readout with the shot counts behind each cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub p_b_given_b: f64,
    pub p_d_given_b: f64,
    pub p_b_given_d: f64,
    pub p_d_given_d: f64,
    pub n_b_given_b: u64,
    pub n_d_given_b: u64,
    pub n_b_given_d: u64,
    pub n_d_given_d: u64,
}

impl ConfusionMatrix {
    pub fn from_probabilities(p_b_given_d: f64, p_d_given_b: f64) -> Self {
        Self {
            p_b_given_b: 1.0 - p_d_given_b,
            p_d_given_b,
            p_b_given_d,
            p_d_given_d: 1.0 - p_b_given_d,
            n_b_given_b: 0,
            n_d_given_b: 0,
            n_b_given_d: 0,
            n_d_given_d: 0,
        }
    }

    pub fn from_counts(n_b_given_b: u64, n_d_given_b: u64, n_b_given_d: u64, n_d_given_d: u64) -> Self {
        let ratio = |a: u64, b: u64| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
        let p_b_given_b = ratio(n_b_given_b, n_d_given_b);
        let p_d_given_d = ratio(n_d_given_d, n_b_given_d);
        let row_b = n_b_given_b + n_d_given_b > 0;
        let row_d = n_b_given_d + n_d_given_d > 0;
        Self {
            p_b_given_b,
            p_d_given_b: if row_b { 1.0 - p_b_given_b } else { 0.0 },
            p_b_given_d: if row_d { 1.0 - p_d_given_d } else { 0.0 },
            p_d_given_d,
            n_b_given_b,
            n_d_given_b,
            n_b_given_d,
            n_d_given_d,
        }
    }

    /// Binomial standard error of [`ssr_fidelity`].
    pub fn fidelity_stderr(&self) -> f64 {
        let var = |p: f64, n: u64| if n == 0 { 0.0 } else { p * (1.0 - p) / n as f64 };
        let nb = self.n_b_given_b + self.n_d_given_b;
        let nd = self.n_b_given_d + self.n_d_given_d;
        0.5 * (var(self.p_d_given_b, nb) + var(self.p_b_given_d, nd)).sqrt()
    }

    /// Exchange of the B and D labels.
    pub fn swapped(&self) -> Self {
        Self {
            p_b_given_b: self.p_d_given_d,
            p_d_given_b: self.p_b_given_d,
            p_b_given_d: self.p_d_given_b,
            p_d_given_d: self.p_b_given_b,
            n_b_given_b: self.n_d_given_d,
            n_d_given_b: self.n_b_given_d,
            n_b_given_d: self.n_d_given_b,
            n_d_given_d: self.n_b_given_b,
        }
    }
}

/// Average SSR fidelity `1 − P(B|D)/2 − P(D|B)/2`.
pub fn ssr_fidelity(cm: &ConfusionMatrix) -> f64 {
    1.0 - cm.p_b_given_d / 2.0 - cm.p_d_given_b / 2.0
}

/// QND fidelity `(P(B2|B1) + P(D2|D1)) / 2`.
pub fn qnd_fidelity(p_b2_given_b1: f64, p_d2_given_d1: f64) -> f64 {
    (p_b2_given_b1 + p_d2_given_d1) / 2.0
}

/// Threshold fidelity of pure Poisson statistics.
pub fn poisson_threshold_fidelity(n_bright: f64, n_dark: f64, threshold: u32) -> f64 {
    let cdf = |mean: f64, k: u32| {
        let mut term = (-mean).exp();
        let mut sum = 0.0;
        for j in 0..k {
            sum += term;
            term *= mean / (j + 1) as f64;
        }
        sum
    };
    let p_d_given_b = cdf(n_bright, threshold);
    let p_b_given_d = 1.0 - cdf(n_dark, threshold);
    1.0 - p_b_given_d / 2.0 - p_d_given_b / 2.0
}

/// `χ = γ0 t_sat / 2`.
pub fn estimate_cyclicity(gamma0: f64, t_sat: f64) -> Result<f64> {
    if !(gamma0 > 0.0 && t_sat > 0.0) {
        return Err(Error::Config("cyclicity inputs must be positive".into()));
    }
    Ok(gamma0 * t_sat / 2.0)
}

/// One interval of a telegraph trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dwell {
    pub state: BlinkState,
    pub duration: f64,
}

/// Telegraph emitter state evolving in continuous time.
#[derive(Clone, Debug)]
pub struct BlinkProcess {
    rates: BlinkRates,
    state: BlinkState,
    remaining: f64,
}

impl BlinkProcess {
    /// Starts from the stationary distribution.
    pub fn stationary<R: Rng + ?Sized>(rates: BlinkRates, rng: &mut R) -> Self {
        let state = if rates.power > 0.0 && rng.random::<f64>() < rates.stationary_off_fraction() {
            BlinkState::Off
        } else {
            BlinkState::On
        };
        let remaining = Self::dwell(&rates, state, rng);
        Self { rates, state, remaining }
    }

    fn dwell<R: Rng + ?Sized>(rates: &BlinkRates, state: BlinkState, rng: &mut R) -> f64 {
        match state {
            BlinkState::On => exponential(rates.rate_on_off(), rng),
            BlinkState::Off => exponential(rates.rate_off_on(), rng),
        }
    }

    pub fn state(&self) -> BlinkState {
        self.state
    }

    /// Advances by `dt` and returns the time spent on.
    pub fn advance<R: Rng + ?Sized>(&mut self, mut dt: f64, rng: &mut R) -> f64 {
        let mut on = 0.0;
        while dt > 0.0 {
            let step = dt.min(self.remaining);
            if self.state == BlinkState::On {
                on += step;
            }
            dt -= step;
            self.remaining -= step;
            if self.remaining <= 0.0 {
                self.state = match self.state {
                    BlinkState::On => BlinkState::Off,
                    BlinkState::Off => BlinkState::On,
                };
                self.remaining = Self::dwell(&self.rates, self.state, rng);
            }
        }
        on
    }
}

/// Alternating on/off dwells covering `duration`, starting from the
/// stationary distribution. The last dwell is truncated at `duration`.
pub fn sample_telegraph<R: Rng + ?Sized>(rates: &BlinkRates, duration: f64, rng: &mut R) -> Result<Vec<Dwell>> {
    rates.validate()?;
    let mut process = BlinkProcess::stationary(*rates, rng);
    let mut out = Vec::new();
    let mut t = 0.0;
    while t < duration {
        let d = process.remaining.min(duration - t);
        out.push(Dwell { state: process.state, duration: d });
        t += d;
        if t < duration {
            process.advance(d, rng);
        }
    }
    Ok(out)
}

/// Which readout outcomes are verified by a π pulse and a second readout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AntiCorrelation {
    Off,
    DOnly,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsrOptions {
    pub use_composite: bool,
    pub anticorr: AntiCorrelation,
    pub threshold: u32,
    /// Rabi frequency of the single rectangular π pulse, Hz.
    pub rabi_single: f64,
    /// Rabi frequency of the composite pulses, Hz.
    pub rabi_composite: f64,
    pub phases: CompositePhaseSet,
    /// Transfer probability used instead of the register simulation.
    #[serde(default)]
    pub transfer_override: Option<f64>,
}

impl Default for SsrOptions {
    fn default() -> Self {
        Self {
            use_composite: true,
            anticorr: AntiCorrelation::DOnly,
            threshold: 1,
            rabi_single: 7.65e6,
            rabi_composite: 4e6,
            phases: CompositePhaseSet::u5b(),
            transfer_override: None,
        }
    }
}

impl SsrOptions {
    pub fn validate(&self) -> Result<()> {
        if self.threshold < 1 {
            return Err(Error::Config("threshold must be at least 1".into()));
        }
        if let Some(p) = self.transfer_override {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config("transfer_override must lie in [0, 1]".into()));
            }
        }
        if self.use_composite && self.phases.phases.len() != 5 {
            return Err(Error::Config("composite inversion needs 5 phases".into()));
        }
        if !(self.rabi_single > 0.0 && self.rabi_composite > 0.0) {
            return Err(Error::Config("rabi frequencies must be positive".into()));
        }
        Ok(())
    }

    /// Preparation pulse of this configuration.
    pub fn preparation(&self) -> Result<PulseSequence> {
        if self.use_composite {
            u5b_inversion(self.rabi_composite, &self.phases)
        } else {
            let mut seq = PulseSequence::new("pi");
            seq.push(pi_pulse(self.rabi_single, 0.0, 0.0)?);
            Ok(seq)
        }
    }

    /// Electron transfer probability of the preparation pulse in `cfg`.
    pub fn transfer_probability(&self, cfg: &RegisterConfig) -> Result<f64> {
        match self.transfer_override {
            Some(p) => Ok(p),
            None => inversion_probability(&self.preparation()?, cfg),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadoutRecord {
    pub prepared: Outcome,
    pub counts_sequence: Vec<u32>,
    pub classified: Classification,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsrReport {
    /// Confusion matrix of accepted shots.
    pub confusion: ConfusionMatrix,
    /// Confusion matrix of the first readout of every shot.
    pub raw_confusion: ConfusionMatrix,
    pub fidelity: f64,
    pub fidelity_stderr: f64,
    pub raw_fidelity: f64,
    pub transfer_probability: f64,
    pub shots_b: u64,
    pub shots_d: u64,
    pub rejected_b: u64,
    pub rejected_d: u64,
    pub rejection_rate_b: f64,
    pub rejection_rate_d: f64,
    #[serde(skip)]
    pub records: Vec<ReadoutRecord>,
}

struct Shot {
    up: bool,
    blink: Option<BlinkProcess>,
}

impl Shot {
    fn read<R: Rng + ?Sized>(&mut self, model: &PhotonModel, rng: &mut R) -> u32 {
        let t = model.readout_duration;
        let on = match &mut self.blink {
            Some(b) => b.advance(t, rng),
            None => t,
        };
        let s = readout_window(self.up, on, model, rng);
        if s.flipped {
            self.up = false;
        }
        s.counts
    }

    fn pulse<R: Rng + ?Sized>(&mut self, transfer: f64, rng: &mut R) {
        if rng.random::<f64>() < transfer {
            self.up = !self.up;
        }
    }
}

fn simulate_ssr_shot(
    index: u64,
    prepared: Outcome,
    model: &PhotonModel,
    options: &SsrOptions,
    transfer: f64,
    seed: u64,
) -> ReadoutRecord {
    let mut rng = substream(seed, tag::SHOT, index);
    let blink = model.blink.map(|b| BlinkProcess::stationary(b, &mut rng));
    let up = rng.random::<f64>() >= model.init_fidelity_e;
    let mut shot = Shot { up, blink };
    if prepared == Outcome::B {
        shot.pulse(transfer, &mut rng);
    }
    let first = shot.read(model, &mut rng);
    let outcome = classify(first, options.threshold);
    let mut counts = vec![first];
    let verify = match options.anticorr {
        AntiCorrelation::Off => false,
        AntiCorrelation::DOnly => outcome == Outcome::D,
        AntiCorrelation::Both => true,
    };
    let classified = if verify {
        shot.pulse(transfer, &mut rng);
        let second = shot.read(model, &mut rng);
        counts.push(second);
        let expected = match outcome {
            Outcome::B => Outcome::D,
            Outcome::D => Outcome::B,
        };
        if classify(second, options.threshold) == expected {
            to_classification(outcome)
        } else {
            Classification::Rejected
        }
    } else {
        to_classification(outcome)
    };
    ReadoutRecord { prepared, counts_sequence: counts, classified }
}

fn to_classification(o: Outcome) -> Classification {
    match o {
        Outcome::B => Classification::B,
        Outcome::D => Classification::D,
    }
}

/// Electron SSR with optional anti-correlation rejection.
///
/// Even shot indices prepare D, odd indices B. Shots draw from their own
/// substream and can run in parallel.
pub fn run_ssr_experiment(
    cfg: &RegisterConfig,
    model: &PhotonModel,
    shots: u64,
    options: &SsrOptions,
    seed: u64,
) -> Result<SsrReport> {
    model.validate()?;
    options.validate()?;
    if shots < 2 {
        return Err(Error::Config("at least two shots are required".into()));
    }
    let transfer = options.transfer_probability(cfg)?;
    let records: Vec<ReadoutRecord> = (0..shots)
        .into_par_iter()
        .map(|i| {
            let prepared = if i % 2 == 0 { Outcome::D } else { Outcome::B };
            simulate_ssr_shot(i, prepared, model, options, transfer, seed)
        })
        .collect();
    let mut n = [[0u64; 2]; 2];
    let mut raw = [[0u64; 2]; 2];
    let (mut rejected_b, mut rejected_d, mut shots_b, mut shots_d) = (0, 0, 0, 0);
    for r in &records {
        let row = (r.prepared == Outcome::D) as usize;
        let first = classify(r.counts_sequence[0], options.threshold);
        raw[row][(first == Outcome::D) as usize] += 1;
        match r.prepared {
            Outcome::B => shots_b += 1,
            Outcome::D => shots_d += 1,
        }
        match r.classified {
            Classification::B => n[row][0] += 1,
            Classification::D => n[row][1] += 1,
            Classification::Rejected => match r.prepared {
                Outcome::B => rejected_b += 1,
                Outcome::D => rejected_d += 1,
            },
        }
    }
    let confusion = ConfusionMatrix::from_counts(n[0][0], n[0][1], n[1][0], n[1][1]);
    let raw_confusion = ConfusionMatrix::from_counts(raw[0][0], raw[0][1], raw[1][0], raw[1][1]);
    Ok(SsrReport {
        fidelity: ssr_fidelity(&confusion),
        fidelity_stderr: confusion.fidelity_stderr(),
        raw_fidelity: ssr_fidelity(&raw_confusion),
        confusion,
        raw_confusion,
        transfer_probability: transfer,
        shots_b,
        shots_d,
        rejected_b,
        rejected_d,
        rejection_rate_b: rejected_b as f64 / shots_b as f64,
        rejection_rate_d: rejected_d as f64 / shots_d as f64,
        records,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QndReport {
    pub p_b2_given_b1: f64,
    pub p_d2_given_d1: f64,
    pub fidelity: f64,
}

/// Two back-to-back readouts after ideal preparation of B or D.
pub fn run_qnd_experiment(model: &PhotonModel, shots: u64, threshold: u32, seed: u64) -> Result<QndReport> {
    model.validate()?;
    let outcomes: Vec<(Outcome, Outcome)> = (0..shots)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, tag::QND, i);
            let blink = model.blink.map(|b| BlinkProcess::stationary(b, &mut rng));
            let mut shot = Shot { up: i % 2 == 1, blink };
            let a = classify(shot.read(model, &mut rng), threshold);
            let b = classify(shot.read(model, &mut rng), threshold);
            (a, b)
        })
        .collect();
    let (mut bb, mut b1, mut dd, mut d1) = (0u64, 0u64, 0u64, 0u64);
    for (a, b) in outcomes {
        match a {
            Outcome::B => {
                b1 += 1;
                bb += (b == Outcome::B) as u64;
            }
            Outcome::D => {
                d1 += 1;
                dd += (b == Outcome::D) as u64;
            }
        }
    }
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let (p_b2_given_b1, p_d2_given_d1) = (ratio(bb, b1), ratio(dd, d1));
    Ok(QndReport { p_b2_given_b1, p_d2_given_d1, fidelity: qnd_fidelity(p_b2_given_b1, p_d2_given_d1) })
}

/// Computational basis state of the electron and one nucleus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisState {
    pub electron_up: bool,
    pub nuclear_up: bool,
}

impl BasisState {
    pub const DOWN_DOWN: Self = Self { electron_up: false, nuclear_up: false };
    pub const DOWN_UP: Self = Self { electron_up: false, nuclear_up: true };

    fn index(&self) -> usize {
        2 * (!self.electron_up as usize) + (!self.nuclear_up as usize)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackAction {
    pub p_e_flip: f64,
    pub p_n_flip: f64,
}

/// Register with only the strongest coupled nucleus.
pub fn two_body(cfg: &RegisterConfig) -> Result<RegisterConfig> {
    let idx = strongest_nucleus(cfg)?;
    Ok(RegisterConfig { nuclei: vec![cfg.nuclei[idx]], ..cfg.clone() })
}

/// Electron and nuclear flip probabilities of the narrow-band gate resonant
/// with `|↓n⟩`, from an exact two-body simulation.
pub fn back_action_probabilities(cfg: &RegisterConfig, rabi: f64, initial: BasisState) -> Result<BackAction> {
    let pair = two_body(cfg)?;
    let gate = narrowband_cnnote(rabi, HyperfineLine::Nu2, &pair)?;
    let u = crate::sequences::compile(&gate, &pair)?;
    let col = u.column(initial.index());
    let prob = |e_up: bool, n_up: bool| col[BasisState { electron_up: e_up, nuclear_up: n_up }.index()].norm_sqr();
    let (e, n) = (initial.electron_up, initial.nuclear_up);
    Ok(BackAction {
        p_e_flip: prob(!e, n) + prob(!e, !n),
        p_n_flip: prob(e, !n) + prob(!e, !n),
    })
}

/// Nuclear state heralded by the weak-coupling conditional gate:
/// `D → |y⟩ = (|↑⟩ + i|↓⟩)/√2`, `B → |−y⟩`.
pub fn mbi_project(outcome: Outcome) -> [C64; 2] {
    let s = FRAC_1_SQRT_2;
    match outcome {
        Outcome::D => [c(s, 0.0), c(0.0, s)],
        Outcome::B => [c(s, 0.0), c(0.0, -s)],
    }
}

/// Options of the repeated nuclear readout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NuclearSsrOptions {
    /// Rabi frequency of the narrow-band gate, Hz.
    pub rabi: f64,
    /// Hyperfine line the gate drives; its nuclear state reads bright.
    pub line: HyperfineLine,
    /// Readouts accumulated per shot.
    pub n_reads: usize,
    pub threshold: u32,
    pub shots: u64,
    /// RMS of the quasi-static electron detuning, Hz.
    pub detuning_sigma: f64,
    /// Probability that the nucleus is prepared in the intended state.
    pub nuclear_init_fidelity: f64,
}

impl Default for NuclearSsrOptions {
    fn default() -> Self {
        Self {
            rabi: 800e3,
            line: HyperfineLine::Nu2,
            n_reads: 2,
            threshold: 2,
            shots: 20_000,
            detuning_sigma: 150e3,
            nuclear_init_fidelity: 1.0,
        }
    }
}

impl NuclearSsrOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.rabi > 0.0) {
            return Err(Error::Config("rabi must be positive".into()));
        }
        if self.n_reads < 1 || self.threshold < 1 || self.shots < 2 {
            return Err(Error::Config("n_reads, threshold and shots must be positive".into()));
        }
        if !(self.detuning_sigma >= 0.0) {
            return Err(Error::Config("detuning_sigma must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.nuclear_init_fidelity) {
            return Err(Error::Config("nuclear_init_fidelity must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Per-shot count sequences of repeated nuclear readouts.
#[derive(Clone, Debug, PartialEq)]
pub struct NuclearShots {
    pub prepared: Vec<Outcome>,
    pub counts: Vec<Vec<u32>>,
}

impl NuclearShots {
    /// Confusion matrix using the first `n_reads` readouts of each shot.
    pub fn confusion(&self, n_reads: usize, threshold: u32) -> ConfusionMatrix {
        let mut n = [[0u64; 2]; 2];
        for (p, c) in self.prepared.iter().zip(&self.counts) {
            let total: u32 = c.iter().take(n_reads).sum();
            let row = (*p == Outcome::D) as usize;
            n[row][(classify(total, threshold) == Outcome::D) as usize] += 1;
        }
        ConfusionMatrix::from_counts(n[0][0], n[0][1], n[1][0], n[1][1])
    }
}

struct NuclearReader {
    ops: RegisterOps,
    static_h: ComplexMatrix,
    drive: crate::dynamics::DriveParams,
}

impl NuclearReader {
    fn new(pair: &RegisterConfig, options: &NuclearSsrOptions) -> Result<Self> {
        let gate = narrowband_cnnote(options.rabi, options.line, pair)?;
        let PulseElement::Drive { drive, .. } = gate.elements[0] else {
            unreachable!("narrow-band gate is a single drive")
        };
        let ops = RegisterOps::new(1);
        let static_h = ops.static_hamiltonian(pair);
        Ok(Self { ops, static_h, drive })
    }

    fn gate(&self, detuning_offset: f64) -> Result<ComplexMatrix> {
        let mut d = self.drive;
        d.detuning += detuning_offset;
        let h = &self.static_h + self.ops.drive_hamiltonian(&d);
        Ok(HermitianEigen::new(&h)?.propagator(d.duration))
    }
}

/// Repeated narrow-band-gate readouts of the strongest coupled nucleus.
///
/// Each readout reinitialises the electron, applies the gate, projects the
/// electron and samples photon counts. The collapsed nuclear state carries
/// over, so gate back-action accumulates over readouts. A quasi-static
/// detuning drawn once per shot models spectral diffusion.
pub fn simulate_nuclear_shots(
    cfg: &RegisterConfig,
    model: &PhotonModel,
    options: &NuclearSsrOptions,
    seed: u64,
) -> Result<NuclearShots> {
    model.validate()?;
    options.validate()?;
    let pair = two_body(cfg)?;
    let reader = NuclearReader::new(&pair, options)?;
    let bright_up = options.line == HyperfineLine::Nu1;
    let results: Vec<Result<(Outcome, Vec<u32>)>> = (0..options.shots)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, tag::NUCLEAR, i);
            let prepared = if i % 2 == 0 { Outcome::D } else { Outcome::B };
            let offset = if options.detuning_sigma > 0.0 {
                Normal::new(0.0, options.detuning_sigma).expect("valid sigma").sample(&mut rng)
            } else {
                0.0
            };
            let u = reader.gate(offset)?;
            let intended_up = (prepared == Outcome::B) == bright_up;
            let n_up = if rng.random::<f64>() < options.nuclear_init_fidelity { intended_up } else { !intended_up };
            let mut nuclear = if n_up { projector_up() } else { projector_down() };
            let mut blink = model.blink.map(|b| BlinkProcess::stationary(b, &mut rng));
            let mut counts = Vec::with_capacity(options.n_reads);
            for _ in 0..options.n_reads {
                let e_up = rng.random::<f64>() >= model.init_fidelity_e;
                let electron = if e_up { projector_up() } else { projector_down() };
                let rho = DensityState::from_matrix(kron(&electron, &nuclear), 1)?.evolve(&u);
                let p_up = rho.electron_up_population().clamp(0.0, 1.0);
                let up = rng.random::<f64>() < p_up;
                let (_, post) = rho.project_electron(up);
                nuclear = post.map(|s| s.nuclear_state()).unwrap_or(nuclear);
                let on = match &mut blink {
                    Some(b) => b.advance(model.readout_duration, &mut rng),
                    None => model.readout_duration,
                };
                counts.push(readout_window(up, on, model, &mut rng).counts);
            }
            Ok((prepared, counts))
        })
        .collect();
    let mut shots = NuclearShots { prepared: Vec::new(), counts: Vec::new() };
    for r in results {
        let (p, c) = r?;
        shots.prepared.push(p);
        shots.counts.push(c);
    }
    Ok(shots)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NuclearSsrReport {
    pub confusion: ConfusionMatrix,
    pub fidelity: f64,
    pub fidelity_stderr: f64,
}

pub fn run_nuclear_ssr(
    cfg: &RegisterConfig,
    model: &PhotonModel,
    options: &NuclearSsrOptions,
    seed: u64,
) -> Result<NuclearSsrReport> {
    let shots = simulate_nuclear_shots(cfg, model, options, seed)?;
    let confusion = shots.confusion(options.n_reads, options.threshold);
    Ok(NuclearSsrReport { fidelity: ssr_fidelity(&confusion), fidelity_stderr: confusion.fidelity_stderr(), confusion })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RabiPoint {
    pub rabi_hz: f64,
    pub p_b_given_b: f64,
    pub p_d_given_d: f64,
    pub fidelity: f64,
}

/// Nuclear SSR fidelity over a grid of gate Rabi frequencies.
pub fn nuclear_rabi_sweep(
    cfg: &RegisterConfig,
    model: &PhotonModel,
    options: &NuclearSsrOptions,
    rabi_grid: &[f64],
    seed: u64,
) -> Result<Vec<RabiPoint>> {
    rabi_grid
        .iter()
        .enumerate()
        .map(|(i, &rabi)| {
            let opts = NuclearSsrOptions { rabi, ..options.clone() };
            let point_seed = crate::rng::derive_seed(seed, tag::SWEEP, i as u64);
            let r = run_nuclear_ssr(cfg, model, &opts, point_seed)?;
            Ok(RabiPoint {
                rabi_hz: rabi,
                p_b_given_b: r.confusion.p_b_given_b,
                p_d_given_d: r.confusion.p_d_given_d,
                fidelity: r.fidelity,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPoint {
    pub n_reads: usize,
    pub threshold: u32,
    pub fidelity: f64,
}

/// Fidelity for every `(n_reads, threshold)` pair from one set of shots.
pub fn nuclear_threshold_grid(
    cfg: &RegisterConfig,
    model: &PhotonModel,
    options: &NuclearSsrOptions,
    max_reads: usize,
    max_threshold: u32,
    seed: u64,
) -> Result<Vec<ThresholdPoint>> {
    let opts = NuclearSsrOptions { n_reads: max_reads, ..options.clone() };
    let shots = simulate_nuclear_shots(cfg, model, &opts, seed)?;
    let mut out = Vec::new();
    for n_reads in 1..=max_reads {
        for threshold in 1..=max_threshold {
            out.push(ThresholdPoint { n_reads, threshold, fidelity: ssr_fidelity(&shots.confusion(n_reads, threshold)) });
        }
    }
    Ok(out)
}

/// One row per shot: prepared, counts joined by `;`, classification.
pub fn write_records_csv<W: Write>(records: &[ReadoutRecord], mut w: W) -> Result<()> {
    writeln!(w, "shot,prepared,counts,classified")?;
    for (i, r) in records.iter().enumerate() {
        let counts: Vec<String> = r.counts_sequence.iter().map(u32::to_string).collect();
        writeln!(w, "{i},{},{},{}", r.prepared, counts.join(";"), r.classified)?;
    }
    Ok(())
}

pub fn write_confusion_csv<W: Write>(cm: &ConfusionMatrix, mut w: W) -> Result<()> {
    writeln!(w, "prepared,measured,probability,shots")?;
    writeln!(w, "B,B,{},{}", cm.p_b_given_b, cm.n_b_given_b)?;
    writeln!(w, "B,D,{},{}", cm.p_d_given_b, cm.n_d_given_b)?;
    writeln!(w, "D,B,{},{}", cm.p_b_given_d, cm.n_b_given_d)?;
    writeln!(w, "D,D,{},{}", cm.p_d_given_d, cm.n_d_given_d)?;
    Ok(())
}
