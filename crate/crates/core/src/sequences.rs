// Copyright 2026 The spinreg Authors
// SPDX-License-Identifier: Apache-2.0

//! Pulse timelines and their compilation to register propagators.
//!
//! Phase convention: X pulses use drive phase π/2 and Y pulses phase 0, see
//! [`crate::dynamics`]. Drive elements flagged `ideal` act as instantaneous
//! electron-only rotations and take no time.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::dynamics::{DriveParams, HyperfineVector, RegisterConfig, RegisterOps};
use crate::error::{Error, Result};
use crate::spin::{identity, ComplexMatrix, DensityState, HermitianEigen};

pub const PHASE_X: f64 = FRAC_PI_2;
pub const PHASE_Y: f64 = 0.0;
pub const PHASE_MINUS_X: f64 = -FRAC_PI_2;
pub const PHASE_MINUS_Y: f64 = PI;

/// XY8 phase pattern `X Y X Y Y X Y X`.
pub const XY8_PHASES: [f64; 8] = [PHASE_X, PHASE_Y, PHASE_X, PHASE_Y, PHASE_Y, PHASE_X, PHASE_Y, PHASE_X];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PulseElement {
    Drive {
        drive: DriveParams,
        #[serde(default)]
        ideal: bool,
    },
    Delay {
        duration: f64,
    },
    ReadoutMarker {
        duration: f64,
    },
    ProjectiveMarker,
}

impl PulseElement {
    pub fn delay(duration: f64) -> Self {
        PulseElement::Delay { duration }
    }

    /// Time the element occupies on the timeline.
    pub fn duration(&self) -> f64 {
        match self {
            PulseElement::Drive { ideal: true, .. } | PulseElement::ProjectiveMarker => 0.0,
            PulseElement::Drive { drive, .. } => drive.duration,
            PulseElement::Delay { duration } | PulseElement::ReadoutMarker { duration } => *duration,
        }
    }

    fn validate(&self) -> Result<()> {
        let check = |what: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::Sequence(format!("{what} must be finite and non-negative, got {v}")))
            }
        };
        match self {
            PulseElement::Drive { drive, .. } => {
                check("drive duration", drive.duration)?;
                check("rabi frequency", drive.rabi)?;
                if !drive.phase.is_finite() || !drive.detuning.is_finite() {
                    return Err(Error::Sequence("drive phase and detuning must be finite".into()));
                }
                Ok(())
            }
            PulseElement::Delay { duration } | PulseElement::ReadoutMarker { duration } => {
                check("duration", *duration)
            }
            PulseElement::ProjectiveMarker => Ok(()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    #[serde(default)]
    pub label: String,
    pub elements: Vec<PulseElement>,
}

impl PulseSequence {
    pub fn new(label: impl Into<String>) -> Self {
        Self { label: label.into(), elements: Vec::new() }
    }

    pub fn push(&mut self, element: PulseElement) {
        self.elements.push(element);
    }

    pub fn extend(&mut self, other: &PulseSequence) {
        self.elements.extend_from_slice(&other.elements);
    }

    pub fn total_duration(&self) -> f64 {
        self.elements.iter().map(PulseElement::duration).sum()
    }

    /// Summed delay time.
    pub fn free_evolution_time(&self) -> f64 {
        self.elements
            .iter()
            .map(|e| match e {
                PulseElement::Delay { duration } => *duration,
                _ => 0.0,
            })
            .sum()
    }

    pub fn drive_count(&self) -> usize {
        self.elements.iter().filter(|e| matches!(e, PulseElement::Drive { .. })).count()
    }

    pub fn delay_count(&self) -> usize {
        self.elements.iter().filter(|e| matches!(e, PulseElement::Delay { .. })).count()
    }

    /// Same sequence with every drive replaced by its instantaneous rotation.
    pub fn idealized(mut self) -> Self {
        for e in &mut self.elements {
            if let PulseElement::Drive { ideal, .. } = e {
                *ideal = true;
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.elements.iter().try_for_each(PulseElement::validate)
    }

    /// JSON element list with kind, duration and drive fields.
    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("sequence serialises")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let seq: PulseSequence =
            serde_json::from_str(text).map_err(|e| Error::Sequence(format!("parse error: {e}")))?;
        seq.validate()?;
        Ok(seq)
    }
}

/// Drive phases of a composite inversion pulse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositePhaseSet {
    pub phases: Vec<f64>,
}

impl CompositePhaseSet {
    pub fn new(phases: Vec<f64>) -> Result<Self> {
        if phases.is_empty() {
            return Err(Error::Pulse("composite phase set is empty".into()));
        }
        if phases.iter().any(|p| !p.is_finite()) {
            return Err(Error::Pulse("composite phases must be finite".into()));
        }
        Ok(Self { phases })
    }

    /// Five-pulse universal inversion set b: (0, 11, 2, 11, 0)·π/6.
    pub fn u5b() -> Self {
        Self { phases: [0.0, 11.0, 2.0, 11.0, 0.0].iter().map(|k| k * PI / 6.0).collect() }
    }

    /// Five-pulse universal inversion set a: (0, 5, 2, 5, 0)·π/6.
    pub fn u5a() -> Self {
        Self { phases: [0.0, 5.0, 2.0, 5.0, 0.0].iter().map(|k| k * PI / 6.0).collect() }
    }
}

impl Default for CompositePhaseSet {
    fn default() -> Self {
        Self::u5b()
    }
}

fn check_rabi(rabi: f64) -> Result<()> {
    if rabi > 0.0 && rabi.is_finite() {
        Ok(())
    } else {
        Err(Error::Pulse(format!("rabi frequency must be positive, got {rabi}")))
    }
}

/// Rectangular pulse of rotation angle `angle` (rad).
pub fn rotation_pulse(rabi: f64, phase: f64, detuning: f64, angle: f64) -> Result<PulseElement> {
    check_rabi(rabi)?;
    Ok(PulseElement::Drive {
        drive: DriveParams { rabi, phase, detuning, duration: angle / (2.0 * PI * rabi) },
        ideal: false,
    })
}

/// Rectangular π pulse of duration `1/(2 rabi)`.
pub fn pi_pulse(rabi: f64, phase: f64, detuning: f64) -> Result<PulseElement> {
    check_rabi(rabi)?;
    Ok(PulseElement::Drive {
        drive: DriveParams { rabi, phase, detuning, duration: 1.0 / (2.0 * rabi) },
        ideal: false,
    })
}

/// Rectangular π/2 pulse of duration `1/(4 rabi)`.
pub fn half_pi_pulse(rabi: f64, phase: f64) -> Result<PulseElement> {
    check_rabi(rabi)?;
    Ok(PulseElement::Drive {
        drive: DriveParams { rabi, phase, detuning: 0.0, duration: 1.0 / (4.0 * rabi) },
        ideal: false,
    })
}

/// XY8-N block: `τ/2 − π − τ − π − … − π − τ/2` with `8N` pulses.
///
/// Adjacent pulses are separated by `tau_dd` of free evolution, so the free
/// time is `8 N tau_dd` and pulse durations add to the total length.
pub fn xy8_block(tau_dd: f64, order: usize, rabi: f64) -> Result<PulseSequence> {
    check_rabi(rabi)?;
    if order == 0 {
        return Err(Error::Sequence("XY8 order must be at least 1".into()));
    }
    let t_pi = 1.0 / (2.0 * rabi);
    if !(tau_dd.is_finite() && tau_dd > t_pi) {
        return Err(Error::Sequence(format!(
            "tau_dd {tau_dd:e} s must exceed the pi pulse duration {t_pi:e} s"
        )));
    }
    let mut seq = PulseSequence::new(format!("XY8-{order}"));
    for n in 0..8 * order {
        let gap = if n == 0 { tau_dd / 2.0 } else { tau_dd };
        seq.push(PulseElement::delay(gap));
        seq.push(pi_pulse(rabi, XY8_PHASES[n % 8], 0.0)?);
    }
    seq.push(PulseElement::delay(tau_dd / 2.0));
    Ok(seq)
}

/// Consecutive π pulses at the phases of `phases`.
pub fn u5b_inversion(rabi: f64, phases: &CompositePhaseSet) -> Result<PulseSequence> {
    if phases.phases.len() != 5 {
        return Err(Error::Pulse(format!("expected 5 composite phases, got {}", phases.phases.len())));
    }
    composite_inversion(rabi, phases)
}

/// Composite inversion with any number of phases.
pub fn composite_inversion(rabi: f64, phases: &CompositePhaseSet) -> Result<PulseSequence> {
    let mut seq = PulseSequence::new("composite-inversion");
    for &p in &phases.phases {
        seq.push(pi_pulse(rabi, p, 0.0)?);
    }
    Ok(seq)
}

/// Conditional electron flip `π/2(x) · XY8-N · π/2(y)`.
pub fn cnnote_gate(tau_dd: f64, order: usize, rabi: f64) -> Result<PulseSequence> {
    let mut seq = PulseSequence::new(format!("CnNOTe XY8-{order}"));
    seq.push(half_pi_pulse(rabi, PHASE_X)?);
    seq.extend(&xy8_block(tau_dd, order, rabi)?);
    seq.push(half_pi_pulse(rabi, PHASE_Y)?);
    Ok(seq)
}

/// Nuclear spin projection selecting a hyperfine line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperfineLine {
    /// Electron transition with the nucleus in `|↑n⟩`.
    Nu1,
    /// Electron transition with the nucleus in `|↓n⟩`.
    Nu2,
}

impl HyperfineLine {
    /// Nuclear `m` of the resonant branch.
    pub fn nuclear_m(self) -> f64 {
        match self {
            HyperfineLine::Nu1 => 0.5,
            HyperfineLine::Nu2 => -0.5,
        }
    }

    /// Drive detuning that cancels the hyperfine shift of this line.
    pub fn detuning(self, nucleus: &HyperfineVector) -> f64 {
        -self.nuclear_m() * nucleus.a_zz
    }
}

/// Index of the nucleus with the largest `|A_zz|`.
pub fn strongest_nucleus(cfg: &RegisterConfig) -> Result<usize> {
    cfg.nuclei
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.a_zz.abs().total_cmp(&b.1.a_zz.abs()))
        .map(|(i, _)| i)
        .ok_or(Error::NoSuchNucleus { index: 0, count: 0 })
}

/// Weak π pulse on one hyperfine line of the strongest coupled nucleus.
pub fn narrowband_cnnote(rabi: f64, target: HyperfineLine, cfg: &RegisterConfig) -> Result<PulseSequence> {
    let idx = strongest_nucleus(cfg)?;
    let detuning = target.detuning(&cfg.nuclei[idx]);
    let mut seq = PulseSequence::new(format!("narrowband CnNOTe {target:?}"));
    seq.push(pi_pulse(rabi, PHASE_Y, detuning)?);
    Ok(seq)
}

/// Rabi frequency at which a line detuned by `delta` completes `m` full
/// generalised Rabi cycles during the π time.
pub fn optimal_2pi_rabi(delta: f64, m: u32) -> Result<f64> {
    if m < 1 {
        return Err(Error::Pulse("m must be at least 1".into()));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Pulse("delta must be positive".into()));
    }
    let m = m as f64;
    Ok(delta / (4.0 * m * m - 1.0).sqrt())
}

/// Closed-form two-level transfer probability of a rectangular pulse.
pub fn two_level_transfer(rabi: f64, detuning: f64, duration: f64) -> f64 {
    let gen = rabi.hypot(detuning);
    if gen == 0.0 {
        return 0.0;
    }
    (rabi / gen).powi(2) * (PI * gen * duration).sin().powi(2)
}

/// Folds element propagators for one register, caching repeated elements.
pub struct Compiler {
    cfg: RegisterConfig,
    ops: RegisterOps,
    static_h: ComplexMatrix,
    free: HermitianEigen,
    cache: HashMap<[u64; 5], ComplexMatrix>,
}

impl Compiler {
    pub fn new(cfg: &RegisterConfig) -> Result<Self> {
        cfg.validate()?;
        let ops = RegisterOps::new(cfg.n_nuclei());
        let static_h = ops.static_hamiltonian(cfg);
        let free = HermitianEigen::new(&static_h)?;
        Ok(Self { cfg: cfg.clone(), ops, static_h, free, cache: HashMap::new() })
    }

    pub fn config(&self) -> &RegisterConfig {
        &self.cfg
    }

    pub fn ops(&self) -> &RegisterOps {
        &self.ops
    }

    pub fn dim(&self) -> usize {
        self.cfg.dim()
    }

    /// `exp(-i H0 t)`.
    pub fn free(&self, t: f64) -> ComplexMatrix {
        self.free.propagator(t)
    }

    pub fn free_eigen(&self) -> &HermitianEigen {
        &self.free
    }

    pub fn element(&mut self, element: &PulseElement) -> Result<ComplexMatrix> {
        element.validate()?;
        match element {
            PulseElement::Delay { duration } => Ok(self.free(*duration)),
            PulseElement::Drive { drive, ideal } => {
                let key = [
                    drive.rabi.to_bits(),
                    drive.phase.to_bits(),
                    drive.detuning.to_bits(),
                    drive.duration.to_bits(),
                    *ideal as u64,
                ];
                if let Some(u) = self.cache.get(&key) {
                    return Ok(u.clone());
                }
                let h = if *ideal {
                    self.ops.drive_hamiltonian(drive)
                } else {
                    &self.static_h + self.ops.drive_hamiltonian(drive)
                };
                let u = HermitianEigen::new(&h)?.propagator(drive.duration);
                self.cache.insert(key, u.clone());
                Ok(u)
            }
            PulseElement::ReadoutMarker { .. } | PulseElement::ProjectiveMarker => Err(Error::Sequence(
                "readout and projective markers have no unitary".into(),
            )),
        }
    }

    /// Ordered product of element propagators (latest element leftmost).
    pub fn compile(&mut self, seq: &PulseSequence) -> Result<ComplexMatrix> {
        let mut u = identity(self.dim());
        for e in &seq.elements {
            u = self.element(e)? * u;
        }
        Ok(u)
    }
}

/// Propagator of a purely unitary sequence.
pub fn compile(seq: &PulseSequence, cfg: &RegisterConfig) -> Result<ComplexMatrix> {
    Compiler::new(cfg)?.compile(seq)
}

/// Electron `|↑⟩` population after `seq` from `|↓⟩` with thermal nuclei.
pub fn inversion_probability(seq: &PulseSequence, cfg: &RegisterConfig) -> Result<f64> {
    let u = compile(seq, cfg)?;
    Ok(DensityState::electron_down_thermal(cfg.n_nuclei()).evolve(&u).electron_up_population())
}

/// Mean closed-form two-level transfer over a set of detunings.
pub fn mean_two_level_transfer(seq: &PulseSequence, detunings: &[f64]) -> Result<f64> {
    let cfg = RegisterConfig::default();
    let mut total = 0.0;
    for &d in detunings {
        let mut shifted = seq.clone();
        for e in &mut shifted.elements {
            if let PulseElement::Drive { drive, .. } = e {
                drive.detuning += d;
            }
        }
        total += inversion_probability(&shifted, &cfg)?;
    }
    Ok(total / detunings.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::{c, unitary_deviation, C64};
    use proptest::prelude::*;

    fn max_abs(m: &ComplexMatrix) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Runge-Kutta integration of the Schrödinger equation, element by element.
    fn rk4_evolve(cfg: &RegisterConfig, seq: &PulseSequence, psi0: &[C64], dt_max: f64) -> Vec<C64> {
        let ops = RegisterOps::new(cfg.n_nuclei());
        let mut psi = nalgebra::DVector::from_column_slice(psi0);
        for e in &seq.elements {
            let (h, t) = match e {
                PulseElement::Delay { duration } => (ops.hamiltonian(cfg, None), *duration),
                PulseElement::Drive { drive, .. } => (ops.hamiltonian(cfg, Some(drive)), drive.duration),
                _ => unreachable!(),
            };
            let steps = (t / dt_max).ceil().max(1.0) as usize;
            let dt = t / steps as f64;
            let mi = c(0.0, -1.0);
            let f = |v: &nalgebra::DVector<C64>| (&h * v) * mi;
            for _ in 0..steps {
                let k1 = f(&psi);
                let k2 = f(&(&psi + &k1 * c(dt / 2.0, 0.0)));
                let k3 = f(&(&psi + &k2 * c(dt / 2.0, 0.0)));
                let k4 = f(&(&psi + &k3 * c(dt, 0.0)));
                psi += (k1 + k2 * c(2.0, 0.0) + k3 * c(2.0, 0.0) + k4) * c(dt / 6.0, 0.0);
            }
        }
        psi.iter().copied().collect()
    }

    #[test]
    fn pi_pulse_durations() {
        let PulseElement::Drive { drive, .. } = pi_pulse(7.65e6, 0.0, 0.0).unwrap() else { panic!() };
        assert!((drive.duration - 65.359e-9).abs() < 1e-12);
        let PulseElement::Drive { drive, .. } = pi_pulse(4e6, 0.0, 0.0).unwrap() else { panic!() };
        assert!((drive.duration - 125e-9).abs() < 1e-18);
        assert!(pi_pulse(0.0, 0.0, 0.0).is_err());
        assert!(pi_pulse(-1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn resonant_pi_flips_electron() {
        let mut seq = PulseSequence::new("pi");
        seq.push(pi_pulse(7.65e6, PHASE_Y, 0.0).unwrap());
        let p = inversion_probability(&seq, &RegisterConfig::default()).unwrap();
        assert!((p - 1.0).abs() < 1e-10);
    }

    #[test]
    fn generalized_rabi_matches_simulation() {
        for &(rabi, det) in &[(7.65e6, 1.4815e6), (1e6, -3e5), (8e5, 2963e3)] {
            let mut seq = PulseSequence::new("pi");
            seq.push(pi_pulse(rabi, 0.3, det).unwrap());
            let sim = inversion_probability(&seq, &RegisterConfig::default()).unwrap();
            let oracle = two_level_transfer(rabi, det, 1.0 / (2.0 * rabi));
            assert!((sim - oracle).abs() < 1e-12, "{sim} vs {oracle}");
        }
    }

    #[test]
    fn single_pi_transfer_at_hyperfine_detunings() {
        let mut seq = PulseSequence::new("pi");
        seq.push(pi_pulse(7.65e6, PHASE_Y, 0.0).unwrap());
        let p = mean_two_level_transfer(&seq, &[1.4815e6, -1.4815e6]).unwrap();
        assert!((p - 0.963).abs() < 1e-3, "{p}");
    }

    #[test]
    fn xy8_bookkeeping() {
        let rabi = 7.65e6;
        let t_pi = 1.0 / (2.0 * rabi);
        let tau = 1e-6;
        let seq = xy8_block(tau, 1, rabi).unwrap();
        assert_eq!(seq.drive_count(), 8);
        assert_eq!(seq.delay_count(), 9);
        let delays: Vec<f64> = seq
            .elements
            .iter()
            .filter_map(|e| match e {
                PulseElement::Delay { duration } => Some(*duration),
                _ => None,
            })
            .collect();
        assert_eq!(delays[0], tau / 2.0);
        assert_eq!(delays[8], tau / 2.0);
        assert!(delays[1..8].iter().all(|&d| d == tau));
        for n in [1, 3] {
            let seq = xy8_block(tau, n, rabi).unwrap();
            let n = n as f64;
            assert!((seq.free_evolution_time() - 8.0 * n * tau).abs() < 1e-18);
            assert!((seq.total_duration() - (8.0 * n * tau + 8.0 * n * t_pi)).abs() < 1e-15);
        }
        assert!(xy8_block(t_pi / 2.0, 1, rabi).is_err());
        assert!(xy8_block(tau, 0, rabi).is_err());
    }

    #[test]
    fn ideal_xy8_without_nuclei_is_identity() {
        let cfg = RegisterConfig::default();
        let u = compile(&xy8_block(1e-6, 2, 7.65e6).unwrap().idealized(), &cfg).unwrap();
        let phase = u[(0, 0)];
        assert!((phase.norm() - 1.0).abs() < 1e-10);
        assert!(max_abs(&(u.clone() - identity(2) * phase)) < 1e-10);
        let finite = compile(&xy8_block(1e-6, 2, 7.65e6).unwrap(), &cfg).unwrap();
        let phase = finite[(0, 0)];
        assert!(max_abs(&(finite - identity(2) * phase)) < 1e-9);
    }

    #[test]
    fn empty_and_merged_delays() {
        let cfg = RegisterConfig::with_nuclei(vec![HyperfineVector::c13_a()]);
        let u = compile(&PulseSequence::new("empty"), &cfg).unwrap();
        assert!(max_abs(&(u - identity(4))) < 1e-15);
        let mut two = PulseSequence::new("two");
        two.push(PulseElement::delay(0.3e-6));
        two.push(PulseElement::delay(0.5e-6));
        let mut one = PulseSequence::new("one");
        one.push(PulseElement::delay(0.8e-6));
        let diff = compile(&two, &cfg).unwrap() - compile(&one, &cfg).unwrap();
        assert!(max_abs(&diff) < 1e-10);
    }

    #[test]
    fn compiled_xy8_matches_rk4_oracle() {
        let cfg = RegisterConfig::with_nuclei(vec![HyperfineVector::c13_a()]);
        let seq = xy8_block(0.3e-6, 1, 7.65e6).unwrap();
        let u = compile(&seq, &cfg).unwrap();
        assert!(unitary_deviation(&u) < 1e-9);
        let psi0 = [c(0.0, 0.0), c(0.6, 0.0), c(0.0, 0.0), c(0.0, 0.8)];
        let oracle = rk4_evolve(&cfg, &seq, &psi0, 2e-11);
        let v = &u * nalgebra::DVector::from_column_slice(&psi0);
        for (a, b) in v.iter().zip(&oracle) {
            assert!((a - b).norm() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn composite_all_zero_phases_is_single_pi() {
        let set = CompositePhaseSet::new(vec![0.0; 5]).unwrap();
        let u5 = compile(&u5b_inversion(4e6, &set).unwrap(), &RegisterConfig::default()).unwrap();
        let mut single = PulseSequence::new("pi");
        single.push(pi_pulse(4e6, 0.0, 0.0).unwrap());
        let u1 = compile(&single, &RegisterConfig::default()).unwrap();
        let overlap = (u1.adjoint() * &u5).trace() / c(2.0, 0.0);
        assert!((overlap.norm() - 1.0).abs() < 1e-10);
        assert!(u5b_inversion(4e6, &CompositePhaseSet::new(vec![0.0; 4]).unwrap()).is_err());
        assert!(CompositePhaseSet::new(vec![]).is_err());
    }

    #[test]
    fn u5b_beats_single_pulse_two_level() {
        let u5b = u5b_inversion(4e6, &CompositePhaseSet::u5b()).unwrap();
        let p = mean_two_level_transfer(&u5b, &[1.4815e6, -1.4815e6]).unwrap();
        assert!(p >= 0.99, "{p}");
    }

    #[test]
    fn selectivity_formula() {
        let omega = optimal_2pi_rabi(2963e3, 2).unwrap();
        assert!((omega - 765.05e3).abs() < 100.0);
        assert!((optimal_2pi_rabi(3f64.sqrt(), 1).unwrap() - 1.0).abs() < 1e-15);
        assert!(optimal_2pi_rabi(1.0, 0).is_err());
        assert!(two_level_transfer(omega, 2963e3, 1.0 / (2.0 * omega)) < 1e-6);
    }

    #[test]
    fn narrowband_gate_duration_and_detuning() {
        let cfg = RegisterConfig::with_nuclei(vec![HyperfineVector::c13_b(), HyperfineVector::c13_a()]);
        let seq = narrowband_cnnote(800e3, HyperfineLine::Nu2, &cfg).unwrap();
        let PulseElement::Drive { drive, .. } = seq.elements[0] else { panic!() };
        assert!((drive.duration - 625e-9).abs() < 1e-18);
        assert_eq!(drive.detuning, 2963e3 / 2.0);
        assert!(narrowband_cnnote(800e3, HyperfineLine::Nu1, &RegisterConfig::default()).is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut seq = cnnote_gate(1e-6, 2, 7.65e6).unwrap();
        seq.push(PulseElement::ReadoutMarker { duration: 1e-5 });
        seq.push(PulseElement::ProjectiveMarker);
        let back = PulseSequence::from_text(&seq.to_text()).unwrap();
        assert_eq!(seq, back);
        assert!(PulseSequence::from_text("{\"elements\":[{\"kind\":\"delay\",\"duration\":-1}]}").is_err());
    }

    proptest! {
        #[test]
        fn optimal_rabi_identity(delta in 1e3f64..1e8, m in 1u32..6) {
            let omega = optimal_2pi_rabi(delta, m).unwrap();
            let lhs = 1.0 / (2.0 * omega);
            let rhs = m as f64 / omega.hypot(delta);
            prop_assert!(((lhs - rhs) / lhs).abs() < 1e-12);
        }

        #[test]
        fn compiled_sequences_are_unitary(tau in 0.2e-6f64..3e-6, n in 1usize..3, rabi in 2e6f64..2e7) {
            let cfg = RegisterConfig::with_nuclei(vec![HyperfineVector::c13_a(), HyperfineVector::c13_b()]);
            let u = compile(&cnnote_gate(tau, n, rabi).unwrap(), &cfg).unwrap();
            prop_assert!(unitary_deviation(&u) < 1e-9);
        }
    }
}
