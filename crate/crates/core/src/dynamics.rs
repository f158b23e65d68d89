// Copyright 2026 The spinreg Authors
// SPDX-License-Identifier: Apache-2.0

//! Register Hamiltonians, propagators and electron dephasing.
//!
//! All frequencies are stored in Hz and converted to angular units when a
//! Hamiltonian is assembled. In the electron rotating frame
//!
//! ```text
//! H / 2π = Δ Sz + Ω (Sx sin θ + Sy cos θ)
//!        - Σ_j ω_L Iz_j + Sz Σ_j (A_zx Ix_j + A_zy Iy_j + A_zz Iz_j)
//! ```
//!
//! so a drive phase of 0 rotates about y and π/2 rotates about x.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spin::{c, embed, spin_half_operators, ComplexMatrix, DensityState, HermitianEigen};

/// ¹³C gyromagnetic ratio in Hz/T.
pub const GAMMA_C13: f64 = 10.7084e6;
/// Free-electron gyromagnetic ratio in Hz/T.
pub const GAMMA_FREE_ELECTRON: f64 = 28.024_951e9;
/// Static field of the reference register in T.
pub const REFERENCE_FIELD: f64 = 0.096837;

/// Hyperfine couplings of one nucleus to the electron, in Hz.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperfineVector {
    pub a_zx: f64,
    #[serde(default)]
    pub a_zy: f64,
    pub a_zz: f64,
}

impl HyperfineVector {
    pub const fn new(a_zx: f64, a_zz: f64) -> Self {
        Self { a_zx, a_zy: 0.0, a_zz }
    }

    /// Strongly coupled ¹³C with `f↑ < f↓`.
    pub const fn c13_a() -> Self {
        Self::new(598e3, 2963e3)
    }

    /// Weakly coupled ¹³C.
    pub const fn c13_b() -> Self {
        Self::new(128e3, 39e3)
    }

    pub fn transverse(&self) -> f64 {
        self.a_zx.hypot(self.a_zy)
    }
}

fn default_exponent() -> f64 {
    2.0
}

fn default_gamma_e() -> f64 {
    GAMMA_FREE_ELECTRON
}

fn default_gamma_c() -> f64 {
    GAMMA_C13
}

/// Electron plus nuclear spin register.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegisterConfig {
    /// Static field along z in T.
    pub b_z: f64,
    /// Electron gyromagnetic ratio in Hz/T.
    #[serde(default = "default_gamma_e")]
    pub gamma_e: f64,
    /// Nuclear gyromagnetic ratio in Hz/T.
    #[serde(default = "default_gamma_c")]
    pub gamma_c: f64,
    #[serde(default)]
    pub nuclei: Vec<HyperfineVector>,
    /// Free-induction dephasing time of the electron in s.
    #[serde(default)]
    pub t2_star_e: Option<f64>,
    /// Electron coherence time under decoupling in s.
    #[serde(default)]
    pub t2_e: Option<f64>,
    /// Electron population relaxation time in s.
    #[serde(default)]
    pub t1_e: Option<f64>,
    /// Stretch exponent of the coherence envelope.
    #[serde(default = "default_exponent")]
    pub dephasing_exponent: f64,
}

impl Default for RegisterConfig {
    fn default() -> Self {
        Self::with_nuclei(Vec::new())
    }
}

impl RegisterConfig {
    /// Reference field and ratios with the given nuclei and no decoherence.
    pub fn with_nuclei(nuclei: Vec<HyperfineVector>) -> Self {
        Self {
            b_z: REFERENCE_FIELD,
            gamma_e: GAMMA_FREE_ELECTRON,
            gamma_c: GAMMA_C13,
            nuclei,
            t2_star_e: None,
            t2_e: None,
            t1_e: None,
            dephasing_exponent: 2.0,
        }
    }

    pub fn n_nuclei(&self) -> usize {
        self.nuclei.len()
    }

    pub fn dim(&self) -> usize {
        2 << self.nuclei.len()
    }

    /// Bare nuclear Larmor frequency in Hz.
    pub fn larmor(&self) -> f64 {
        self.gamma_c * self.b_z
    }

    pub fn electron_larmor(&self) -> f64 {
        self.gamma_e * self.b_z
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be finite")))
            }
        };
        finite("b_z", self.b_z)?;
        finite("gamma_e", self.gamma_e)?;
        finite("gamma_c", self.gamma_c)?;
        for (i, n) in self.nuclei.iter().enumerate() {
            finite(&format!("nuclei[{i}].a_zx"), n.a_zx)?;
            finite(&format!("nuclei[{i}].a_zy"), n.a_zy)?;
            finite(&format!("nuclei[{i}].a_zz"), n.a_zz)?;
        }
        if self.nuclei.len() > 6 {
            return Err(Error::Config("at most 6 nuclei are supported".into()));
        }
        for (name, t) in [("t2_star_e", self.t2_star_e), ("t2_e", self.t2_e), ("t1_e", self.t1_e)] {
            if let Some(t) = t {
                if !(t > 0.0 && t.is_finite()) {
                    return Err(Error::Config(format!("{name} must be positive")));
                }
            }
        }
        if !(self.dephasing_exponent > 0.0 && self.dephasing_exponent.is_finite()) {
            return Err(Error::Config("dephasing_exponent must be positive".into()));
        }
        Ok(())
    }

    pub fn nucleus(&self, index: usize) -> Result<&HyperfineVector> {
        self.nuclei.get(index).ok_or(Error::NoSuchNucleus {
            index,
            count: self.nuclei.len(),
        })
    }
}

/// Microwave drive on the electron. Frequencies in Hz, phase in rad, duration in s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveParams {
    pub rabi: f64,
    pub phase: f64,
    #[serde(default)]
    pub detuning: f64,
    pub duration: f64,
}

/// Embedded spin operators for a register of fixed size.
#[derive(Clone, Debug)]
pub struct RegisterOps {
    pub sx: ComplexMatrix,
    pub sy: ComplexMatrix,
    pub sz: ComplexMatrix,
    /// `(Ix, Iy, Iz)` per nucleus.
    pub nuclear: Vec<[ComplexMatrix; 3]>,
}

impl RegisterOps {
    pub fn new(n_nuclei: usize) -> Self {
        let n_sites = n_nuclei + 1;
        let (x, y, z) = spin_half_operators();
        let e = |op| embed(op, 0, n_sites).expect("site 0 always exists");
        let nuclear = (1..n_sites)
            .map(|s| {
                let em = |op| embed(op, s, n_sites).expect("site in range");
                [em(&x), em(&y), em(&z)]
            })
            .collect();
        Self { sx: e(&x), sy: e(&y), sz: e(&z), nuclear }
    }

    /// Static part in rad/s.
    pub fn static_hamiltonian(&self, cfg: &RegisterConfig) -> ComplexMatrix {
        let dim = self.sz.nrows();
        let mut h = ComplexMatrix::zeros(dim, dim);
        let wl = cfg.larmor();
        for (n, [ix, iy, iz]) in cfg.nuclei.iter().zip(&self.nuclear) {
            h -= iz * c(wl, 0.0);
            let coupling = ix * c(n.a_zx, 0.0) + iy * c(n.a_zy, 0.0) + iz * c(n.a_zz, 0.0);
            h += &self.sz * coupling;
        }
        h * c(TAU, 0.0)
    }

    /// Electron drive term including detuning, in rad/s.
    pub fn drive_hamiltonian(&self, drive: &DriveParams) -> ComplexMatrix {
        let (s, co) = drive.phase.sin_cos();
        (&self.sz * c(drive.detuning, 0.0)
            + &self.sx * c(drive.rabi * s, 0.0)
            + &self.sy * c(drive.rabi * co, 0.0))
            * c(TAU, 0.0)
    }

    pub fn hamiltonian(&self, cfg: &RegisterConfig, drive: Option<&DriveParams>) -> ComplexMatrix {
        let h = self.static_hamiltonian(cfg);
        match drive {
            Some(d) => h + self.drive_hamiltonian(d),
            None => h,
        }
    }

    /// Projector onto electron `|↓⟩`.
    pub fn electron_down_projector(&self) -> ComplexMatrix {
        let dim = self.sz.nrows();
        ComplexMatrix::identity(dim, dim) * c(0.5, 0.0) - &self.sz
    }
}

/// Full Hamiltonian in rad/s with optional drive.
pub fn build_hamiltonian(cfg: &RegisterConfig, drive: Option<&DriveParams>) -> Result<ComplexMatrix> {
    cfg.validate()?;
    Ok(RegisterOps::new(cfg.n_nuclei()).hamiltonian(cfg, drive))
}

/// `exp(-i H0 t)` for the undriven register.
pub fn free_propagator(cfg: &RegisterConfig, t: f64) -> Result<ComplexMatrix> {
    let h = build_hamiltonian(cfg, None)?;
    Ok(HermitianEigen::new(&h)?.propagator(t))
}

/// Conditional nuclear precession frequencies `(f↑, f↓)` in Hz.
pub fn conditional_frequencies(cfg: &RegisterConfig, nucleus: usize) -> Result<(f64, f64)> {
    let n = cfg.nucleus(nucleus)?;
    let wl = cfg.larmor();
    let f = |ms: f64| (wl - ms * n.a_zz).hypot(ms * n.transverse());
    Ok((f(0.5), f(-0.5)))
}

/// Stretched-exponential envelope `exp(-(t/T)^p)`.
pub fn coherence_factor(t: f64, time_constant: f64, exponent: f64) -> f64 {
    (-(t.abs() / time_constant).powf(exponent)).exp()
}

/// Decays electron coherence over `t` using `t2_e`. Identity if unset.
pub fn apply_dephasing(rho: &DensityState, t: f64, cfg: &RegisterConfig) -> DensityState {
    match cfg.t2_e {
        Some(t2) => rho.scale_electron_coherence(coherence_factor(t, t2, cfg.dephasing_exponent)),
        None => rho.clone(),
    }
}

/// Decays electron coherence over a free-induction interval using `t2_star_e`.
///
/// Without a configured time constant the interval is taken as long compared
/// with the dephasing time and the coherence is removed entirely.
pub fn apply_free_induction_dephasing(rho: &DensityState, t: f64, cfg: &RegisterConfig) -> DensityState {
    let factor = match cfg.t2_star_e {
        Some(t2) => coherence_factor(t, t2, cfg.dephasing_exponent),
        None => 0.0,
    };
    rho.scale_electron_coherence(factor)
}
