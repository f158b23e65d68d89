// Copyright 2026 The spinreg Authors
// SPDX-License-Identifier: Apache-2.0

//! Ramsey fringes of a nucleus initialised by measurement, for both electron
//! branches, and the fringe loss when the gate spacing is detuned.

use spinreg::dynamics::{conditional_frequencies, HyperfineVector, RegisterConfig};
use spinreg::spectra::{resonant_tau_dd, simulate_nuclear_ramsey, welch_psd, Detrend, ElectronBranch, PsdParams, PulseOptions, RamseyOptions, Window};

fn main() -> spinreg::error::Result<()> {
    let cfg = RegisterConfig::with_nuclei(vec![HyperfineVector::c13_b()]);
    let pulses = PulseOptions::default();
    let (fu, fd) = conditional_frequencies(&cfg, 0)?;
    let opts = RamseyOptions { tau_dd: resonant_tau_dd(&cfg, 0, 112, pulses)?, order: 2, tau_dd_shift: 0.0, pulses };
    let dt = 0.1e-6;
    let grid: Vec<f64> = (0..512).map(|i| dt * i as f64).collect();
    let params = PsdParams { segment_length: 512, overlap_fraction: 0.0, window: Window::Hann, detrend: Detrend::Mean };
    for (branch, expected) in [(ElectronBranch::Dn, fd), (ElectronBranch::Up, fu)] {
        let pts = simulate_nuclear_ramsey(&cfg, branch, &grid, &opts)?;
        let contrast: Vec<f64> = pts.iter().map(|p| p.contrast).collect();
        let psd = welch_psd(&contrast, dt, &params)?;
        let k = (1..psd.power.len()).max_by(|&a, &b| psd.power[a].total_cmp(&psd.power[b])).unwrap_or(0);
        let amp = contrast.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        println!("{branch:?}: fringe {:.1} kHz (expected {:.1}), amplitude {amp:.3}", psd.frequencies[k] / 1e3, expected / 1e3);
    }
    for shift in [0.0, 10e-9, 35e-9] {
        let pts = simulate_nuclear_ramsey(&cfg, ElectronBranch::Dn, &grid, &RamseyOptions { tau_dd_shift: shift, ..opts })?;
        let amp = pts.iter().fold(0.0f64, |m, p| m.max(p.contrast.abs()));
        println!("tau_dd shift {:>4.0} ns: amplitude {amp:.3}", shift * 1e9);
    }
    Ok(())
}
