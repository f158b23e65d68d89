// Copyright 2026 The spinreg Authors
// SPDX-License-Identifier: Apache-2.0

//! Correlation spectroscopy of one weakly coupled carbon: memoryless PSD
//! peaks, harmonics from nuclear memory and their removal by scrambling
//! the acquisition order.

use spinreg::dynamics::{conditional_frequencies, HyperfineVector, RegisterConfig};
use spinreg::spectra::{extract_peaks, resonant_tau_dd, simulate_cs, CsPlan, CsReadout, MemoryMode, PulseOptions};

fn main() -> spinreg::error::Result<()> {
    let cfg = RegisterConfig::with_nuclei(vec![HyperfineVector { a_zx: 0.0, a_zy: 51.1e3, a_zz: 39e3 }]);
    let (fu, fd) = conditional_frequencies(&cfg, 0)?;
    let tau_dd = resonant_tau_dd(&cfg, 0, 1, PulseOptions::default())?;
    println!("expected lines {:.2} and {:.2} kHz", fu / 1e3, fd / 1e3);
    let plan = |memory_mode, randomize_tau, shots_per_point| CsPlan {
        tau_dd,
        order: 4,
        tau_grid: CsPlan::uniform_grid(1e-6, 0.2e-6, 4096),
        randomize_tau,
        memory_mode,
        shots_per_point,
        pulses: PulseOptions::default(),
        readout: CsReadout::Ideal,
    };
    for (label, p) in [
        ("memoryless", plan(MemoryMode::Memoryless, false, 0)),
        ("memory, sequential", plan(MemoryMode::Memory, false, 100)),
        ("memory, randomized", plan(MemoryMode::Memory, true, 100)),
    ] {
        let psd = simulate_cs(&cfg, &p, 2)?.psd(None)?;
        let peaks = extract_peaks(&psd, 10, 10.0);
        let list: Vec<String> = peaks.peaks.iter().map(|q| format!("{:.1}", q.frequency_hz / 1e3)).collect();
        println!("{label:<20} {} peaks (kHz): {}", peaks.len(), list.join(" "));
    }
    Ok(())
}
