// Copyright 2026 The spinreg Authors
// SPDX-License-Identifier: Apache-2.0

//! XY8-N survival spectra of a two-carbon register, with the predicted
//! resonance positions of each nucleus.

use spinreg::dynamics::{conditional_frequencies, HyperfineVector, RegisterConfig};
use spinreg::spectra::{resonant_tau_dd, simulate_xy8_spectrum, PulseOptions};

fn main() -> spinreg::error::Result<()> {
    let cfg = RegisterConfig::with_nuclei(vec![HyperfineVector::c13_a(), HyperfineVector::c13_b()]);
    let pulses = PulseOptions::default();
    for n in 0..cfg.n_nuclei() {
        let (fu, fd) = conditional_frequencies(&cfg, n)?;
        let taus: Vec<String> =
            (0..3).map(|k| resonant_tau_dd(&cfg, n, k, pulses).map(|t| format!("{:.3}", t * 1e6))).collect::<Result<_, _>>()?;
        println!("nucleus {n}: f_up {:.2} kHz, f_dn {:.2} kHz, resonances k=0..2 at {} us", fu / 1e3, fd / 1e3, taus.join(", "));
    }
    let grid: Vec<f64> = (0..231).map(|i| 0.2e-6 + 10e-9 * i as f64).collect();
    let only_a = RegisterConfig::with_nuclei(vec![HyperfineVector::c13_a()]);
    let both = simulate_xy8_spectrum(&cfg, &grid, 1, pulses)?;
    let single = simulate_xy8_spectrum(&only_a, &grid, 1, pulses)?;
    println!("\ntau_dd_us,survival_both,survival_a_only");
    for (b, a) in both.iter().zip(&single) {
        println!("{:.3},{:.5},{:.5}", b.tau_dd_s * 1e6, b.survival, a.survival);
    }
    Ok(())
}
