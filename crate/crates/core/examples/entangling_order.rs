// Copyright 2026 The spinreg Authors
// SPDX-License-Identifier: Apache-2.0

//! Electron polarisation against XY8 order at a fixed resonance; the first
//! zero crossing gives the maximally entangling order.

use spinreg::dynamics::{HyperfineVector, RegisterConfig};
use spinreg::spectra::{entangling_order, resonant_tau_dd, simulate_order_sweep, PulseOptions};

fn main() -> spinreg::error::Result<()> {
    let nucleus = HyperfineVector { a_zx: 0.0, a_zy: 51.1e3, a_zz: 39e3 };
    let cfg = RegisterConfig::with_nuclei(vec![nucleus]);
    let pulses = PulseOptions::default();
    let tau = resonant_tau_dd(&cfg, 0, 1, pulses)?;
    println!("resonant tau_dd {:.4} us", tau * 1e6);
    println!("order,pulses,duration_us,sigma_z");
    for p in simulate_order_sweep(&cfg, tau, &(1..=8).collect::<Vec<_>>(), pulses)? {
        println!("{},{},{:.3},{:.4}", p.order, p.pulses, p.duration_s * 1e6, p.sigma_z);
    }
    match entangling_order(&cfg, tau, 8, pulses)? {
        Some(n) => println!("entangling order N = {n}"),
        None => println!("no zero crossing up to N = 8"),
    }
    Ok(())
}
