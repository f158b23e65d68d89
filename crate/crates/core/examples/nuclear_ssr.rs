// Copyright 2026 The spinreg Authors
// SPDX-License-Identifier: Apache-2.0

//! Nuclear readout through a hyperfine-selective gate: selectivity,
//! back-action on the nucleus and repeated-readout fidelity.

use spinreg::dynamics::{HyperfineVector, RegisterConfig};
use spinreg::readout::{back_action_probabilities, nuclear_rabi_sweep, nuclear_threshold_grid, BasisState, NuclearSsrOptions, PhotonModel};
use spinreg::sequences::{optimal_2pi_rabi, two_level_transfer};

fn main() -> spinreg::error::Result<()> {
    let a_zz = 2963e3;
    let omega = optimal_2pi_rabi(a_zz, 2)?;
    println!("selective Rabi (m=2) {:.1} kHz, off-line flip {:.2e}", omega / 1e3, two_level_transfer(omega, a_zz, 0.5 / omega));

    let cfg = RegisterConfig::with_nuclei(vec![HyperfineVector::c13_a()]);
    for (label, state) in [("|dn,dn>", BasisState::DOWN_DOWN), ("|dn,up>", BasisState::DOWN_UP)] {
        let ba = back_action_probabilities(&cfg, 800e3, state)?;
        println!("{label}: electron flip {:.4}, nuclear flip {:.4}", ba.p_e_flip, ba.p_n_flip);
    }

    let model = PhotonModel::calibrated();
    let opts = NuclearSsrOptions::default();
    let grid: Vec<f64> = (10..=22).map(|k| k as f64 * 50e3).collect();
    println!("\nrabi_khz,fidelity");
    for p in nuclear_rabi_sweep(&cfg, &model, &opts, &grid, 3)? {
        println!("{:.0},{:.4}", p.rabi_hz / 1e3, p.fidelity);
    }
    println!("\nn_reads,threshold,fidelity");
    for p in nuclear_threshold_grid(&cfg, &model, &opts, 4, 5, 3)? {
        println!("{},{},{:.4}", p.n_reads, p.threshold, p.fidelity);
    }
    Ok(())
}
