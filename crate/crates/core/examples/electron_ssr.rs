// Copyright 2026 The spinreg Authors
// SPDX-License-Identifier: Apache-2.0

//! Electron single-shot readout: Poisson oracle, calibrated scenario with
//! composite inversion and anti-correlation rejection, and QND fidelity.

use spinreg::dynamics::RegisterConfig;
use spinreg::readout::{
    estimate_cyclicity, poisson_threshold_fidelity, run_qnd_experiment, run_ssr_experiment, AntiCorrelation, PhotonModel, SsrOptions,
};

fn main() -> spinreg::error::Result<()> {
    let cfg = RegisterConfig::default();
    let ideal = PhotonModel::ideal(4.38, 0.05);
    let perfect = SsrOptions { use_composite: false, anticorr: AntiCorrelation::Off, transfer_override: Some(1.0), ..Default::default() };
    let mc = run_ssr_experiment(&cfg, &ideal, 100_000, &perfect, 1)?;
    println!(
        "poisson: MC {:.4} +- {:.4}, closed form {:.4}",
        mc.fidelity,
        mc.fidelity_stderr,
        poisson_threshold_fidelity(4.38, 0.05, 1)
    );
    println!("cyclicity estimate {:.0}", estimate_cyclicity(2.0 * std::f64::consts::PI * 44e6, 81e-6)?);

    let model = PhotonModel::calibrated();
    for anticorr in [AntiCorrelation::Off, AntiCorrelation::DOnly, AntiCorrelation::Both] {
        let opts = SsrOptions { anticorr, ..Default::default() };
        let r = run_ssr_experiment(&cfg, &model, 200_000, &opts, 7)?;
        println!(
            "{anticorr:?}: F_SSR {:.4} +- {:.4} (raw {:.4}), rejected B {:.3} D {:.3}",
            r.fidelity, r.fidelity_stderr, r.raw_fidelity, r.rejection_rate_b, r.rejection_rate_d
        );
    }
    let qnd = run_qnd_experiment(&model, 200_000, 1, 7)?;
    println!("QND: P(B2|B1) {:.4}, P(D2|D1) {:.4}, F_QND {:.4}", qnd.p_b2_given_b1, qnd.p_d2_given_d1, qnd.fidelity);
    Ok(())
}
