// Copyright 2026 The spinreg Authors
// SPDX-License-Identifier: Apache-2.0

//! Round trip of an XY8 spectrum through the hyperfine fit, starting 20 %
//! away from the true couplings.

use spinreg::dynamics::{HyperfineVector, RegisterConfig};
use spinreg::spectra::{fit_hyperfine, simulate_xy8_spectrum, with_gaussian_noise, CouplingBounds, HyperfineFitOptions, SpectrumPoint};

fn main() -> spinreg::error::Result<()> {
    let truth = [HyperfineVector::new(598e3, -2963e3), HyperfineVector::new(128e3, 39e3)];
    let cfg = RegisterConfig::with_nuclei(truth.to_vec());
    let opts = HyperfineFitOptions::default();
    let grid: Vec<f64> = (0..460).map(|i| 0.2e-6 + 5e-9 * i as f64).collect();
    let clean = simulate_xy8_spectrum(&cfg, &grid, opts.order, opts.pulses)?;
    let start = [HyperfineVector::new(598e3 * 1.2, -2963e3 * 0.8), HyperfineVector::new(128e3 * 0.8, 39e3 * 1.2)];
    let bounds = [CouplingBounds::around(&start[0], 0.5), CouplingBounds::around(&start[1], 0.5)];
    let report = |label: &str, data: &[SpectrumPoint]| -> spinreg::error::Result<()> {
        let t = std::time::Instant::now();
        let fit = fit_hyperfine(data, &cfg, &[0, 1], &bounds, Some(&start), &opts)?;
        println!("{label} ({:.1} s, rms {:.2e}):", t.elapsed().as_secs_f64(), fit.residual_rms);
        for (c, v) in fit.couplings.iter().zip(&truth) {
            println!("  nucleus {}: a_zx {:.2} kHz (true {:.0}), a_zz {:.2} kHz (true {:.0})", c.nucleus, c.a_zx / 1e3, v.a_zx / 1e3, c.a_zz / 1e3, v.a_zz / 1e3);
        }
        Ok(())
    };
    report("noiseless", &clean)?;
    let survival: Vec<f64> = clean.iter().map(|p| p.survival).collect();
    let noisy: Vec<SpectrumPoint> = with_gaussian_noise(&survival, 0.01, 4)?
        .into_iter()
        .zip(&grid)
        .map(|(survival, &tau_dd_s)| SpectrumPoint { tau_dd_s, survival })
        .collect();
    report("1 % noise, XY8-1, 0.2-2.5 us", &noisy)?;

    // The weak nucleus' a_zz only shows up in the spectrum far from its
    // dips, so a longer XY8-2 scan is needed once noise is present.
    let long_opts = HyperfineFitOptions { order: 2, ..opts };
    let long_grid: Vec<f64> = (0..2950).map(|i| 0.2e-6 + 4e-9 * i as f64).collect();
    let long: Vec<f64> = simulate_xy8_spectrum(&cfg, &long_grid, 2, opts.pulses)?.iter().map(|p| p.survival).collect();
    let noisy_long: Vec<SpectrumPoint> = with_gaussian_noise(&long, 0.01, 4)?
        .into_iter()
        .zip(&long_grid)
        .map(|(survival, &tau_dd_s)| SpectrumPoint { tau_dd_s, survival })
        .collect();
    let t = std::time::Instant::now();
    let fit = fit_hyperfine(&noisy_long, &cfg, &[0, 1], &bounds, Some(&start), &long_opts)?;
    println!("1 % noise, XY8-2, 0.2-12 us ({:.1} s):", t.elapsed().as_secs_f64());
    for (c, v) in fit.couplings.iter().zip(&truth) {
        println!("  nucleus {}: a_zx {:.2} kHz (true {:.0}), a_zz {:.2} kHz (true {:.0})", c.nucleus, c.a_zx / 1e3, v.a_zx / 1e3, c.a_zz / 1e3, v.a_zz / 1e3);
    }
    Ok(())
}
