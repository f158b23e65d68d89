// Copyright 2026 The spinreg Authors
// SPDX-License-Identifier: Apache-2.0

//! Synthetic blinking traces at five powers, segmented and fitted back to
//! the switching gradients and the stationary off fraction.

use spinreg::blink::{analyze_power_series, synthesize_trace, AnalysisOptions, TraceEmission};
use spinreg::readout::BlinkRates;
use spinreg::rng::{derive_seed, tag};

fn main() -> spinreg::error::Result<()> {
    let (g1, g2) = (0.690, 0.2966);
    let traces = [10.0, 20.0, 30.0, 40.0, 50.0]
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let rates = BlinkRates::new(g1, g2, p)?;
            // Same number of on/off cycles at every power.
            let duration = 40_000.0 / (rates.rate_on_off() + rates.rate_off_on());
            synthesize_trace(&rates, &TraceEmission::default(), 2.5e-5, duration, derive_seed(9, tag::TELEGRAPH, i as u64)).map(|(t, _)| t)
        })
        .collect::<spinreg::error::Result<Vec<_>>>()?;
    let report = analyze_power_series(&traces, &AnalysisOptions::default())?;
    println!("power_nw,rate_on_off_hz,rate_off_on_hz,off_fraction");
    for p in &report.points {
        let a = &p.analysis;
        println!("{},{:.2},{:.2},{:.4}", a.power_nw, a.rate_on_off.rate_hz, a.rate_off_on.rate_hz, a.off_fraction);
    }
    let show = |name: &str, f: &spinreg::blink::LinearFit, truth: f64| {
        println!("{name}: {:.4} +- {:.4} nW/Hz (input {truth}), R2 {:?}", f.gradient, f.gradient_stderr, f.r_squared);
    };
    show("on->off gradient", &report.gradient_on_off, g1);
    show("off->on gradient", &report.gradient_off_on, g2);
    println!("off fraction {:.4} (stationary {:.4})", report.mean_off_fraction, BlinkRates::new(g1, g2, 1.0)?.stationary_off_fraction());
    Ok(())
}
