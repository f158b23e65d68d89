// Copyright 2026 The spinreg Authors
// SPDX-License-Identifier: Apache-2.0

//! Inversion fidelity of a rectangular π pulse and the U5b composite pulse
//! on the two hyperfine-split electron lines.

use spinreg::sequences::{mean_two_level_transfer, pi_pulse, two_level_transfer, u5b_inversion, CompositePhaseSet, PulseSequence, PHASE_Y};

fn main() -> spinreg::error::Result<()> {
    let detunings = [1.4815e6, -1.4815e6];
    let rabi = 7.65e6;
    let mut single = PulseSequence::new("pi");
    single.push(pi_pulse(rabi, PHASE_Y, 0.0)?);
    let sim = mean_two_level_transfer(&single, &detunings)?;
    let closed = detunings.iter().map(|&d| two_level_transfer(rabi, d, 1.0 / (2.0 * rabi))).sum::<f64>() / 2.0;
    println!("rectangular pi at {:.2} MHz: transfer {sim:.4} (closed form {closed:.4})", rabi / 1e6);

    let u5b = u5b_inversion(4e6, &CompositePhaseSet::u5b())?;
    let p = mean_two_level_transfer(&u5b, &detunings)?;
    println!("U5b at 4 MHz ({} pulses, {:.0} ns): transfer {p:.4}", u5b.drive_count(), u5b.total_duration() * 1e9);

    println!("\ndetuning_mhz,rectangular,u5b");
    for i in -10..=10 {
        let d = 0.3e6 * i as f64;
        let a = mean_two_level_transfer(&single, &[d])?;
        let b = mean_two_level_transfer(&u5b, &[d])?;
        println!("{:.1},{a:.5},{b:.5}", d / 1e6);
    }
    Ok(())
}
