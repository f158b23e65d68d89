// Copyright 2026 The spinreg Authors
// SPDX-License-Identifier: Apache-2.0

pub mod blink;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod optimize;
pub mod readout;
pub mod rng;
pub mod sequences;
pub mod spectra;
pub mod spin;
