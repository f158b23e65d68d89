// Copyright 2026 The spinreg Authors
// SPDX-License-Identifier: Apache-2.0

fn main() {
    std::process::exit(spinreg::cli::main_with_args(std::env::args_os()));
}
