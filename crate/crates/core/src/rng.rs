// Copyright 2026 The spinreg Authors
// SPDX-License-Identifier: Apache-2.0

//! Counter-based random substreams.
//!
//! Every stochastic quantity derives from one 64-bit seed. Independent work
//! items (shots, sweep points) draw from the ChaCha stream selected by their
//! index, so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keeping unrelated uses of one seed apart.
pub mod tag {
    pub const SHOT: u64 = 1;
    pub const QND: u64 = 2;
    pub const NUCLEAR: u64 = 3;
    pub const CS_POINT: u64 = 4;
    pub const CS_ORDER: u64 = 5;
    pub const TELEGRAPH: u64 = 6;
    pub const COUNTS: u64 = 7;
    pub const NOISE: u64 = 8;
    pub const SWEEP: u64 = 9;
}

/// Generator for work item `index` under `tag`.
pub fn substream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((tag << 48) ^ index);
    rng
}

/// Seed for a nested experiment, e.g. one point of a sweep.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    use rand::RngCore;
    substream(seed, tag, index).next_u64()
}
