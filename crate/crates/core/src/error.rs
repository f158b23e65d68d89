// Copyright 2026 The spinreg Authors
// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("site {site} out of range for {n_sites} sites")]
    SiteOutOfRange { site: usize, n_sites: usize },
    #[error("matrix is not Hermitian (max deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },
    #[error("invalid density matrix: {0}")]
    InvalidState(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("nucleus index {index} out of range ({count} configured)")]
    NoSuchNucleus { index: usize, count: usize },
    #[error("missing parameter: {0}")]
    MissingParameter(&'static str),
    #[error("invalid pulse: {0}")]
    Pulse(String),
    #[error("invalid sequence: {0}")]
    Sequence(String),
    #[error("signal too short: {len} samples, need at least {needed}")]
    SignalTooShort { len: usize, needed: usize },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("fit failed: {0}")]
    Fit(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
