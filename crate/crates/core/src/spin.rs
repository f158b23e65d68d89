// Copyright 2026 The spinreg Authors
// SPDX-License-Identifier: Apache-2.0

//! Spin-1/2 operators, tensor embedding and Hermitian exponentials.
//!
//! Basis convention: index 0 is spin up (Sz = +1/2), index 1 is spin down.
//! In a multi-site register site 0 is the most significant factor of the
//! Kronecker product, so an index decomposes as `e * 2^n + nuclear`.

use nalgebra::{Complex, DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type ComplexMatrix = DMatrix<C64>;

/// Maximum elementwise deviation from Hermiticity accepted for Hamiltonians.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Accepted deviation of a density matrix trace from one.
pub const TRACE_TOL: f64 = 1e-10;
/// Most negative eigenvalue accepted for a density matrix.
pub const POSITIVITY_TOL: f64 = 1e-10;
/// Accepted deviation of `U U†` from the identity.
pub const UNITARY_TOL: f64 = 1e-10;

const ZERO: C64 = C64::new(0.0, 0.0);

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn identity(dim: usize) -> ComplexMatrix {
    ComplexMatrix::identity(dim, dim)
}

/// Spin-1/2 operators `(Sx, Sy, Sz)` with eigenvalues ±1/2.
pub fn spin_half_operators() -> (ComplexMatrix, ComplexMatrix, ComplexMatrix) {
    let sx = ComplexMatrix::from_row_slice(2, 2, &[ZERO, c(0.5, 0.0), c(0.5, 0.0), ZERO]);
    let sy = ComplexMatrix::from_row_slice(2, 2, &[ZERO, c(0.0, -0.5), c(0.0, 0.5), ZERO]);
    let sz = ComplexMatrix::from_row_slice(2, 2, &[c(0.5, 0.0), ZERO, ZERO, c(-0.5, 0.0)]);
    (sx, sy, sz)
}

pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    a.kronecker(b)
}

/// Embeds a single-site operator at `site` of an `n_sites` register.
pub fn embed(op: &ComplexMatrix, site: usize, n_sites: usize) -> Result<ComplexMatrix> {
    if site >= n_sites {
        return Err(Error::SiteOutOfRange { site, n_sites });
    }
    let left = identity(1 << site);
    let right = identity(1 << (n_sites - site - 1));
    Ok(kron(&kron(&left, op), &right))
}

pub fn hermitian_deviation(m: &ComplexMatrix) -> f64 {
    let diff = m - m.adjoint();
    diff.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn unitary_deviation(u: &ComplexMatrix) -> f64 {
    let diff = u * u.adjoint() - identity(u.nrows());
    diff.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Eigendecomposition of a Hermitian matrix for repeated `exp(-i H t)`.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: ComplexMatrix,
}

impl HermitianEigen {
    pub fn new(h: &ComplexMatrix) -> Result<Self> {
        let deviation = hermitian_deviation(h);
        let scale = h.iter().map(|z| z.norm()).fold(1.0, f64::max);
        if deviation > HERMITIAN_TOL * scale {
            return Err(Error::NotHermitian { deviation });
        }
        let hs = (h + h.adjoint()) * c(0.5, 0.0);
        let eig = SymmetricEigen::new(hs);
        Ok(Self {
            eigenvalues: eig.eigenvalues.iter().copied().collect(),
            eigenvectors: eig.eigenvectors,
        })
    }

    /// `exp(-i H t)`.
    pub fn propagator(&self, t: f64) -> ComplexMatrix {
        let v = &self.eigenvectors;
        let mut scaled = v.clone();
        for (j, &e) in self.eigenvalues.iter().enumerate() {
            let phase = C64::from_polar(1.0, -e * t);
            for i in 0..scaled.nrows() {
                scaled[(i, j)] *= phase;
            }
        }
        scaled * v.adjoint()
    }
}

/// `exp(-i H t)` for Hermitian `H`.
pub fn expm_hermitian(h: &ComplexMatrix, t: f64) -> Result<ComplexMatrix> {
    Ok(HermitianEigen::new(h)?.propagator(t))
}

/// Electron-nuclear density matrix with the electron at site 0.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityState {
    matrix: ComplexMatrix,
    n_nuclei: usize,
}

impl DensityState {
    /// Validates Hermiticity, unit trace and positivity.
    pub fn from_matrix(matrix: ComplexMatrix, n_nuclei: usize) -> Result<Self> {
        let dim = 2usize << n_nuclei;
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::InvalidState(format!(
                "expected {dim}x{dim}, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let dev = hermitian_deviation(&matrix);
        if dev > 1e-9 {
            return Err(Error::InvalidState(format!("not Hermitian ({dev:.3e})")));
        }
        let tr = matrix.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr}")));
        }
        let min_eig = SymmetricEigen::new((&matrix + matrix.adjoint()) * c(0.5, 0.0))
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -POSITIVITY_TOL {
            return Err(Error::InvalidState(format!("negative eigenvalue {min_eig:.3e}")));
        }
        Ok(Self { matrix, n_nuclei })
    }

    /// Product state `rho_e ⊗ rho_n`.
    pub fn product(electron: &ComplexMatrix, nuclear: &ComplexMatrix) -> Result<Self> {
        let n_nuclei = nuclear.nrows().trailing_zeros() as usize;
        Self::from_matrix(kron(electron, nuclear), n_nuclei)
    }

    /// Electron in `|↓⟩`, nuclei maximally mixed.
    pub fn electron_down_thermal(n_nuclei: usize) -> Self {
        Self {
            matrix: kron(&projector_down(), &maximally_mixed(n_nuclei)),
            n_nuclei,
        }
    }

    /// Electron in `|↓⟩` with a nuclear state taken from an existing density
    /// matrix, so no validation is repeated.
    pub fn electron_down_with(nuclear: &ComplexMatrix) -> Self {
        Self {
            matrix: kron(&projector_down(), nuclear),
            n_nuclei: nuclear.nrows().trailing_zeros() as usize,
        }
    }

    /// Pure state from a normalised vector.
    pub fn pure(psi: &[C64], n_nuclei: usize) -> Result<Self> {
        let v = nalgebra::DVector::from_column_slice(psi);
        let norm = v.norm();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidState(format!("state norm {norm}")));
        }
        Self::from_matrix(&v * v.adjoint(), n_nuclei)
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn n_nuclei(&self) -> usize {
        self.n_nuclei
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `U rho U†`.
    pub fn evolve(&self, u: &ComplexMatrix) -> Self {
        Self {
            matrix: u * &self.matrix * u.adjoint(),
            n_nuclei: self.n_nuclei,
        }
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    pub fn expectation(&self, op: &ComplexMatrix) -> f64 {
        (&self.matrix * op).trace().re
    }

    /// Probability of finding the electron in `|↑⟩`.
    pub fn electron_up_population(&self) -> f64 {
        let d = self.dim() / 2;
        (0..d).map(|i| self.matrix[(i, i)].re).sum()
    }

    pub fn electron_down_population(&self) -> f64 {
        let d = self.dim() / 2;
        (d..2 * d).map(|i| self.matrix[(i, i)].re).sum()
    }

    /// Reduced nuclear density matrix after tracing out the electron.
    pub fn nuclear_state(&self) -> ComplexMatrix {
        let d = self.dim() / 2;
        ComplexMatrix::from_fn(d, d, |i, j| self.matrix[(i, j)] + self.matrix[(i + d, j + d)])
    }

    /// Reduced 2x2 density matrix of one site.
    pub fn site_state(&self, site: usize) -> Result<ComplexMatrix> {
        let n_sites = self.n_nuclei + 1;
        if site >= n_sites {
            return Err(Error::SiteOutOfRange { site, n_sites });
        }
        let shift = n_sites - 1 - site;
        let mut out = ComplexMatrix::zeros(2, 2);
        let dim = self.dim();
        for i in 0..dim {
            for j in 0..dim {
                let rest_i = i & !(1 << shift);
                let rest_j = j & !(1 << shift);
                if rest_i == rest_j {
                    out[((i >> shift) & 1, (j >> shift) & 1)] += self.matrix[(i, j)];
                }
            }
        }
        Ok(out)
    }

    /// Unnormalised projection of the electron onto `|↑⟩` (`up = true`) or `|↓⟩`,
    /// returning the probability and the normalised post-measurement state.
    pub fn project_electron(&self, up: bool) -> (f64, Option<Self>) {
        let d = self.dim() / 2;
        let offset = if up { 0 } else { d };
        let block = self.matrix.view((offset, offset), (d, d)).clone_owned();
        let p = block.trace().re;
        if p <= 1e-15 {
            return (p.max(0.0), None);
        }
        let mut m = ComplexMatrix::zeros(2 * d, 2 * d);
        m.view_mut((offset, offset), (d, d)).copy_from(&(block / c(p, 0.0)));
        (p, Some(Self { matrix: m, n_nuclei: self.n_nuclei }))
    }

    /// Scales the electron off-diagonal blocks by `factor`.
    pub fn scale_electron_coherence(&self, factor: f64) -> Self {
        let d = self.dim() / 2;
        let mut m = self.matrix.clone();
        for i in 0..d {
            for j in d..2 * d {
                m[(i, j)] *= factor;
                m[(j, i)] *= factor;
            }
        }
        Self { matrix: m, n_nuclei: self.n_nuclei }
    }

    /// Replaces the electron by `|↓⟩` keeping the reduced nuclear state.
    pub fn reset_electron_down(&self) -> Self {
        Self {
            matrix: kron(&projector_down(), &self.nuclear_state()),
            n_nuclei: self.n_nuclei,
        }
    }
}

pub fn projector_up() -> ComplexMatrix {
    ComplexMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), ZERO, ZERO, ZERO])
}

pub fn projector_down() -> ComplexMatrix {
    ComplexMatrix::from_row_slice(2, 2, &[ZERO, ZERO, ZERO, c(1.0, 0.0)])
}

pub fn maximally_mixed(n_sites: usize) -> ComplexMatrix {
    let d = 1usize << n_sites;
    identity(d) * c(1.0 / d as f64, 0.0)
}

/// Single-qubit fidelity `⟨ψ|ρ|ψ⟩` for a normalised `ψ`.
pub fn state_fidelity(rho: &ComplexMatrix, psi: &[C64]) -> f64 {
    let v = nalgebra::DVector::from_column_slice(psi);
    (v.adjoint() * rho * &v)[(0, 0)].re
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn commutator(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
        a * b - b * a
    }

    fn max_abs(m: &ComplexMatrix) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn pauli_algebra() {
        let (sx, sy, sz) = spin_half_operators();
        let i = c(0.0, 1.0);
        assert!(max_abs(&(commutator(&sx, &sy) - &sz * i)) < 1e-15);
        assert!(max_abs(&(commutator(&sy, &sz) - &sx * i)) < 1e-15);
        assert!(max_abs(&(commutator(&sz, &sx) - &sy * i)) < 1e-15);
        let quarter = identity(2) * c(0.25, 0.0);
        for s in [&sx, &sy, &sz] {
            assert!(max_abs(&(s * s - &quarter)) < 1e-15);
        }
    }

    #[test]
    fn embedded_trace_and_commutation() {
        let (sx, _, sz) = spin_half_operators();
        let a = embed(&sx, 0, 3).unwrap();
        let b = embed(&sz, 2, 3).unwrap();
        assert!(a.trace().norm() < 1e-15);
        assert!(max_abs(&commutator(&a, &b)) < 1e-15);
        assert!(matches!(embed(&sx, 3, 3), Err(Error::SiteOutOfRange { .. })));
    }

    #[test]
    fn zero_hamiltonian_gives_identity() {
        let u = expm_hermitian(&ComplexMatrix::zeros(4, 4), 1.3).unwrap();
        assert!(max_abs(&(u - identity(4))) < 1e-15);
    }

    #[test]
    fn full_rotation_about_sz() {
        let (_, _, sz) = spin_half_operators();
        let u = expm_hermitian(&(sz * c(2.0 * std::f64::consts::PI, 0.0)), 1.0).unwrap();
        assert!(max_abs(&(u + identity(2))) < 1e-12);
    }

    #[test]
    fn non_hermitian_rejected() {
        let mut m = ComplexMatrix::zeros(2, 2);
        m[(0, 1)] = c(1.0, 0.0);
        assert!(matches!(expm_hermitian(&m, 1.0), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn invalid_density_rejected() {
        let bad_trace = identity(4);
        assert!(DensityState::from_matrix(bad_trace, 1).is_err());
        let mut negative = ComplexMatrix::zeros(4, 4);
        negative[(0, 0)] = c(1.5, 0.0);
        negative[(1, 1)] = c(-0.5, 0.0);
        assert!(DensityState::from_matrix(negative, 1).is_err());
    }

    #[test]
    fn partial_traces() {
        let rho = DensityState::electron_down_thermal(2);
        assert!((rho.electron_down_population() - 1.0).abs() < 1e-15);
        let n = rho.nuclear_state();
        assert!(max_abs(&(n - maximally_mixed(2))) < 1e-15);
        let e = rho.site_state(0).unwrap();
        assert!(max_abs(&(e - projector_down())) < 1e-15);
        let n1 = rho.site_state(2).unwrap();
        assert!(max_abs(&(n1 - maximally_mixed(1))) < 1e-15);
    }

    fn hermitian_strategy(dim: usize) -> impl Strategy<Value = ComplexMatrix> {
        proptest::collection::vec(-5.0f64..5.0, 2 * dim * dim).prop_map(move |v| {
            let m = ComplexMatrix::from_fn(dim, dim, |i, j| {
                let k = 2 * (i * dim + j);
                c(v[k], v[k + 1])
            });
            (&m + m.adjoint()) * c(0.5, 0.0)
        })
    }

    proptest! {
        #[test]
        fn propagator_is_unitary(h in hermitian_strategy(4), t in -3.0f64..3.0) {
            let u = expm_hermitian(&h, t).unwrap();
            prop_assert!(unitary_deviation(&u) < UNITARY_TOL);
        }

        #[test]
        fn propagator_composes(h in hermitian_strategy(4), t1 in -2.0f64..2.0, t2 in -2.0f64..2.0) {
            let eig = HermitianEigen::new(&h).unwrap();
            let lhs = eig.propagator(t1) * eig.propagator(t2);
            let rhs = eig.propagator(t1 + t2);
            prop_assert!(max_abs(&(lhs - rhs)) < 1e-10);
        }

        #[test]
        fn evolution_preserves_trace_and_positivity(h in hermitian_strategy(4), t in -3.0f64..3.0) {
            let u = expm_hermitian(&h, t).unwrap();
            let rho = DensityState::electron_down_thermal(1).evolve(&u);
            prop_assert!(DensityState::from_matrix(rho.matrix().clone(), 1).is_ok());
        }
    }
}
