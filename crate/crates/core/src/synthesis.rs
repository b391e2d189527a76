//! Givens-rotation decomposition of qudit unitaries.
//!
//! A unitary is written as `U = U_d R_1 R_2 ... R_K` where each `R_k` acts on
//! two adjacent levels and `U_d` is diagonal. The rotations are found by
//! column elimination: starting from the last row, each rotation zeroes one
//! entry to the left of the diagonal, so the row collapses onto its diagonal
//! element and, by unitarity, so does the column. The same procedure then
//! recurses on the remaining top-left block. For `d = 3` this produces the
//! subspace order 01, 12, 01.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::algebra::{c64, cis, identity, is_unitary, max_abs, spectral_norm, CMatrix};
use crate::error::{Error, Result};

/// Entries at or below this magnitude are considered already eliminated.
const ZERO_ENTRY_TOL: f64 = 1e-12;

/// `exp(-i theta/2 (cos(phi) sigma_x^{mn} + sin(phi) sigma_y^{mn}))`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GivensRotation {
    pub m: usize,
    pub n: usize,
    pub theta: f64,
    pub phi: f64,
}

impl GivensRotation {
    pub fn new(m: usize, n: usize, theta: f64, phi: f64) -> Self {
        Self { m, n, theta, phi }
    }

    /// Angle reduced to `[0, 2 pi)`, axis phase to `(-pi, pi]`.
    pub fn normalized(&self) -> Self {
        let theta = self.theta.rem_euclid(2.0 * PI);
        let mut phi = self.phi.rem_euclid(2.0 * PI);
        if phi > PI {
            phi -= 2.0 * PI;
        }
        Self { theta, phi, ..*self }
    }

    pub fn matrix(&self, d: usize) -> Result<CMatrix> {
        givens_matrix(self, d)
    }

    pub fn label(&self) -> String {
        format!("R({:.4})_{:.4}^{}{}", self.theta, self.phi, self.m, self.n)
    }
}

pub fn givens_matrix(rot: &GivensRotation, d: usize) -> Result<CMatrix> {
    let (m, n) = (rot.m, rot.n);
    if m >= d || n >= d || m == n {
        return Err(Error::InvalidDimension(format!(
            "rotation on levels ({m},{n}) does not fit dimension {d}"
        )));
    }
    let (s, c) = (rot.theta / 2.0).sin_cos();
    let mut r = identity(d);
    r[(m, m)] = c64(c, 0.0);
    r[(n, n)] = c64(c, 0.0);
    r[(m, n)] = c64(0.0, -s) * cis(-rot.phi);
    r[(n, m)] = c64(0.0, -s) * cis(rot.phi);
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateDecomposition {
    /// Rotations in product order: `U = U_d * rotations[0] * rotations[1] * ...`.
    /// The last entry acts first in time.
    pub rotations: Vec<GivensRotation>,
    /// Phases of the diagonal factor `U_d`, one per level.
    pub diagonal: Vec<f64>,
}

impl GateDecomposition {
    pub fn dim(&self) -> usize {
        self.diagonal.len()
    }

    /// Rotations in the order they are applied in time.
    pub fn application_order(&self) -> impl Iterator<Item = &GivensRotation> {
        self.rotations.iter().rev()
    }

    pub fn diagonal_matrix(&self) -> CMatrix {
        let d = self.dim();
        let mut m = CMatrix::zeros(d, d);
        for (j, &ph) in self.diagonal.iter().enumerate() {
            m[(j, j)] = cis(ph);
        }
        m
    }

    pub fn reconstruct(&self) -> CMatrix {
        let d = self.dim();
        let mut u = self.diagonal_matrix();
        for rot in &self.rotations {
            u *= givens_matrix(rot, d).expect("decomposition rotations fit their dimension");
        }
        u
    }
}

/// Decompose a unitary into at most `d(d-1)/2` adjacent-level Givens rotations
/// and a diagonal of phases.
pub fn decompose(u: &CMatrix) -> Result<GateDecomposition> {
    if !u.is_square() || u.nrows() < 2 {
        return Err(Error::InvalidDimension(format!("cannot decompose a {}x{} matrix", u.nrows(), u.ncols())));
    }
    if !is_unitary(u, 1e-9) {
        return Err(Error::Validation("decompose: input is not unitary".into()));
    }
    let d = u.nrows();
    let mut work = u.clone();
    // Elimination rotations in the order they were applied (rightmost first).
    let mut eliminated = Vec::with_capacity(d * (d - 1) / 2);

    for row in (1..d).rev() {
        for m in 0..row {
            let n = m + 1;
            let a = work[(row, m)];
            if a.norm() <= ZERO_ENTRY_TOL {
                continue;
            }
            let b = work[(row, n)];
            let theta = 2.0 * a.norm().atan2(b.norm());
            let phi = if b.norm() > 0.0 { PI / 2.0 + a.arg() - b.arg() } else { PI / 2.0 + a.arg() };
            let rot = GivensRotation::new(m, n, theta, phi).normalized();
            work *= givens_matrix(&rot, d)?.adjoint();
            let residual = work[(row, m)].norm();
            if residual > ZERO_ENTRY_TOL {
                return Err(Error::Validation(format!(
                    "elimination of entry ({row},{m}) left {residual:.3e}"
                )));
            }
            eliminated.push(rot);
        }
    }

    let off_diag = {
        let mut w = work.clone();
        for j in 0..d {
            w[(j, j)] = Complex64::new(0.0, 0.0);
        }
        max_abs(&w)
    };
    if off_diag > 1e-9 {
        return Err(Error::Validation(format!(
            "decomposition left off-diagonal residue {off_diag:.3e}"
        )));
    }
    let diagonal = (0..d).map(|j| work[(j, j)].arg()).collect();
    eliminated.reverse();
    let dec = GateDecomposition { rotations: eliminated, diagonal };
    let err = spectral_norm(&(dec.reconstruct() - u));
    if err > 1e-9 {
        return Err(Error::Validation(format!("reconstruction error {err:.3e}")));
    }
    Ok(dec)
}
