//! Dense complex-matrix helpers: the Weyl-Heisenberg group, Gell-Mann bases,
//! subspace embeddings, norms and matrix functions of normal matrices.
//!
//! Everything here is a pure function on owned or borrowed `CMatrix` values.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

/// Default absolute tolerance for matrix equality.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Largest dimension supported by the generic constructions.
pub const MAX_DIM: usize = 16;

#[inline]
pub fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// `exp(i * phase)`
#[inline]
pub fn cis(phase: f64) -> Complex64 {
    Complex64::from_polar(1.0, phase)
}

fn check_dim(d: usize) -> Result<()> {
    if d < 2 {
        return Err(Error::InvalidDimension(format!("dimension must be >= 2, got {d}")));
    }
    if d > MAX_DIM {
        return Err(Error::InvalidDimension(format!(
            "dimension must be <= {MAX_DIM}, got {d}"
        )));
    }
    Ok(())
}

pub fn identity(d: usize) -> CMatrix {
    CMatrix::identity(d, d)
}

/// Cyclic shift `X|j> = |j+1 mod d>`.
pub fn shift(d: usize) -> CMatrix {
    let mut m = CMatrix::zeros(d, d);
    for j in 0..d {
        m[((j + 1) % d, j)] = c64(1.0, 0.0);
    }
    m
}

/// Clock `Z = diag(1, w, ..., w^(d-1))` with `w = exp(2 pi i / d)`.
pub fn clock(d: usize) -> CMatrix {
    let mut m = CMatrix::zeros(d, d);
    for j in 0..d {
        m[(j, j)] = cis(2.0 * PI * j as f64 / d as f64);
    }
    m
}

/// An element `X^a Z^b` of the generalized Pauli group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PauliElement {
    pub dim: usize,
    pub x_power: usize,
    pub z_power: usize,
}

impl PauliElement {
    pub fn matrix(&self) -> CMatrix {
        let d = self.dim;
        let mut m = CMatrix::zeros(d, d);
        // X^a Z^b |j> = w^(b j) |j + a>
        for j in 0..d {
            let phase = 2.0 * PI * ((self.z_power * j) % d) as f64 / d as f64;
            m[((j + self.x_power) % d, j)] = cis(phase);
        }
        m
    }

    pub fn label(&self) -> String {
        format!("X{}Z{}", self.x_power, self.z_power)
    }
}

/// The `d^2` Weyl-Heisenberg operators, ordered with the identity first and
/// `index = a * d + b` for `X^a Z^b`.
pub fn pauli_group(d: usize) -> Result<Vec<PauliElement>> {
    check_dim(d)?;
    Ok((0..d)
        .flat_map(|a| (0..d).map(move |b| PauliElement { dim: d, x_power: a, z_power: b }))
        .collect())
}

pub fn pauli_matrices(d: usize) -> Result<Vec<CMatrix>> {
    Ok(pauli_group(d)?.iter().map(PauliElement::matrix).collect())
}

/// Generalized Gell-Mann matrices. Index 0 is the identity; the remaining
/// `d^2 - 1` are traceless, Hermitian and satisfy `Tr(G_i G_j) = 2 delta_ij`.
/// Order: symmetric `(j,k)` pairs, antisymmetric pairs, then diagonal.
pub fn gell_mann_basis(d: usize) -> Result<Vec<CMatrix>> {
    check_dim(d)?;
    let mut basis = Vec::with_capacity(d * d);
    basis.push(identity(d));
    for j in 0..d {
        for k in (j + 1)..d {
            let mut s = CMatrix::zeros(d, d);
            s[(j, k)] = c64(1.0, 0.0);
            s[(k, j)] = c64(1.0, 0.0);
            basis.push(s);
        }
    }
    for j in 0..d {
        for k in (j + 1)..d {
            let mut a = CMatrix::zeros(d, d);
            a[(j, k)] = c64(0.0, -1.0);
            a[(k, j)] = c64(0.0, 1.0);
            basis.push(a);
        }
    }
    for l in 1..d {
        let norm = (2.0 / (l * (l + 1)) as f64).sqrt();
        let mut g = CMatrix::zeros(d, d);
        for j in 0..l {
            g[(j, j)] = c64(norm, 0.0);
        }
        g[(l, l)] = c64(-(l as f64) * norm, 0.0);
        basis.push(g);
    }
    Ok(basis)
}

/// Place `op` in the top-left block of a `d_large`-dimensional zero matrix.
pub fn embed(op: &CMatrix, d_small: usize, d_large: usize) -> Result<CMatrix> {
    if d_small > d_large {
        return Err(Error::InvalidDimension(format!(
            "cannot embed dimension {d_small} into {d_large}"
        )));
    }
    if op.nrows() != d_small || op.ncols() != d_small {
        return Err(Error::InvalidDimension(format!(
            "operator is {}x{}, expected {d_small}x{d_small}",
            op.nrows(),
            op.ncols()
        )));
    }
    let mut out = CMatrix::zeros(d_large, d_large);
    out.view_mut((0, 0), (d_small, d_small)).copy_from(op);
    Ok(out)
}

/// Like [`embed`], but fills the complementary block with the identity, so a
/// unitary stays unitary.
pub fn embed_unitary(op: &CMatrix, d_large: usize) -> Result<CMatrix> {
    let d = op.nrows();
    let mut out = embed(op, d, d_large)?;
    for j in d..d_large {
        out[(j, j)] = c64(1.0, 0.0);
    }
    Ok(out)
}

/// Top-left `d x d` block.
pub fn block(op: &CMatrix, d: usize) -> CMatrix {
    op.view((0, 0), (d, d)).into_owned()
}

/// Projector onto the lowest `d` levels of a `dim`-dimensional space.
pub fn subspace_projector(d: usize, dim: usize) -> CMatrix {
    let mut p = CMatrix::zeros(dim, dim);
    for j in 0..d.min(dim) {
        p[(j, j)] = c64(1.0, 0.0);
    }
    p
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn approx_eq(a: &CMatrix, b: &CMatrix, tol: f64) -> bool {
    a.shape() == b.shape() && max_abs(&(a - b)) <= tol
}

/// Largest singular value.
pub fn spectral_norm(m: &CMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().iter().fold(0.0_f64, |acc, &s| acc.max(s))
}

pub fn is_hermitian(m: &CMatrix, tol: f64) -> bool {
    m.is_square() && max_abs(&(m - m.adjoint())) <= tol * max_abs(m).max(1.0)
}

pub fn is_unitary(m: &CMatrix, tol: f64) -> bool {
    m.is_square() && approx_eq(&(m.adjoint() * m), &identity(m.nrows()), tol)
}

pub fn trace(m: &CMatrix) -> Complex64 {
    m.diagonal().iter().sum()
}

/// `Tr(a^dagger b)` without forming the product.
pub fn inner(a: &CMatrix, b: &CMatrix) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// Multiply by the phase that makes the first entry with magnitude above
/// `tol` (row-major) real and positive.
pub fn canonical_phase(m: &CMatrix, tol: f64) -> CMatrix {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let z = m[(r, c)];
            if z.norm() > tol {
                let phase = z.conj() / z.norm();
                return m * phase;
            }
        }
    }
    m.clone()
}

/// `min_phi ||a - exp(i phi) b||_max`, using the phase that aligns `Tr(b^dagger a)`.
pub fn phase_insensitive_distance(a: &CMatrix, b: &CMatrix) -> f64 {
    let overlap = inner(b, a);
    let phase = if overlap.norm() > 0.0 { overlap / overlap.norm() } else { c64(1.0, 0.0) };
    max_abs(&(a - b * phase))
}

pub fn equal_up_to_phase(a: &CMatrix, b: &CMatrix, tol: f64) -> bool {
    a.shape() == b.shape() && phase_insensitive_distance(a, b) <= tol
}

/// Eigen-decomposition of a normal matrix via complex Schur form. Returns
/// eigenvalues and the unitary whose columns are the eigenvectors.
fn normal_eigen(m: &CMatrix) -> (Vec<Complex64>, CMatrix) {
    let (q, t) = m.clone().schur().unpack();
    let vals = (0..t.nrows()).map(|j| t[(j, j)]).collect();
    (vals, q)
}

fn reassemble(vectors: &CMatrix, vals: &[Complex64]) -> CMatrix {
    let mut scaled = vectors.clone();
    for (j, v) in vals.iter().enumerate() {
        for r in 0..scaled.nrows() {
            scaled[(r, j)] *= v;
        }
    }
    scaled * vectors.adjoint()
}

/// Principal logarithm of a unitary: the Hermitian `H` with `U = exp(i H)` and
/// eigenvalues in `(-pi, pi]`.
pub fn principal_log_unitary(u: &CMatrix) -> Result<CMatrix> {
    if !is_unitary(u, 1e-10) {
        return Err(Error::Validation("principal_log_unitary: input is not unitary".into()));
    }
    let (vals, vecs) = normal_eigen(u);
    let phases: Vec<Complex64> = vals
        .iter()
        .map(|z| {
            let mut ph = z.arg();
            if (ph + PI).abs() < 1e-12 || (ph - PI).abs() < 1e-12 {
                log::warn!("principal_log_unitary: eigenphase on the branch cut at -pi/pi");
                ph = PI;
            }
            c64(ph, 0.0)
        })
        .collect();
    let h = reassemble(&vecs, &phases);
    Ok((&h + h.adjoint()) * c64(0.5, 0.0))
}

/// `exp(-i h t)` for Hermitian `h`.
pub fn expm_hermitian(h: &CMatrix, t: f64) -> CMatrix {
    let herm = (h + h.adjoint()) * c64(0.5, 0.0);
    let eig = herm.symmetric_eigen();
    let vals: Vec<Complex64> = eig.eigenvalues.iter().map(|&e| cis(-e * t)).collect();
    reassemble(&eig.eigenvectors, &vals)
}

/// Haar-random unitary from the QR decomposition of a complex Ginibre matrix,
/// with the phases of `R`'s diagonal folded back into `Q`.
pub fn haar_unitary<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CMatrix {
    let z = CMatrix::from_fn(d, d, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        c64(re, im) / std::f64::consts::SQRT_2
    });
    let qr = z.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        let rjj = r[(j, j)];
        let ph = if rjj.norm() > 0.0 { rjj / rjj.norm() } else { c64(1.0, 0.0) };
        for i in 0..d {
            q[(i, j)] *= ph;
        }
    }
    q
}

/// Random Hermitian matrix with independent Gaussian entries.
pub fn random_hermitian<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CMatrix {
    let z = CMatrix::from_fn(d, d, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        c64(re, im)
    });
    (&z + z.adjoint()) * c64(0.5, 0.0)
}

pub fn ket(d: usize, j: usize) -> nalgebra::DVector<Complex64> {
    let mut v = nalgebra::DVector::zeros(d);
    v[j] = c64(1.0, 0.0);
    v
}

/// `|j><k|` in dimension `d`.
pub fn ketbra(d: usize, j: usize, k: usize) -> CMatrix {
    let mut m = CMatrix::zeros(d, d);
    m[(j, k)] = c64(1.0, 0.0);
    m
}

/// `|m><m| - |n><n|` in dimension `d`.
pub fn sigma_z(d: usize, m: usize, n: usize) -> CMatrix {
    let mut s = CMatrix::zeros(d, d);
    s[(m, m)] = c64(1.0, 0.0);
    s[(n, n)] = c64(-1.0, 0.0);
    s
}
