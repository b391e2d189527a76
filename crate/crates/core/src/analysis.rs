//! Error analysis of simulated gates: decomposition of rotation errors,
//! zeroth- and first-order Clifford error estimates, effective Hamiltonians
//! and level shifts.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{block, c64, embed_unitary, expm_hermitian, gell_mann_basis, identity, principal_log_unitary, sigma_z, spectral_norm, CMatrix};
use crate::clifford::{CliffordGroup, PhaseFrame};
use crate::device::{compile_cliffords, compile_rotations, DeviceParameters, EnvelopeShape, Transition};
use crate::dynamics::{propagate_unitary_with, SolverOptions};
use crate::error::{Error, Result};
use crate::fit::{levenberg_marquardt, nelder_mead, polyfit, LmOptions};
use crate::synthesis::{givens_matrix, GivensRotation};

const D: usize = 3;

/// `K = alpha I + beta M` on the qutrit block, with `alpha` minimizing
/// `||I_3 (K - alpha I) I_3||` and `||M|| = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorDecomposition {
    pub alpha: Complex64,
    pub beta: f64,
    pub m: CMatrix,
}

/// Norm used for `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BlockNorm {
    /// Largest singular value.
    #[default]
    Spectral,
    /// Largest eigenvalue magnitude.
    SpectralRadius,
}

impl BlockNorm {
    fn eval(self, m: &CMatrix) -> f64 {
        match self {
            BlockNorm::Spectral => spectral_norm(m),
            BlockNorm::SpectralRadius => m.clone().eigenvalues().map_or_else(
                || spectral_norm(m),
                |v| v.iter().map(|z| z.norm()).fold(0.0, f64::max),
            ),
        }
    }
}

impl ErrorDecomposition {
    pub fn reconstruct(&self) -> CMatrix {
        identity(D) * self.alpha + &self.m * c64(self.beta, 0.0)
    }

    /// Zeroth-order error `d/(d+1) (1 - |alpha|^2)`.
    pub fn r0(&self) -> f64 {
        let d = D as f64;
        d / (d + 1.0) * (1.0 - self.alpha.norm_sqr())
    }
}

pub fn error_decompose(k: &CMatrix) -> Result<ErrorDecomposition> {
    error_decompose_with(k, BlockNorm::Spectral)
}

pub fn error_decompose_with(k: &CMatrix, norm: BlockNorm) -> Result<ErrorDecomposition> {
    if !k.is_square() || k.nrows() < D {
        return Err(Error::InvalidDimension(format!("error operator is {}x{}", k.nrows(), k.ncols())));
    }
    let b = block(k, D);
    let objective = |x: &[f64]| norm.eval(&(&b - identity(D) * c64(x[0], x[1])));
    let start = b.trace() / D as f64;
    // Coarse grid around the trace estimate, then simplex refinement.
    let radius = objective(&[start.re, start.im]).max(1e-12);
    let mut best = ([start.re, start.im], objective(&[start.re, start.im]));
    for i in -4..=4 {
        for j in -4..=4 {
            let x = [start.re + radius * i as f64 / 4.0, start.im + radius * j as f64 / 4.0];
            let v = objective(&x);
            if v < best.1 {
                best = (x, v);
            }
        }
    }
    let step = (radius / 4.0).max(1e-9);
    let mut min = nelder_mead(objective, &best.0, &[step, step], 1e-15, 4000);
    // Restart once to escape a collapsed simplex.
    let again = nelder_mead(objective, &min.x, &[step * 0.1, step * 0.1], 1e-16, 4000);
    if again.value <= min.value {
        min = again;
    }
    if !min.value.is_finite() {
        return Err(Error::Minimizer(format!(
            "alpha search diverged; objective at trace estimate {:.3e}",
            objective(&[start.re, start.im])
        )));
    }
    let alpha = c64(min.x[0], min.x[1]);
    let rest = &b - identity(D) * alpha;
    let beta = norm.eval(&rest);
    let m = if beta > 0.0 { rest / c64(beta, 0.0) } else { CMatrix::zeros(D, D) };
    Ok(ErrorDecomposition { alpha, beta, m })
}

/// Product and additive forms of the zeroth-order Clifford error.
pub fn zeroth_order_error(parts: &[ErrorDecomposition], d: usize) -> (f64, f64) {
    let df = d as f64;
    let k = (df + 1.0) / df;
    let product: f64 = parts.iter().map(|p| 1.0 - k * p.r0()).product();
    (df / (df + 1.0) * (1.0 - product), parts.iter().map(|p| p.r0()).sum())
}

/// `F_1 = F_0 + (prod |alpha_n|^2 / (d+1)) sum_n Tr[beta_n (M_n/alpha_n + M_n^dagger/alpha_n^*) I_d]`.
pub fn first_order_fidelity(parts: &[ErrorDecomposition], d: usize) -> Result<f64> {
    let f0 = 1.0 - zeroth_order_error(parts, d).0;
    let mut sum = c64(0.0, 0.0);
    for p in parts {
        if p.alpha.norm() == 0.0 {
            return Err(Error::Minimizer("degenerate rotation error: alpha = 0".into()));
        }
        let term = (&p.m / p.alpha + p.m.adjoint() / p.alpha.conj()) * c64(p.beta, 0.0);
        sum += block(&term, d).trace();
    }
    let weight: f64 = parts.iter().map(|p| p.alpha.norm_sqr()).product();
    Ok(f0 + weight / (d as f64 + 1.0) * sum.re)
}

/// Average gate fidelity of a simulated unitary against a qutrit target,
/// `(|Tr B|^2 + d) / (d (d + 1))` with `B` the qutrit block of `U^dagger U_sim`.
pub fn unitary_fidelity(u_sim: &CMatrix, target: &CMatrix) -> Result<f64> {
    let d = target.nrows();
    let u = embed_unitary(target, u_sim.nrows())?;
    let b = block(&(u.adjoint() * u_sim), d);
    let df = d as f64;
    Ok((b.trace().norm_sqr() + df) / (df * (df + 1.0)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveHamiltonian {
    /// Hermitian generator, rad/s.
    pub h: CMatrix,
    pub tau: f64,
    /// Coefficients on the traceless Gell-Mann matrices, rad/s.
    pub coefficients: Vec<f64>,
    /// `1 - F` between the simulated propagator and `exp(-i H tau)` over all levels.
    pub infidelity: f64,
}

fn full_fidelity(u: &CMatrix, v: &CMatrix) -> f64 {
    let d = u.nrows() as f64;
    ((u.adjoint() * v).trace().norm_sqr() + d) / (d * (d + 1.0))
}

/// Fit `exp(-i H tau)` to `u_sim`, starting from `guess` (or the principal
/// logarithm when `None`), with each coefficient kept within `pi / tau` of
/// its starting value.
pub fn effective_hamiltonian(u_sim: &CMatrix, tau: f64, guess: Option<&CMatrix>) -> Result<EffectiveHamiltonian> {
    if tau <= 0.0 {
        return Err(Error::Validation(format!("effective time {tau} must be positive")));
    }
    let d = u_sim.nrows();
    let basis = gell_mann_basis(d)?;
    let generators = &basis[1..];
    let start = match guess {
        Some(h) => h.clone(),
        None => principal_log_unitary(u_sim)? * c64(-1.0 / tau, 0.0),
    };
    let x0: Vec<f64> = generators.iter().map(|g| (g * &start).trace().re / 2.0 * tau).collect();
    let build = |x: &[f64]| -> CMatrix {
        generators.iter().zip(x).fold(CMatrix::zeros(d, d), |acc, (g, &c)| acc + g * c64(c, 0.0))
    };
    let residuals = |x: &[f64]| -> Vec<f64> {
        let v = expm_hermitian(&build(x), 1.0);
        let t = (u_sim.adjoint() * &v).trace();
        let ph = if t.norm() > 0.0 { t / t.norm() } else { c64(1.0, 0.0) };
        let diff = v - u_sim * ph;
        diff.iter().flat_map(|z| [z.re, z.im]).collect()
    };
    let opts = LmOptions {
        bounds: Some(x0.iter().map(|&c| (c - std::f64::consts::PI, c + std::f64::consts::PI)).collect()),
        max_iterations: 200,
        ..Default::default()
    };
    let initial_cost: f64 = residuals(&x0).iter().map(|r| r * r).sum();
    let x = if initial_cost < 1e-24 {
        x0
    } else {
        levenberg_marquardt(residuals, &x0, &opts)?.params
    };
    let scaled = build(&x);
    let infidelity = 1.0 - full_fidelity(u_sim, &expm_hermitian(&scaled, 1.0));
    Ok(EffectiveHamiltonian {
        h: scaled / c64(tau, 0.0),
        tau,
        coefficients: x.iter().map(|c| c / tau).collect(),
        infidelity,
    })
}

/// `Tr[-H sigma_z^{mn}]`.
pub fn level_shift(h: &CMatrix, m: usize, n: usize) -> Result<f64> {
    let d = h.nrows();
    if m >= d || n >= d {
        return Err(Error::IndexOutOfRange { index: m.max(n), size: d });
    }
    Ok(-(h * sigma_z(d, m, n)).trace().re)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeakageTerms {
    pub h23: f64,
    pub h16: f64,
    pub h26: f64,
    /// Largest qutrit level shift magnitude, rad/s.
    pub dominant_shift: f64,
    pub ratio23: f64,
    pub ratio16: f64,
    pub ratio26: f64,
}

pub fn leakage_terms(h: &CMatrix) -> Result<LeakageTerms> {
    if h.nrows() < 7 {
        return Err(Error::InvalidDimension(format!("leakage terms need 7 levels, got {}", h.nrows())));
    }
    let dominant = [(0, 1), (1, 2), (0, 2)]
        .iter()
        .map(|&(m, n)| level_shift(h, m, n).map(f64::abs))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let ratio = |x: f64| if dominant > 0.0 { x / dominant } else { 0.0 };
    let (h23, h16, h26) = (h[(2, 3)].norm(), h[(1, 6)].norm(), h[(2, 6)].norm());
    Ok(LeakageTerms { h23, h16, h26, dominant_shift: dominant, ratio23: ratio(h23), ratio16: ratio(h16), ratio26: ratio(h26) })
}

/// Propagator of the pulse implementing one rotation.
pub fn rotation_propagator(params: &DeviceParameters, rot: &GivensRotation, opts: &SolverOptions) -> Result<CMatrix> {
    let program = compile_rotations(params, std::slice::from_ref(rot), PhaseFrame::new(D))?;
    propagate_unitary_with(&program, params, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationError {
    pub rotation: GivensRotation,
    /// `1 - F` of the simulated rotation.
    pub r: f64,
    pub alpha: [f64; 2],
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateAnalysis {
    pub index: usize,
    pub word: String,
    pub fidelity: f64,
    /// `1 - F` of the simulated Clifford.
    pub r: f64,
    /// Sum of the constituent rotation errors.
    pub r_sum: f64,
    /// Zeroth-order estimate (product form).
    pub r0: f64,
    /// First-order estimate.
    pub r1: f64,
    pub rotations: Vec<RotationError>,
}

/// Compare the simulated Clifford with estimates built from its rotations.
pub fn analyze_clifford(params: &DeviceParameters, group: &CliffordGroup, index: usize, opts: &SolverOptions) -> Result<GateAnalysis> {
    let el = group.element(index)?;
    let program = compile_cliffords(params, group, &[index])?;
    let u = propagate_unitary_with(&program, params, opts)?;
    let fidelity = unitary_fidelity(&u, &el.matrix)?;
    let mut rotations = Vec::new();
    let mut parts = Vec::new();
    for rot in el.decomposition.application_order() {
        let sim = rotation_propagator(params, rot, opts)?;
        let ideal = givens_matrix(rot, D)?;
        let k = &sim * embed_unitary(&ideal, sim.nrows())?.adjoint();
        let dec = error_decompose(&k)?;
        rotations.push(RotationError {
            rotation: *rot,
            r: 1.0 - unitary_fidelity(&sim, &ideal)?,
            alpha: [dec.alpha.re, dec.alpha.im],
            beta: dec.beta,
        });
        parts.push(dec);
    }
    let r0 = zeroth_order_error(&parts, D).0;
    let r1 = 1.0 - first_order_fidelity(&parts, D)?;
    Ok(GateAnalysis {
        index,
        word: el.word.clone(),
        fidelity,
        r: 1.0 - fidelity,
        r_sum: rotations.iter().map(|x| x.r).sum(),
        r0,
        r1,
        rotations,
    })
}

pub fn analyze_group(params: &DeviceParameters, group: &CliffordGroup, opts: &SolverOptions) -> Result<Vec<GateAnalysis>> {
    (0..group.len()).into_par_iter().map(|i| analyze_clifford(params, group, i, opts)).collect()
}

/// Parameters with the drive on `transition` scaled by `k` and the pulse
/// shortened by `1/k`, so every rotation keeps its angle.
pub fn scaled_drive(params: &DeviceParameters, transition: Transition, k: f64) -> Result<DeviceParameters> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::Validation(format!("drive multiplier {k} must be positive")));
    }
    let mut p = params.clone();
    let ctl = p.control_mut(transition);
    ctl.pi2_amplitude *= k;
    ctl.shape = match ctl.shape {
        EnvelopeShape::CosineRiseFall { rise, total } => EnvelopeShape::CosineRiseFall { rise: rise / k, total: total / k },
        EnvelopeShape::DragCosine { total, drag } => EnvelopeShape::DragCosine { total: total / k, drag },
    };
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftPoint {
    pub multiplier: f64,
    /// Peak Rabi rate of the pi pulse, rad/s.
    pub rabi_rate: f64,
    pub duration: f64,
    /// Level shift of the driven pair, rad/s.
    pub shift: f64,
    /// `1 - F` of the simulated pi rotation.
    pub rotation_error: f64,
    pub fit_infidelity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSweep {
    pub transition: Transition,
    pub points: Vec<ShiftPoint>,
    /// `c0 + c1 x + c2 x^2` in the Rabi rate.
    pub quadratic: [f64; 3],
    pub r_squared: f64,
    /// Slope of `log(rotation error)` against `log(Rabi rate)`.
    pub error_exponent: f64,
}

/// Level shift of the driven pair and rotation error of `R(pi)_0` over drive strengths.
pub fn level_shift_sweep(
    params: &DeviceParameters,
    transition: Transition,
    multipliers: &[f64],
    opts: &SolverOptions,
) -> Result<ShiftSweep> {
    if multipliers.len() < 3 {
        return Err(Error::Validation("a sweep needs at least three drive strengths".into()));
    }
    let (m, n) = transition.levels();
    let rot = GivensRotation::new(m, n, std::f64::consts::PI, 0.0);
    let ideal = givens_matrix(&rot, D)?;
    let points = multipliers
        .par_iter()
        .map(|&k| {
            let p = scaled_drive(params, transition, k)?;
            let u = rotation_propagator(&p, &rot, opts)?;
            let ctl = p.control(transition);
            let tau = ctl.shape.duration();
            let heff = effective_hamiltonian(&u, tau, None)?;
            let rabi_rate = ctl.transfer * p.coupling(m, n).norm() * 2.0 * ctl.pi2_amplitude;
            Ok(ShiftPoint {
                multiplier: k,
                rabi_rate,
                duration: tau,
                shift: level_shift(&heff.h, m, n)?,
                rotation_error: 1.0 - unitary_fidelity(&u, &ideal)?,
                fit_infidelity: heff.infidelity,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = points.iter().map(|p| p.rabi_rate).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.shift).collect();
    let (c, r_squared) = polyfit(&xs, &ys, 2)?;
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.rotation_error > 0.0)
        .map(|p| (p.rabi_rate.ln(), p.rotation_error.ln()))
        .collect();
    let error_exponent = if logs.len() >= 2 {
        let (lx, ly): (Vec<f64>, Vec<f64>) = logs.into_iter().unzip();
        polyfit(&lx, &ly, 1)?.0[1]
    } else {
        f64::NAN
    };
    Ok(ShiftSweep { transition, points, quadratic: [c[0], c[1], c[2]], r_squared, error_exponent })
}
