//! Time-ordered propagation of the driven multi-level system.
//!
//! All integration happens in the interaction picture of the static
//! Hamiltonian, so the result is directly the rotating-frame propagator. No
//! rotating-wave approximation is made: every coupling keeps its full carrier
//! and level-phase oscillation. Internally time is in nanoseconds and
//! frequencies in rad/ns.

use std::f64::consts::TAU;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::algebra::{c64, embed, is_hermitian, pauli_matrices, trace, CMatrix};
use crate::device::{segment_pad_voltage, DeviceParameters, PulseProgram, PulseSegment};
use crate::error::{Error, Result};
use crate::integrate::{dopri5, StepFailure, StepStats, Tolerances, Workspace};

const NS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tolerances: Tolerances,
    /// Steps per carrier period, at least.
    pub steps_per_period: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tolerances: Tolerances::default(), steps_per_period: 20.0 }
    }
}

impl SolverOptions {
    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        Self { tolerances: Tolerances { rtol, atol }, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: CMatrix,
}

impl DensityMatrix {
    /// Validates Hermiticity (1e-10), unit trace (1e-8) and positivity (-1e-8).
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::InvalidDimension("density matrix must be square".into()));
        }
        if !is_hermitian(&matrix, 1e-10) {
            return Err(Error::Validation("density matrix is not Hermitian".into()));
        }
        let tr = trace(&matrix);
        if (tr.re - 1.0).abs() > 1e-8 || tr.im.abs() > 1e-8 {
            return Err(Error::Validation(format!("density matrix trace {tr} != 1")));
        }
        let herm = (&matrix + matrix.adjoint()) * c64(0.5, 0.0);
        let min = herm.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -1e-8 {
            return Err(Error::Validation(format!("density matrix has eigenvalue {min:.3e}")));
        }
        Ok(Self { matrix })
    }

    /// Wraps a propagated state, only symmetrizing it.
    pub(crate) fn from_evolved(m: CMatrix) -> Self {
        Self { matrix: (&m + m.adjoint()) * c64(0.5, 0.0) }
    }

    pub fn from_populations(pops: &[f64]) -> Result<Self> {
        let d = pops.len();
        let mut m = CMatrix::zeros(d, d);
        for (j, &p) in pops.iter().enumerate() {
            m[(j, j)] = c64(p, 0.0);
        }
        Self::new(m)
    }

    pub fn pure(psi: &nalgebra::DVector<Complex64>) -> Result<Self> {
        let norm = psi.norm();
        if norm == 0.0 {
            return Err(Error::Validation("zero state vector".into()));
        }
        let v = psi / c64(norm, 0.0);
        Self::new(&v * v.adjoint())
    }

    pub fn basis(d: usize, j: usize) -> Result<Self> {
        if j >= d {
            return Err(Error::IndexOutOfRange { index: j, size: d });
        }
        let mut pops = vec![0.0; d];
        pops[j] = 1.0;
        Self::from_populations(&pops)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|j| self.matrix[(j, j)].re).collect()
    }

    pub fn trace(&self) -> f64 {
        trace(&self.matrix).re
    }

    /// Total population of levels `0..k`.
    pub fn subspace_population(&self, k: usize) -> f64 {
        (0..k.min(self.dim())).map(|j| self.matrix[(j, j)].re).sum()
    }

    /// Padded to `d` levels with zeros.
    pub fn padded(&self, d: usize) -> Result<Self> {
        Ok(Self { matrix: embed(&self.matrix, self.dim(), d)? })
    }
}

/// `diag(1 - p1, p1, 0, ..., 0)`.
pub fn thermal_state(p1: f64, levels: usize) -> Result<DensityMatrix> {
    if !(0.0..=0.5).contains(&p1) {
        return Err(Error::OutOfRange(format!("thermal excitation {p1} outside [0, 0.5]")));
    }
    if levels < 2 {
        return Err(Error::InvalidDimension(format!("thermal state needs two levels, got {levels}")));
    }
    let mut pops = vec![0.0; levels];
    pops[0] = 1.0 - p1;
    pops[1] = p1;
    DensityMatrix::from_populations(&pops)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LindbladOperatorSet {
    operators: Vec<CMatrix>,
}

impl LindbladOperatorSet {
    /// Collapse operators in units of sqrt(1/s).
    pub fn from_operators(operators: Vec<CMatrix>) -> Result<Self> {
        if let Some(first) = operators.first() {
            let d = first.nrows();
            if operators.iter().any(|op| op.shape() != (d, d)) {
                return Err(Error::InvalidDimension("collapse operators differ in shape".into()));
            }
        }
        Ok(Self { operators })
    }

    /// `sqrt(G1) |n><m|` per relaxation rate and `sqrt(G2/2)(|m><m| - |n><n|)`
    /// per dephasing rate.
    pub fn from_params(params: &DeviceParameters) -> Self {
        let d = params.levels();
        let mut operators = Vec::new();
        for r in &params.relaxation {
            let mut op = CMatrix::zeros(d, d);
            op[(r.to, r.from)] = c64(r.rate.sqrt(), 0.0);
            operators.push(op);
        }
        for r in &params.dephasing {
            let mut op = CMatrix::zeros(d, d);
            let s = (r.rate / 2.0).sqrt();
            op[(r.m, r.m)] = c64(s, 0.0);
            op[(r.n, r.n)] = c64(-s, 0.0);
            operators.push(op);
        }
        Self { operators }
    }

    pub fn empty() -> Self {
        Self { operators: Vec::new() }
    }

    pub fn operators(&self) -> &[CMatrix] {
        &self.operators
    }

    pub fn len(&self) -> usize {
        self.operators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.operators.is_empty()
    }

    /// `sum_k L rho L^dagger - {L^dagger L, rho}/2` in the lab frame (1/s).
    pub fn dissipator(&self, rho: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(rho.nrows(), rho.ncols());
        for l in &self.operators {
            let ldl = l.adjoint() * l;
            out += l * rho * l.adjoint() - (&ldl * rho + rho * &ldl) * c64(0.5, 0.0);
        }
        out
    }
}

/// The dissipator split into cheap structured parts.
#[derive(Debug, Clone)]
struct CompiledDissipator {
    d: usize,
    /// Element-wise multiplier from diagonal operators and jump anticommutators.
    elementwise: Vec<Complex64>,
    /// `(from, to, rate)` population transfer from single-element jumps.
    transfers: Vec<(usize, usize, f64)>,
    /// Operators without structure: `(op, op^dagger op)`.
    dense: Vec<(CMatrix, CMatrix)>,
    /// Level frequencies for the interaction-frame phases of dense operators.
    omega: Vec<f64>,
}

impl CompiledDissipator {
    fn new(set: &LindbladOperatorSet, d: usize, omega: &[f64]) -> Result<Self> {
        let mut elementwise = vec![c64(0.0, 0.0); d * d];
        let mut transfers = Vec::new();
        let mut dense = Vec::new();
        for op in set.operators() {
            if op.shape() != (d, d) {
                return Err(Error::InvalidDimension(format!(
                    "collapse operator is {}x{}, system has {d} levels",
                    op.nrows(),
                    op.ncols()
                )));
            }
            let op_ns = op * c64(NS.sqrt(), 0.0);
            let nz: Vec<(usize, usize)> =
                (0..d).flat_map(|r| (0..d).map(move |c| (r, c))).filter(|&(r, c)| op_ns[(r, c)].norm() > 0.0).collect();
            if nz.iter().all(|&(r, c)| r == c) {
                let l: Vec<Complex64> = (0..d).map(|j| op_ns[(j, j)]).collect();
                for a in 0..d {
                    for b in 0..d {
                        elementwise[a + d * b] +=
                            l[a] * l[b].conj() - c64(0.5 * (l[a].norm_sqr() + l[b].norm_sqr()), 0.0);
                    }
                }
            } else if nz.len() == 1 {
                let (to, from) = nz[0];
                let rate = op_ns[(to, from)].norm_sqr();
                transfers.push((from, to, rate));
                for a in 0..d {
                    for b in 0..d {
                        let k = (a == from) as u8 as f64 + (b == from) as u8 as f64;
                        elementwise[a + d * b] -= c64(0.5 * rate * k, 0.0);
                    }
                }
            } else {
                let ldl = op_ns.adjoint() * &op_ns;
                dense.push((op_ns, ldl));
            }
        }
        Ok(Self { d, elementwise, transfers, dense, omega: omega.to_vec() })
    }

    fn is_trivial(&self) -> bool {
        self.transfers.is_empty() && self.dense.is_empty() && self.elementwise.iter().all(|z| z.norm() == 0.0)
    }

    /// Adds the interaction-frame dissipator of one `d x d` block.
    fn apply(&self, t: f64, rho: &[Complex64], out: &mut [Complex64]) {
        let d = self.d;
        for ((o, r), m) in out.iter_mut().zip(rho).zip(&self.elementwise) {
            *o += r * m;
        }
        for &(from, to, rate) in &self.transfers {
            out[to + d * to] += rho[from + d * from] * rate;
        }
        if !self.dense.is_empty() {
            let phase: Vec<Complex64> = self.omega.iter().map(|w| Complex64::from_polar(1.0, w * t)).collect();
            let rho_m = CMatrix::from_column_slice(d, d, rho);
            for (op, ldl) in &self.dense {
                let op_t = CMatrix::from_fn(d, d, |a, b| op[(a, b)] * phase[a] * phase[b].conj());
                let ldl_t = CMatrix::from_fn(d, d, |a, b| ldl[(a, b)] * phase[a] * phase[b].conj());
                let term = &op_t * &rho_m * op_t.adjoint() - (&ldl_t * &rho_m + &rho_m * &ldl_t) * c64(0.5, 0.0);
                for (o, v) in out.iter_mut().zip(term.iter()) {
                    *o += v;
                }
            }
        }
    }
}

/// One pulse in integration units.
struct SegmentDrive<'a> {
    seg: &'a PulseSegment,
    params: &'a DeviceParameters,
}

impl SegmentDrive<'_> {
    fn voltage(&self, t_ns: f64) -> f64 {
        segment_pad_voltage(self.seg, self.params, t_ns * NS)
    }
}

/// Interaction-picture coupling table shared by all right-hand sides.
struct DriveModel {
    d: usize,
    omega: Vec<f64>,
    couplings: Vec<(usize, usize, Complex64)>,
}

impl DriveModel {
    fn new(params: &DeviceParameters) -> Self {
        Self {
            d: params.levels(),
            omega: params.omega.iter().map(|w| w * NS).collect(),
            couplings: params.couplings.iter().map(|c| (c.i, c.j, c.g * NS)).collect(),
        }
    }

    /// Matrix elements `h_ij(t)` of the interaction-picture drive for pad voltage `v`.
    fn elements(&self, t: f64, v: f64, phase: &mut Vec<Complex64>, h: &mut Vec<Complex64>) {
        phase.clear();
        phase.extend(self.omega.iter().map(|w| Complex64::from_polar(1.0, w * t)));
        h.clear();
        h.extend(self.couplings.iter().map(|&(i, j, g)| g * v * phase[i] * phase[j].conj()));
    }
}

fn max_step_for(seg: &PulseSegment, opts: &SolverOptions) -> f64 {
    let carrier = seg.carrier.abs() * NS;
    let by_carrier = if carrier > 0.0 { TAU / carrier / opts.steps_per_period } else { f64::INFINITY };
    by_carrier.min(seg.duration() / NS / 4.0)
}

fn failure(f: StepFailure) -> Error {
    Error::Integration { time: f.time * NS, reason: f.reason }
}

/// Evolve the columns of `states` (d x c) under the program, without the
/// software frame.
fn evolve_states(
    program: &PulseProgram,
    params: &DeviceParameters,
    states: &mut CMatrix,
    opts: &SolverOptions,
) -> Result<StepStats> {
    let model = DriveModel::new(params);
    let d = model.d;
    let cols = states.ncols();
    let mut ws = Workspace::new(d * cols);
    let mut stats = StepStats::default();
    let mut phase = Vec::with_capacity(d);
    let mut h = Vec::with_capacity(model.couplings.len());
    let y = states.as_mut_slice();
    for seg in &program.segments {
        let drive = SegmentDrive { seg, params };
        let rhs = |t: f64, y: &[Complex64], dy: &mut [Complex64]| {
            dy.iter_mut().for_each(|z| *z = c64(0.0, 0.0));
            let v = drive.voltage(t);
            if v == 0.0 {
                return;
            }
            model.elements(t, v, &mut phase, &mut h);
            for (&(i, j, _), &hij) in model.couplings.iter().zip(h.iter()) {
                let a = c64(hij.im, -hij.re); // -i h
                let b = c64(-hij.im, -hij.re); // -i h^*
                for c in 0..cols {
                    let base = c * d;
                    let yi = y[base + i];
                    let yj = y[base + j];
                    dy[base + i] += a * yj;
                    dy[base + j] += b * yi;
                }
            }
        };
        let (t0, t1) = (seg.start / NS, seg.end() / NS);
        stats += dopri5(rhs, t0, t1, y, opts.tolerances, max_step_for(seg, opts), &mut ws).map_err(failure)?;
    }
    Ok(stats)
}

/// Rotating-frame propagator of the program followed by its software frame.
pub fn propagate_unitary(program: &PulseProgram, params: &DeviceParameters) -> Result<CMatrix> {
    propagate_unitary_with(program, params, &SolverOptions::default())
}

pub fn propagate_unitary_with(program: &PulseProgram, params: &DeviceParameters, opts: &SolverOptions) -> Result<CMatrix> {
    let d = params.levels();
    let mut u = CMatrix::identity(d, d);
    evolve_states(program, params, &mut u, opts)?;
    Ok(program.frame_matrix(d) * u)
}

/// Evolve state vectors (columns) through the program, software frame included.
pub fn propagate_states(
    program: &PulseProgram,
    params: &DeviceParameters,
    states: &CMatrix,
    opts: &SolverOptions,
) -> Result<CMatrix> {
    if states.nrows() != params.levels() {
        return Err(Error::InvalidDimension(format!(
            "states have {} rows, device has {} levels",
            states.nrows(),
            params.levels()
        )));
    }
    let mut out = states.clone();
    evolve_states(program, params, &mut out, opts)?;
    Ok(program.frame_matrix(params.levels()) * out)
}

/// Evolve arbitrary operators under the linear master equation, software
/// frame included. With an empty operator set this is unitary conjugation.
pub fn propagate_operators(
    program: &PulseProgram,
    params: &DeviceParameters,
    lindblad: &LindbladOperatorSet,
    operators: &[CMatrix],
    opts: &SolverOptions,
) -> Result<Vec<CMatrix>> {
    let model = DriveModel::new(params);
    let d = model.d;
    for op in operators {
        if op.shape() != (d, d) {
            return Err(Error::InvalidDimension(format!("operator is {}x{}, expected {d}x{d}", op.nrows(), op.ncols())));
        }
    }
    let diss = CompiledDissipator::new(lindblad, d, &model.omega)?;
    let block = d * d;
    let batch = operators.len();
    let mut y: Vec<Complex64> = operators.iter().flat_map(|op| op.iter().copied()).collect();
    let mut ws = Workspace::new(y.len());
    let mut phase = Vec::with_capacity(d);
    let mut h = Vec::with_capacity(model.couplings.len());

    let mut t_ns = 0.0;
    let end_ns = program.duration / NS;
    let run_idle = |from: f64, to: f64, y: &mut Vec<Complex64>, ws: &mut Workspace| -> Result<()> {
        if to <= from || diss.is_trivial() {
            return Ok(());
        }
        let rhs = |t: f64, y: &[Complex64], dy: &mut [Complex64]| {
            dy.iter_mut().for_each(|z| *z = c64(0.0, 0.0));
            for k in 0..batch {
                diss.apply(t, &y[k * block..(k + 1) * block], &mut dy[k * block..(k + 1) * block]);
            }
        };
        let max_step = if diss.dense.is_empty() { to - from } else { (to - from).min(0.05) };
        dopri5(rhs, from, to, y, opts.tolerances, max_step, ws).map_err(failure)?;
        Ok(())
    };

    for seg in &program.segments {
        let (s0, s1) = (seg.start / NS, seg.end() / NS);
        run_idle(t_ns, s0, &mut y, &mut ws)?;
        let drive = SegmentDrive { seg, params };
        let rhs = |t: f64, y: &[Complex64], dy: &mut [Complex64]| {
            dy.iter_mut().for_each(|z| *z = c64(0.0, 0.0));
            let v = drive.voltage(t);
            if v != 0.0 {
                model.elements(t, v, &mut phase, &mut h);
            }
            for k in 0..batch {
                let rho = &y[k * block..(k + 1) * block];
                let out = &mut dy[k * block..(k + 1) * block];
                if v != 0.0 {
                    // -i (H rho - rho H), column-major blocks.
                    for (&(i, j, _), &hij) in model.couplings.iter().zip(h.iter()) {
                        let a = c64(hij.im, -hij.re); // -i h
                        let b = c64(-hij.im, -hij.re); // -i h^*
                        for c in 0..d {
                            let col = c * d;
                            out[col + i] += a * rho[col + j];
                            out[col + j] += b * rho[col + i];
                        }
                        // rho H: column j gets rho[:, i] h, column i gets rho[:, j] h^*.
                        for r in 0..d {
                            out[r + d * j] -= a * rho[r + d * i];
                            out[r + d * i] -= b * rho[r + d * j];
                        }
                    }
                }
                diss.apply(t, rho, out);
            }
        };
        dopri5(rhs, s0, s1, &mut y, opts.tolerances, max_step_for(seg, opts), &mut ws).map_err(failure)?;
        t_ns = s1;
    }
    run_idle(t_ns, end_ns, &mut y, &mut ws)?;

    let frame = program.frame_matrix(d);
    let frame_dag = frame.adjoint();
    Ok((0..batch)
        .map(|k| &frame * CMatrix::from_column_slice(d, d, &y[k * block..(k + 1) * block]) * &frame_dag)
        .collect())
}

pub fn propagate_lindblad(
    program: &PulseProgram,
    params: &DeviceParameters,
    lindblad: &LindbladOperatorSet,
    rho0: &DensityMatrix,
) -> Result<DensityMatrix> {
    propagate_lindblad_with(program, params, lindblad, rho0, &SolverOptions::default())
}

pub fn propagate_lindblad_with(
    program: &PulseProgram,
    params: &DeviceParameters,
    lindblad: &LindbladOperatorSet,
    rho0: &DensityMatrix,
    opts: &SolverOptions,
) -> Result<DensityMatrix> {
    let out = propagate_operators(program, params, lindblad, std::slice::from_ref(rho0.matrix()), opts)?;
    Ok(DensityMatrix::from_evolved(out.into_iter().next().expect("one operator in, one out")))
}

/// Action of a process on the padded Pauli basis of a subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumChannel {
    /// Dimension of the subspace whose Pauli basis was propagated.
    pub subspace_dim: usize,
    pub inputs: Vec<CMatrix>,
    pub outputs: Vec<CMatrix>,
}

impl QuantumChannel {
    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, |m| m.nrows())
    }

    /// Channel of a matrix map given as a closure, for analytic models.
    pub fn from_map<F: Fn(&CMatrix) -> CMatrix>(subspace_dim: usize, dim: usize, map: F) -> Result<Self> {
        let inputs = padded_pauli_basis(subspace_dim, dim)?;
        let outputs = inputs.iter().map(&map).collect();
        Ok(Self { subspace_dim, inputs, outputs })
    }

    pub fn from_unitary(u: &CMatrix, subspace_dim: usize) -> Result<Self> {
        Self::from_map(subspace_dim, u.nrows(), |p| u * p * u.adjoint())
    }

    /// Apply the channel to an operator supported on the subspace, by
    /// expanding it in the Pauli basis.
    pub fn apply(&self, op: &CMatrix) -> CMatrix {
        let d = self.subspace_dim as f64;
        let mut out = CMatrix::zeros(self.dim(), self.dim());
        for (p, lp) in self.inputs.iter().zip(&self.outputs) {
            let coeff = crate::algebra::inner(p, op) / d;
            out += lp * coeff;
        }
        out
    }
}

/// Pauli group of dimension `sub` embedded in `dim` levels.
pub fn padded_pauli_basis(sub: usize, dim: usize) -> Result<Vec<CMatrix>> {
    pauli_matrices(sub)?.iter().map(|p| embed(p, sub, dim)).collect()
}

/// Propagate the padded qutrit Pauli basis through the program.
pub fn channel_of_program(
    program: &PulseProgram,
    params: &DeviceParameters,
    lindblad: Option<&LindbladOperatorSet>,
) -> Result<QuantumChannel> {
    channel_of_program_with(program, params, lindblad, &SolverOptions::default())
}

pub fn channel_of_program_with(
    program: &PulseProgram,
    params: &DeviceParameters,
    lindblad: Option<&LindbladOperatorSet>,
    opts: &SolverOptions,
) -> Result<QuantumChannel> {
    let inputs = padded_pauli_basis(3, params.levels())?;
    let outputs = match lindblad {
        Some(set) if !set.is_empty() => propagate_operators(program, params, set, &inputs, opts)?,
        _ => {
            let u = propagate_unitary_with(program, params, opts)?;
            inputs.iter().map(|p| &u * p * u.adjoint()).collect()
        }
    };
    Ok(QuantumChannel { subspace_dim: 3, inputs, outputs })
}

/// Serializable record of solver effort.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct SolverReport {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub evaluations: usize,
}

impl From<StepStats> for SolverReport {
    fn from(s: StepStats) -> Self {
        Self { accepted_steps: s.accepted, rejected_steps: s.rejected, evaluations: s.evaluations }
    }
}

/// Propagator together with solver statistics.
pub fn propagate_unitary_report(
    program: &PulseProgram,
    params: &DeviceParameters,
    opts: &SolverOptions,
) -> Result<(CMatrix, SolverReport)> {
    let d = params.levels();
    let mut u = CMatrix::identity(d, d);
    let stats = evolve_states(program, params, &mut u, opts)?;
    Ok((program.frame_matrix(d) * u, stats.into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{approx_eq, is_unitary, ket};
    use crate::device::compile_rotations;
    use crate::clifford::PhaseFrame;
    use crate::synthesis::GivensRotation;
    use std::f64::consts::PI;

    fn program(rots: &[GivensRotation]) -> (DeviceParameters, PulseProgram) {
        let p = DeviceParameters::default();
        let prog = compile_rotations(&p, rots, PhaseFrame::new(3)).unwrap();
        (p, prog)
    }

    #[test]
    fn empty_program_is_identity() {
        let p = DeviceParameters::default();
        let u = propagate_unitary(&PulseProgram::empty(50e-9), &p).unwrap();
        assert!(approx_eq(&u, &CMatrix::identity(7, 7), 0.0));
    }

    #[test]
    fn pi_pulse_inverts_lower_transition() {
        let (p, prog) = program(&[GivensRotation::new(0, 1, PI, 0.0)]);
        let u = propagate_unitary(&prog, &p).unwrap();
        assert!(is_unitary(&u, 1e-8));
        assert!(u[(1, 0)].norm_sqr() >= 0.999, "{}", u[(1, 0)].norm_sqr());
    }

    #[test]
    fn drag_pi_pulse_on_upper_transition() {
        let (p, prog) = program(&[GivensRotation::new(1, 2, PI, 0.0)]);
        let u = propagate_unitary(&prog, &p).unwrap();
        assert!(u[(2, 1)].norm_sqr() >= 0.995, "{} {} {}", u[(2, 1)].norm_sqr(), u[(1, 1)].norm_sqr(), u[(0, 1)].norm_sqr());
        let leak: f64 = (3..7).map(|r| u[(r, 1)].norm_sqr() + u[(r, 2)].norm_sqr()).sum();
        assert!(leak < 1e-6, "leakage {leak:e}");
    }

    #[test]
    fn relaxation_of_first_excited_state() {
        let p = DeviceParameters::default();
        let l = LindbladOperatorSet::from_params(&p);
        let rho = propagate_lindblad(&PulseProgram::empty(10e-6), &p, &l, &DensityMatrix::basis(7, 1).unwrap()).unwrap();
        let expected = (-2.83e4f64 * 10e-6).exp();
        let got = rho.populations()[1];
        assert!(((got - expected) / expected).abs() < 0.02, "{got} vs {expected}");
        assert!((rho.trace() - 1.0).abs() < 1e-7);
    }

    #[test]
    fn zero_rates_match_unitary() {
        let rots = [GivensRotation::new(0, 1, PI / 2.0, 0.3), GivensRotation::new(1, 2, 1.1, -0.4)];
        let (p, prog) = program(&rots);
        let u = propagate_unitary(&prog, &p).unwrap();
        let rho0 = thermal_state(0.247, 7).unwrap();
        let rho = propagate_lindblad(&prog, &p, &LindbladOperatorSet::empty(), &rho0).unwrap();
        let expect = &u * rho0.matrix() * u.adjoint();
        let diff = rho.matrix() - expect;
        let trace_dist: f64 = diff.symmetric_eigen().eigenvalues.iter().map(|e| e.abs()).sum::<f64>() / 2.0;
        assert!(trace_dist < 1e-7, "{trace_dist:e}");
    }

    #[test]
    fn lindblad_preserves_trace_and_hermiticity() {
        let rots = [GivensRotation::new(0, 1, PI, 0.0), GivensRotation::new(1, 2, PI / 2.0, 1.0)];
        let (p, prog) = program(&rots);
        let l = LindbladOperatorSet::from_params(&p);
        let out = propagate_operators(&prog, &p, &l, &[thermal_state(0.247, 7).unwrap().into_matrix()], &SolverOptions::default())
            .unwrap()
            .remove(0);
        assert!((crate::algebra::trace(&out).re - 1.0).abs() < 1e-7);
        assert!(is_hermitian(&out, 1e-9));
        let pops: f64 = (0..7).map(|j| out[(j, j)].re).sum();
        assert!((pops - 1.0).abs() < 1e-7);
    }

    #[test]
    fn structured_dissipator_matches_dense_formula() {
        let p = DeviceParameters::default();
        let set = LindbladOperatorSet::from_params(&p);
        let omega: Vec<f64> = p.omega.iter().map(|w| w * NS).collect();
        let diss = CompiledDissipator::new(&set, 7, &omega).unwrap();
        assert!(diss.dense.is_empty());
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
        let rho = crate::algebra::random_hermitian(7, &mut rng);
        let mut out = vec![c64(0.0, 0.0); 49];
        diss.apply(0.0, rho.as_slice(), &mut out);
        let expect = set.dissipator(&rho) * c64(NS, 0.0);
        assert!(approx_eq(&CMatrix::from_column_slice(7, 7, &out), &expect, 1e-15));
    }

    #[test]
    fn dense_operator_path_agrees_with_structured_path() {
        let p = DeviceParameters::default();
        let structured = LindbladOperatorSet::from_params(&p);
        // A sum of two jumps is not single-element, forcing the dense path.
        let mut ops = structured.operators().to_vec();
        let mut combo = CMatrix::zeros(7, 7);
        combo[(0, 1)] = c64(1e2, 0.0);
        combo[(1, 2)] = c64(1e2, 0.0);
        ops.push(combo);
        let dense = LindbladOperatorSet::from_operators(ops).unwrap();
        let (_, prog) = program(&[GivensRotation::new(0, 1, PI / 2.0, 0.0)]);
        let rho0 = DensityMatrix::basis(7, 2).unwrap();
        let a = propagate_lindblad(&prog, &p, &dense, &rho0).unwrap();
        // Check against the lab-frame dissipator at fixed time via a short idle.
        let idle = PulseProgram::empty(200e-9);
        let b = propagate_lindblad(&idle, &p, &dense, &rho0).unwrap();
        assert!((a.trace() - 1.0).abs() < 1e-7 && (b.trace() - 1.0).abs() < 1e-7);
    }

    #[test]
    fn channel_of_identity_and_linearity() {
        let p = DeviceParameters::default();
        let ch = channel_of_program(&PulseProgram::empty(0.0), &p, None).unwrap();
        for (a, b) in ch.inputs.iter().zip(&ch.outputs) {
            assert!(approx_eq(a, b, 1e-14));
        }
        let (p, prog) = program(&[GivensRotation::new(0, 1, PI / 2.0, 0.0)]);
        let l = LindbladOperatorSet::from_params(&p);
        let basis = padded_pauli_basis(3, 7).unwrap();
        let (a, b) = (c64(0.3, -0.2), c64(-1.1, 0.5));
        let combo = &basis[1] * a + &basis[4] * b;
        let out = propagate_operators(&prog, &p, &l, &[basis[1].clone(), basis[4].clone(), combo], &SolverOptions::default()).unwrap();
        let lin = &out[0] * a + &out[1] * b;
        assert!(approx_eq(&out[2], &lin, 1e-8));
    }

    #[test]
    fn thermal_state_bounds() {
        let t = thermal_state(0.247, 7).unwrap();
        assert_eq!(t.populations()[..2], [0.753, 0.247]);
        assert!((t.trace() - 1.0).abs() < 1e-15);
        assert!(thermal_state(0.6, 7).is_err());
        assert!(thermal_state(-0.1, 7).is_err());
        assert_eq!(thermal_state(0.0, 3).unwrap().populations(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn states_follow_unitary_columns() {
        let (p, prog) = program(&[GivensRotation::new(1, 2, PI / 2.0, 0.2)]);
        let u = propagate_unitary(&prog, &p).unwrap();
        let mut s = CMatrix::zeros(7, 2);
        s.set_column(0, &ket(7, 0));
        s.set_column(1, &ket(7, 1));
        let out = propagate_states(&prog, &p, &s, &SolverOptions::default()).unwrap();
        assert!((out.column(1) - u.column(1)).iter().all(|z| z.norm() < 1e-8));
    }
}
