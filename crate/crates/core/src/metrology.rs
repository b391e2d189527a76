//! Fidelity measures and the dispersive readout model.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::algebra::{c64, embed, inner, ket, CMatrix};
use crate::dynamics::{DensityMatrix, QuantumChannel};
use crate::error::{Error, Result};
use crate::synthesis::{givens_matrix, GivensRotation};

/// Average gate fidelity of `channel` against a `d x d` unitary target:
/// `F = [sum_P Tr(P^dagger U^dagger L(P) U) + d^2] / [d^2 (d + 1)]`, with the
/// target padded by zeros to the channel dimension.
pub fn average_gate_fidelity(channel: &QuantumChannel, target: &CMatrix) -> Result<f64> {
    let d = target.nrows();
    check_channel(channel, target)?;
    let u = embed(target, d, channel.dim())?;
    let ud = u.adjoint();
    let sum: f64 = channel
        .inputs
        .iter()
        .zip(&channel.outputs)
        .map(|(p, lp)| inner(p, &(&ud * lp * &u)).re)
        .sum();
    let d2 = (d * d) as f64;
    Ok((sum + d2) / (d2 * (d as f64 + 1.0)))
}

/// Entanglement fidelity `<Phi| (1 x U^dagger L U)(|Phi><Phi|) |Phi>` from the
/// channel's action on matrix units.
pub fn entanglement_fidelity(channel: &QuantumChannel, target: &CMatrix) -> Result<f64> {
    let d = target.nrows();
    check_channel(channel, target)?;
    let dim = channel.dim();
    let u = embed(target, d, dim)?;
    let mut total = c64(0.0, 0.0);
    for j in 0..d {
        for k in 0..d {
            let unit = ket(dim, j) * ket(dim, k).adjoint();
            let out = u.adjoint() * channel.apply(&unit) * &u;
            total += out[(j, k)];
        }
    }
    Ok(total.re / (d * d) as f64)
}

/// `(d F_e + 1) / (d + 1)`.
pub fn average_from_entanglement(fe: f64, d: usize) -> f64 {
    (d as f64 * fe + 1.0) / (d as f64 + 1.0)
}

fn check_channel(channel: &QuantumChannel, target: &CMatrix) -> Result<()> {
    let d = target.nrows();
    if !target.is_square() || d != channel.subspace_dim || channel.inputs.len() != d * d {
        return Err(Error::Validation(format!(
            "channel basis of {} operators on a {}-level subspace does not match a {}x{} target",
            channel.inputs.len(),
            channel.subspace_dim,
            target.nrows(),
            target.ncols()
        )));
    }
    Ok(())
}

/// Readout observable `V = V0 |0><0| + V1 |1><1| + V2 |2><2|` (volts).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutModel {
    pub v0: f64,
    pub v1: f64,
    pub v2: f64,
}

impl Default for ReadoutModel {
    fn default() -> Self {
        Self { v0: 208e-6, v1: -653e-6, v2: -392e-6 }
    }
}

impl ReadoutModel {
    pub fn levels(&self) -> [f64; 3] {
        [self.v0, self.v1, self.v2]
    }

    /// Rows give `(M1, M2, M3)` as functions of `(p0, p1, p2)`.
    pub fn design_matrix(&self) -> [[f64; 3]; 3] {
        let [v0, v1, v2] = self.levels();
        [[v0, v1, v2], [v1, v0, v2], [v2, v1, v0]]
    }

    pub fn validate(&self) -> Result<()> {
        let [v0, v1, v2] = self.levels();
        let scale = v0.abs().max(v1.abs()).max(v2.abs());
        if scale == 0.0 || (v0 - v1).abs() < 1e-9 * scale || (v0 - v2).abs() < 1e-9 * scale || (v1 - v2).abs() < 1e-9 * scale {
            return Err(Error::ReadoutDegenerate(format!("reference voltages {v0:e}, {v1:e}, {v2:e} are not distinct")));
        }
        Ok(())
    }
}

/// Gaussian voltage noise per repetition, averaged over `repetitions`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotNoise {
    /// Single-shot standard deviation, volts.
    pub sigma: f64,
    pub repetitions: usize,
}

impl ShotNoise {
    pub fn averaged_sigma(&self) -> f64 {
        self.sigma / (self.repetitions.max(1) as f64).sqrt()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let s = self.averaged_sigma();
        if s > 0.0 {
            Normal::new(0.0, s).expect("finite sigma").sample(rng)
        } else {
            0.0
        }
    }
}

/// The analyzer unitaries applied before each of the three voltage readings.
pub fn analyzers(levels: usize) -> Result<[CMatrix; 3]> {
    let swap01 = givens_matrix(&GivensRotation::new(0, 1, std::f64::consts::PI, 0.0), levels)?;
    let swap12 = givens_matrix(&GivensRotation::new(1, 2, std::f64::consts::PI, 0.0), levels)?;
    let cycle = &swap01 * &swap12 * &swap01;
    Ok([CMatrix::identity(levels, levels), swap01, cycle])
}

/// `(M1, M2, M3)`: the readout observable after each analyzer.
pub fn measure_voltages<R: Rng + ?Sized>(
    rho: &DensityMatrix,
    readout: &ReadoutModel,
    noise: Option<(&ShotNoise, &mut R)>,
) -> Result<[f64; 3]> {
    let d = rho.dim();
    if d < 3 {
        return Err(Error::InvalidDimension(format!("readout needs 3 levels, state has {d}")));
    }
    let levels = readout.levels();
    let mut out = [0.0; 3];
    for (m, a) in out.iter_mut().zip(analyzers(d)?.iter()) {
        let r = a * rho.matrix() * a.adjoint();
        *m = (0..3).map(|j| levels[j] * r[(j, j)].re).sum();
    }
    if let Some((noise, rng)) = noise {
        for m in out.iter_mut() {
            *m += noise.sample(rng);
        }
    }
    Ok(out)
}

/// Noiseless `(M1, M2, M3)`.
pub fn measure_voltages_exact(rho: &DensityMatrix, readout: &ReadoutModel) -> Result<[f64; 3]> {
    measure_voltages::<rand::rngs::ThreadRng>(rho, readout, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationEstimate {
    pub populations: [f64; 3],
    /// Root-sum-square misfit of the voltages, volts.
    pub residual: f64,
}

/// Least-squares populations on the probability simplex. Every support set
/// is tried and the best feasible solution kept.
pub fn extract_populations(m: &[f64; 3], readout: &ReadoutModel) -> Result<PopulationEstimate> {
    readout.validate()?;
    let design = readout.design_matrix();
    let scale = readout.levels().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let a = DMatrix::from_fn(3, 3, |r, c| design[r][c] / scale);
    let b = DVector::from_fn(3, |r, _| m[r] / scale);
    let det = a.determinant();
    if det.abs() < 1e-9 {
        return Err(Error::ReadoutDegenerate(format!("design matrix determinant {det:.3e}")));
    }

    let mut best: Option<([f64; 3], f64)> = None;
    for mask in 1u8..8 {
        let support: Vec<usize> = (0..3).filter(|j| mask & (1 << j) != 0).collect();
        let k = support.len();
        // KKT system for min |A_S x - b|^2 subject to sum x = 1.
        let mut kkt = DMatrix::<f64>::zeros(k + 1, k + 1);
        let mut rhs = DVector::<f64>::zeros(k + 1);
        for (r, &sr) in support.iter().enumerate() {
            for (c, &sc) in support.iter().enumerate() {
                kkt[(r, c)] = 2.0 * a.column(sr).dot(&a.column(sc));
            }
            kkt[(r, k)] = 1.0;
            kkt[(k, r)] = 1.0;
            rhs[r] = 2.0 * a.column(sr).dot(&b);
        }
        rhs[k] = 1.0;
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        if (0..k).any(|r| sol[r] < -1e-12) {
            continue;
        }
        let mut p = [0.0; 3];
        for (r, &sr) in support.iter().enumerate() {
            p[sr] = sol[r].max(0.0);
        }
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= total);
        let resid = (&a * DVector::from_column_slice(&p) - &b).norm();
        if best.is_none_or(|(_, r)| resid < r - 1e-15) {
            best = Some((p, resid));
        }
    }
    let (populations, resid) = best.ok_or_else(|| Error::ReadoutDegenerate("no feasible population estimate".into()))?;
    Ok(PopulationEstimate { populations, residual: resid * scale })
}

/// Something that prepares the relaxed device state, applies rotations in
/// time order and reports the averaged readout voltage.
pub trait ReadoutExperiment {
    fn measure(&mut self, rotations: &[GivensRotation]) -> Result<f64>;
}

/// Exact rotations on a thermal qutrit with an optional noise model.
pub struct IdealReadoutExperiment<R: Rng> {
    pub readout: ReadoutModel,
    pub thermal_p1: f64,
    pub noise: Option<(ShotNoise, R)>,
}

impl<R: Rng> ReadoutExperiment for IdealReadoutExperiment<R> {
    fn measure(&mut self, rotations: &[GivensRotation]) -> Result<f64> {
        let rho = crate::dynamics::thermal_state(self.thermal_p1, 3)?;
        let mut u = CMatrix::identity(3, 3);
        for r in rotations {
            u = givens_matrix(r, 3)? * u;
        }
        let out = &u * rho.matrix() * u.adjoint();
        let levels = self.readout.levels();
        let mut v: f64 = (0..3).map(|j| levels[j] * out[(j, j)].re).sum();
        if let Some((noise, rng)) = self.noise.as_mut() {
            v += noise.sample(rng);
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCalibration {
    pub readout: ReadoutModel,
    pub thermal_p1: f64,
    /// Cosine amplitudes of the two Rabi oscillations, volts.
    pub rabi_amplitudes: [f64; 2],
}

/// Number of drive angles sampled per Rabi oscillation.
pub const RABI_POINTS: usize = 12;

/// Recover the reference voltages and the thermal excitation.
///
/// The excited fraction comes from the ratio of two 0-1 Rabi amplitudes: one
/// after a 1-2 swap of the thermal state and one after 0-1 and 1-2 swaps.
/// The voltages then follow by least squares from four reference states:
/// thermal; 0-1 swap; 1-2 then 0-1 swap; 0-1 then 1-2 swap. The last one
/// keeps `V2` determined when the thermal excitation is small.
pub fn measure_reference_voltages<E: ReadoutExperiment + ?Sized>(exp: &mut E) -> Result<ReferenceCalibration> {
    use std::f64::consts::PI;
    let swap01 = GivensRotation::new(0, 1, PI, 0.0);
    let swap12 = GivensRotation::new(1, 2, PI, 0.0);

    let rabi = |prefix: &[GivensRotation], exp: &mut E| -> Result<f64> {
        // V(theta) = a + b cos(theta) + c sin(theta); the prefix leaves no 0-1
        // coherence, so c only absorbs noise.
        let mut design = DMatrix::<f64>::zeros(RABI_POINTS, 3);
        let mut y = DVector::<f64>::zeros(RABI_POINTS);
        for k in 0..RABI_POINTS {
            let theta = 2.0 * PI * k as f64 / RABI_POINTS as f64;
            let mut seq = prefix.to_vec();
            if theta > 0.0 {
                seq.push(GivensRotation::new(0, 1, theta, 0.0));
            }
            y[k] = exp.measure(&seq)?;
            design[(k, 0)] = 1.0;
            design[(k, 1)] = theta.cos();
            design[(k, 2)] = theta.sin();
        }
        let coef = design
            .svd(true, true)
            .solve(&y, 1e-14)
            .map_err(|e| Error::Fit(format!("Rabi fit: {e}")))?;
        Ok(coef[1])
    };
    let amp_a = rabi(&[swap12], exp)?;
    let amp_b = rabi(&[swap01, swap12], exp)?;
    if amp_a.abs() < f64::EPSILON {
        return Err(Error::Fit("reference Rabi oscillation has no amplitude".into()));
    }
    let ratio = (amp_b / amp_a).max(0.0);
    let p = ratio / (1.0 + ratio);

    let e_th = exp.measure(&[])?;
    let e_01 = exp.measure(&[swap01])?;
    let e_12_01 = exp.measure(&[swap12, swap01])?;
    let e_01_12 = exp.measure(&[swap01, swap12])?;
    let q = 1.0 - p;
    let design = DMatrix::from_row_slice(4, 3, &[q, p, 0.0, p, q, 0.0, 0.0, q, p, p, 0.0, q]);
    let y = DVector::from_column_slice(&[e_th, e_01, e_12_01, e_01_12]);
    let v = design
        .svd(true, true)
        .solve(&y, 1e-12)
        .map_err(|e| Error::Fit(format!("reference voltages: {e}")))?;
    let readout = ReadoutModel { v0: v[0], v1: v[1], v2: v[2] };
    readout.validate()?;
    Ok(ReferenceCalibration { readout, thermal_p1: p, rabi_amplitudes: [amp_a, amp_b] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{haar_unitary, identity};
    use crate::dynamics::thermal_state;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_gate_has_unit_fidelity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = haar_unitary(3, &mut rng);
        let ch = QuantumChannel::from_unitary(&embed(&u, 3, 7).unwrap(), 3).unwrap();
        let mut u7 = identity(7);
        u7.view_mut((0, 0), (3, 3)).copy_from(&u);
        let ch7 = QuantumChannel::from_unitary(&u7, 3).unwrap();
        for c in [ch, ch7] {
            assert!((average_gate_fidelity(&c, &u).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn depolarizing_fidelity() {
        let p = 0.93;
        let ch = QuantumChannel::from_map(3, 3, |m| {
            let tr = crate::algebra::trace(m);
            m * c64(p, 0.0) + identity(3) * (tr * (1.0 - p) / 3.0)
        })
        .unwrap();
        let f = average_gate_fidelity(&ch, &identity(3)).unwrap();
        assert!((f - (p + (1.0 - p) / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn unitary_fidelity_matches_entanglement_relation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let u = haar_unitary(3, &mut rng);
            let v = haar_unitary(3, &mut rng);
            let ch = QuantumChannel::from_unitary(&v, 3).unwrap();
            let f = average_gate_fidelity(&ch, &u).unwrap();
            let fe = entanglement_fidelity(&ch, &u).unwrap();
            let direct = (u.adjoint() * &v).trace().norm_sqr() / 9.0;
            assert!((fe - direct).abs() < 1e-12);
            assert!((f - average_from_entanglement(fe, 3)).abs() < 1e-10);
        }
    }

    #[test]
    fn fidelity_ignores_global_phase() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = haar_unitary(3, &mut rng);
        let v = haar_unitary(3, &mut rng);
        let ch = QuantumChannel::from_unitary(&v, 3).unwrap();
        let a = average_gate_fidelity(&ch, &u).unwrap();
        let b = average_gate_fidelity(&ch, &(&u * crate::algebra::cis(1.234))).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn basis_mismatch_rejected() {
        let ch = QuantumChannel::from_unitary(&identity(3), 3).unwrap();
        assert!(average_gate_fidelity(&ch, &identity(2)).is_err());
    }

    #[test]
    fn voltages_of_basis_states() {
        let r = ReadoutModel::default();
        let m0 = measure_voltages_exact(&DensityMatrix::basis(7, 0).unwrap(), &r).unwrap();
        assert!((m0[0] - 208e-6).abs() < 1e-15);
        let m2 = measure_voltages_exact(&DensityMatrix::basis(3, 2).unwrap(), &r).unwrap();
        assert!((m2[2] - r.v0).abs() < 1e-15);
        let mixed = DensityMatrix::from_populations(&[1.0 / 3.0; 3]).unwrap();
        let mm = measure_voltages_exact(&mixed, &r).unwrap();
        let avg = (r.v0 + r.v1 + r.v2) / 3.0;
        assert!(mm.iter().all(|m| (m - avg).abs() < 1e-15));
    }

    #[test]
    fn voltages_follow_design_rows() {
        let r = ReadoutModel::default();
        let pops = [0.5, 0.3, 0.2];
        let m = measure_voltages_exact(&DensityMatrix::from_populations(&pops).unwrap(), &r).unwrap();
        for (row, mi) in r.design_matrix().iter().zip(m) {
            let expect: f64 = row.iter().zip(pops).map(|(v, p)| v * p).sum();
            assert!((expect - mi).abs() < 1e-15);
        }
    }

    #[test]
    fn extraction_round_trip() {
        let r = ReadoutModel::default();
        for pops in [[0.5, 0.3, 0.2], [0.753, 0.247, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]] {
            let m = measure_voltages_exact(&DensityMatrix::from_populations(&pops).unwrap(), &r).unwrap();
            let est = extract_populations(&m, &r).unwrap();
            for (a, b) in est.populations.iter().zip(pops) {
                assert!((a - b).abs() < 1e-9, "{pops:?} -> {:?}", est.populations);
            }
            assert!(est.residual < 1e-12);
        }
    }

    #[test]
    fn extraction_with_microvolt_noise() {
        let r = ReadoutModel::default();
        let pops = [0.6, 0.1, 0.3];
        let m = measure_voltages_exact(&DensityMatrix::from_populations(&pops).unwrap(), &r).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let noisy = m.map(|x| x + 1e-6 * (rng.random::<f64>() * 2.0 - 1.0));
            let est = extract_populations(&noisy, &r).unwrap();
            assert!(est.populations.iter().zip(pops).all(|(a, b)| (a - b).abs() < 0.005));
            assert!(est.populations.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn degenerate_readout_rejected() {
        let r = ReadoutModel { v0: 1e-4, v1: 1e-4, v2: -1e-4 };
        assert!(matches!(extract_populations(&[0.0; 3], &r), Err(Error::ReadoutDegenerate(_))));
    }

    #[test]
    fn reference_procedure_on_ideal_model() {
        for p1 in [0.247, 0.0, 0.1] {
            let truth = ReadoutModel::default();
            let mut exp = IdealReadoutExperiment::<ChaCha8Rng> { readout: truth, thermal_p1: p1, noise: None };
            let cal = measure_reference_voltages(&mut exp).unwrap();
            assert!((cal.thermal_p1 - p1).abs() < 1e-9);
            for (a, b) in cal.readout.levels().iter().zip(truth.levels()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let _ = thermal_state(0.2, 3).unwrap();
    }
}
