//! Quantum process tomography of qutrit gates by linear inversion.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{block, c64, embed, identity, inner, ket, pauli_matrices, CMatrix};
use crate::clifford::{compile_decompositions, named_gate};
use crate::device::{compile_rotations, DeviceParameters};
use crate::dynamics::{propagate_operators, DensityMatrix, LindbladOperatorSet, SolverOptions};
use crate::error::{Error, Result};
use crate::metrology::{extract_populations, measure_voltages_exact, ReadoutModel};
use crate::synthesis::{decompose, GateDecomposition};

const D: usize = 3;
const CONDITION_LIMIT: f64 = 1e10;

/// The nine probe kets `|j>`, `(|j>+|k>)/sqrt2`, `(|j>+i|k>)/sqrt2` for `j < k`.
pub fn probe_kets() -> Vec<nalgebra::DVector<Complex64>> {
    let mut out: Vec<_> = (0..D).map(|j| ket(D, j)).collect();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for j in 0..D {
        for k in j + 1..D {
            out.push((ket(D, j) + ket(D, k)) * c64(s, 0.0));
            out.push((ket(D, j) + ket(D, k) * c64(0.0, 1.0)) * c64(s, 0.0));
        }
    }
    out
}

pub fn probe_states() -> Vec<CMatrix> {
    probe_kets().iter().map(|k| k * k.adjoint()).collect()
}

/// A unitary whose first column is `psi`, so it prepares `psi` from `|0>`.
fn preparation_unitary(psi: &nalgebra::DVector<Complex64>) -> CMatrix {
    let mut cols = vec![psi.clone()];
    for j in 0..D {
        let mut v = ket(D, j);
        for c in &cols {
            let proj = c.dotc(&v);
            v -= c * proj;
        }
        if v.norm() > 1e-6 {
            cols.push(v.normalize());
        }
        if cols.len() == D {
            break;
        }
    }
    CMatrix::from_columns(&cols)
}

/// Analyzer unitaries applied before a population readout. Together with the
/// computational basis they measure in four mutually unbiased bases.
pub fn analyzer_unitaries() -> Vec<CMatrix> {
    let h = named_gate("H").expect("named gate");
    let s = named_gate("S").expect("named gate");
    vec![identity(D), h.adjoint(), (&s * &h).adjoint(), (&s * &s * &h).adjoint()]
}

/// Qutrit density matrix from the populations observed after each analyzer,
/// by least squares over the nine real parameters of a Hermitian matrix.
pub fn reconstruct_state(populations: &[[f64; 3]], analyzers: &[CMatrix]) -> Result<CMatrix> {
    if populations.len() != analyzers.len() {
        return Err(Error::Validation(format!(
            "{} population sets for {} analyzers",
            populations.len(),
            analyzers.len()
        )));
    }
    // Hermitian basis: E_jj, (E_jk + E_kj), i(E_jk - E_kj).
    let mut basis = Vec::with_capacity(D * D);
    for j in 0..D {
        basis.push(ket(D, j) * ket(D, j).adjoint());
    }
    for j in 0..D {
        for k in j + 1..D {
            let e = ket(D, j) * ket(D, k).adjoint();
            basis.push(&e + e.adjoint());
            basis.push((&e - e.adjoint()) * c64(0.0, 1.0));
        }
    }
    let rows = analyzers.len() * D;
    let mut a = DMatrix::<f64>::zeros(rows, basis.len());
    let mut b = nalgebra::DVector::<f64>::zeros(rows);
    for (ai, (u, pops)) in analyzers.iter().zip(populations).enumerate() {
        for i in 0..D {
            let row = ai * D + i;
            b[row] = pops[i];
            for (bi, e) in basis.iter().enumerate() {
                a[(row, bi)] = (u * e * u.adjoint())[(i, i)].re;
            }
        }
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if rows < basis.len() || smin <= smax / CONDITION_LIMIT {
        return Err(Error::IllConditioned("analyzer set is not informationally complete".into()));
    }
    let x = svd.solve(&b, 0.0).map_err(|e| Error::IllConditioned(e.to_string()))?;
    Ok(basis.iter().zip(x.iter()).fold(CMatrix::zeros(D, D), |acc, (e, &c)| acc + e * c64(c, 0.0)))
}

/// Process matrix `chi` in the qutrit Weyl basis: `L(rho) = sum chi_ab P_a rho P_b^dagger`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessMatrix {
    pub chi: CMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessMatrixJson {
    pub basis: Vec<String>,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl ProcessMatrix {
    /// Linear inversion from the outputs of the map on the probe states.
    pub fn from_probe_outputs(inputs: &[CMatrix], outputs: &[CMatrix]) -> Result<Self> {
        let paulis = pauli_matrices(D)?;
        let n = paulis.len();
        if inputs.len() != outputs.len() || inputs.len() * D * D < n * n {
            return Err(Error::Validation(format!("{} inputs and {} outputs cannot determine chi", inputs.len(), outputs.len())));
        }
        let rows = inputs.len() * D * D;
        let mut a = DMatrix::<Complex64>::zeros(rows, n * n);
        let mut b = nalgebra::DVector::<Complex64>::zeros(rows);
        for (j, (rho, sigma)) in inputs.iter().zip(outputs).enumerate() {
            if rho.shape() != (D, D) || sigma.shape() != (D, D) {
                return Err(Error::InvalidDimension("probe inputs and outputs must be 3x3".into()));
            }
            for pa in 0..n {
                let left = &paulis[pa] * rho;
                for pb in 0..n {
                    let term = &left * paulis[pb].adjoint();
                    for r in 0..D {
                        for c in 0..D {
                            a[(j * D * D + r * D + c, pa * n + pb)] = term[(r, c)];
                        }
                    }
                }
            }
            for r in 0..D {
                for c in 0..D {
                    b[j * D * D + r * D + c] = sigma[(r, c)];
                }
            }
        }
        let svd = a.svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if smin <= smax / CONDITION_LIMIT {
            return Err(Error::IllConditioned(format!("probe system condition number {:.3e}", smax / smin)));
        }
        let x = svd.solve(&b, 0.0).map_err(|e| Error::IllConditioned(e.to_string()))?;
        let chi = CMatrix::from_fn(n, n, |i, k| x[i * n + k]);
        Ok(Self { chi })
    }

    pub fn identity_process() -> Self {
        let mut chi = CMatrix::zeros(D * D, D * D);
        chi[(0, 0)] = c64(1.0, 0.0);
        Self { chi }
    }

    /// Ideal process matrix of a unitary.
    pub fn from_unitary(u: &CMatrix) -> Result<Self> {
        let coeffs = unitary_coefficients(u)?;
        let v = nalgebra::DVector::from_vec(coeffs);
        Ok(Self { chi: &v * v.adjoint() })
    }

    pub fn apply(&self, rho: &CMatrix) -> Result<CMatrix> {
        let paulis = pauli_matrices(D)?;
        let n = paulis.len();
        let mut out = CMatrix::zeros(D, D);
        for a in 0..n {
            for b in 0..n {
                let c = self.chi[(a, b)];
                if c.norm() > 0.0 {
                    out += &paulis[a] * rho * paulis[b].adjoint() * c;
                }
            }
        }
        Ok(out)
    }

    /// `u^dagger chi u` with `u` the Weyl coefficients of the target.
    pub fn process_fidelity(&self, target: &CMatrix) -> Result<f64> {
        let u = nalgebra::DVector::from_vec(unitary_coefficients(target)?);
        Ok((u.adjoint() * &self.chi * &u)[(0, 0)].re)
    }

    /// Average gate fidelity from `chi`: `(d F_pro + Tr chi) / (d + 1)`,
    /// where `Tr chi` is the retained qutrit population of a uniform input.
    pub fn average_gate_fidelity(&self, target: &CMatrix) -> Result<f64> {
        let fp = self.process_fidelity(target)?;
        let tr = self.chi.trace().re;
        Ok((D as f64 * fp + tr) / (D as f64 + 1.0))
    }

    /// `|| sum_ab chi_ab P_b^dagger P_a - I ||_max`.
    pub fn trace_preservation_error(&self) -> Result<f64> {
        let paulis = pauli_matrices(D)?;
        let n = paulis.len();
        let mut acc = CMatrix::zeros(D, D);
        for a in 0..n {
            for b in 0..n {
                acc += paulis[b].adjoint() * &paulis[a] * self.chi[(a, b)];
            }
        }
        Ok((acc - identity(D)).iter().map(|z| z.norm()).fold(0.0, f64::max))
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        crate::algebra::is_hermitian(&self.chi, tol)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let h = (&self.chi + self.chi.adjoint()) * c64(0.5, 0.0);
        h.symmetric_eigen().eigenvalues.min()
    }

    /// Clip negative eigenvalues and restore the original trace.
    pub fn cp_projected(&self) -> Self {
        let h = (&self.chi + self.chi.adjoint()) * c64(0.5, 0.0);
        let tr = h.trace().re;
        let n = h.nrows();
        let eig = h.symmetric_eigen();
        let clipped: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
        let total: f64 = clipped.iter().sum();
        let scale = if total > 0.0 { tr / total } else { 0.0 };
        let mut chi = CMatrix::zeros(n, n);
        for (k, &l) in clipped.iter().enumerate() {
            if l > 0.0 {
                let v = eig.eigenvectors.column(k);
                chi += v * v.adjoint() * c64(l * scale, 0.0);
            }
        }
        Self { chi }
    }

    pub fn to_json(&self) -> Result<ProcessMatrixJson> {
        let labels = crate::algebra::pauli_group(D)?.iter().map(|p| p.label()).collect();
        let n = self.chi.nrows();
        Ok(ProcessMatrixJson {
            basis: labels,
            re: (0..n).map(|i| (0..n).map(|j| self.chi[(i, j)].re).collect()).collect(),
            im: (0..n).map(|i| (0..n).map(|j| self.chi[(i, j)].im).collect()).collect(),
        })
    }
}

fn unitary_coefficients(u: &CMatrix) -> Result<Vec<Complex64>> {
    if u.shape() != (D, D) {
        return Err(Error::InvalidDimension(format!("target is {}x{}, expected 3x3", u.nrows(), u.ncols())));
    }
    Ok(pauli_matrices(D)?.iter().map(|p| inner(p, u) / D as f64).collect())
}

/// Tomography of a map on density matrices of `dim` levels; only the qutrit
/// block of the outputs is reconstructed.
pub fn process_tomography<F>(dim: usize, black_box: F) -> Result<ProcessMatrix>
where
    F: Fn(&CMatrix) -> Result<CMatrix> + Sync,
{
    let inputs = probe_states();
    let outputs = inputs
        .par_iter()
        .map(|rho| black_box(&embed(rho, D, dim)?).map(|out| block(&out, D)))
        .collect::<Result<Vec<_>>>()?;
    ProcessMatrix::from_probe_outputs(&inputs, &outputs)
}

/// Experiment-level tomography: each probe is prepared from `|0>` and each
/// analyzer is applied by pulses on the device, and the output states are
/// rebuilt from populations.
#[derive(Debug, Clone)]
pub struct DeviceTomography<'a> {
    pub params: &'a DeviceParameters,
    pub lindblad: Option<&'a LindbladOperatorSet>,
    pub options: SolverOptions,
    /// Voltage readout with population extraction instead of exact populations.
    pub readout: Option<ReadoutModel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TomographyResult {
    pub chi: ProcessMatrix,
    /// Reconstructed qutrit output state for each probe.
    pub outputs: Vec<CMatrix>,
}

impl DeviceTomography<'_> {
    fn populations(&self, prep: &GateDecomposition, gate: &GateDecomposition, analyzer: &GateDecomposition) -> Result<[f64; 3]> {
        let seq = compile_decompositions([prep, gate, analyzer], D);
        let program = compile_rotations(self.params, &seq.rotations, seq.frame)?;
        let levels = self.params.levels();
        let rho0 = ket(levels, 0) * ket(levels, 0).adjoint();
        let empty = LindbladOperatorSet::empty();
        let set = self.lindblad.unwrap_or(&empty);
        let out = propagate_operators(&program, self.params, set, &[rho0], &self.options)?.remove(0);
        match &self.readout {
            None => Ok([0, 1, 2].map(|j| out[(j, j)].re)),
            Some(r) => {
                let rho = DensityMatrix::from_evolved(out);
                let m = measure_voltages_exact(&rho, r)?;
                Ok(extract_populations(&m, r)?.populations)
            }
        }
    }

    pub fn run(&self, gate: &GateDecomposition) -> Result<TomographyResult> {
        let preps = probe_kets()
            .iter()
            .map(|k| decompose(&preparation_unitary(k)))
            .collect::<Result<Vec<_>>>()?;
        let analyzers = analyzer_unitaries();
        let analyzer_decs = analyzers.iter().map(decompose).collect::<Result<Vec<_>>>()?;
        let jobs: Vec<(usize, usize)> = (0..preps.len()).flat_map(|p| (0..analyzers.len()).map(move |a| (p, a))).collect();
        let pops = jobs
            .par_iter()
            .map(|&(p, a)| self.populations(&preps[p], gate, &analyzer_decs[a]))
            .collect::<Result<Vec<_>>>()?;
        let outputs = pops
            .chunks(analyzers.len())
            .map(|chunk| reconstruct_state(chunk, &analyzers))
            .collect::<Result<Vec<_>>>()?;
        let chi = ProcessMatrix::from_probe_outputs(&probe_states(), &outputs)?;
        Ok(TomographyResult { chi, outputs })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{approx_eq, haar_unitary};
    use crate::dynamics::QuantumChannel;
    use crate::metrology::average_gate_fidelity;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn probes_span_operator_space() {
        let p = probe_states();
        let m = DMatrix::from_fn(9, 9, |i, j| p[j][(i / 3, i % 3)]);
        assert_eq!(m.rank(1e-9), 9);
        for k in probe_kets() {
            let u = preparation_unitary(&k);
            assert!(crate::algebra::is_unitary(&u, 1e-12));
            assert!((u.column(0) - &k).norm() < 1e-12);
        }
    }

    #[test]
    fn identity_channel_gives_unit_entry() {
        let chi = process_tomography(3, |r| Ok(r.clone())).unwrap();
        assert!(approx_eq(&chi.chi, &ProcessMatrix::identity_process().chi, 1e-10));
    }

    #[test]
    fn unitary_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = haar_unitary(3, &mut rng);
        let u7 = crate::algebra::embed_unitary(&u, 7).unwrap();
        let chi = process_tomography(7, |r| Ok(&u7 * r * u7.adjoint())).unwrap();
        assert!(approx_eq(&chi.chi, &ProcessMatrix::from_unitary(&u).unwrap().chi, 1e-9));
        assert!((chi.process_fidelity(&u).unwrap() - 1.0).abs() < 1e-9);
        assert!(chi.trace_preservation_error().unwrap() < 1e-9);
        for rho in probe_states() {
            assert!(approx_eq(&chi.apply(&rho).unwrap(), &(&u * &rho * u.adjoint()), 1e-9));
        }
    }

    #[test]
    fn chi_fidelity_matches_channel_fidelity() {
        // Depolarizing mixture: F = p + (1 - p)/3.
        let p = 0.9;
        let u = named_gate("H").unwrap();
        let map = |r: &CMatrix| (&u * r * u.adjoint()) * c64(p, 0.0) + identity(3) * (r.trace() * (1.0 - p) / 3.0);
        let chi = process_tomography(3, |r| Ok(map(r))).unwrap();
        let direct = average_gate_fidelity(&QuantumChannel::from_map(3, 3, map).unwrap(), &u).unwrap();
        let from_chi = chi.average_gate_fidelity(&u).unwrap();
        assert!((from_chi - direct).abs() < 1e-10);
        assert!((from_chi - (p + (1.0 - p) / 3.0)).abs() < 1e-10);
        assert!(chi.min_eigenvalue() > -1e-10);
    }

    #[test]
    fn state_reconstruction_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = haar_unitary(3, &mut rng);
        let rho = &v * CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c64(0.6, 0.0), c64(0.3, 0.0), c64(0.1, 0.0)])) * v.adjoint();
        let an = analyzer_unitaries();
        let pops: Vec<[f64; 3]> = an
            .iter()
            .map(|a| {
                let r = a * &rho * a.adjoint();
                [r[(0, 0)].re, r[(1, 1)].re, r[(2, 2)].re]
            })
            .collect();
        assert!(approx_eq(&reconstruct_state(&pops, &an).unwrap(), &rho, 1e-12));
        let err = reconstruct_state(&pops[..1], &an[..1]).unwrap_err();
        assert!(matches!(err, Error::IllConditioned(_)));
    }

    #[test]
    fn projection_removes_negative_weight() {
        let mut chi = ProcessMatrix::identity_process();
        chi.chi[(1, 1)] = c64(-0.01, 0.0);
        chi.chi[(0, 0)] = c64(1.01, 0.0);
        let p = chi.cp_projected();
        assert!(p.min_eigenvalue() > -1e-12);
        assert!((p.chi.trace().re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coherent_device_tomography_of_x() {
        let params = DeviceParameters::default();
        let x = named_gate("X").unwrap();
        let tomo = DeviceTomography { params: &params, lindblad: None, options: SolverOptions::default(), readout: None };
        let res = tomo.run(&decompose(&x).unwrap()).unwrap();
        let f = res.chi.average_gate_fidelity(&x).unwrap();
        assert!(f > 0.99, "{f}");
        let json = serde_json::to_string(&res.chi.to_json().unwrap()).unwrap();
        assert!(json.contains("X0Z0"));
    }
}
