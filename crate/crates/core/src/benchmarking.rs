//! Randomized benchmarking over the qutrit Clifford group, decay and leakage
//! fits, and repeated-gate experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{c64, identity, CMatrix};
use crate::clifford::{clifford_group, named_gate, CliffordGroup};
use crate::device::{compile_cliffords, DeviceParameters};
use crate::dynamics::{propagate_operators, propagate_states, DensityMatrix, LindbladOperatorSet, SolverOptions};
use crate::error::{Error, Result};
use crate::fit::{curve_fit, LmOptions};
use crate::metrology::{extract_populations, measure_voltages, ReadoutModel, ShotNoise};

/// Lengths used when no profile is requested.
pub const DESK_LENGTHS: [usize; 7] = [2, 5, 10, 20, 40, 80, 150];
pub const DESK_RANDOMIZATIONS: usize = 10;
/// The full experiment: Fibonacci lengths from 2 to 987, 25 randomizations.
pub const FULL_LENGTHS: [usize; 14] = [2, 3, 5, 8, 13, 21, 34, 55, 89, 144, 233, 377, 610, 987];
pub const FULL_RANDOMIZATIONS: usize = 25;
pub const DEFAULT_REPETITIONS: usize = 8192;

/// Executes a sequence of Clifford indices (time order) from an initial state.
pub trait RbBackend: Sync {
    fn run_sequence(&self, group: &CliffordGroup, gates: &[usize], initial: &DensityMatrix) -> Result<DensityMatrix>;
}

/// Exact Clifford matrices.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdealBackend;

impl RbBackend for IdealBackend {
    fn run_sequence(&self, group: &CliffordGroup, gates: &[usize], initial: &DensityMatrix) -> Result<DensityMatrix> {
        let mut rho = initial.matrix().clone();
        let d = rho.nrows();
        for &g in gates {
            let u = embed_gate(&group.element(g)?.matrix, d)?;
            rho = &u * rho * u.adjoint();
        }
        Ok(DensityMatrix::from_evolved(rho))
    }
}

fn embed_gate(u: &CMatrix, d: usize) -> Result<CMatrix> {
    if d == 3 { Ok(u.clone()) } else { crate::algebra::embed_unitary(u, d) }
}

/// Each Clifford followed by a depolarizing channel of strength `p` on the qutrit.
#[derive(Debug, Clone, Copy)]
pub struct DepolarizingBackend {
    pub p: f64,
}

impl RbBackend for DepolarizingBackend {
    fn run_sequence(&self, group: &CliffordGroup, gates: &[usize], initial: &DensityMatrix) -> Result<DensityMatrix> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::OutOfRange(format!("depolarizing parameter {}", self.p)));
        }
        if initial.dim() != 3 {
            return Err(Error::InvalidDimension("the depolarizing backend acts on a qutrit".into()));
        }
        let mut rho = initial.matrix().clone();
        let mixed = identity(3) * c64(1.0 / 3.0, 0.0);
        for &g in gates {
            let u = &group.element(g)?.matrix;
            let tr = rho.trace();
            rho = (u * rho * u.adjoint()) * c64(self.p, 0.0) + &mixed * (tr * (1.0 - self.p));
        }
        Ok(DensityMatrix::from_evolved(rho))
    }
}

/// Pulse-level simulation of the compiled sequence, unitary or with the
/// master equation when `lindblad` is given.
#[derive(Debug, Clone)]
pub struct DeviceBackend {
    pub params: DeviceParameters,
    pub lindblad: Option<LindbladOperatorSet>,
    pub options: SolverOptions,
}

impl DeviceBackend {
    pub fn coherent(params: DeviceParameters) -> Self {
        Self { params, lindblad: None, options: SolverOptions::default() }
    }

    pub fn lindblad(params: DeviceParameters) -> Self {
        let l = LindbladOperatorSet::from_params(&params);
        Self { params, lindblad: Some(l), options: SolverOptions::default() }
    }
}

impl RbBackend for DeviceBackend {
    fn run_sequence(&self, group: &CliffordGroup, gates: &[usize], initial: &DensityMatrix) -> Result<DensityMatrix> {
        let levels = self.params.levels();
        let rho0 = if initial.dim() == levels { initial.clone() } else { initial.padded(levels)? };
        let program = compile_cliffords(&self.params, group, gates)?;
        match &self.lindblad {
            Some(l) if !l.is_empty() => {
                let out = propagate_operators(&program, &self.params, l, &[rho0.matrix().clone()], &self.options)?;
                Ok(DensityMatrix::from_evolved(out.into_iter().next().expect("one operator")))
            }
            _ => {
                let eig = rho0.matrix().clone().symmetric_eigen();
                let keep: Vec<usize> = (0..levels).filter(|&k| eig.eigenvalues[k] > 1e-14).collect();
                let states = CMatrix::from_fn(levels, keep.len(), |r, c| eig.eigenvectors[(r, keep[c])]);
                let out = propagate_states(&program, &self.params, &states, &self.options)?;
                let mut rho = CMatrix::zeros(levels, levels);
                for (c, &k) in keep.iter().enumerate() {
                    let v = out.column(c);
                    rho += v * v.adjoint() * c64(eig.eigenvalues[k], 0.0);
                }
                Ok(DensityMatrix::from_evolved(rho))
            }
        }
    }
}

/// How qutrit populations are read from the final state.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum Readout {
    /// Diagonal of the density matrix.
    #[default]
    Direct,
    /// Three analyzer voltages, optional shot noise, then constrained extraction.
    Voltage { model: ReadoutModel, noise: Option<ShotNoise> },
}

impl Readout {
    fn populations<R: Rng>(&self, rho: &DensityMatrix, rng: &mut R) -> Result<[f64; 3]> {
        match self {
            Readout::Direct => {
                let p = rho.populations();
                Ok([p[0], p[1], p[2]])
            }
            Readout::Voltage { model, noise } => {
                let m = measure_voltages(rho, model, noise.as_ref().map(|n| (n, &mut *rng)))?;
                Ok(extract_populations(&m, model)?.populations)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RbConfig {
    pub lengths: Vec<usize>,
    pub randomizations: usize,
    pub seed: u64,
    pub initial: DensityMatrix,
    pub readout: Readout,
}

impl RbConfig {
    pub fn desk(initial: DensityMatrix, seed: u64) -> Self {
        Self { lengths: DESK_LENGTHS.to_vec(), randomizations: DESK_RANDOMIZATIONS, seed, initial, readout: Readout::Direct }
    }

    pub fn full_scale(initial: DensityMatrix, seed: u64) -> Self {
        Self {
            lengths: FULL_LENGTHS.to_vec(),
            randomizations: FULL_RANDOMIZATIONS,
            seed,
            initial,
            readout: Readout::Direct,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengths.is_empty() || self.lengths[0] < 2 {
            return Err(Error::Validation("sequence lengths must start at 2 or more".into()));
        }
        if self.lengths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation("sequence lengths must be strictly increasing".into()));
        }
        if self.randomizations == 0 {
            return Err(Error::Validation("at least one randomization is needed".into()));
        }
        Ok(())
    }
}

/// Generator for randomization `r` of length `l`.
pub fn sequence_rng(seed: u64, length: usize, randomization: usize) -> ChaCha8Rng {
    let mut s = ChaCha8Rng::seed_from_u64(seed);
    s.set_stream(((length as u64) << 32) | randomization as u64);
    s
}

/// `l - 1` uniform Clifford indices followed by the inverse of their product.
pub fn generate_rb_sequence<R: Rng + ?Sized>(group: &CliffordGroup, length: usize, rng: &mut R) -> Result<Vec<usize>> {
    if length < 2 {
        return Err(Error::Validation(format!("sequence length {length} < 2")));
    }
    let mut seq: Vec<usize> = (0..length - 1).map(|_| rng.random_range(0..group.len())).collect();
    seq.push(group.recovery(&seq)?);
    Ok(seq)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbRecord {
    pub l: usize,
    pub randomization: usize,
    pub p0: f64,
    pub p1: f64,
    pub p2: f64,
    pub p_leak: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbData {
    pub records: Vec<RbRecord>,
}

impl RbData {
    pub fn lengths(&self) -> Vec<usize> {
        let mut ls: Vec<usize> = self.records.iter().map(|r| r.l).collect();
        ls.dedup();
        ls
    }

    /// Per-length mean of `[p0, p1, p2, p_leak]`.
    pub fn means(&self) -> Vec<(usize, [f64; 4])> {
        self.lengths()
            .into_iter()
            .map(|l| {
                let rows: Vec<_> = self.records.iter().filter(|r| r.l == l).collect();
                let n = rows.len() as f64;
                let mut m = [0.0; 4];
                for r in rows {
                    m[0] += r.p0 / n;
                    m[1] += r.p1 / n;
                    m[2] += r.p2 / n;
                    m[3] += r.p_leak / n;
                }
                (l, m)
            })
            .collect()
    }
}

/// Run every (length, randomization) pair. Sequences are drawn per pair from
/// [`sequence_rng`], so results do not depend on scheduling.
pub fn run_rb<B: RbBackend + ?Sized>(config: &RbConfig, backend: &B) -> Result<RbData> {
    config.validate()?;
    let group = clifford_group();
    let jobs: Vec<(usize, usize)> = config
        .lengths
        .iter()
        .flat_map(|&l| (0..config.randomizations).map(move |r| (l, r)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(l, r)| {
            let mut rng = sequence_rng(config.seed, l, r);
            let seq = generate_rb_sequence(group, l, &mut rng)?;
            let rho = backend.run_sequence(group, &seq, &config.initial)?;
            let pops = config.readout.populations(&rho, &mut rng)?;
            let leak = (1.0 - rho.subspace_population(3)).max(0.0);
            Ok(RbRecord { l, randomization: r, p0: pops[0], p1: pops[1], p2: pops[2], p_leak: leak })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RbData { records })
}

/// `F = p + (1 - p) / 3`.
pub fn fidelity_from_p(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::OutOfRange(format!("depolarizing parameter {p} outside [0, 1]")));
    }
    Ok(p + (1.0 - p) / 3.0)
}

fn fidelity_stderr(p_err: f64) -> f64 {
    p_err * 2.0 / 3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelFit {
    pub p_initial: f64,
    pub p_final: f64,
    pub p: f64,
    pub p_initial_err: f64,
    pub p_final_err: f64,
    pub p_err: f64,
    pub cost: f64,
}

impl LevelFit {
    pub fn model(&self, l: f64) -> f64 {
        (self.p_initial - self.p_final) * self.p.powf(l) + self.p_final
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub levels: [LevelFit; 3],
    pub p: f64,
    pub p_err: f64,
    pub fidelity: f64,
    pub fidelity_err: f64,
    /// Whether the final populations were fixed at 1/3.
    pub constrained: bool,
}

fn fit_level(ls: &[f64], ys: &[f64], constrained: bool) -> Result<LevelFit> {
    let first = ys[0];
    let last = ys[ys.len() - 1];
    let pf0 = if constrained { 1.0 / 3.0 } else { last };
    // Log-linear estimate of p from the two ends.
    let p0 = {
        let a = (first - pf0).abs().max(1e-9);
        let b = (last - pf0).abs().max(1e-9 * a);
        let span = ls[ls.len() - 1] - ls[0];
        if span > 0.0 && b < a { (b / a).powf(1.0 / span).clamp(0.5, 0.999_999) } else { 0.99 }
    };
    let pi0 = pf0 + (first - pf0) / p0.powf(ls[0]);
    let opts = |n: usize| LmOptions {
        bounds: Some(if n == 3 { vec![(-1.0, 2.0), (-1.0, 2.0), (0.0, 1.0)] } else { vec![(-1.0, 2.0), (0.0, 1.0)] }),
        ..Default::default()
    };
    if constrained {
        let fit = curve_fit(|l, q| (q[0] - 1.0 / 3.0) * q[1].powf(l) + 1.0 / 3.0, ls, ys, &[pi0, p0], &opts(2))?;
        Ok(LevelFit {
            p_initial: fit.params[0],
            p_final: 1.0 / 3.0,
            p: fit.params[1],
            p_initial_err: fit.stderr[0],
            p_final_err: 0.0,
            p_err: fit.stderr[1],
            cost: fit.cost,
        })
    } else {
        if ls.len() < 4 {
            return Err(Error::Fit(format!("{} lengths cannot constrain a three-parameter decay", ls.len())));
        }
        let fit = curve_fit(|l, q| (q[0] - q[1]) * q[2].powf(l) + q[1], ls, ys, &[pi0, pf0, p0], &opts(3))?;
        Ok(LevelFit {
            p_initial: fit.params[0],
            p_final: fit.params[1],
            p: fit.params[2],
            p_initial_err: fit.stderr[0],
            p_final_err: fit.stderr[1],
            p_err: fit.stderr[2],
            cost: fit.cost,
        })
    }
}

/// Fit `P_n(l) = (P_in - P_fn) p_n^l + P_fn` for each level to all records
/// (unweighted), and average the decay constants.
pub fn fit_depolarizing(data: &RbData, constrained: bool) -> Result<DecayFit> {
    let distinct = data.lengths().len();
    if distinct < 4 {
        return Err(Error::Fit(format!("{distinct} distinct lengths, at least 4 needed")));
    }
    let ls: Vec<f64> = data.records.iter().map(|r| r.l as f64).collect();
    let mut fits = Vec::with_capacity(3);
    for level in 0..3 {
        let ys: Vec<f64> = data
            .records
            .iter()
            .map(|r| [r.p0, r.p1, r.p2][level])
            .collect();
        let mut order: Vec<usize> = (0..ls.len()).collect();
        order.sort_by(|&a, &b| ls[a].total_cmp(&ls[b]));
        let xs: Vec<f64> = order.iter().map(|&i| ls[i]).collect();
        let ys: Vec<f64> = order.iter().map(|&i| ys[i]).collect();
        fits.push(fit_level(&xs, &ys, constrained)?);
    }
    let levels = [fits[0], fits[1], fits[2]];
    combine_levels(levels, constrained)
}

fn combine_levels(levels: [LevelFit; 3], constrained: bool) -> Result<DecayFit> {
    // Levels whose population barely changes carry no decay information.
    let informative: Vec<&LevelFit> = levels.iter().filter(|f| (f.p_initial - f.p_final).abs() > 1e-3).collect();
    let used: Vec<&LevelFit> = if informative.is_empty() { levels.iter().collect() } else { informative };
    let n = used.len() as f64;
    let p = used.iter().map(|f| f.p).sum::<f64>() / n;
    let p_err = used.iter().map(|f| f.p_err * f.p_err).sum::<f64>().sqrt() / n;
    Ok(DecayFit {
        levels,
        p,
        p_err,
        fidelity: fidelity_from_p(p.clamp(0.0, 1.0))?,
        fidelity_err: fidelity_stderr(p_err),
        constrained,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeakageFit {
    /// Leakage out of the qutrit per Clifford.
    pub l1: f64,
    /// Seepage back into the qutrit per Clifford.
    pub l2: f64,
    pub l1_err: f64,
    pub l2_err: f64,
    /// Average fidelity corrected for leakage.
    pub fidelity: f64,
    /// No leakage signal was found; the rates are upper bounds.
    pub degenerate: bool,
}

/// Fit the retained qutrit population to `A + B lambda^l` with
/// `lambda = 1 - L1 - L2` and `A = L2 / (L1 + L2)`. The leakage-aware
/// fidelity is `((d - 1) p + 1 - L1) / d` with `p` the depolarizing decay.
pub fn fit_leakage(data: &RbData, p: f64) -> Result<LeakageFit> {
    let means = data.means();
    if means.len() < 3 {
        return Err(Error::Fit("leakage fit needs at least 3 lengths".into()));
    }
    let ls: Vec<f64> = data.records.iter().map(|r| r.l as f64).collect();
    let ys: Vec<f64> = data.records.iter().map(|r| 1.0 - r.p_leak).collect();
    let fidelity = |l1: f64| (2.0 * p + 1.0 - l1) / 3.0;
    let spread = ys.iter().map(|y| (1.0 - y).abs()).fold(0.0, f64::max);
    if spread < 1e-12 {
        return Ok(LeakageFit { l1: 0.0, l2: 0.0, l1_err: 1.0, l2_err: 1.0, fidelity: fidelity(0.0), degenerate: true });
    }
    // Initial guess from the mean slope of the early points.
    let (l_last, m_last) = means[means.len() - 1];
    let l1_0 = ((1.0 - m_last[3]).min(1.0) - 1.0).abs() / l_last as f64;
    let model = |l: f64, q: &[f64]| {
        let (l1, l2, b) = (q[0], q[1], q[2]);
        let total = l1 + l2;
        let a = if total > 0.0 { l2 / total } else { 0.0 };
        a + b * (1.0 - total).powf(l)
    };
    let opts = LmOptions { bounds: Some(vec![(0.0, 1.0), (0.0, 1.0), (0.0, 2.0)]), ..Default::default() };
    let fit = curve_fit(model, &ls, &ys, &[l1_0.max(1e-9), l1_0.max(1e-9) * 0.1, 1.0], &opts)?;
    let (l1, l2) = (fit.params[0], fit.params[1]);
    Ok(LeakageFit {
        l1,
        l2,
        l1_err: fit.stderr[0],
        l2_err: fit.stderr[1],
        fidelity: fidelity(l1),
        degenerate: false,
    })
}

/// Populations after `N = 0..=n_max` applications of `gate`. Diagonal gates
/// are wrapped between two `H` gates so their action becomes visible.
pub fn gate_repetition<B: RbBackend + ?Sized>(
    gate: usize,
    n_max: usize,
    initial: &DensityMatrix,
    backend: &B,
) -> Result<Vec<[f64; 3]>> {
    let group = clifford_group();
    let element = group.element(gate)?;
    let h = group.index_of(&named_gate("H").expect("named gate")).expect("H is a Clifford");
    let diagonal = (0..3).all(|r| (0..3).all(|c| r == c || element.matrix[(r, c)].norm() < 1e-12));
    (0..=n_max)
        .into_par_iter()
        .map(|n| {
            let mut seq = vec![gate; n];
            if diagonal {
                seq.insert(0, h);
                seq.push(h);
            }
            let rho = backend.run_sequence(group, &seq, initial)?;
            let p = rho.populations();
            Ok([p[0], p[1], p[2]])
        })
        .collect()
}

/// Smallest period with which the population curve repeats within `tol`.
pub fn periodicity(curve: &[[f64; 3]], tol: f64) -> Option<usize> {
    (1..curve.len() / 2 + 1).find(|&t| {
        (0..curve.len() - t).all(|n| (0..3).all(|k| (curve[n][k] - curve[n + t][k]).abs() <= tol))
    })
}

/// Peak-to-peak excursion of each level over a window of `period` points
/// starting at `start`, summed over levels.
pub fn envelope_amplitude(curve: &[[f64; 3]], start: usize, period: usize) -> f64 {
    let end = (start + period).min(curve.len());
    (0..3)
        .map(|k| {
            let w = curve[start..end].iter().map(|p| p[k]);
            let max = w.clone().fold(f64::NEG_INFINITY, f64::max);
            let min = w.fold(f64::INFINITY, f64::min);
            max - min
        })
        .sum()
}
