use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;

use qudit_core::algebra::{haar_unitary, phase_insensitive_distance, CMatrix};
use qudit_core::analysis::{analyze_clifford, level_shift_sweep};
use qudit_core::benchmarking::{
    fit_depolarizing, fit_leakage, gate_repetition, periodicity, run_rb, DecayFit, DepolarizingBackend, DeviceBackend,
    IdealBackend, LeakageFit, RbBackend, RbConfig, RbData, RbRecord, Readout, DEFAULT_REPETITIONS, DESK_LENGTHS,
    DESK_RANDOMIZATIONS, FULL_LENGTHS, FULL_RANDOMIZATIONS,
};
use qudit_core::calibration::{calibrate_device, CalibrationReport, DeviceCalibrationBackend};
use qudit_core::clifford::{clifford_group, named_gate};
use qudit_core::device::{DeviceParameters, Transition};
use qudit_core::dynamics::{thermal_state, DensityMatrix, LindbladOperatorSet, SolverOptions};
use qudit_core::metrology::ShotNoise;
use qudit_core::synthesis::{decompose, GateDecomposition};
use qudit_core::tomography::{process_tomography, DeviceTomography, ProcessMatrix};

use crate::config::{Backend, Experiment, ExperimentConfig, InitialState, ReadoutKind};
use crate::output::Output;
use crate::CliError;

const CALIBRATION_DEPTH: usize = 5;
const DEFAULT_MULTIPLIERS: [f64; 6] = [0.5, 0.75, 1.0, 1.25, 1.5, 2.0];

/// Clifford index for a gate name (`H3`, `X`, `s3`, ...) or a bare index.
pub fn parse_gate(name: &str) -> Result<usize, String> {
    let group = clifford_group();
    let trimmed = name.strip_suffix('3').filter(|s| !s.is_empty()).unwrap_or(name);
    if let Some(m) = named_gate(trimmed) {
        return group.index_of(&m).ok_or_else(|| format!("{name} is not a Clifford"));
    }
    match name.parse::<usize>() {
        Ok(i) if i < group.len() => Ok(i),
        _ => Err(format!("unknown gate {name:?}; use H3, X3, S3, Z3, I or an index below {}", group.len())),
    }
}

fn require(config: &ExperimentConfig, experiment: Experiment) -> Result<ExperimentConfig, CliError> {
    let mut c = config.clone();
    match c.experiment {
        Some(e) if e != experiment => {
            return Err(CliError::Validation(format!("config is for experiment {e:?}, not {experiment:?}")));
        }
        _ => c.experiment = Some(experiment),
    }
    let v = c.violations();
    if !v.is_empty() {
        return Err(CliError::Validation(v.join("\n")));
    }
    Ok(c)
}

/// Device parameters, calibrated first when the backend simulates pulses.
fn device(config: &ExperimentConfig, backend: Backend) -> Result<DeviceParameters, CliError> {
    let params = config.device().map_err(CliError::Validation)?;
    let simulated = matches!(backend, Backend::Coherent | Backend::Lindblad);
    if !simulated || !config.calibrate.unwrap_or(true) {
        return Ok(params);
    }
    info!("calibrating device");
    let (p, report) = calibrate_device(&params, &DeviceCalibrationBackend::coherent(), CALIBRATION_DEPTH)?;
    info!("transfer factors {:?}", report.transfer);
    Ok(p)
}

fn initial_state(
    config: &ExperimentConfig,
    default: InitialState,
    backend: Backend,
    params: &DeviceParameters,
) -> Result<DensityMatrix, CliError> {
    let levels = if matches!(backend, Backend::Coherent | Backend::Lindblad) { params.levels() } else { 3 };
    Ok(match config.initial.unwrap_or(default) {
        InitialState::Ground => DensityMatrix::basis(levels, 0)?,
        InitialState::Thermal => thermal_state(params.thermal_p1, levels)?,
    })
}

fn rb_backend(config: &ExperimentConfig, backend: Backend, params: &DeviceParameters) -> Result<Box<dyn RbBackend>, CliError> {
    Ok(match backend {
        Backend::Ideal => Box::new(IdealBackend),
        Backend::SyntheticDepolarizing => {
            let p = config.p.ok_or_else(|| CliError::Validation("synthetic-depolarizing needs --p".into()))?;
            Box::new(DepolarizingBackend { p })
        }
        Backend::Coherent => Box::new(DeviceBackend::coherent(params.clone())),
        Backend::Lindblad => Box::new(DeviceBackend::lindblad(params.clone())),
    })
}

#[derive(Serialize)]
struct DecompositionRecord {
    source: String,
    rotation_count: usize,
    reconstruction_error: f64,
    #[serde(flatten)]
    decomposition: GateDecomposition,
}

/// Matrix file format: rows of `[re, im]` pairs.
fn read_matrix(path: &Path) -> Result<CMatrix, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let rows: Vec<Vec<[f64; 2]>> =
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(CliError::Validation(format!("{}: matrix must be square", path.display())));
    }
    Ok(CMatrix::from_fn(n, n, |r, c| qudit_core::algebra::c64(rows[r][c][0], rows[r][c][1])))
}

pub fn decompose_cmd(
    config: &ExperimentConfig,
    matrix: Option<&Path>,
    random: Option<usize>,
) -> Result<(), CliError> {
    let config = require(config, Experiment::Decompose)?;
    let mut inputs: Vec<(String, CMatrix)> = Vec::new();
    if let Some(g) = &config.gate {
        let idx = parse_gate(g).map_err(CliError::Validation)?;
        inputs.push((g.clone(), clifford_group().element(idx)?.matrix.clone()));
    }
    if let Some(path) = matrix {
        inputs.push((path.display().to_string(), read_matrix(path)?));
    }
    if let Some(n) = random {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed());
        inputs.extend((0..n).map(|k| (format!("haar-{k}"), haar_unitary(3, &mut rng))));
    }
    if inputs.is_empty() {
        return Err(CliError::Validation("nothing to decompose; give --gate, --matrix or --random".into()));
    }
    let records = inputs
        .into_iter()
        .map(|(source, u)| {
            let d = decompose(&u)?;
            Ok(DecompositionRecord {
                source,
                rotation_count: d.rotations.len(),
                reconstruction_error: phase_insensitive_distance(&d.reconstruct(), &u),
                decomposition: d,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mean = records.iter().map(|r| r.rotation_count as f64).sum::<f64>() / records.len() as f64;
    let worst = records.iter().map(|r| r.reconstruction_error).fold(0.0, f64::max);
    println!("decomposed {} unitaries: mean rotations {mean:.4}, worst error {worst:.2e}", records.len());
    let mut out = Output::create(&config.output_dir())?;
    out.json("decompositions.json", &records)?;
    out.finish("decompose", &config)
}

pub fn clifford_table_cmd(config: &ExperimentConfig) -> Result<(), CliError> {
    let config = require(config, Experiment::CliffordTable)?;
    let group = clifford_group();
    let records = group.to_records();
    println!("{} Clifford elements, mean rotation count {:.4}", records.len(), group.mean_rotation_count());
    let mut out = Output::create(&config.output_dir())?;
    out.json("clifford_table.json", &records)?;
    out.finish("clifford-table", &config)
}

#[derive(Serialize)]
struct RbFitSummary {
    decay: DecayFit,
    leakage: Option<LeakageFit>,
}

fn rb_summary(data: &RbData, constrained: bool) -> Result<RbFitSummary, CliError> {
    let decay = fit_depolarizing(data, constrained)?;
    let leakage = if data.records.iter().any(|r| r.p_leak > 0.0) { fit_leakage(data, decay.p).ok() } else { None };
    println!(
        "p = {:.6} ± {:.2e}, average fidelity = {:.4} ± {:.4} %",
        decay.p,
        decay.p_err,
        100.0 * decay.fidelity,
        100.0 * decay.fidelity_err
    );
    if let Some(l) = &leakage {
        println!("leakage L1 = {:.2e} ± {:.1e}, leakage-corrected fidelity = {:.4} %", l.l1, l.l1_err, 100.0 * l.fidelity);
    }
    Ok(RbFitSummary { decay, leakage })
}

pub fn rb_cmd(config: &ExperimentConfig) -> Result<(), CliError> {
    let config = require(config, Experiment::Rb)?;
    let backend = config.backend(Backend::Ideal);
    let params = device(&config, backend)?;
    let full = config.full_scale.unwrap_or(false);
    let lengths = config.lengths.clone().unwrap_or_else(|| if full { FULL_LENGTHS.to_vec() } else { DESK_LENGTHS.to_vec() });
    let randomizations = config.randomizations.unwrap_or(if full { FULL_RANDOMIZATIONS } else { DESK_RANDOMIZATIONS });
    let readout = match config.readout.unwrap_or(ReadoutKind::Direct) {
        ReadoutKind::Direct => Readout::Direct,
        ReadoutKind::Voltage => {
            let sigma = config.shot_sigma.unwrap_or(0.0);
            let repetitions = config.n_rep.map(|n| n as usize).unwrap_or(DEFAULT_REPETITIONS);
            Readout::Voltage {
                model: params.readout,
                noise: (sigma > 0.0).then_some(ShotNoise { sigma, repetitions }),
            }
        }
    };
    let device_default = if matches!(backend, Backend::Coherent | Backend::Lindblad) {
        InitialState::Thermal
    } else {
        InitialState::Ground
    };
    let rb = RbConfig {
        lengths,
        randomizations,
        seed: config.seed(),
        initial: initial_state(&config, device_default, backend, &params)?,
        readout,
    };
    rb.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    let engine = rb_backend(&config, backend, &params)?;
    let data = run_rb(&rb, engine.as_ref())?;
    let summary = rb_summary(&data, config.constrained.unwrap_or(false))?;
    let mut out = Output::create(&config.output_dir())?;
    out.csv("rb.csv", &data.records)?;
    out.json("rb_fit.json", &summary)?;
    out.finish("rb", &config)
}

pub fn rb_fit_cmd(config: &ExperimentConfig, input: &Path) -> Result<(), CliError> {
    let config = require(config, Experiment::RbFit)?;
    let mut reader = csv::Reader::from_path(input).map_err(|e| CliError::Validation(format!("{}: {e}", input.display())))?;
    let records = reader
        .deserialize::<RbRecord>()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Validation(format!("{}: {e}", input.display())))?;
    let summary = rb_summary(&RbData { records }, config.constrained.unwrap_or(false))?;
    let mut out = Output::create(&config.output_dir())?;
    out.json("rb_fit.json", &summary)?;
    out.finish("rb-fit", &config)
}

#[derive(Serialize)]
struct QptSummary {
    gate: String,
    backend: Backend,
    process_fidelity: f64,
    average_gate_fidelity: f64,
    trace_preservation_error: f64,
    min_eigenvalue: f64,
}

pub fn qpt_cmd(config: &ExperimentConfig) -> Result<(), CliError> {
    let config = require(config, Experiment::Qpt)?;
    let backend = config.backend(Backend::Ideal);
    let name = config.gate.clone().unwrap_or_else(|| "H3".into());
    let idx = parse_gate(&name).map_err(CliError::Validation)?;
    let target = clifford_group().element(idx)?.matrix.clone();
    let chi = match backend {
        Backend::Ideal => process_tomography(3, |rho| Ok(&target * rho * target.adjoint()))?,
        Backend::Coherent | Backend::Lindblad => {
            let params = device(&config, backend)?;
            let lindblad = LindbladOperatorSet::from_params(&params);
            let tomo = DeviceTomography {
                params: &params,
                lindblad: (backend == Backend::Lindblad).then_some(&lindblad),
                options: SolverOptions::default(),
                readout: (config.readout == Some(ReadoutKind::Voltage)).then_some(params.readout),
            };
            tomo.run(&decompose(&target)?)?.chi
        }
        Backend::SyntheticDepolarizing => unreachable!("rejected by validation"),
    };
    let summary = qpt_summary(&chi, &target, name, backend)?;
    println!(
        "{}: process fidelity {:.4} %, average gate fidelity {:.4} %",
        summary.gate,
        100.0 * summary.process_fidelity,
        100.0 * summary.average_gate_fidelity
    );
    let mut out = Output::create(&config.output_dir())?;
    out.json("chi.json", &chi.to_json()?)?;
    out.json("qpt_summary.json", &summary)?;
    out.finish("qpt", &config)
}

fn qpt_summary(chi: &ProcessMatrix, target: &CMatrix, gate: String, backend: Backend) -> Result<QptSummary, CliError> {
    Ok(QptSummary {
        gate,
        backend,
        process_fidelity: chi.process_fidelity(target)?,
        average_gate_fidelity: chi.average_gate_fidelity(target)?,
        trace_preservation_error: chi.trace_preservation_error()?,
        min_eigenvalue: chi.min_eigenvalue(),
    })
}

#[derive(Serialize)]
struct RepetitionRow {
    n: usize,
    p0: f64,
    p1: f64,
    p2: f64,
}

pub fn repeat_cmd(config: &ExperimentConfig) -> Result<(), CliError> {
    let config = require(config, Experiment::Repeat)?;
    let backend = config.backend(Backend::Ideal);
    let name = config.gate.clone().ok_or_else(|| CliError::Validation("repeat needs --gate".into()))?;
    let gate = parse_gate(&name).map_err(CliError::Validation)?;
    let params = device(&config, backend)?;
    // The residual excited population is what makes the H3 period 4 rather than 2.
    let initial = initial_state(&config, InitialState::Thermal, backend, &params)?;
    let engine = rb_backend(&config, backend, &params)?;
    let curve = gate_repetition(gate, config.n_max.unwrap_or(12), &initial, engine.as_ref())?;
    match periodicity(&curve, 1e-9) {
        Some(t) => println!("{name}: population period {t}"),
        None => println!("{name}: no exact period within {} repetitions", curve.len() - 1),
    }
    let mut out = Output::create(&config.output_dir())?;
    out.csv(
        "repeat.csv",
        curve.iter().enumerate().map(|(n, p)| RepetitionRow { n, p0: p[0], p1: p[1], p2: p[2] }),
    )?;
    out.finish("repeat", &config)
}

pub fn heff_sweep_cmd(config: &ExperimentConfig) -> Result<(), CliError> {
    let config = require(config, Experiment::HeffSweep)?;
    let backend = config.backend(Backend::Coherent);
    let transition = Transition::parse(config.transition.as_deref().unwrap_or("01"))?;
    let multipliers = config.multipliers.clone().unwrap_or_else(|| DEFAULT_MULTIPLIERS.to_vec());
    let params = device(&config, backend)?.without_decoherence();
    let opts = SolverOptions::default();
    let sweep = level_shift_sweep(&params, transition, &multipliers, &opts)?;
    println!(
        "transition {}: quadratic fit R^2 = {:.5}, rotation error exponent {:.3}",
        transition.key(),
        sweep.r_squared,
        sweep.error_exponent
    );
    let mut out = Output::create(&config.output_dir())?;
    out.csv("heff_sweep.csv", &sweep.points)?;
    out.json("heff_sweep.json", &sweep)?;
    if let Some(g) = &config.gate {
        let idx = parse_gate(g).map_err(CliError::Validation)?;
        let report = analyze_clifford(&params, clifford_group(), idx, &opts)?;
        println!("{g}: fidelity {:.6}, first-order estimate {:.6}", report.fidelity, 1.0 - report.r1);
        out.json("gate_report.json", &report)?;
    }
    out.finish("heff-sweep", &config)
}

#[derive(Serialize)]
struct CalibrationOutput<'a> {
    report: &'a CalibrationReport,
    device_file: PathBuf,
}

pub fn calibrate_cmd(config: &ExperimentConfig) -> Result<(), CliError> {
    let config = require(config, Experiment::Calibrate)?;
    let backend = config.backend(Backend::Coherent);
    let params = config.device().map_err(CliError::Validation)?;
    let cal = DeviceCalibrationBackend {
        lindblad: (backend == Backend::Lindblad).then(|| LindbladOperatorSet::from_params(&params)),
        options: SolverOptions::default(),
    };
    let (calibrated, report) = calibrate_device(&params, &cal, CALIBRATION_DEPTH)?;
    for t in Transition::ALL {
        let c = calibrated.control(t);
        println!(
            "{}: transfer {:.6e}, pi/2 amplitude {:.6e} V, phase correction {:.5} rad",
            t.key(),
            c.transfer,
            c.pi2_amplitude,
            c.phase_correction
        );
    }
    let mut out = Output::create(&config.output_dir())?;
    let device_file = out.json("device_calibrated.json", &calibrated.to_config())?;
    out.json("calibration_report.json", &CalibrationOutput { report: &report, device_file })?;
    out.finish("calibrate", &config)
}

/// Report every violation; `Ok(false)` when any were found.
pub fn validate_cmd(config: &ExperimentConfig) -> bool {
    let v = config.violations();
    for line in &v {
        println!("violation: {line}");
    }
    if v.is_empty() {
        println!("config is valid");
    }
    v.is_empty()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gate_names() {
        let g = clifford_group();
        assert_eq!(parse_gate("H3").unwrap(), g.index_of(&named_gate("H").unwrap()).unwrap());
        assert_eq!(parse_gate("x").unwrap(), g.index_of(&named_gate("X").unwrap()).unwrap());
        assert_eq!(parse_gate("7").unwrap(), 7);
        assert!(parse_gate("216").is_err());
        assert!(parse_gate("Q3").is_err());
    }
}
