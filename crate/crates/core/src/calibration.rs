//! Pulse calibration: transfer coefficients, rotation amplitudes and the
//! relative phase of orthogonal rotation axes.

use std::cell::RefCell;
use std::f64::consts::PI;

use num_complex::Complex64;
use roots::{find_root_brent, SimpleConvergency};
use serde::{Deserialize, Serialize};

use crate::algebra::{ket, CMatrix};
use crate::clifford::PhaseFrame;
use crate::device::{compile_rotations, rotation_segment, DeviceParameters, Transition};
use crate::dynamics::{propagate_operators, propagate_states, LindbladOperatorSet, SolverOptions};
use crate::error::{Error, Result};
use crate::synthesis::{givens_matrix, GivensRotation};

/// Runs a rotation sequence (time order) from a basis state and reports the
/// qutrit populations.
pub trait CalibrationBackend {
    fn populations(&self, params: &DeviceParameters, rotations: &[GivensRotation], initial: usize) -> Result<[f64; 3]>;
}

/// Rotating-wave two-level model of each pulse. `transfer_scale` multiplies
/// the configured transfer coefficients, which is how amplitude errors are
/// injected; the hardware IQ skew is taken from the parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdealCalibrationModel {
    pub transfer_scale: [f64; 2],
}

impl Default for IdealCalibrationModel {
    fn default() -> Self {
        Self { transfer_scale: [1.0; 2] }
    }
}

impl IdealCalibrationModel {
    pub fn with_scale(transition: Transition, scale: f64) -> Self {
        let mut m = Self::default();
        m.transfer_scale[transition.index()] = scale;
        m
    }

    /// The rotation the hardware performs for a requested rotation.
    pub fn effective_rotation(&self, params: &DeviceParameters, rot: &GivensRotation) -> Result<GivensRotation> {
        let seg = rotation_segment(params, rot, 0.0)?;
        let ctl = params.control(seg.transition);
        let (m, n) = seg.transition.levels();
        let g = params.coupling(m, n);
        // Unit in-phase envelope through the mixer, then the resonant
        // component of the carrier.
        let (s, c) = seg.phase.sin_cos();
        let (iw, qw) = (c, -s);
        let (se, ce) = seg.iq_correction.sin_cos();
        let qc = qw / ce;
        let ic = iw - qc * se;
        let z = Complex64::new(ic, 0.0) - Complex64::new(0.0, 1.0) * Complex64::from_polar(1.0, ctl.iq_skew) * qc;
        let theta = self.transfer_scale[seg.transition.index()] * ctl.transfer * g.norm() * z.norm() * seg.amplitude * seg.shape.area();
        let phi = -(g.arg() + z.arg());
        Ok(GivensRotation::new(m, n, theta, phi))
    }
}

impl CalibrationBackend for IdealCalibrationModel {
    fn populations(&self, params: &DeviceParameters, rotations: &[GivensRotation], initial: usize) -> Result<[f64; 3]> {
        let mut psi = ket(3, initial);
        for r in rotations {
            psi = givens_matrix(&self.effective_rotation(params, r)?, 3)? * psi;
        }
        Ok([0, 1, 2].map(|j| psi[j].norm_sqr()))
    }
}

/// Full pulse simulation, coherent or with decoherence.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceCalibrationBackend {
    pub lindblad: Option<LindbladOperatorSet>,
    pub options: SolverOptions,
}

impl DeviceCalibrationBackend {
    pub fn coherent() -> Self {
        Self { lindblad: None, options: SolverOptions::default() }
    }
}

impl CalibrationBackend for DeviceCalibrationBackend {
    fn populations(&self, params: &DeviceParameters, rotations: &[GivensRotation], initial: usize) -> Result<[f64; 3]> {
        let program = compile_rotations(params, rotations, PhaseFrame::new(3))?;
        let d = params.levels();
        match &self.lindblad {
            Some(l) if !l.is_empty() => {
                let rho0 = ket(d, initial) * ket(d, initial).adjoint();
                let out = propagate_operators(&program, params, l, &[rho0], &self.options)?;
                Ok([0, 1, 2].map(|j| out[0][(j, j)].re))
            }
            _ => {
                let psi = CMatrix::from_column_slice(d, 1, ket(d, initial).as_slice());
                let out = propagate_states(&program, params, &psi, &self.options)?;
                Ok([0, 1, 2].map(|j| out[(j, 0)].norm_sqr()))
            }
        }
    }
}

fn half_pi(t: Transition, phi: f64) -> GivensRotation {
    let (m, n) = t.levels();
    GivensRotation::new(m, n, PI / 2.0, phi)
}

/// Transfer coefficient for which a nominal `pi/2` pulse from the lower level
/// of `transition` leaves equal populations in both levels.
pub fn calibrate_transfer<B: CalibrationBackend + ?Sized>(
    params: &DeviceParameters,
    backend: &B,
    transition: Transition,
) -> Result<f64> {
    let (m, n) = transition.levels();
    let start = params.control(transition).transfer;
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let imbalance = |scale: f64| -> f64 {
        let mut trial = params.clone();
        trial.control_mut(transition).transfer = start * scale;
        match backend.populations(&trial, &[half_pi(transition, 0.0)], m) {
            Ok(p) => p[m] - p[n],
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        }
    };
    let brackets = [(0.7, 1.3), (0.4, 1.8)];
    let mut found = None;
    for (lo, hi) in brackets {
        let (flo, fhi) = (imbalance(lo), imbalance(hi));
        if let Some(e) = failure.borrow_mut().take() {
            return Err(e);
        }
        if flo * fhi <= 0.0 {
            found = Some((lo, hi));
            break;
        }
    }
    let (lo, hi) = found.ok_or_else(|| {
        Error::Calibration(format!("no sign change of the {} population imbalance near c = {start:.4e}", transition.key()))
    })?;
    let mut conv = SimpleConvergency { eps: 1e-12, max_iter: 200 };
    let scale = find_root_brent(lo, hi, imbalance, &mut conv)
        .map_err(|e| Error::Calibration(format!("transfer root search: {e:?}")))?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(start * scale)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeCalibration {
    /// Calibrated `pi/2` waveform amplitude, volts.
    pub amplitude: f64,
    /// `amplitude / previous - 1`.
    pub relative_correction: f64,
    /// Remaining over-rotation per `pi/2` pulse, radians.
    pub residual: f64,
    pub iterations: usize,
}

/// Over-rotation per pulse from `2m+1` repetitions of the `pi/2` rotation,
/// fitted as the slope of `asin((2 P_n - 1)(-1)^m)` against `2m+1`.
fn repetition_error<B: CalibrationBackend + ?Sized>(
    params: &DeviceParameters,
    backend: &B,
    transition: Transition,
    max_m: usize,
) -> Result<f64> {
    let (m_lvl, n_lvl) = transition.levels();
    let mut num = 0.0;
    let mut den = 0.0;
    let mut estimate: Option<f64> = None;
    for m in 0..=max_m {
        let reps = 2 * m + 1;
        if let Some(e) = estimate {
            if reps as f64 * e.abs() > 1.2 {
                break;
            }
        }
        let seq = vec![half_pi(transition, 0.0); reps];
        let p = backend.populations(params, &seq, m_lvl)?;
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        let y = ((2.0 * p[n_lvl] - 1.0) * sign).clamp(-1.0, 1.0);
        num += reps as f64 * y.asin();
        den += (reps * reps) as f64;
        estimate = Some(num / den);
    }
    Ok(num / den)
}

pub const AMPLITUDE_THRESHOLD: f64 = 1e-3;
const AMPLITUDE_TARGET: f64 = 1e-6;
const MAX_ITERATIONS: usize = 10;

/// Correct the `pi/2` amplitude so repeated rotations show no accumulating
/// over- or under-rotation.
pub fn calibrate_amplitude_repetition<B: CalibrationBackend + ?Sized>(
    params: &DeviceParameters,
    backend: &B,
    transition: Transition,
    max_m: usize,
) -> Result<AmplitudeCalibration> {
    let original = params.control(transition).pi2_amplitude;
    let mut work = params.clone();
    let mut err = repetition_error(&work, backend, transition, max_m)?;
    let mut iterations = 0;
    while err.abs() > AMPLITUDE_TARGET && iterations < MAX_ITERATIONS {
        let ctl = work.control_mut(transition);
        ctl.pi2_amplitude *= (PI / 2.0) / (PI / 2.0 + err);
        iterations += 1;
        err = repetition_error(&work, backend, transition, max_m)?;
    }
    if err.abs() > AMPLITUDE_THRESHOLD {
        return Err(Error::Calibration(format!(
            "amplitude of {} still off by {err:.3e} rad per pulse after {iterations} iterations",
            transition.key()
        )));
    }
    let amplitude = work.control(transition).pi2_amplitude;
    Ok(AmplitudeCalibration { amplitude, relative_correction: amplitude / original - 1.0, residual: err, iterations })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCalibration {
    /// Calibrated IQ pre-compensation, radians.
    pub phase_correction: f64,
    /// Axis error of the `pi/2`-phase rotation before and after, radians.
    pub initial_axis_error: f64,
    pub final_axis_error: f64,
    /// Largest deviation of the final signal from its ideal value over `m`.
    pub flatness: f64,
    pub iterations: usize,
}

/// `R0 ((R90)^2 (R0)^2)^m R90` in time order.
fn phase_sequence(transition: Transition, m: usize, axis_error: f64) -> Vec<GivensRotation> {
    let r0 = half_pi(transition, 0.0);
    let r90 = half_pi(transition, PI / 2.0 + axis_error);
    let mut seq = vec![r0];
    for _ in 0..m {
        seq.extend([r90, r90, r0, r0]);
    }
    seq.push(r90);
    seq
}

fn ideal_upper_population(transition: Transition, m: usize, axis_error: f64) -> f64 {
    let (lo, hi) = transition.levels();
    let mut psi = ket(3, lo);
    for r in phase_sequence(transition, m, axis_error) {
        psi = givens_matrix(&r, 3).expect("qutrit rotation") * psi;
    }
    psi[hi].norm_sqr()
}

/// Least-squares axis error of the measured signal against the exact model.
fn fit_axis_error(transition: Transition, measured: &[(usize, f64)]) -> f64 {
    let cost = |delta: f64| -> f64 {
        measured.iter().map(|&(m, p)| (p - ideal_upper_population(transition, m, delta)).powi(2)).sum()
    };
    let max_m = measured.iter().map(|x| x.0).max().unwrap_or(1).max(1) as f64;
    // The signal is periodic in the accumulated angle, so search within
    // the unambiguous window before refining.
    let half_width = (PI / (4.0 * max_m)).min(0.5);
    let grid = 400;
    let mut best = (0.0, f64::INFINITY);
    for k in 0..=grid {
        let d = -half_width + 2.0 * half_width * k as f64 / grid as f64;
        let c = cost(d);
        if c < best.1 {
            best = (d, c);
        }
    }
    golden_section(cost, best.0 - 2.0 * half_width / grid as f64, best.0 + 2.0 * half_width / grid as f64, 1e-12)
}

pub(crate) fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

fn measure_axis_error<B: CalibrationBackend + ?Sized>(
    params: &DeviceParameters,
    backend: &B,
    transition: Transition,
    max_m: usize,
) -> Result<(f64, Vec<(usize, f64)>)> {
    let (lo, hi) = transition.levels();
    let mut measured = Vec::with_capacity(max_m);
    for m in 1..=max_m {
        let p = backend.populations(params, &phase_sequence(transition, m, 0.0), lo)?;
        measured.push((m, p[hi]));
    }
    Ok((fit_axis_error(transition, &measured), measured))
}

const PHASE_TARGET: f64 = 1e-6;
pub const PHASE_THRESHOLD: f64 = 1e-3;

/// Calibrate the IQ pre-compensation so the `pi/2`-phase rotation axis is
/// orthogonal to the zero-phase axis.
pub fn calibrate_relative_phase<B: CalibrationBackend + ?Sized>(
    params: &DeviceParameters,
    backend: &B,
    transition: Transition,
    max_m: usize,
) -> Result<PhaseCalibration> {
    if max_m == 0 {
        return Err(Error::Validation("phase calibration needs max_m >= 1".into()));
    }
    let mut work = params.clone();
    let (mut delta, mut measured) = measure_axis_error(&work, backend, transition, max_m)?;
    let initial = delta;
    let mut iterations = 0;
    while delta.abs() > PHASE_TARGET && iterations < MAX_ITERATIONS {
        work.control_mut(transition).phase_correction -= delta;
        iterations += 1;
        (delta, measured) = measure_axis_error(&work, backend, transition, max_m)?;
    }
    if delta.abs() > PHASE_THRESHOLD {
        return Err(Error::Calibration(format!(
            "axis error on {} still {delta:.3e} rad after {iterations} iterations",
            transition.key()
        )));
    }
    let flatness = measured
        .iter()
        .map(|&(m, p)| (p - ideal_upper_population(transition, m, 0.0)).abs())
        .fold(0.0, f64::max);
    Ok(PhaseCalibration {
        phase_correction: work.control(transition).phase_correction,
        initial_axis_error: initial,
        final_axis_error: delta,
        flatness,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub transfer: [f64; 2],
    pub amplitude: [AmplitudeCalibration; 2],
    pub phase: [PhaseCalibration; 2],
}

/// Transfer, amplitude and phase calibration of both transitions, in that order.
pub fn calibrate_device<B: CalibrationBackend + ?Sized>(
    params: &DeviceParameters,
    backend: &B,
    max_m: usize,
) -> Result<(DeviceParameters, CalibrationReport)> {
    let mut p = params.clone();
    let mut transfer = [0.0; 2];
    for t in Transition::ALL {
        transfer[t.index()] = calibrate_transfer(&p, backend, t)?;
        p.control_mut(t).transfer = transfer[t.index()];
    }
    let mut amps = Vec::new();
    for t in Transition::ALL {
        let a = calibrate_amplitude_repetition(&p, backend, t, max_m)?;
        p.control_mut(t).pi2_amplitude = a.amplitude;
        amps.push(a);
    }
    let mut phases = Vec::new();
    for t in Transition::ALL {
        let ph = calibrate_relative_phase(&p, backend, t, max_m)?;
        p.control_mut(t).phase_correction = ph.phase_correction;
        phases.push(ph);
    }
    let report = CalibrationReport {
        transfer,
        amplitude: [amps[0], amps[1]],
        phase: [phases[0].clone(), phases[1].clone()],
    };
    Ok((p, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> DeviceParameters {
        DeviceParameters::default()
    }

    #[test]
    fn ideal_model_matches_givens_when_matched() {
        let p = params();
        let model = IdealCalibrationModel::default();
        let rot = GivensRotation::new(1, 2, 1.3, 0.7);
        let eff = model.effective_rotation(&p, &rot).unwrap();
        // The nominal transfer makes the two-level model exact.
        assert!((eff.theta - rot.theta).abs() < 1e-12);
        assert!((eff.normalized().phi - rot.phi).abs() < 1e-12);
    }

    #[test]
    fn transfer_recovers_hardware_value() {
        let p = params();
        let model = IdealCalibrationModel::with_scale(Transition::Lower, 1.08);
        let c = calibrate_transfer(&p, &model, Transition::Lower).unwrap();
        assert!((c / p.control(Transition::Lower).transfer - 1.0 / 1.08).abs() < 1e-9);
        assert!(c > 0.0 && c.is_finite());
    }

    #[test]
    fn amplitude_correction_for_two_percent_error() {
        let p = params();
        let model = IdealCalibrationModel::with_scale(Transition::Upper, 1.02);
        let cal = calibrate_amplitude_repetition(&p, &model, Transition::Upper, 5).unwrap();
        assert!((cal.relative_correction + 0.02).abs() < 1e-3, "{}", cal.relative_correction);
        assert!(cal.iterations <= 10);
        let perfect = calibrate_amplitude_repetition(&p, &IdealCalibrationModel::default(), Transition::Upper, 5).unwrap();
        assert!(perfect.relative_correction.abs() < 1e-12);
        assert_eq!(perfect.iterations, 0);
    }

    #[test]
    fn amplitude_converges_for_five_percent() {
        let p = params();
        for sign in [1.0, -1.0] {
            let model = IdealCalibrationModel::with_scale(Transition::Lower, 1.0 + 0.05 * sign);
            let cal = calibrate_amplitude_repetition(&p, &model, Transition::Lower, 5).unwrap();
            assert!(cal.iterations <= 10);
            assert!(cal.residual.abs() < AMPLITUDE_THRESHOLD);
        }
    }

    #[test]
    fn phase_recovers_injected_skew() {
        let mut p = params();
        p.control_mut(Transition::Lower).iq_skew = 0.05;
        let model = IdealCalibrationModel::default();
        let cal = calibrate_relative_phase(&p, &model, Transition::Lower, 5).unwrap();
        assert!((cal.initial_axis_error.abs() - 0.05).abs() < 5e-3, "{}", cal.initial_axis_error);
        assert!((cal.phase_correction - 0.05).abs() < 5e-3, "{}", cal.phase_correction);
        assert!(cal.flatness < 1e-4);
    }

    #[test]
    fn phase_of_perfect_axes_is_unchanged() {
        let p = params();
        let cal = calibrate_relative_phase(&p, &IdealCalibrationModel::default(), Transition::Upper, 4).unwrap();
        assert!(cal.phase_correction.abs() < 1e-9);
        assert_eq!(cal.iterations, 0);
        assert!(cal.flatness < 1e-9);
    }

    #[test]
    fn device_transfer_calibration() {
        let p = params();
        let backend = DeviceCalibrationBackend::coherent();
        let c = calibrate_transfer(&p, &backend, Transition::Lower).unwrap();
        let mut q = p.clone();
        q.control_mut(Transition::Lower).transfer = c;
        let pops = backend.populations(&q, &[half_pi(Transition::Lower, 0.0)], 0).unwrap();
        assert!((pops[0] - pops[1]).abs() < 1e-4);
        // Idempotent.
        let again = calibrate_transfer(&q, &backend, Transition::Lower).unwrap();
        assert!((again / c - 1.0).abs() < 1e-6);
        // Doubling the amplitude gives a pi pulse.
        let pi = backend.populations(&q, &[GivensRotation::new(0, 1, PI, 0.0)], 0).unwrap();
        assert!(pi[1] > 0.99);
    }
}
