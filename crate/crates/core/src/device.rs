//! The multi-level transmon model: static spectrum, drive couplings, pulse
//! envelopes and the compilation of Givens rotations into pulse programs.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::algebra::{c64, CMatrix};
use crate::clifford::{compile_sequence, CliffordGroup, PhaseFrame};
use crate::error::{Error, Result};
use crate::metrology::ReadoutModel;
use crate::synthesis::GivensRotation;

const DEFAULT_CONFIG: &str = include_str!("../data/device.json");

/// The two driven transitions of the qutrit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Transition {
    #[serde(rename = "01")]
    Lower,
    #[serde(rename = "12")]
    Upper,
}

impl Transition {
    pub const ALL: [Transition; 2] = [Transition::Lower, Transition::Upper];

    pub fn levels(self) -> (usize, usize) {
        match self {
            Transition::Lower => (0, 1),
            Transition::Upper => (1, 2),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn key(self) -> &'static str {
        match self {
            Transition::Lower => "01",
            Transition::Upper => "12",
        }
    }

    pub fn from_levels(m: usize, n: usize) -> Option<Self> {
        match (m.min(n), m.max(n)) {
            (0, 1) => Some(Transition::Lower),
            (1, 2) => Some(Transition::Upper),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "01" => Ok(Transition::Lower),
            "12" => Ok(Transition::Upper),
            _ => Err(Error::Config(format!("unknown transition '{s}'"))),
        }
    }
}

/// Drive matrix element between levels `i < j`, in rad/(s V).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coupling {
    pub i: usize,
    pub j: usize,
    pub g: Complex64,
}

/// Incoherent transfer `from -> to` at `rate` (1/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxationRate {
    pub from: usize,
    pub to: usize,
    pub rate: f64,
}

/// Pure dephasing between levels `m` and `n` at `rate` (1/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DephasingRate {
    pub m: usize,
    pub n: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EnvelopeShape {
    /// Half-cosine ramps of length `rise` on both sides of a flat top.
    CosineRiseFall { rise: f64, total: f64 },
    /// `(1 - cos(2 pi t / T)) / 2` with quadrature `drag * dI/dt`.
    DragCosine { total: f64, drag: f64 },
}

impl EnvelopeShape {
    pub fn duration(&self) -> f64 {
        match *self {
            EnvelopeShape::CosineRiseFall { total, .. } | EnvelopeShape::DragCosine { total, .. } => total,
        }
    }

    /// Integral of the unit-amplitude in-phase envelope.
    pub fn area(&self) -> f64 {
        match *self {
            EnvelopeShape::CosineRiseFall { rise, total } => total - rise,
            EnvelopeShape::DragCosine { total, .. } => total / 2.0,
        }
    }

    /// Unit-amplitude `(I, Q)` at time `t` into the pulse. Callers guarantee
    /// `0 <= t <= duration`.
    pub fn unit_value(&self, t: f64) -> (f64, f64) {
        match *self {
            EnvelopeShape::CosineRiseFall { rise, total } => {
                let i = if t < rise {
                    0.5 * (1.0 - (PI * t / rise).cos())
                } else if t > total - rise {
                    0.5 * (1.0 - (PI * (total - t) / rise).cos())
                } else {
                    1.0
                };
                (i, 0.0)
            }
            EnvelopeShape::DragCosine { total, drag } => {
                let x = TAU * t / total;
                let i = 0.5 * (1.0 - x.cos());
                let di = 0.5 * TAU / total * x.sin();
                (i, drag * di)
            }
        }
    }
}

/// Per-transition control settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionControl {
    pub shape: EnvelopeShape,
    /// Waveform volts to device-pad volts.
    pub transfer: f64,
    /// Waveform amplitude of a `pi/2` rotation, volts.
    pub pi2_amplitude: f64,
    /// IQ skew pre-compensated at compile time, radians.
    pub phase_correction: f64,
    /// IQ skew of the simulated hardware mixer, radians.
    pub iq_skew: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceParameters {
    /// Level energies `omega_0j` in rad/s, with `omega[0] = 0`.
    pub omega: Vec<f64>,
    pub couplings: Vec<Coupling>,
    pub relaxation: Vec<RelaxationRate>,
    pub dephasing: Vec<DephasingRate>,
    pub controls: [TransitionControl; 2],
    pub readout: ReadoutModel,
    pub thermal_p1: f64,
}

impl DeviceParameters {
    pub fn levels(&self) -> usize {
        self.omega.len()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: DeviceConfig = serde_json::from_str(text)?;
        Self::from_config(&cfg)
    }

    pub fn from_config(cfg: &DeviceConfig) -> Result<Self> {
        cfg.to_parameters()
    }

    pub fn to_config(&self) -> DeviceConfig {
        DeviceConfig::from_parameters(self)
    }

    pub fn control(&self, t: Transition) -> &TransitionControl {
        &self.controls[t.index()]
    }

    pub fn control_mut(&mut self, t: Transition) -> &mut TransitionControl {
        &mut self.controls[t.index()]
    }

    /// `g_{mn}` with `g_{nm} = g_{mn}^*`; zero for unlisted pairs.
    pub fn coupling(&self, m: usize, n: usize) -> Complex64 {
        for c in &self.couplings {
            if c.i == m && c.j == n {
                return c.g;
            }
            if c.i == n && c.j == m {
                return c.g.conj();
            }
        }
        c64(0.0, 0.0)
    }

    /// `omega_n - omega_m` in rad/s.
    pub fn transition_frequency(&self, m: usize, n: usize) -> f64 {
        self.omega[n] - self.omega[m]
    }

    /// `omega_23 - omega_12` in rad/s, or `None` below four levels.
    pub fn upper_anharmonicity(&self) -> Option<f64> {
        (self.levels() >= 4).then(|| self.transition_frequency(2, 3) - self.transition_frequency(1, 2))
    }

    /// First-order DRAG weight `-1/Delta` in seconds.
    pub fn default_drag(&self) -> f64 {
        match self.upper_anharmonicity() {
            Some(delta) if delta != 0.0 => -1.0 / delta,
            _ => 0.0,
        }
    }

    /// Transfer coefficient for which the rotating-wave two-level model
    /// gives exactly `pi/2` at the nominal amplitude.
    pub fn nominal_transfer(&self, t: Transition) -> f64 {
        let (m, n) = t.levels();
        let ctl = self.control(t);
        (PI / 2.0) / (self.coupling(m, n).norm() * ctl.shape.area() * ctl.pi2_amplitude)
    }

    /// `sum_j omega_0j |j><j|` in rad/s.
    pub fn static_hamiltonian(&self) -> CMatrix {
        let d = self.levels();
        let mut h = CMatrix::zeros(d, d);
        for (j, &w) in self.omega.iter().enumerate() {
            h[(j, j)] = c64(w, 0.0);
        }
        h
    }

    /// `v (sum g_ij |i><j| + h.c.)` in rad/s for pad voltage `v`.
    pub fn drive_hamiltonian(&self, v_pad: f64) -> CMatrix {
        let d = self.levels();
        let mut h = CMatrix::zeros(d, d);
        for c in &self.couplings {
            h[(c.i, c.j)] += c.g * v_pad;
            h[(c.j, c.i)] += c.g.conj() * v_pad;
        }
        h
    }

    fn validate(&self) -> Result<()> {
        let d = self.levels();
        if d < 3 {
            return Err(Error::Config(format!("need at least 3 levels, got {d}")));
        }
        if self.omega[0] != 0.0 {
            return Err(Error::Config("omega_00 must be zero".into()));
        }
        for c in &self.couplings {
            if c.i >= c.j || c.j >= d {
                return Err(Error::Config(format!("invalid coupling pair ({},{})", c.i, c.j)));
            }
        }
        for t in Transition::ALL {
            let (m, n) = t.levels();
            if self.coupling(m, n).norm() == 0.0 {
                return Err(Error::Config(format!("transition {} has no drive coupling", t.key())));
            }
            let ctl = self.control(t);
            if !(ctl.transfer > 0.0 && ctl.transfer.is_finite()) {
                return Err(Error::Config(format!("transfer coefficient {} must be positive", t.key())));
            }
            if !(ctl.pi2_amplitude > 0.0) {
                return Err(Error::Config(format!("pi/2 amplitude {} must be positive", t.key())));
            }
            let dur = ctl.shape.duration();
            if let EnvelopeShape::CosineRiseFall { rise, total } = ctl.shape {
                if !(rise > 0.0 && 2.0 * rise <= total) {
                    return Err(Error::Config(format!("ramps do not fit pulse {}", t.key())));
                }
            }
            if !(dur > 0.0) {
                return Err(Error::Config(format!("pulse {} must have positive duration", t.key())));
            }
        }
        for r in &self.relaxation {
            if r.from >= d || r.to >= d || r.from == r.to || r.rate < 0.0 {
                return Err(Error::Config(format!("invalid relaxation {}->{}", r.from, r.to)));
            }
        }
        for r in &self.dephasing {
            if r.m >= d || r.n >= d || r.m == r.n || r.rate < 0.0 {
                return Err(Error::Config(format!("invalid dephasing {}{}", r.m, r.n)));
            }
        }
        if !(0.0..=0.5).contains(&self.thermal_p1) {
            return Err(Error::Config("thermal_p1 must lie in [0, 0.5]".into()));
        }
        Ok(())
    }

    /// A copy with all decoherence rates removed.
    pub fn without_decoherence(&self) -> Self {
        Self { relaxation: Vec::new(), dephasing: Vec::new(), ..self.clone() }
    }
}

impl Default for DeviceParameters {
    fn default() -> Self {
        Self::from_json(DEFAULT_CONFIG).expect("bundled device configuration is valid")
    }
}

/// On-disk device description. Frequencies are in Hz and couplings in Hz/V,
/// both without the factor `2 pi`; rates are in 1/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub levels: usize,
    pub omega: BTreeMap<String, f64>,
    pub g: BTreeMap<String, [f64; 2]>,
    #[serde(default)]
    pub gamma1: BTreeMap<String, f64>,
    #[serde(default)]
    pub gamma2: BTreeMap<String, f64>,
    pub pulses: BTreeMap<String, PulseConfig>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub transfer: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub pi2_amplitude_v: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub phase_correction: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub iq_skew: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readout: Option<ReadoutModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thermal_p1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum PulseConfig {
    #[serde(rename = "cos")]
    Cosine { t_rise_ns: f64, total_ns: f64 },
    #[serde(rename = "drag_cos")]
    DragCosine {
        total_ns: f64,
        /// DRAG weight in seconds; `null` selects the first-order default.
        #[serde(default)]
        drag_coeff: Option<f64>,
    },
}

fn parse_pair(key: &str) -> Result<(usize, usize)> {
    let digits: Vec<usize> = key.chars().map(|c| c.to_digit(10).map(|d| d as usize)).collect::<Option<_>>().ok_or_else(|| Error::Config(format!("bad level pair '{key}'")))?;
    match digits.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(Error::Config(format!("bad level pair '{key}'"))),
    }
}

impl DeviceConfig {
    pub fn default_config() -> Self {
        serde_json::from_str(DEFAULT_CONFIG).expect("bundled device configuration parses")
    }

    fn to_parameters(&self) -> Result<DeviceParameters> {
        let d = self.levels;
        if !(3..=crate::algebra::MAX_DIM).contains(&d) {
            return Err(Error::Config(format!("levels must be in 3..=16, got {d}")));
        }
        let mut omega = vec![0.0; d];
        for (key, &f) in &self.omega {
            let (a, b) = parse_pair(key)?;
            if a != 0 || b == 0 || b >= d {
                return Err(Error::Config(format!("omega key '{key}' must be 0j with 0 < j < {d}")));
            }
            omega[b] = TAU * f;
        }
        let mut couplings = Vec::new();
        for (key, g) in &self.g {
            let (i, j) = parse_pair(key)?;
            if i >= j || j >= d {
                return Err(Error::Config(format!("coupling key '{key}' must be ij with i < j < {d}")));
            }
            couplings.push(Coupling { i, j, g: c64(g[0], g[1]) * TAU });
        }
        let relaxation = self
            .gamma1
            .iter()
            .map(|(key, &rate)| parse_pair(key).map(|(from, to)| RelaxationRate { from, to, rate }))
            .collect::<Result<Vec<_>>>()?;
        let dephasing = self
            .gamma2
            .iter()
            .map(|(key, &rate)| parse_pair(key).map(|(m, n)| DephasingRate { m, n, rate }))
            .collect::<Result<Vec<_>>>()?;

        let lookup = |map: &BTreeMap<String, f64>, t: Transition| map.get(t.key()).copied();
        for map in [&self.transfer, &self.pi2_amplitude_v, &self.phase_correction, &self.iq_skew] {
            for key in map.keys() {
                Transition::parse(key)?;
            }
        }
        let mut params = DeviceParameters {
            omega,
            couplings,
            relaxation,
            dephasing,
            controls: [placeholder_control(); 2],
            readout: self.readout.unwrap_or_default(),
            thermal_p1: self.thermal_p1.unwrap_or(0.0),
        };
        let drag_default = params.default_drag();
        for t in Transition::ALL {
            let pulse = self
                .pulses
                .get(t.key())
                .ok_or_else(|| Error::Config(format!("missing pulse definition for {}", t.key())))?;
            let shape = match *pulse {
                PulseConfig::Cosine { t_rise_ns, total_ns } => {
                    EnvelopeShape::CosineRiseFall { rise: t_rise_ns * 1e-9, total: total_ns * 1e-9 }
                }
                PulseConfig::DragCosine { total_ns, drag_coeff } => {
                    EnvelopeShape::DragCosine { total: total_ns * 1e-9, drag: drag_coeff.unwrap_or(drag_default) }
                }
            };
            let ctl = params.control_mut(t);
            ctl.shape = shape;
            ctl.pi2_amplitude = lookup(&self.pi2_amplitude_v, t).unwrap_or(0.1);
            ctl.phase_correction = lookup(&self.phase_correction, t).unwrap_or(0.0);
            ctl.iq_skew = lookup(&self.iq_skew, t).unwrap_or(0.0);
        }
        for key in self.pulses.keys() {
            Transition::parse(key)?;
        }
        for t in Transition::ALL {
            let nominal = if params.coupling(t.levels().0, t.levels().1).norm() > 0.0 {
                params.nominal_transfer(t)
            } else {
                f64::NAN
            };
            params.control_mut(t).transfer = lookup(&self.transfer, t).unwrap_or(nominal);
        }
        params.validate()?;
        Ok(params)
    }

    fn from_parameters(p: &DeviceParameters) -> Self {
        let hz = |w: f64| w / TAU;
        let omega = (1..p.levels()).map(|j| (format!("0{j}"), hz(p.omega[j]))).collect();
        let g = p.couplings.iter().map(|c| (format!("{}{}", c.i, c.j), [hz(c.g.re), hz(c.g.im)])).collect();
        let gamma1 = p.relaxation.iter().map(|r| (format!("{}{}", r.from, r.to), r.rate)).collect();
        let gamma2 = p.dephasing.iter().map(|r| (format!("{}{}", r.m, r.n), r.rate)).collect();
        let mut pulses = BTreeMap::new();
        let mut transfer = BTreeMap::new();
        let mut pi2 = BTreeMap::new();
        let mut correction = BTreeMap::new();
        let mut skew = BTreeMap::new();
        for t in Transition::ALL {
            let ctl = p.control(t);
            let pulse = match ctl.shape {
                EnvelopeShape::CosineRiseFall { rise, total } => {
                    PulseConfig::Cosine { t_rise_ns: rise * 1e9, total_ns: total * 1e9 }
                }
                EnvelopeShape::DragCosine { total, drag } => {
                    PulseConfig::DragCosine { total_ns: total * 1e9, drag_coeff: Some(drag) }
                }
            };
            pulses.insert(t.key().to_string(), pulse);
            transfer.insert(t.key().to_string(), ctl.transfer);
            pi2.insert(t.key().to_string(), ctl.pi2_amplitude);
            correction.insert(t.key().to_string(), ctl.phase_correction);
            skew.insert(t.key().to_string(), ctl.iq_skew);
        }
        DeviceConfig {
            levels: p.levels(),
            omega,
            g,
            gamma1,
            gamma2,
            pulses,
            transfer,
            pi2_amplitude_v: pi2,
            phase_correction: correction,
            iq_skew: skew,
            readout: Some(p.readout),
            thermal_p1: Some(p.thermal_p1),
        }
    }
}

fn placeholder_control() -> TransitionControl {
    TransitionControl {
        shape: EnvelopeShape::DragCosine { total: 1.0, drag: 0.0 },
        transfer: 1.0,
        pi2_amplitude: 1.0,
        phase_correction: 0.0,
        iq_skew: 0.0,
    }
}

/// One drive pulse on a single transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSegment {
    pub transition: Transition,
    /// Carrier angular frequency, rad/s.
    pub carrier: f64,
    /// Peak in-phase waveform amplitude, volts.
    pub amplitude: f64,
    /// Carrier phase relative to the global time origin, radians.
    pub phase: f64,
    pub shape: EnvelopeShape,
    /// Start time, seconds.
    pub start: f64,
    /// IQ skew pre-compensation baked into the waveform, radians.
    pub iq_correction: f64,
    /// The rotating-frame rotation this pulse is meant to implement.
    pub rotation: GivensRotation,
}

impl PulseSegment {
    pub fn duration(&self) -> f64 {
        self.shape.duration()
    }

    pub fn end(&self) -> f64 {
        self.start + self.duration()
    }

    /// In-phase and quadrature envelope (volts) at time `t` into the pulse.
    pub fn envelope_value(&self, t: f64) -> Result<(f64, f64)> {
        let dur = self.duration();
        let slack = 1e-12 * dur.max(1e-9);
        if !(t >= -slack && t <= dur + slack) {
            return Err(Error::OutOfRange(format!("t = {t:.3e} s outside pulse of length {dur:.3e} s")));
        }
        let (i, q) = self.shape.unit_value(t.clamp(0.0, dur));
        Ok((self.amplitude * i, self.amplitude * q))
    }

    /// Waveforms fed to the I and Q mixer ports at time `t` into the pulse,
    /// after applying the carrier phase and skew pre-compensation.
    pub fn mixer_inputs(&self, t: f64) -> (f64, f64) {
        let (i, q) = self.shape.unit_value(t);
        let (i, q) = (self.amplitude * i, self.amplitude * q);
        let (s, c) = self.phase.sin_cos();
        let iw = i * c + q * s;
        let qw = q * c - i * s;
        let (se, ce) = self.iq_correction.sin_cos();
        let qc = qw / ce;
        (iw - qc * se, qc)
    }
}

/// Back-to-back pulses plus the virtual phase left after the last one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseProgram {
    pub segments: Vec<PulseSegment>,
    pub duration: f64,
    pub frame: PhaseFrame,
}

impl PulseProgram {
    pub fn empty(duration: f64) -> Self {
        Self { segments: Vec::new(), duration, frame: PhaseFrame::new(3) }
    }

    /// Index of the segment active at absolute time `t`.
    pub fn active_segment(&self, t: f64) -> Option<usize> {
        let idx = self.segments.partition_point(|s| s.start <= t);
        if idx == 0 {
            return None;
        }
        let seg = &self.segments[idx - 1];
        (t <= seg.end()).then_some(idx - 1)
    }

    /// Software frame as a diagonal over `levels`, identity above the qutrit.
    pub fn frame_matrix(&self, levels: usize) -> CMatrix {
        let mut m = CMatrix::identity(levels, levels);
        for (j, &p) in self.frame.phases.iter().enumerate().take(levels) {
            m[(j, j)] = Complex64::from_polar(1.0, p);
        }
        m
    }
}

/// Pad voltage `c [I_w cos(w t) + Q_w sin(w t + skew)]` at absolute time `t`.
pub fn program_to_pad_voltage(program: &PulseProgram, params: &DeviceParameters, t: f64) -> f64 {
    match program.active_segment(t) {
        Some(idx) => segment_pad_voltage(&program.segments[idx], params, t),
        None => 0.0,
    }
}

pub(crate) fn segment_pad_voltage(seg: &PulseSegment, params: &DeviceParameters, t: f64) -> f64 {
    let ctl = params.control(seg.transition);
    let (iw, qw) = seg.mixer_inputs((t - seg.start).clamp(0.0, seg.duration()));
    let x = seg.carrier * t;
    ctl.transfer * (iw * x.cos() + qw * (x + ctl.iq_skew).sin())
}

/// Build the pulse for a rotation on the 01 or 12 transition starting at `start`.
pub fn rotation_segment(params: &DeviceParameters, rot: &GivensRotation, start: f64) -> Result<PulseSegment> {
    let transition = Transition::from_levels(rot.m, rot.n).ok_or_else(|| {
        Error::Validation(format!("no drive for rotation on levels ({},{})", rot.m, rot.n))
    })?;
    let (m, n) = transition.levels();
    // A rotation written on (n, m) is the same rotation on (m, n) with phi -> -phi.
    let phi = if rot.m == m { rot.phi } else { -rot.phi };
    let rot = GivensRotation { m, n, phi, theta: rot.theta }.normalized();
    let ctl = params.control(transition);
    let g = params.coupling(m, n);
    Ok(PulseSegment {
        transition,
        carrier: params.transition_frequency(m, n),
        amplitude: ctl.pi2_amplitude * (2.0 * rot.theta / PI),
        phase: -rot.phi - g.arg(),
        shape: ctl.shape,
        start,
        iq_correction: ctl.phase_correction,
        rotation: rot,
    })
}

/// Schedule rotations, given in time order, back to back.
pub fn compile_rotations(params: &DeviceParameters, rotations: &[GivensRotation], frame: PhaseFrame) -> Result<PulseProgram> {
    let mut segments = Vec::with_capacity(rotations.len());
    let mut t = 0.0;
    for rot in rotations {
        let seg = rotation_segment(params, rot, t)?;
        t = seg.end();
        segments.push(seg);
    }
    Ok(PulseProgram { segments, duration: t, frame })
}

/// Compile a sequence of Clifford indices (time order) into a pulse program.
pub fn compile_cliffords(params: &DeviceParameters, group: &CliffordGroup, gates: &[usize]) -> Result<PulseProgram> {
    let compiled = compile_sequence(group, gates)?;
    compile_rotations(params, &compiled.rotations, compiled.frame)
}
