use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use qudit_core::device::DeviceParameters;

pub const DEVICE_ENV: &str = "QUDIT_DEVICE_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    Ideal,
    Coherent,
    Lindblad,
    SyntheticDepolarizing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ReadoutKind {
    Direct,
    Voltage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum InitialState {
    Ground,
    Thermal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Decompose,
    CliffordTable,
    Rb,
    RbFit,
    Qpt,
    Repeat,
    HeffSweep,
    Calibrate,
}

impl Experiment {
    fn allows(self, backend: Backend) -> bool {
        match self {
            Experiment::Rb => true,
            Experiment::Repeat | Experiment::Qpt => backend != Backend::SyntheticDepolarizing,
            Experiment::HeffSweep | Experiment::Calibrate => matches!(backend, Backend::Coherent | Backend::Lindblad),
            _ => true,
        }
    }
}

/// Experiment settings. Every key is also a command-line flag of the same
/// name; flags override values read from `--config`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExperimentConfig {
    /// Experiment kind, used by `validate`.
    #[arg(long, value_enum)]
    pub experiment: Option<Experiment>,
    /// Device description (JSON). Falls back to $QUDIT_DEVICE_CONFIG, then the bundled device.
    #[arg(long)]
    pub device_config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub backend: Option<Backend>,
    /// Depolarizing parameter of the synthetic backend.
    #[arg(long)]
    pub p: Option<f64>,
    /// Comma-separated sequence lengths.
    #[arg(long, value_delimiter = ',')]
    pub lengths: Option<Vec<usize>>,
    #[arg(long)]
    pub randomizations: Option<usize>,
    /// Use the full experiment scale (lengths to 987, 25 randomizations).
    #[arg(long)]
    pub full_scale: Option<bool>,
    /// Measurement repetitions averaged per sequence.
    #[arg(long, allow_negative_numbers = true)]
    pub n_rep: Option<i64>,
    /// Single-shot voltage noise, volts. Zero disables shot noise.
    #[arg(long)]
    pub shot_sigma: Option<f64>,
    #[arg(long, value_enum)]
    pub readout: Option<ReadoutKind>,
    #[arg(long, value_enum)]
    pub initial: Option<InitialState>,
    /// Fix the final populations of the RB fit at 1/3.
    #[arg(long)]
    pub constrained: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Calibrate transfer, amplitude and phase before device experiments.
    #[arg(long)]
    pub calibrate: Option<bool>,
    /// Gate name (H3, X3, S3, Z3, I) or Clifford index.
    #[arg(long)]
    pub gate: Option<String>,
    /// Largest repetition count.
    #[arg(short = 'N', long)]
    pub n_max: Option<usize>,
    /// Transition for drive sweeps: 01 or 12.
    #[arg(long)]
    pub transition: Option<String>,
    /// Comma-separated drive multipliers.
    #[arg(long, value_delimiter = ',')]
    pub multipliers: Option<Vec<f64>>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    pub threads: Option<usize>,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($f:ident),*) => {
        $( if $top.$f.is_some() { $base.$f = $top.$f.clone(); } )*
    };
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn merged(mut self, flags: &ExperimentConfig) -> Self {
        overlay!(self, flags; experiment, device_config, backend, p, lengths, randomizations, full_scale,
            n_rep, shot_sigma, readout, initial, constrained, seed, output_dir, calibrate, gate, n_max, transition,
            multipliers, threads);
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn backend(&self, default: Backend) -> Backend {
        self.backend.unwrap_or(default)
    }

    pub fn device_path(&self) -> Option<PathBuf> {
        self.device_config
            .clone()
            .or_else(|| std::env::var_os(DEVICE_ENV).map(PathBuf::from))
    }

    pub fn device(&self) -> Result<DeviceParameters, String> {
        match self.device_path() {
            Some(path) => DeviceParameters::load(&path).map_err(|e| format!("{}: {e}", path.display())),
            None => Ok(DeviceParameters::default()),
        }
    }

    /// Every schema or range violation, without running anything.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(path) = self.device_path() {
            if !path.exists() {
                out.push(format!("device config not found: {}", path.display()));
            } else if let Err(e) = DeviceParameters::load(&path) {
                out.push(format!("device config {} is invalid: {e}", path.display()));
            }
        }
        if let Some(n) = self.n_rep {
            if n <= 0 {
                out.push(format!("n-rep must be positive, got {n}"));
            }
        }
        if let Some(p) = self.p {
            if !(0.0..=1.0).contains(&p) {
                out.push(format!("p must lie in [0, 1], got {p}"));
            }
        }
        if let Some(s) = self.shot_sigma {
            if !(s >= 0.0 && s.is_finite()) {
                out.push(format!("shot-sigma must be non-negative, got {s}"));
            }
        }
        if let Some(ls) = &self.lengths {
            if ls.is_empty() || ls[0] < 2 {
                out.push("lengths must start at 2 or more".into());
            }
            if ls.windows(2).any(|w| w[1] <= w[0]) {
                out.push("lengths must be strictly increasing".into());
            }
        }
        if self.randomizations == Some(0) {
            out.push("randomizations must be at least 1".into());
        }
        if self.threads == Some(0) {
            out.push("threads must be at least 1".into());
        }
        if let Some(t) = &self.transition {
            if qudit_core::device::Transition::parse(t).is_err() {
                out.push(format!("unknown transition {t:?}; expected 01 or 12"));
            }
        }
        if let Some(ms) = &self.multipliers {
            if ms.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
                out.push("multipliers must be positive".into());
            }
        }
        if let Some(g) = &self.gate {
            if crate::commands::parse_gate(g).is_err() {
                out.push(format!("unknown gate {g:?}"));
            }
        }
        if let (Some(exp), Some(backend)) = (self.experiment, self.backend) {
            if !exp.allows(backend) {
                out.push(format!("backend {backend:?} cannot run experiment {exp:?}"));
            }
        }
        out
    }
}
