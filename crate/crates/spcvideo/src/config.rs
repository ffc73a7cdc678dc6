//! Experiment configuration: a line-oriented `key = value` text format
//! with `[section]` headers and `#` comments. Unknown sections or keys are
//! rejected so typos fail loudly instead of silently using defaults.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::flow::FlowParams;
use crate::scene::{SceneKind, SceneSpec};
use crate::solver::SolverParams;

/// Sensing-side settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingConfig {
    pub n_l: usize,
    pub scale: usize,
    /// Cycles of the sensing matrix; 0 derives `ceil(duration / W)`.
    pub cycles: usize,
    /// Target measurement SNR in dB; `f64::INFINITY` means noiseless.
    pub noise_snr_db: f64,
    /// Explicit noise sigma; takes precedence over `noise_snr_db` when > 0.
    pub noise_sigma: f64,
    pub matrix_seed: u64,
    pub noise_seed: u64,
    /// Measurements per second; used for frame-period metadata and the
    /// window-selection rule.
    pub rate: f64,
    /// 0 renders one scene state per measurement; m > 0 holds each rendered
    /// frame for m measurements.
    pub hold: usize,
}

impl Default for SensingConfig {
    fn default() -> Self {
        Self {
            n_l: 64,
            scale: 2,
            cycles: 0,
            noise_snr_db: 60.0,
            noise_sigma: 0.0,
            matrix_seed: 1,
            noise_seed: 2,
            rate: 8192.0,
            hold: 0,
        }
    }
}

/// Everything one experiment needs: scene, sensing, plan, flow and solver
/// settings plus the output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scene: SceneSpec,
    pub sensing: SensingConfig,
    /// Measurement stride between recovered frames.
    pub stride: usize,
    pub flow: FlowParams,
    pub solver: SolverParams,
    /// Multiplies the `0.02 sqrt(P)` flow bound.
    pub eps2_scale: f64,
    /// Fixed per-frame measurement bound; negative means derive from sigma.
    pub eps1: f64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            sensing: SensingConfig::default(),
            stride: 1024,
            flow: FlowParams::default(),
            solver: SolverParams::default(),
            eps2_scale: 1.0,
            eps1: -1.0,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn window(&self) -> usize {
        self.sensing.n_l * self.sensing.n_l
    }

    pub fn cycles(&self) -> usize {
        if self.sensing.cycles > 0 {
            self.sensing.cycles
        } else {
            self.scene.duration_measurements.div_ceil(self.window())
        }
    }

    pub fn parse_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or(Error::Config {
                    line: line_no,
                    msg: "unterminated section header".into(),
                })?;
                section = name.trim().to_string();
                if !matches!(
                    section.as_str(),
                    "scene" | "sensing" | "plan" | "flow" | "solver" | "output"
                ) {
                    return Err(Error::Config {
                        line: line_no,
                        msg: format!("unknown section [{section}]"),
                    });
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(Error::Config {
                line: line_no,
                msg: format!("expected `key = value`, got '{line}'"),
            })?;
            let key = key.trim();
            let value = value.trim();
            cfg.apply(&section, key, value)
                .map_err(|msg| Error::Config { line: line_no, msg })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, section: &str, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
            value
                .parse::<T>()
                .map_err(|_| format!("invalid value '{value}' for {key}"))
        }
        match (section, key) {
            ("scene", "kind") => {
                self.scene.kind = SceneKind::parse(value).map_err(|e| e.to_string())?;
            }
            ("scene", "n") => self.scene.n = num(key, value)?,
            ("scene", "duration") => self.scene.duration_measurements = num(key, value)?,
            ("scene", "speed") => self.scene.speed = num(key, value)?,
            ("scene", "speed_window") => self.scene.speed_window = num(key, value)?,
            ("scene", "background_seed") => self.scene.background_seed = num(key, value)?,
            ("scene", "foreground_size") => self.scene.foreground_size = num(key, value)?,
            ("sensing", "n_l") => self.sensing.n_l = num(key, value)?,
            ("sensing", "scale") => self.sensing.scale = num(key, value)?,
            ("sensing", "cycles") => self.sensing.cycles = num(key, value)?,
            ("sensing", "noise_snr_db") => {
                self.sensing.noise_snr_db = if value == "inf" {
                    f64::INFINITY
                } else {
                    num(key, value)?
                };
            }
            ("sensing", "noise_sigma") => self.sensing.noise_sigma = num(key, value)?,
            ("sensing", "matrix_seed") => self.sensing.matrix_seed = num(key, value)?,
            ("sensing", "noise_seed") => self.sensing.noise_seed = num(key, value)?,
            ("sensing", "rate") => self.sensing.rate = num(key, value)?,
            ("sensing", "hold") => self.sensing.hold = num(key, value)?,
            ("plan", "dw") => self.stride = num(key, value)?,
            ("flow", "alpha") => self.flow.alpha = num(key, value)?,
            ("flow", "warps") => self.flow.warps = num(key, value)?,
            ("flow", "iterations") => self.flow.iterations = num(key, value)?,
            ("flow", "pyramid_min") => self.flow.pyramid_min = num(key, value)?,
            ("flow", "omega") => self.flow.omega = num(key, value)?,
            ("solver", "rho_meas") => self.solver.rho_meas = num(key, value)?,
            ("solver", "rho_flow") => self.solver.rho_flow = num(key, value)?,
            ("solver", "rho_tv") => self.solver.rho_tv = num(key, value)?,
            ("solver", "beta_t") => self.solver.beta_t = num(key, value)?,
            ("solver", "outer_iterations") => self.solver.outer_iterations = num(key, value)?,
            ("solver", "cg_iterations") => self.solver.cg_iterations = num(key, value)?,
            ("solver", "cg_tolerance") => self.solver.cg_tolerance = num(key, value)?,
            ("solver", "tolerance") => self.solver.tolerance = num(key, value)?,
            ("solver", "eps1") => {
                self.eps1 = if value == "auto" { -1.0 } else { num(key, value)? };
            }
            ("solver", "eps2_scale") => self.eps2_scale = num(key, value)?,
            ("output", "dir") => self.output_dir = PathBuf::from(value),
            _ => {
                return Err(if section.is_empty() {
                    format!("key '{key}' outside any section")
                } else {
                    format!("unknown key '{key}' in section [{section}]")
                });
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let w = self.window();
        if !crate::plan::is_power_of_four(w) {
            return Err(Error::InvalidParameter(format!(
                "window {w} = n_l^2 must be a power of four"
            )));
        }
        if self.stride == 0 || self.stride > w {
            return Err(Error::InvalidParameter(format!(
                "plan stride {} must be in [1, W = {w}]",
                self.stride
            )));
        }
        if self.scene.duration_measurements < w {
            return Err(Error::InvalidParameter(format!(
                "duration {} shorter than one window {w}",
                self.scene.duration_measurements
            )));
        }
        Ok(())
    }
}
