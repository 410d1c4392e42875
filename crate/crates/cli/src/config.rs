//! TOML configuration shared by the subcommands.
//!
//! ```toml
//! [phantom]            # grid, regions, noise, seed
//! size_xyz = [64, 64, 32]
//! spacing_mm = 2.5
//! seed = 0
//! noise = { kind = "gaussian", level = 0.05 }
//! [[phantom.regions]]
//! label = 4
//! organ = "liver"
//! shape = { kind = "ellipsoid", center = [0.3, 0.45, 0.4], radii = [0.17, 0.2, 0.12] }
//! params = { k1 = 0.6, k2 = 0.8, k3 = 0.014, vb = 0.005 }   # optional
//!
//! [input]              # tri-exponential input model, 1/min rates, delay in s
//! delay_s = 20.0
//!
//! [schedule]           # frame durations in seconds
//! frame_durations_s = [10, 10, 2, 2]
//!
//! [fit]
//! initial = [0.1, 0.1, 0.01, 0.01]
//! max_iterations = 200
//! jacobian = "analytic"   # or "finite_difference" with fd_step
//! max_step = 0.001         # optional cap on each parameter's change per iteration
//! ```
//!
//! Every table and key is optional; unknown keys are rejected.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use pbpk_core::fitter::{FitConfig, JacobianMode, DEFAULT_FD_STEP};
use pbpk_core::kinetic::{FrameSchedule, KineticParams, ParamBounds};
use pbpk_core::phantom::{InputFunctionModel, PhantomSpec};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub phantom: PhantomSpec,
    #[serde(default)]
    pub input: InputFunctionModel,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub fit: FitSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub frame_durations_s: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub initial: Option<[f64; 4]>,
    pub max_iterations: Option<usize>,
    pub step_tol: Option<f64>,
    pub cost_tol: Option<f64>,
    pub gradient_tol: Option<f64>,
    pub jacobian: Option<String>,
    pub fd_step: Option<f64>,
    pub fine_step_s: Option<f64>,
    pub max_step: Option<f64>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn schedule(&self) -> Result<FrameSchedule> {
        match &self.schedule.frame_durations_s {
            Some(d) => FrameSchedule::from_durations(d).context("invalid [schedule] frame_durations_s"),
            None => Ok(FrameSchedule::reference()),
        }
    }

    /// Fit settings: the named bounds, then `[fit]`, then the command-line
    /// fine step.
    pub fn fit_config(&self, bounds: BoundsChoice, fine_step_s: Option<f64>) -> Result<FitConfig> {
        let mut cfg = match bounds {
            BoundsChoice::Paper => FitConfig::default(),
            BoundsChoice::Clamp => FitConfig::clamp_box(),
        };
        let f = &self.fit;
        if let Some(p) = f.initial {
            cfg.initial = KineticParams::from_array(p);
        } else if bounds == BoundsChoice::Clamp {
            cfg.initial = ParamBounds::multi_clamp().project(&cfg.initial);
        }
        if let Some(v) = f.max_iterations {
            cfg.max_iterations = v;
        }
        if let Some(v) = f.step_tol {
            cfg.step_tol = v;
        }
        if let Some(v) = f.cost_tol {
            cfg.cost_tol = v;
        }
        if let Some(v) = f.gradient_tol {
            cfg.gradient_tol = v;
        }
        if f.max_step.is_some() {
            cfg.max_step = f.max_step;
        }
        cfg.jacobian = match f.jacobian.as_deref() {
            None | Some("analytic") => JacobianMode::Analytic,
            Some("finite_difference") => JacobianMode::FiniteDifference { step: f.fd_step.unwrap_or(DEFAULT_FD_STEP) },
            Some(other) => bail!("[fit] jacobian must be \"analytic\" or \"finite_difference\", got {other:?}"),
        };
        if let Some(v) = fine_step_s.or(f.fine_step_s) {
            cfg.model.fine_step_s = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BoundsChoice {
    /// Non-negative rates, VB in [0, 1].
    Paper,
    /// The multi-clamp box.
    Clamp,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_example_parses() {
        let text = r#"
            [phantom]
            size_xyz = [8, 8, 4]
            noise = { kind = "scaled_poisson", level = 0.1 }
            [[phantom.regions]]
            label = 4
            organ = "liver"
            shape = { kind = "box", min = [0.0, 0.0, 0.0], max = [1.0, 1.0, 1.0] }
            params = { k1 = 0.6, k2 = 0.8, k3 = 0.014, vb = 0.005 }
            [input]
            delay_s = 10.0
            [schedule]
            frame_durations_s = [10, 10, 20]
            [fit]
            jacobian = "finite_difference"
            fine_step_s = 0.5
        "#;
        let c: Config = toml::from_str(text).unwrap();
        assert_eq!(c.phantom.regions.len(), 1);
        assert_eq!(c.input.delay_s, 10.0);
        assert_eq!(c.input.a1, InputFunctionModel::default().a1);
        assert_eq!(c.schedule().unwrap().end_time_s(), 40.0);
        let f = c.fit_config(BoundsChoice::Clamp, None).unwrap();
        assert_eq!(f.model.fine_step_s, 0.5);
        assert!(matches!(f.jacobian, JacobianMode::FiniteDifference { .. }));
        assert!(ParamBounds::multi_clamp().contains(&f.initial));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<Config>("[fit]\nmax_iter = 3\n").is_err());
        assert!(toml::from_str::<Config>("[phantom]\nsize = [1, 2, 3]\n").is_err());
    }
}
