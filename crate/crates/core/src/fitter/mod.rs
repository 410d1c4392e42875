//! Non-linear least-squares estimation of kinetic parameters from TACs and
//! Patlak graphical analysis.

pub mod lm;
pub mod patlak;
pub mod voxelwise;

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinetic::{FrameSchedule, InputFunction, KineticParams, ModelOptions, ParamBounds, TacModel};

pub use lm::{LmOptions, Termination};
pub use patlak::{patlak, PatlakResult, DEFAULT_T_STAR_S};
pub use voxelwise::{fit_voi, fit_voxelwise, mean_tac, Execution};

/// How the Jacobian of the model is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum JacobianMode {
    /// Exact derivatives of the discretized model.
    Analytic,
    /// Central differences with step `step * max(1, |x|)`, one-sided at
    /// bounds.
    FiniteDifference { step: f64 },
}

pub const DEFAULT_FD_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub initial: KineticParams,
    pub bounds: ParamBounds,
    pub max_iterations: usize,
    pub step_tol: f64,
    pub cost_tol: f64,
    pub gradient_tol: f64,
    pub jacobian: JacobianMode,
    pub model: ModelOptions,
    /// Optional cap on the per-iteration change of any parameter.
    #[serde(default)]
    pub max_step: Option<f64>,
}

impl Default for FitConfig {
    /// Starts at (0.1, 0.1, 0.01, 0.01) with non-negative bounds.
    fn default() -> Self {
        let lm = LmOptions::default();
        Self {
            initial: KineticParams::new(0.1, 0.1, 0.01, 0.01),
            bounds: ParamBounds::nonnegative(),
            max_iterations: lm.max_iterations,
            step_tol: lm.step_tol,
            cost_tol: lm.cost_tol,
            gradient_tol: lm.gradient_tol,
            jacobian: JacobianMode::Analytic,
            model: ModelOptions::default(),
            max_step: None,
        }
    }
}

impl FitConfig {
    /// Same start, bounded to the multi-clamp box.
    pub fn clamp_box() -> Self {
        Self {
            bounds: ParamBounds::multi_clamp(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if !self.bounds.contains(&self.initial) {
            return Err(Error::config(format!(
                "initial parameters {:?} lie outside the bounds",
                self.initial.to_array()
            )));
        }
        for (name, v) in [
            ("step_tol", self.step_tol),
            ("cost_tol", self.cost_tol),
            ("gradient_tol", self.gradient_tol),
        ] {
            if !(v > 0.0) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(m) = self.max_step {
            if !(m > 0.0) {
                return Err(Error::config(format!("max_step must be positive, got {m}")));
            }
        }
        if let JacobianMode::FiniteDifference { step } = self.jacobian {
            if !(step > 0.0) {
                return Err(Error::config(format!("finite-difference step must be positive, got {step}")));
            }
        }
        Ok(())
    }

    fn lm_options(&self) -> LmOptions {
        LmOptions {
            max_iterations: self.max_iterations,
            step_tol: self.step_tol,
            cost_tol: self.cost_tol,
            gradient_tol: self.gradient_tol,
            max_step: self.max_step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: KineticParams,
    /// Mean squared residual over frames.
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub termination: String,
    /// Per parameter: fitted value lies on a bound.
    pub at_bound: [bool; 4],
    /// Some parameter has no influence on the model at the solution.
    pub degenerate: bool,
    /// Gauss-Newton standard errors, when `J^T J` is invertible.
    pub std_errors: Option<[f64; 4]>,
    /// Scale-free projected gradient at the solution.
    pub scaled_gradient: f64,
}

/// A prepared fitter for one input function and schedule. Shareable across
/// threads; each `fit` call is independent.
#[derive(Debug, Clone)]
pub struct TacFitter {
    model: TacModel,
    cfg: FitConfig,
}

impl TacFitter {
    pub fn new(input: &InputFunction, schedule: &FrameSchedule, cfg: &FitConfig) -> Result<Self> {
        cfg.validate()?;
        let model = TacModel::for_schedule(input, schedule, &cfg.model)?;
        Ok(Self { model, cfg: *cfg })
    }

    pub fn model(&self) -> &TacModel {
        &self.model
    }

    pub fn config(&self) -> &FitConfig {
        &self.cfg
    }

    pub fn fit(&self, tac: &[f64]) -> Result<FitResult> {
        if tac.len() != self.model.n_frames() {
            return Err(Error::DimensionMismatch {
                what: "TAC length vs frame schedule",
                expected: self.model.n_frames().to_string(),
                actual: tac.len().to_string(),
            });
        }
        if let Some(i) = tac.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("TAC value at frame {i} is not finite")));
        }
        let lower = self.cfg.bounds.lower();
        let upper = self.cfg.bounds.upper();

        if tac.iter().all(|&v| v == 0.0) {
            // with a zero input every parameter vector fits, so the start
            // is kept; otherwise the floor is the zero model if any is
            let params = if self.model.input_is_zero() {
                self.cfg.bounds.project(&self.cfg.initial)
            } else {
                KineticParams::from_array(lower)
            };
            let mut out = vec![0.0; tac.len()];
            self.model.evaluate(&params, &mut out);
            if out.iter().all(|&v| v == 0.0) {
                let x = params.to_array();
                return Ok(FitResult {
                    params,
                    final_cost: 0.0,
                    iterations: 0,
                    converged: true,
                    termination: format!("{:?}", Termination::ZeroResidual),
                    at_bound: std::array::from_fn(|i| x[i] <= lower[i] || x[i] >= upper[i]),
                    degenerate: true,
                    std_errors: None,
                    scaled_gradient: 0.0,
                });
            }
        }

        let problem = TacProblem {
            model: &self.model,
            data: tac,
            jacobian: self.cfg.jacobian,
            lower,
            upper,
        };
        let rep = lm::minimize(&problem, self.cfg.initial.to_array(), lower, upper, &self.cfg.lm_options());

        let m = tac.len();
        let mut jtj = Matrix4::<f64>::zeros();
        for row in &rep.jacobian {
            for i in 0..4 {
                for j in 0..4 {
                    jtj[(i, j)] += row[i] * row[j];
                }
            }
        }
        let max_col = (0..4).map(|i| jtj[(i, i)]).fold(0.0, f64::max);
        let degenerate = (0..4).any(|i| jtj[(i, i)] <= 1e-24 * max_col) || max_col == 0.0;
        let std_errors = if m > 4 && !degenerate {
            let s2 = 2.0 * rep.cost / (m - 4) as f64;
            jtj.cholesky().map(|c| {
                let inv = c.inverse();
                std::array::from_fn(|i| (s2 * inv[(i, i)]).sqrt())
            })
        } else {
            None
        };

        Ok(FitResult {
            params: KineticParams::from_array(rep.x),
            final_cost: 2.0 * rep.cost / m as f64,
            iterations: rep.iterations,
            converged: rep.termination.converged(),
            termination: format!("{:?}", rep.termination),
            at_bound: std::array::from_fn(|i| rep.x[i] <= lower[i] || rep.x[i] >= upper[i]),
            degenerate,
            std_errors,
            scaled_gradient: rep.scaled_gradient,
        })
    }
}

/// Fits one TAC. See [`TacFitter`] to reuse the prepared model.
pub fn fit_tac(
    tac: &[f64],
    input: &InputFunction,
    schedule: &FrameSchedule,
    cfg: &FitConfig,
) -> Result<FitResult> {
    TacFitter::new(input, schedule, cfg)?.fit(tac)
}

struct TacProblem<'a> {
    model: &'a TacModel,
    data: &'a [f64],
    jacobian: JacobianMode,
    lower: [f64; 4],
    upper: [f64; 4],
}

impl TacProblem<'_> {
    fn eval(&self, x: &[f64; 4], r: &mut [f64]) {
        self.model.evaluate(&KineticParams::from_array(*x), r);
        for (ri, d) in r.iter_mut().zip(self.data) {
            *ri -= d;
        }
    }
}

impl lm::Residuals<4> for TacProblem<'_> {
    fn len(&self) -> usize {
        self.data.len()
    }

    fn residuals(&self, x: &[f64; 4], r: &mut [f64]) {
        self.eval(x, r);
    }

    fn residuals_and_jacobian(&self, x: &[f64; 4], r: &mut [f64], jac: &mut [[f64; 4]]) {
        match self.jacobian {
            JacobianMode::Analytic => {
                self.model
                    .evaluate_with_jacobian(&KineticParams::from_array(*x), r, jac);
                for (ri, d) in r.iter_mut().zip(self.data) {
                    *ri -= d;
                }
            }
            JacobianMode::FiniteDifference { step } => {
                self.eval(x, r);
                let m = r.len();
                let (mut up, mut dn) = (vec![0.0; m], vec![0.0; m]);
                for i in 0..4 {
                    let h = step * x[i].abs().max(1.0);
                    let hi = (x[i] + h).min(self.upper[i]);
                    let lo = (x[i] - h).max(self.lower[i]);
                    let (mut xu, mut xd) = (*x, *x);
                    xu[i] = hi;
                    xd[i] = lo;
                    self.eval(&xu, &mut up);
                    self.eval(&xd, &mut dn);
                    let span = hi - lo;
                    for f in 0..m {
                        jac[f][i] = if span > 0.0 { (up[f] - dn[f]) / span } else { 0.0 };
                    }
                }
            }
        }
    }

    fn data_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetic::model_tac;

    fn input() -> InputFunction {
        crate::phantom::InputFunctionModel::default()
            .sample(&FrameSchedule::reference(), 1.0)
            .unwrap()
    }

    #[test]
    fn default_config_is_the_reference_protocol() {
        let c = FitConfig::default();
        assert_eq!(c.initial.to_array(), [0.1, 0.1, 0.01, 0.01]);
        for iv in &c.bounds.intervals()[..3] {
            assert_eq!((iv.lo, iv.hi), (0.0, f64::INFINITY));
        }
        assert_eq!((c.bounds.vb.lo, c.bounds.vb.hi), (0.0, 1.0));
        assert_eq!(c.jacobian, JacobianMode::Analytic);
        assert!(c.validate().is_ok());
        assert!(FitConfig::clamp_box().validate().is_ok());
    }

    #[test]
    fn rejects_invalid_config() {
        let mut c = FitConfig::clamp_box();
        c.initial.k1 = 5.0;
        assert!(c.validate().is_err());
        let mut c = FitConfig::default();
        c.gradient_tol = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn recovers_noiseless_parameters() {
        let s = FrameSchedule::reference();
        let a = input();
        let truth = KineticParams::new(0.6, 0.8, 0.05, 0.05);
        let tac = model_tac(&truth, &a, &s).unwrap();
        let r = fit_tac(&tac, &a, &s, &FitConfig::default()).unwrap();
        assert!(r.converged, "{r:?}");
        let p = r.params;
        assert!((p.k1 / 0.6 - 1.0).abs() < 0.01, "{p:?}");
        assert!((p.k2 / 0.8 - 1.0).abs() < 0.01, "{p:?}");
        assert!((p.k3 / 0.05 - 1.0).abs() < 0.05, "{p:?}");
        assert!((p.vb - 0.05).abs() < 0.01, "{p:?}");
    }

    #[test]
    fn finite_difference_mode_agrees() {
        let s = FrameSchedule::reference();
        let a = input();
        let truth = KineticParams::new(0.6, 0.8, 0.05, 0.05);
        let tac = model_tac(&truth, &a, &s).unwrap();
        let cfg = FitConfig {
            jacobian: JacobianMode::FiniteDifference { step: DEFAULT_FD_STEP },
            ..FitConfig::default()
        };
        let r = fit_tac(&tac, &a, &s, &cfg).unwrap();
        assert!(r.converged, "{r:?}");
        assert!((r.params.k1 / 0.6 - 1.0).abs() < 0.01, "{r:?}");
    }

    #[test]
    fn capped_steps_still_converge() {
        let s = FrameSchedule::reference();
        let a = input();
        let truth = KineticParams::new(0.6, 0.8, 0.05, 0.05);
        let tac = model_tac(&truth, &a, &s).unwrap();
        let capped = FitConfig {
            max_step: Some(1e-3),
            max_iterations: 5000,
            ..FitConfig::default()
        };
        let r = fit_tac(&tac, &a, &s, &capped).unwrap();
        assert!(r.converged, "{r:?}");
        assert!(r.iterations >= 500, "{}", r.iterations);
        assert!((r.params.k1 / 0.6 - 1.0).abs() < 0.01, "{r:?}");
        let short = FitConfig { max_iterations: 20, ..capped };
        let r = fit_tac(&tac, &a, &s, &short).unwrap();
        assert!(!r.converged);
        assert!((r.params.k1 - 0.1).abs() <= 20.0 * 1e-3 + 1e-12);
        assert!(FitConfig { max_step: Some(0.0), ..FitConfig::default() }.validate().is_err());
    }

    #[test]
    fn zero_tac_with_zero_input_is_degenerate() {
        let s = FrameSchedule::reference();
        let a = InputFunction::with_coverage(vec![0.0], vec![0.0], 3900.0).unwrap();
        let cfg = FitConfig::clamp_box();
        let r = fit_tac(&[0.0; 62], &a, &s, &cfg).unwrap();
        assert!(r.converged && r.degenerate);
        assert_eq!(r.final_cost, 0.0);
        assert_eq!(r.params, cfg.bounds.project(&cfg.initial));

        // with the non-negative box the all-zero model is reachable
        let r = fit_tac(&[0.0; 62], &input(), &s, &FitConfig::default()).unwrap();
        assert!(r.converged && r.degenerate);
        assert_eq!(r.params.to_array(), [0.0; 4]);
    }

    #[test]
    fn is_deterministic() {
        let s = FrameSchedule::reference();
        let a = input();
        let tac: Vec<f64> = model_tac(&KineticParams::new(0.3, 0.5, 0.02, 0.1), &a, &s)
            .unwrap()
            .iter()
            .enumerate()
            .map(|(i, v)| v * (1.0 + 0.03 * ((i * 7919) % 13) as f64 / 13.0))
            .collect();
        let a1 = fit_tac(&tac, &a, &s, &FitConfig::default()).unwrap();
        let a2 = fit_tac(&tac, &a, &s, &FitConfig::default()).unwrap();
        assert_eq!(a1, a2);
        assert!(a1.converged);
        assert!(a1.scaled_gradient <= 1e-8 || a1.termination != "Gradient");
    }

    #[test]
    fn rejects_length_mismatch() {
        let s = FrameSchedule::reference();
        assert!(fit_tac(&[1.0; 10], &input(), &s, &FitConfig::default()).is_err());
    }
}
