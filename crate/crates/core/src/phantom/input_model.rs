use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinetic::{FrameSchedule, InputFunction, DEFAULT_FINE_STEP_S};

/// Horizon over which a model must stay non-negative, seconds.
const CHECK_HORIZON_S: f64 = 65.0 * 60.0;

/// Tri-exponential arterial input,
///
/// `A(tau) = (a1 tau - a2 - a3) e^(-l1 tau) + a2 e^(-l2 tau) + a3 e^(-l3 tau)`
///
/// with `tau = (t - delay) / 60` in minutes and `A = 0` before the delay.
/// The defaults are the classic FDG plasma coefficients scaled by 1000 to
/// give a synthetic curve in Bq/ml; they are not patient-derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputFunctionModel {
    /// Bq/ml/min
    pub a1: f64,
    /// Bq/ml
    pub a2: f64,
    pub a3: f64,
    /// 1/min
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub delay_s: f64,
}

impl Default for InputFunctionModel {
    fn default() -> Self {
        Self {
            a1: 851.1225,
            a2: 21.8798,
            a3: 20.8113,
            lambda1: 4.133859,
            lambda2: 0.1191,
            lambda3: 0.0104,
            delay_s: 20.0,
        }
    }
}

impl InputFunctionModel {
    pub fn zero() -> Self {
        Self {
            a1: 0.0,
            a2: 0.0,
            a3: 0.0,
            ..Self::default()
        }
    }

    /// Unchecked A(t) at `t_s` seconds.
    pub fn eval(&self, t_s: f64) -> f64 {
        if t_s < self.delay_s {
            return 0.0;
        }
        let tau = (t_s - self.delay_s) / 60.0;
        (self.a1 * tau - self.a2 - self.a3) * (-self.lambda1 * tau).exp()
            + self.a2 * (-self.lambda2 * tau).exp()
            + self.a3 * (-self.lambda3 * tau).exp()
    }

    /// Rejects non-finite coefficients, negative rates or delay, and any
    /// coefficient set whose curve dips below zero in the first 65 minutes.
    pub fn validate(&self) -> Result<()> {
        let all = [self.a1, self.a2, self.a3, self.lambda1, self.lambda2, self.lambda3, self.delay_s];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("input model coefficients must be finite"));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || self.lambda3 < 0.0 || self.delay_s < 0.0 {
            return Err(Error::config("input model rates and delay must be non-negative"));
        }
        // A(delay) = 0 exactly; rounding there is tolerated
        let scale = self.a1.abs() + self.a2.abs() + self.a3.abs();
        let n = (CHECK_HORIZON_S * 2.0) as usize;
        for i in 0..=n {
            let t = i as f64 * 0.5;
            let v = self.eval(t);
            if v < -1e-12 * scale {
                return Err(Error::config(format!(
                    "input model is negative at t = {t} s (A = {v:.6e})"
                )));
            }
        }
        Ok(())
    }

    /// Samples the model every `step_s` seconds up to the schedule end.
    pub fn sample(&self, schedule: &FrameSchedule, step_s: f64) -> Result<InputFunction> {
        self.validate()?;
        InputFunction::sample_fn(|t| self.eval(t).max(0.0), step_s, schedule.end_time_s())
    }
}

/// The model sampled on the default fine grid of the forward model.
pub fn synth_input(model: &InputFunctionModel, schedule: &FrameSchedule) -> Result<InputFunction> {
    model.sample(schedule, DEFAULT_FINE_STEP_S)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_before_delay() {
        let m = InputFunctionModel::default();
        assert_eq!(m.eval(0.0), 0.0);
        assert_eq!(m.eval(19.999), 0.0);
        assert!(m.eval(30.0) > 0.0);
    }

    #[test]
    fn zero_coefficients_give_zero_input() {
        let a = synth_input(&InputFunctionModel::zero(), &FrameSchedule::reference()).unwrap();
        assert!(a.is_zero());
    }

    #[test]
    fn default_peaks_early_with_finite_area() {
        let s = FrameSchedule::reference();
        let a = synth_input(&InputFunctionModel::default(), &s).unwrap();
        let (imax, _) = a
            .values()
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        assert!(a.times_s()[imax] < 120.0);
        let area = a.integral_to(s.end_time_s());
        assert!(area.is_finite() && area > 0.0);
        assert!(a.values().iter().all(|&v| v >= 0.0));
        assert!(a.covers(3900.0));
    }

    #[test]
    fn negative_models_are_rejected() {
        let m = InputFunctionModel {
            a2: -50.0,
            ..InputFunctionModel::default()
        };
        assert!(m.validate().is_err());
        let m = InputFunctionModel {
            lambda2: -0.1,
            ..InputFunctionModel::default()
        };
        assert!(m.sample(&FrameSchedule::reference(), 1.0).is_err());
    }
}
