//! Direct integration of the compartment ODEs, used as an independent check
//! on the closed-form model.
//!
//! ```text
//! dF/dt = K1 A(t) - (k2 + k3) F
//! dB/dt = k3 F
//! ```
//!
//! The state is augmented with the running integrals of F, B and A so frame
//! averages come out of the same RK4 step.

use crate::error::{Error, Result};
use crate::kinetic::input::InputFunction;
use crate::kinetic::model::Tac;
use crate::kinetic::params::KineticParams;
use crate::kinetic::schedule::FrameSchedule;

pub const DEFAULT_ODE_STEP_S: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub step_s: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            step_s: DEFAULT_ODE_STEP_S,
        }
    }
}

pub fn ode_solve(p: &KineticParams, input: &InputFunction, schedule: &FrameSchedule) -> Result<Tac> {
    ode_solve_with(p, input, schedule, &OdeOptions::default())
}

pub fn ode_solve_with(
    p: &KineticParams,
    input: &InputFunction,
    schedule: &FrameSchedule,
    opts: &OdeOptions,
) -> Result<Tac> {
    p.validate()?;
    let h_s = opts.step_s;
    if !(h_s > 0.0) || !h_s.is_finite() {
        return Err(Error::config(format!("ODE step {h_s} s must be positive")));
    }
    if !input.covers(schedule.end_time_s()) {
        return Err(Error::domain(format!(
            "input function ends at {} s but the schedule runs to {} s",
            input.end_s(),
            schedule.end_time_s()
        )));
    }

    let h = h_s / 60.0;
    let rate = p.k2 + p.k3;
    // state: [F, B, int F, int B, int A]
    let deriv = |t_s: f64, s: &[f64; 5]| -> [f64; 5] {
        let a = input.eval(t_s);
        [p.k1 * a - rate * s[0], p.k3 * s[0], s[0], s[1], a]
    };

    let mut state = [0.0f64; 5];
    let mut step = 0usize;
    let mut out = Vec::with_capacity(schedule.len());
    let mut at_start = state;
    for frame in schedule.frames() {
        let end_step = (frame.end_s() / h_s).round() as usize;
        if ((end_step as f64) * h_s - frame.end_s()).abs() > 1e-6 * h_s {
            return Err(Error::config(format!(
                "frame end {} s is not a multiple of the ODE step {h_s} s",
                frame.end_s()
            )));
        }
        while step < end_step {
            let t = step as f64 * h_s;
            let k1 = deriv(t, &state);
            let k2 = deriv(t + 0.5 * h_s, &axpy(&state, 0.5 * h, &k1));
            let k3 = deriv(t + 0.5 * h_s, &axpy(&state, 0.5 * h, &k2));
            let k4 = deriv(t + h_s, &axpy(&state, h, &k3));
            for i in 0..5 {
                state[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            step += 1;
        }
        let d = frame.duration_s / 60.0;
        let tissue = (state[2] - at_start[2]) + (state[3] - at_start[3]);
        let blood = state[4] - at_start[4];
        out.push(((1.0 - p.vb) * tissue + p.vb * blood) / d);
        at_start = state;
    }
    Ok(Tac(out))
}

fn axpy(x: &[f64; 5], a: f64, y: &[f64; 5]) -> [f64; 5] {
    std::array::from_fn(|i| x[i] + a * y[i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetic::model::model_tac;

    fn input() -> InputFunction {
        InputFunction::sample_fn(
            |t| {
                let m = (t - 20.0).max(0.0) / 60.0;
                1e5 * m * (-3.0 * m).exp() + 5e3 * (1.0 - (-3.0 * m).exp())
            },
            1.0,
            3900.0,
        )
        .unwrap()
    }

    #[test]
    fn zero_input_gives_zero_tac() {
        let a = InputFunction::with_coverage(vec![0.0], vec![0.0], 3900.0).unwrap();
        let tac = ode_solve(&KineticParams::new(0.5, 0.4, 0.05, 0.2), &a, &FrameSchedule::reference())
            .unwrap();
        assert!(tac.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lower_clamp_rates_agree_with_closed_form() {
        let p = KineticParams::new(0.3, 0.01, 0.01, 0.05);
        let s = FrameSchedule::reference();
        let a = input();
        let ode = ode_solve(&p, &a, &s).unwrap();
        let cf = model_tac(&p, &a, &s).unwrap();
        let scale = cf.iter().cloned().fold(0.0, f64::max);
        let dev = ode.iter().zip(cf.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(dev / scale < 1e-4, "normalized deviation {}", dev / scale);
    }

    #[test]
    fn rejects_misaligned_step() {
        let p = KineticParams::new(0.3, 0.2, 0.01, 0.05);
        let opts = OdeOptions { step_s: 0.3 };
        assert!(ode_solve_with(&p, &input(), &FrameSchedule::reference(), &opts).is_err());
        let opts = OdeOptions { step_s: 0.0 };
        assert!(ode_solve_with(&p, &input(), &FrameSchedule::reference(), &opts).is_err());
    }
}
