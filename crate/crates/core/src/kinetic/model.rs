//! Closed-form forward model of the irreversible two-tissue compartment model.
//!
//! The measured activity of a voxel is
//!
//! ```text
//! C(t) = (1 - VB) (h * A)(t) + VB A(t)
//! h(t) = K1 / (k2 + k3) [k3 + k2 exp(-(k2 + k3) t)]
//! ```
//!
//! averaged over each acquisition frame. The input A(t) is resampled onto a
//! uniform fine grid and treated as piecewise linear between grid nodes. On
//! that interpolant the convolution is integrated exactly, one grid step at a
//! time, with the exponential integrator functions `phi_k`. Writing
//! `lambda = k2 + k3`, the free-pool response to a unit K1 is
//! `E = exp(-lambda t) * A` and the tissue curve is
//! `K1 (E(t) + k3 * int_0^t E)`. That form stays finite as `lambda -> 0`,
//! which the unbounded fitter relies on.
//!
//! Each step costs a handful of multiply-adds, so a 65-minute scan at the
//! default 1 s grid is ~3900 iterations per curve. Derivatives with respect
//! to `lambda` are propagated through the same recursion, which gives an
//! exact Jacobian of the discretized model.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinetic::input::InputFunction;
use crate::kinetic::params::KineticParams;
use crate::kinetic::schedule::{Frame, FrameSchedule};

/// Per-frame mean activity concentration (Bq/ml).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tac(pub Vec<f64>);

impl Tac {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("TAC value at frame {i} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn check_schedule(&self, schedule: &FrameSchedule) -> Result<()> {
        if self.0.len() != schedule.len() {
            return Err(Error::DimensionMismatch {
                what: "TAC length vs frame schedule",
                expected: schedule.len().to_string(),
                actual: self.0.len().to_string(),
            });
        }
        Ok(())
    }
}

impl Deref for Tac {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

pub const DEFAULT_FINE_STEP_S: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelOptions {
    /// Spacing of the internal uniform grid in seconds. Frame boundaries
    /// must fall on grid nodes.
    pub fine_step_s: f64,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            fine_step_s: DEFAULT_FINE_STEP_S,
        }
    }
}

/// Frame-averaged model TAC for the given parameters.
pub fn model_tac(p: &KineticParams, input: &InputFunction, schedule: &FrameSchedule) -> Result<Tac> {
    model_tac_with(p, input, schedule, &ModelOptions::default())
}

pub fn model_tac_with(
    p: &KineticParams,
    input: &InputFunction,
    schedule: &FrameSchedule,
    opts: &ModelOptions,
) -> Result<Tac> {
    p.validate_closed_form()?;
    let model = TacModel::for_schedule(input, schedule, opts)?;
    let mut out = vec![0.0; model.n_frames()];
    model.evaluate(p, &mut out);
    Ok(Tac(out))
}

/// Forward model prepared for one input function and set of frames.
///
/// Construction resamples the input; evaluation is allocation-free and can
/// be shared across threads.
#[derive(Debug, Clone)]
pub struct TacModel {
    step_min: f64,
    /// A at grid nodes `0..=n_steps`.
    nodes: Vec<f64>,
    /// Half-open step ranges per frame.
    windows: Vec<(usize, usize)>,
    durations_min: Vec<f64>,
    blood: Vec<f64>,
}

impl TacModel {
    pub fn for_schedule(
        input: &InputFunction,
        schedule: &FrameSchedule,
        opts: &ModelOptions,
    ) -> Result<Self> {
        Self::new(input, schedule.frames(), opts)
    }

    /// Frames must be ordered and non-overlapping; they need not start at 0
    /// or be contiguous. The model always integrates from t = 0.
    pub fn new(input: &InputFunction, frames: &[Frame], opts: &ModelOptions) -> Result<Self> {
        let step_s = opts.fine_step_s;
        if !(step_s > 0.0) || !step_s.is_finite() {
            return Err(Error::config(format!("fine step {step_s} s must be positive")));
        }
        if frames.is_empty() {
            return Err(Error::domain("no frames to model"));
        }
        let node = |t: f64| -> Result<usize> {
            let k = (t / step_s).round();
            if t < 0.0 || (k * step_s - t).abs() > 1e-6 * step_s {
                return Err(Error::domain(format!(
                    "frame boundary {t} s is not on the {step_s} s fine grid"
                )));
            }
            Ok(k as usize)
        };
        let mut windows = Vec::with_capacity(frames.len());
        let mut prev_end = 0;
        for f in frames {
            if !(f.duration_s > 0.0) {
                return Err(Error::domain("frame duration must be positive"));
            }
            let (s, e) = (node(f.start_s)?, node(f.end_s())?);
            if s < prev_end || e <= s {
                return Err(Error::domain("frames must be ordered and non-overlapping"));
            }
            windows.push((s, e));
            prev_end = e;
        }
        let end_s = frames.last().unwrap().end_s();
        if !input.covers(end_s) {
            return Err(Error::domain(format!(
                "input function ends at {} s but frames extend to {end_s} s",
                input.end_s()
            )));
        }
        let nodes: Vec<f64> = (0..=prev_end).map(|i| input.eval(i as f64 * step_s)).collect();
        let step_min = step_s / 60.0;
        let durations_min: Vec<f64> = windows
            .iter()
            .map(|&(s, e)| (e - s) as f64 * step_min)
            .collect();
        let blood = windows
            .iter()
            .zip(&durations_min)
            .map(|(&(s, e), d)| {
                let area: f64 = (s..e).map(|n| nodes[n] + nodes[n + 1]).sum::<f64>() * 0.5 * step_min;
                area / d
            })
            .collect();
        Ok(Self {
            step_min,
            nodes,
            windows,
            durations_min,
            blood,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.windows.len()
    }

    /// Frame-averaged input function.
    pub fn blood_averages(&self) -> &[f64] {
        &self.blood
    }

    pub fn input_is_zero(&self) -> bool {
        self.nodes.iter().all(|&v| v == 0.0)
    }

    /// Writes the frame-averaged model into `out`. Accepts `k2 + k3 = 0`
    /// (the limit `h = K1`).
    pub fn evaluate(&self, p: &KineticParams, out: &mut [f64]) {
        assert_eq!(out.len(), self.n_frames());
        let k = StepCoefficients::new(p.total_rate(), self.step_min);
        let w = 1.0 - p.vb;
        self.sweep(&k, |f, se, sq, _, _| {
            let tissue = (se + p.k3 * sq) / self.durations_min[f];
            out[f] = w * p.k1 * tissue + p.vb * self.blood[f];
        });
    }

    /// Model values and the Jacobian rows `d C_f / d (K1, k2, k3, VB)`.
    pub fn evaluate_with_jacobian(&self, p: &KineticParams, out: &mut [f64], jac: &mut [[f64; 4]]) {
        assert_eq!(out.len(), self.n_frames());
        assert_eq!(jac.len(), self.n_frames());
        let k = StepCoefficients::new(p.total_rate(), self.step_min);
        let w = 1.0 - p.vb;
        self.sweep_with_derivative(&k, |f, se, sq, dse, dsq| {
            let d = self.durations_min[f];
            let tissue = (se + p.k3 * sq) / d;
            let d_rate = w * p.k1 * (dse + p.k3 * dsq) / d;
            out[f] = w * p.k1 * tissue + p.vb * self.blood[f];
            jac[f] = [
                w * tissue,
                d_rate,
                d_rate + w * p.k1 * sq / d,
                self.blood[f] - p.k1 * tissue,
            ];
        });
    }

    fn sweep(&self, k: &StepCoefficients, mut emit: impl FnMut(usize, f64, f64, f64, f64)) {
        let dt = self.step_min;
        let (mut y, mut q) = (0.0, 0.0);
        let mut n = 0;
        for (f, &(start, end)) in self.windows.iter().enumerate() {
            let (mut se, mut sq) = (0.0, 0.0);
            while n < end {
                let a = self.nodes[n];
                let da = self.nodes[n + 1] - a;
                let ie = k.i0 * y + k.i1 * a + k.i2 * da;
                if n >= start {
                    let iie = k.j0 * y + k.j1 * a + k.j2 * da;
                    se += ie;
                    sq += dt * q + iie;
                }
                y = k.e0 * y + k.e1 * a + k.e2 * da;
                q += ie;
                n += 1;
            }
            emit(f, se, sq, 0.0, 0.0);
        }
    }

    fn sweep_with_derivative(
        &self,
        k: &StepCoefficients,
        mut emit: impl FnMut(usize, f64, f64, f64, f64),
    ) {
        let dt = self.step_min;
        let (mut y, mut q, mut dy, mut dq) = (0.0, 0.0, 0.0, 0.0);
        let mut n = 0;
        for (f, &(start, end)) in self.windows.iter().enumerate() {
            let (mut se, mut sq, mut dse, mut dsq) = (0.0, 0.0, 0.0, 0.0);
            while n < end {
                let a = self.nodes[n];
                let da = self.nodes[n + 1] - a;
                let ie = k.i0 * y + k.i1 * a + k.i2 * da;
                let die = k.i0 * dy + k.di0 * y + k.di1 * a + k.di2 * da;
                if n >= start {
                    let iie = k.j0 * y + k.j1 * a + k.j2 * da;
                    let diie = k.j0 * dy + k.dj0 * y + k.dj1 * a + k.dj2 * da;
                    se += ie;
                    sq += dt * q + iie;
                    dse += die;
                    dsq += dt * dq + diie;
                }
                let y_next = k.e0 * y + k.e1 * a + k.e2 * da;
                dy = k.e0 * dy + k.de0 * y + k.de1 * a + k.de2 * da;
                y = y_next;
                q += ie;
                dq += die;
                n += 1;
            }
            emit(f, se, sq, dse, dsq);
        }
    }
}

/// Exact one-step propagators for `y' = -lambda y + a(t)` with `a` linear
/// over the step, plus the first and second running integrals of `y`, and
/// their derivatives with respect to `lambda`.
#[derive(Debug, Clone, Copy)]
struct StepCoefficients {
    e0: f64,
    e1: f64,
    e2: f64,
    i0: f64,
    i1: f64,
    i2: f64,
    j0: f64,
    j1: f64,
    j2: f64,
    de0: f64,
    de1: f64,
    de2: f64,
    di0: f64,
    di1: f64,
    di2: f64,
    dj0: f64,
    dj1: f64,
    dj2: f64,
}

impl StepCoefficients {
    fn new(lambda: f64, dt: f64) -> Self {
        let phi = phi_functions(-lambda * dt);
        // d/dz phi_k(z) = phi_k(z) - k phi_{k+1}(z)
        let psi: [f64; 5] = std::array::from_fn(|k| phi[k] - k as f64 * phi[k + 1]);
        let (d2, d3, d4) = (dt * dt, dt * dt * dt, dt.powi(4));
        // `da` is the node difference, so slope terms carry one fewer dt.
        Self {
            e0: phi[0],
            e1: dt * phi[1],
            e2: dt * phi[2],
            i0: dt * phi[1],
            i1: d2 * phi[2],
            i2: d2 * phi[3],
            j0: d2 * phi[2],
            j1: d3 * phi[3],
            j2: d3 * phi[4],
            de0: -dt * psi[0],
            de1: -d2 * psi[1],
            de2: -d2 * psi[2],
            di0: -d2 * psi[1],
            di1: -d3 * psi[2],
            di2: -d3 * psi[3],
            dj0: -d3 * psi[2],
            dj1: -d4 * psi[3],
            dj2: -d4 * psi[4],
        }
    }
}

/// `phi_k(z) = sum_j z^j / (j + k)!` for `k = 0..=5`.
fn phi_functions(z: f64) -> [f64; 6] {
    let mut phi = [0.0; 6];
    if z.abs() <= 2.0 {
        for (k, slot) in phi.iter_mut().enumerate() {
            // term_j = z^j / (j + k)!
            let mut term = 1.0 / factorial(k);
            let mut sum = term;
            for j in 1..40 {
                term *= z / (j + k) as f64;
                sum += term;
                if term.abs() < 1e-18 * sum.abs() {
                    break;
                }
            }
            *slot = sum;
        }
    } else {
        phi[0] = z.exp();
        for k in 0..5 {
            phi[k + 1] = (phi[k] - 1.0 / factorial(k)) / z;
        }
    }
    phi
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn bolus() -> InputFunction {
        // gamma-variate-like bolus plus slow tail, sampled at 1 s
        InputFunction::sample_fn(
            |t| {
                let m = (t - 15.0).max(0.0) / 60.0;
                5e4 * m * (-4.0 * m).exp() * 4.0 + 8e3 * (1.0 - (-6.0 * m).exp()) * (-0.01 * m).exp()
            },
            1.0,
            3900.0,
        )
        .unwrap()
    }

    #[test]
    fn phi_series_matches_closed_form() {
        for &z in &[-1e-6, -0.0167, -0.3, -1.5, -2.5, -10.0] {
            let phi = phi_functions(z);
            assert_relative_eq!(phi[0], z.exp(), max_relative = 1e-14);
            assert_relative_eq!(phi[1], z.exp_m1() / z, max_relative = 1e-13);
            let phi2 = (z.exp_m1() - z) / (z * z);
            assert_relative_eq!(phi[2], phi2, max_relative = 1e-6);
        }
        let phi = phi_functions(0.0);
        assert_eq!(phi, [1.0, 1.0, 0.5, 1.0 / 6.0, 1.0 / 24.0, 1.0 / 120.0]);
    }

    #[test]
    fn vb_one_returns_blood_average() {
        let s = FrameSchedule::reference();
        let a = bolus();
        let tac = model_tac(&KineticParams::new(0.7, 0.4, 0.1, 1.0), &a, &s).unwrap();
        let m = TacModel::for_schedule(&a, &s, &ModelOptions::default()).unwrap();
        assert_eq!(&tac[..], m.blood_averages());
    }

    #[test]
    fn zero_uptake_is_zero() {
        let tac = model_tac(&KineticParams::new(0.0, 0.4, 0.1, 0.0), &bolus(), &FrameSchedule::reference())
            .unwrap();
        assert!(tac.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_misaligned_frames_and_short_input() {
        let s = FrameSchedule::from_durations(&[1.5, 2.0]).unwrap();
        let a = bolus();
        let p = KineticParams::new(0.5, 0.5, 0.05, 0.0);
        assert!(model_tac(&p, &a, &s).is_err());
        let opts = ModelOptions { fine_step_s: 0.5 };
        assert!(model_tac_with(&p, &a, &s, &opts).is_ok());

        let short = InputFunction::from_samples(vec![0.0, 100.0], vec![0.0, 1.0]).unwrap();
        assert!(model_tac(&p, &short, &FrameSchedule::reference()).is_err());
        let bad = KineticParams::new(0.5, 0.0, 0.0, 0.0);
        assert!(model_tac(&bad, &a, &FrameSchedule::reference()).is_err());
    }

    #[test]
    fn constant_input_matches_analytic_integral() {
        // A = c from t = 0: E(t) = c (1 - e^{-lt}) / l, int E = c (t - (1 - e^{-lt})/l) / l
        let c = 1000.0;
        let a = InputFunction::with_coverage(vec![0.0], vec![c], 600.0).unwrap();
        let s = FrameSchedule::from_durations(&[60.0; 10]).unwrap();
        let p = KineticParams::new(0.5, 0.3, 0.1, 0.0);
        let l = p.total_rate();
        let e_int = |t: f64| c * (t - (1.0 - (-l * t).exp()) / l) / l;
        let e_int2 = |t: f64| c * (t * t / 2.0 - (t - (1.0 - (-l * t).exp()) / l) / l) / l;
        let tac = model_tac(&p, &a, &s).unwrap();
        for (f, frame) in s.frames().iter().enumerate() {
            let (t0, t1) = (frame.start_s / 60.0, frame.end_s() / 60.0);
            let expected =
                p.k1 * ((e_int(t1) - e_int(t0)) + p.k3 * (e_int2(t1) - e_int2(t0))) / (t1 - t0);
            assert_relative_eq!(tac[f], expected, max_relative = 1e-11);
        }
    }

    #[test]
    fn zero_rate_limit_is_continuous() {
        let a = bolus();
        let s = FrameSchedule::reference();
        let m = TacModel::for_schedule(&a, &s, &ModelOptions::default()).unwrap();
        let mut at_zero = vec![0.0; 62];
        let mut near_zero = vec![0.0; 62];
        m.evaluate(&KineticParams::new(0.3, 0.0, 0.0, 0.1), &mut at_zero);
        m.evaluate(&KineticParams::new(0.3, 1e-9, 0.0, 0.1), &mut near_zero);
        for (x, y) in at_zero.iter().zip(&near_zero) {
            assert_relative_eq!(x, y, max_relative = 1e-6);
        }
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let a = bolus();
        let s = FrameSchedule::reference();
        let m = TacModel::for_schedule(&a, &s, &ModelOptions::default()).unwrap();
        let p = [0.55, 0.7, 0.04, 0.12];
        let mut out = vec![0.0; 62];
        let mut jac = vec![[0.0; 4]; 62];
        m.evaluate_with_jacobian(&KineticParams::from_array(p), &mut out, &mut jac);
        let mut plain = vec![0.0; 62];
        m.evaluate(&KineticParams::from_array(p), &mut plain);
        assert_eq!(out, plain);
        for i in 0..4 {
            let h = 1e-6 * p[i].abs().max(1e-3);
            let (mut up, mut dn) = (p, p);
            up[i] += h;
            dn[i] -= h;
            let (mut fu, mut fd) = (vec![0.0; 62], vec![0.0; 62]);
            m.evaluate(&KineticParams::from_array(up), &mut fu);
            m.evaluate(&KineticParams::from_array(dn), &mut fd);
            let scale = jac.iter().map(|r| r[i].abs()).fold(0.0, f64::max);
            for f in 0..62 {
                let fd_deriv = (fu[f] - fd[f]) / (2.0 * h);
                assert!(
                    (fd_deriv - jac[f][i]).abs() <= 1e-6 * scale,
                    "param {i} frame {f}: analytic {} vs fd {}",
                    jac[f][i],
                    fd_deriv
                );
            }
        }
    }
}
