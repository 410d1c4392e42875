//! Box-constrained Levenberg-Marquardt for small parameter vectors.
//!
//! Steps are computed on the free variables only: a variable sitting on a
//! bound whose gradient points out of the box is held fixed for that
//! iteration. Trial points are projected back onto the box and the gain
//! ratio is measured along the projected step. Damping follows Nielsen's
//! update with Marquardt's diagonal scaling (running maximum of the
//! `J^T J` diagonal, as in MINPACK).

use nalgebra::{SMatrix, SVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Relative step size marking stagnation. Stagnation stops the
    /// iteration only at a point that also passes the gradient test.
    pub step_tol: f64,
    /// Relative cost reduction marking stagnation, as for `step_tol`.
    pub cost_tol: f64,
    /// Bound on the scaled projected gradient, see [`scaled_gradient`].
    pub gradient_tol: f64,
    /// Largest change of any single variable per iteration. Longer steps
    /// are shortened along their direction.
    pub max_step: Option<f64>,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            step_tol: 1e-8,
            cost_tol: 1e-10,
            gradient_tol: 1e-8,
            max_step: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Residual vanished to rounding level.
    ZeroResidual,
    Gradient,
    Step,
    Cost,
    /// No decrease is representable: the linearized reduction of every
    /// rejected step fell below the rounding level of the cost.
    Precision,
    MaxIterations,
    /// Damping grew without bound while the predicted reduction stayed
    /// above rounding level.
    Stalled,
}

impl Termination {
    pub fn converged(self) -> bool {
        !matches!(self, Termination::MaxIterations | Termination::Stalled)
    }
}

/// A residual vector `r(x) = model(x) - data` with Jacobian `dr/dx`.
pub trait Residuals<const N: usize> {
    fn len(&self) -> usize;

    fn residuals(&self, x: &[f64; N], r: &mut [f64]);

    fn residuals_and_jacobian(&self, x: &[f64; N], r: &mut [f64], jac: &mut [[f64; N]]);

    /// Norm of the data the residual is measured against, for the
    /// zero-residual test.
    fn data_norm(&self) -> f64;
}

#[derive(Debug, Clone)]
pub struct LmReport<const N: usize> {
    pub x: [f64; N],
    /// `0.5 * |r|^2`
    pub cost: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    pub scaled_gradient: f64,
    pub residuals: Vec<f64>,
    pub jacobian: Vec<[f64; N]>,
}

pub fn minimize<const N: usize, P: Residuals<N>>(
    problem: &P,
    x0: [f64; N],
    lower: [f64; N],
    upper: [f64; N],
    opts: &LmOptions,
) -> LmReport<N> {
    let m = problem.len();
    let project = |x: [f64; N]| -> [f64; N] {
        std::array::from_fn(|i| if x[i].is_nan() { lower[i] } else { x[i].clamp(lower[i], upper[i]) })
    };
    let zero_level = 1e-10 * problem.data_norm();

    let mut x = project(x0);
    let mut r = vec![0.0; m];
    let mut jac = vec![[0.0; N]; m];
    problem.residuals_and_jacobian(&x, &mut r, &mut jac);
    let mut evaluations = 1;
    let mut cost = half_norm2(&r);

    let mut r_trial = vec![0.0; m];
    let mut diag = [0.0f64; N];
    let mut mu = 0.0;
    let mut nu = 2.0;
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    let mut needs_normal_eq = true;
    // a small step or cost change ends the run only once the gradient
    // test confirms a stationary point
    let mut stagnation: Option<Termination> = None;
    let mut jtj = SMatrix::<f64, N, N>::zeros();
    let mut grad = SVector::<f64, N>::zeros();

    while iterations < opts.max_iterations {
        if needs_normal_eq {
            normal_equations(&jac, &r, &mut jtj, &mut grad);
            for i in 0..N {
                diag[i] = diag[i].max(jtj[(i, i)]);
            }
            if mu == 0.0 {
                let max_diag = (0..N).map(|i| jtj[(i, i)]).fold(0.0, f64::max);
                mu = 1e-3 * max_diag.max(f64::MIN_POSITIVE);
            }
            needs_normal_eq = false;
        }
        if 2.0 * cost <= zero_level * zero_level {
            termination = Termination::ZeroResidual;
            break;
        }
        let free = free_set(&x, &grad, &lower, &upper);
        if scaled_gradient(&jtj, &grad, &free, cost, zero_level) <= opts.gradient_tol {
            termination = stagnation.unwrap_or(Termination::Gradient);
            break;
        }
        stagnation = None;
        iterations += 1;

        // damped system restricted to free variables
        let floor = diag.iter().cloned().fold(0.0, f64::max) * 1e-15 + f64::MIN_POSITIVE;
        let mut a = jtj;
        let mut b = -grad;
        for i in 0..N {
            if free[i] {
                a[(i, i)] += mu * diag[i].max(floor);
            } else {
                for j in 0..N {
                    a[(i, j)] = 0.0;
                    a[(j, i)] = 0.0;
                }
                a[(i, i)] = 1.0;
                b[i] = 0.0;
            }
        }
        let Some(chol) = a.cholesky() else {
            mu *= nu;
            nu *= 2.0;
            if !mu.is_finite() || mu > 1e300 {
                termination = Termination::Stalled;
                break;
            }
            continue;
        };
        let mut delta = chol.solve(&b);
        if let Some(cap) = opts.max_step {
            let longest = delta.amax();
            if longest > cap {
                delta *= cap / longest;
            }
        }
        let trial = project(std::array::from_fn(|i| x[i] + delta[i]));
        let step = SVector::<f64, N>::from_fn(|i, _| trial[i] - x[i]);
        let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let step_small = step.norm() <= opts.step_tol * (x_norm + opts.step_tol);

        // predicted reduction of the linearized cost along the projected step
        let predicted = -(grad.dot(&step) + 0.5 * step.dot(&(jtj * step)));
        problem.residuals(&trial, &mut r_trial);
        evaluations += 1;
        // difference of squares without cancellation
        let actual: f64 = 0.5 * r.iter().zip(&r_trial).map(|(a, b)| (a - b) * (a + b)).sum::<f64>();

        if predicted > 0.0 && actual > 0.0 {
            let rho = actual / predicted;
            x = trial;
            problem.residuals_and_jacobian(&x, &mut r, &mut jac);
            evaluations += 1;
            cost = half_norm2(&r);
            needs_normal_eq = true;
            mu *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
            nu = 2.0;
            if step_small {
                stagnation = Some(Termination::Step);
            } else if actual <= opts.cost_tol * (cost + actual) && predicted <= opts.cost_tol * (cost + actual) {
                stagnation = Some(Termination::Cost);
            }
        } else {
            // a clipped step can predict an increase, which says nothing
            // about stationarity
            if predicted >= 0.0 && predicted <= 16.0 * f64::EPSILON * cost {
                termination = Termination::Precision;
                break;
            }
            mu *= nu;
            nu *= 2.0;
            if !mu.is_finite() || mu > 1e300 {
                termination = Termination::Stalled;
                break;
            }
        }
    }

    if needs_normal_eq {
        normal_equations(&jac, &r, &mut jtj, &mut grad);
    }
    let free = free_set(&x, &grad, &lower, &upper);
    let scaled = scaled_gradient(&jtj, &grad, &free, cost, zero_level);
    LmReport {
        x,
        cost,
        iterations,
        evaluations,
        termination,
        scaled_gradient: scaled,
        residuals: r,
        jacobian: jac,
    }
}

fn half_norm2(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

fn normal_equations<const N: usize>(
    jac: &[[f64; N]],
    r: &[f64],
    jtj: &mut SMatrix<f64, N, N>,
    grad: &mut SVector<f64, N>,
) {
    jtj.fill(0.0);
    grad.fill(0.0);
    for (row, &ri) in jac.iter().zip(r) {
        for i in 0..N {
            grad[i] += row[i] * ri;
            for j in 0..=i {
                jtj[(i, j)] += row[i] * row[j];
            }
        }
    }
    for i in 0..N {
        for j in 0..i {
            jtj[(j, i)] = jtj[(i, j)];
        }
    }
}

/// A variable is free unless it sits on a bound and the descent direction
/// points outside the box.
fn free_set<const N: usize>(
    x: &[f64; N],
    grad: &SVector<f64, N>,
    lower: &[f64; N],
    upper: &[f64; N],
) -> [bool; N] {
    std::array::from_fn(|i| !((x[i] <= lower[i] && grad[i] > 0.0) || (x[i] >= upper[i] && grad[i] < 0.0)))
}

/// Largest cosine between the residual and a free Jacobian column,
/// `|J_i . r| / (|J_i| |r|)`. Zero columns and bound-blocked variables
/// contribute nothing. This is MINPACK's scale-free gradient test. A
/// residual at or below `zero_level` has no meaningful direction and
/// scores 0.
pub fn scaled_gradient<const N: usize>(
    jtj: &SMatrix<f64, N, N>,
    grad: &SVector<f64, N>,
    free: &[bool; N],
    cost: f64,
    zero_level: f64,
) -> f64 {
    let r_norm = (2.0 * cost).sqrt();
    if r_norm <= zero_level {
        return 0.0;
    }
    (0..N)
        .filter(|&i| free[i] && jtj[(i, i)] > 0.0)
        .map(|i| grad[i].abs() / (jtj[(i, i)].sqrt() * r_norm))
        .fold(0.0, f64::max)
}
