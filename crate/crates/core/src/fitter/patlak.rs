//! Patlak-Gjedde graphical analysis.
//!
//! For an irreversibly trapped tracer the late-frame points
//! `(int_0^t A / A(t), C(t) / A(t))` fall on a line whose slope is the net
//! influx rate Ki. A(t) is taken as the frame average of the input so both
//! coordinates share the frame-averaged measurement's time base; the
//! cumulative integral runs to the frame midpoint.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinetic::{Frame, FrameSchedule, InputFunction};

pub const DEFAULT_T_STAR_S: f64 = 20.0 * 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatlakResult {
    /// Ki in ml/cm^3/min.
    pub ki_slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub t_star_s: f64,
    pub frames_used: usize,
}

/// Patlak coordinates `(x, y)` of one frame, x in minutes.
pub fn patlak_point(frame: &Frame, activity: f64, input: &InputFunction) -> Result<(f64, f64)> {
    let a = input.average(frame.start_s, frame.end_s());
    if a <= 0.0 {
        return Err(Error::domain(format!(
            "input function is zero over the frame starting at {} s; Patlak coordinates undefined",
            frame.start_s
        )));
    }
    Ok((input.integral_to(frame.mid_s()) / a, activity / a))
}

/// Ordinary least squares on the Patlak coordinates of frames whose
/// midpoint is at or after `t_star_s`.
pub fn patlak(
    tac: &[f64],
    input: &InputFunction,
    schedule: &FrameSchedule,
    t_star_s: f64,
) -> Result<PatlakResult> {
    if tac.len() != schedule.len() {
        return Err(Error::DimensionMismatch {
            what: "TAC length vs frame schedule",
            expected: schedule.len().to_string(),
            actual: tac.len().to_string(),
        });
    }
    let first = schedule
        .frames()
        .iter()
        .position(|f| f.mid_s() >= t_star_s)
        .unwrap_or(schedule.len());
    let used = schedule.len() - first;
    if used < 3 {
        return Err(Error::domain(format!(
            "Patlak needs at least 3 frames after t* = {t_star_s} s, found {used}"
        )));
    }
    if !input.covers(schedule.end_time_s()) {
        return Err(Error::domain("input function does not cover the schedule"));
    }
    let pts = schedule.frames()[first..]
        .iter()
        .zip(&tac[first..])
        .map(|(f, &c)| patlak_point(f, c, input))
        .collect::<Result<Vec<_>>>()?;

    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::domain("Patlak abscissa is constant over the late frames"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    // a flat plateau has no variance to explain
    let flat = syy <= (1e-12 * my.abs()).powi(2) * n;
    let r_squared = if flat {
        0.0
    } else {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(PatlakResult {
        ki_slope: slope,
        intercept,
        r_squared,
        t_star_s,
        frames_used: used,
    })
}
