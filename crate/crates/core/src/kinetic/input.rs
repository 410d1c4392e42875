use crate::error::{Error, Result};
use crate::kinetic::schedule::FrameSchedule;

/// Arterial input function A(t) in Bq/ml.
///
/// Evaluated by piecewise-linear interpolation between samples, zero before
/// the first sample, and held at the last sample value up to `end_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputFunction {
    times_s: Vec<f64>,
    values: Vec<f64>,
    end_s: f64,
}

impl InputFunction {
    /// Point samples; coverage ends at the last sample time.
    pub fn from_samples(times_s: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let end = times_s.last().copied().unwrap_or(0.0);
        Self::with_coverage(times_s, values, end)
    }

    /// Point samples with the last value held until `end_s`.
    pub fn with_coverage(times_s: Vec<f64>, values: Vec<f64>, end_s: f64) -> Result<Self> {
        if times_s.is_empty() {
            return Err(Error::domain("input function has no samples"));
        }
        if times_s.len() != values.len() {
            return Err(Error::DimensionMismatch {
                what: "input function samples",
                expected: format!("{} values", times_s.len()),
                actual: format!("{} values", values.len()),
            });
        }
        if times_s[0] < 0.0 || !times_s.iter().all(|t| t.is_finite()) {
            return Err(Error::domain("input function times must be finite and non-negative"));
        }
        if let Some(i) = times_s.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::domain(format!(
                "input function times not strictly increasing at sample {}: {} -> {}",
                i + 1,
                times_s[i],
                times_s[i + 1]
            )));
        }
        if let Some(i) = values.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::domain(format!(
                "input function value {} at sample {i} must be finite and non-negative",
                values[i]
            )));
        }
        let last = *times_s.last().unwrap();
        if end_s < last {
            return Err(Error::domain(format!(
                "coverage end {end_s} s precedes the last sample at {last} s"
            )));
        }
        Ok(Self {
            times_s,
            values,
            end_s,
        })
    }

    /// Treats each value as the activity at the midpoint of the matching
    /// frame; coverage extends to the end of the schedule.
    pub fn from_frame_values(schedule: &FrameSchedule, values: Vec<f64>) -> Result<Self> {
        if values.len() != schedule.len() {
            return Err(Error::DimensionMismatch {
                what: "input function frames",
                expected: format!("{} frames", schedule.len()),
                actual: format!("{} values", values.len()),
            });
        }
        Self::with_coverage(schedule.mid_times_s(), values, schedule.end_time_s())
    }

    /// Samples `f(t_s)` on a uniform grid `0, step, ..., >= end_s`.
    pub fn sample_fn(f: impl Fn(f64) -> f64, step_s: f64, end_s: f64) -> Result<Self> {
        if !(step_s > 0.0) || !(end_s > 0.0) {
            return Err(Error::config("sampling step and horizon must be positive"));
        }
        let n = (end_s / step_s).ceil() as usize;
        let times: Vec<f64> = (0..=n).map(|i| i as f64 * step_s).collect();
        let values = times.iter().map(|&t| f(t)).collect();
        Self::from_samples(times, values)
    }

    pub fn times_s(&self) -> &[f64] {
        &self.times_s
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Last time (s) at which A(t) is defined.
    pub fn end_s(&self) -> f64 {
        self.end_s
    }

    pub fn covers(&self, t_s: f64) -> bool {
        t_s <= self.end_s * (1.0 + 1e-12) + 1e-9
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// A(t). Times past the coverage end return the held last value.
    pub fn eval(&self, t_s: f64) -> f64 {
        let ts = &self.times_s;
        if t_s < ts[0] {
            return 0.0;
        }
        // index of the first sample strictly after t
        let hi = ts.partition_point(|&x| x <= t_s);
        if hi == ts.len() {
            return *self.values.last().unwrap();
        }
        let lo = hi - 1;
        let w = (t_s - ts[lo]) / (ts[hi] - ts[lo]);
        self.values[lo] + w * (self.values[hi] - self.values[lo])
    }

    /// Exact integral of the interpolant over `[0, t_s]`, in Bq/ml * min.
    pub fn integral_to(&self, t_s: f64) -> f64 {
        let (ts, vs) = (&self.times_s, &self.values);
        if t_s <= ts[0] {
            return 0.0;
        }
        let last = ts.partition_point(|&x| x <= t_s) - 1;
        let mut area: f64 = (1..=last)
            .map(|i| 0.5 * (vs[i - 1] + vs[i]) * (ts[i] - ts[i - 1]))
            .sum();
        area += 0.5 * (vs[last] + self.eval(t_s)) * (t_s - ts[last]);
        area / 60.0
    }

    /// Mean of A over `[start_s, end_s]`.
    pub fn average(&self, start_s: f64, end_s: f64) -> f64 {
        (self.integral_to(end_s) - self.integral_to(start_s)) * 60.0 / (end_s - start_s)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::with_coverage(
            self.times_s.clone(),
            self.values.iter().map(|v| v * factor).collect(),
            self.end_s,
        )
    }
}
