use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Micro-parameters of the irreversible two-tissue compartment model.
///
/// Rates are per minute; `k1` is in ml/cm^3/min and `vb` is the
/// dimensionless blood volume fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KineticParams {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub vb: f64,
}

pub const PARAM_NAMES: [&str; 4] = ["K1", "k2", "k3", "VB"];

impl KineticParams {
    pub const fn new(k1: f64, k2: f64, k3: f64, vb: f64) -> Self {
        Self { k1, k2, k3, vb }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.k1, self.k2, self.k3, self.vb]
    }

    /// Combined clearance out of the free pool, `k2 + k3`.
    pub fn total_rate(&self) -> f64 {
        self.k2 + self.k3
    }

    /// Checks the physical invariants: non-negative finite rates and
    /// `0 <= vb <= 1`.
    pub fn validate(&self) -> Result<()> {
        let a = self.to_array();
        if let Some(i) = a.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("{} is not finite", PARAM_NAMES[i])));
        }
        if let Some(i) = a[..3].iter().position(|&v| v < 0.0) {
            return Err(Error::domain(format!(
                "{} = {} is negative",
                PARAM_NAMES[i], a[i]
            )));
        }
        if !(0.0..=1.0).contains(&self.vb) {
            return Err(Error::domain(format!("VB = {} outside [0, 1]", self.vb)));
        }
        Ok(())
    }

    /// Like [`validate`](Self::validate), additionally requiring `k2 + k3 > 0`.
    pub fn validate_closed_form(&self) -> Result<()> {
        self.validate()?;
        if self.total_rate() <= 0.0 {
            return Err(Error::domain("k2 + k3 must be positive"));
        }
        Ok(())
    }
}

/// Closed interval for one parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    /// Projection onto the interval. NaN maps to the lower end.
    pub fn project(&self, v: f64) -> f64 {
        if v.is_nan() {
            self.lo
        } else {
            v.clamp(self.lo, self.hi)
        }
    }
}

/// Per-parameter box constraints in (K1, k2, k3, VB) order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub k1: Interval,
    pub k2: Interval,
    pub k3: Interval,
    pub vb: Interval,
}

impl Default for ParamBounds {
    fn default() -> Self {
        Self::multi_clamp()
    }
}

impl ParamBounds {
    /// The valid parameter box used as the network's final activation:
    /// K1 in [0.01, 2], k2 in [0.01, 3], k3 in [0.01, 1], VB in [0, 1].
    pub const fn multi_clamp() -> Self {
        Self {
            k1: Interval::new(0.01, 2.0),
            k2: Interval::new(0.01, 3.0),
            k3: Interval::new(0.01, 1.0),
            vb: Interval::new(0.0, 1.0),
        }
    }

    /// Non-negative rates with VB restricted to a fraction.
    pub const fn nonnegative() -> Self {
        Self {
            k1: Interval::new(0.0, f64::INFINITY),
            k2: Interval::new(0.0, f64::INFINITY),
            k3: Interval::new(0.0, f64::INFINITY),
            vb: Interval::new(0.0, 1.0),
        }
    }

    pub fn new(intervals: [Interval; 4]) -> Result<Self> {
        let b = Self {
            k1: intervals[0],
            k2: intervals[1],
            k3: intervals[2],
            vb: intervals[3],
        };
        b.validate()?;
        Ok(b)
    }

    pub fn intervals(&self) -> [Interval; 4] {
        [self.k1, self.k2, self.k3, self.vb]
    }

    pub fn lower(&self) -> [f64; 4] {
        self.intervals().map(|i| i.lo)
    }

    pub fn upper(&self) -> [f64; 4] {
        self.intervals().map(|i| i.hi)
    }

    pub fn validate(&self) -> Result<()> {
        for (iv, name) in self.intervals().iter().zip(PARAM_NAMES) {
            if iv.lo.is_nan() || iv.hi.is_nan() || iv.lo > iv.hi {
                return Err(Error::config(format!(
                    "bounds for {name} are not an interval: [{}, {}]",
                    iv.lo, iv.hi
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &KineticParams) -> bool {
        self.intervals()
            .iter()
            .zip(p.to_array())
            .all(|(iv, v)| iv.contains(v))
    }

    pub fn project(&self, p: &KineticParams) -> KineticParams {
        multi_clamp(p.to_array(), self)
    }
}

/// Componentwise projection of an unconstrained 4-vector onto `bounds`.
pub fn multi_clamp(raw: [f64; 4], bounds: &ParamBounds) -> KineticParams {
    let iv = bounds.intervals();
    KineticParams::from_array(std::array::from_fn(|i| iv[i].project(raw[i])))
}

/// Net influx rate `Ki = K1 k3 / (k2 + k3)`.
pub fn macro_ki(p: &KineticParams) -> Result<f64> {
    let total = p.total_rate();
    if total <= 0.0 || !total.is_finite() {
        return Err(Error::domain("Ki undefined: k2 + k3 must be positive"));
    }
    Ok(p.k1 * p.k3 / total)
}

/// Tissue impulse response `h(t) = K1/(k2+k3) [k3 + k2 exp(-(k2+k3) t)]`,
/// `t` in minutes.
pub fn impulse_response(p: &KineticParams, t_min: f64) -> Result<f64> {
    let total = p.total_rate();
    if total <= 0.0 || !total.is_finite() {
        return Err(Error::domain("impulse response undefined: k2 + k3 must be positive"));
    }
    if !(t_min >= 0.0) {
        return Err(Error::domain(format!("time {t_min} must be non-negative")));
    }
    Ok(p.k1 / total * (p.k3 + p.k2 * (-total * t_min).exp()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const LIVER: KineticParams = KineticParams::new(0.611, 0.793, 0.014, 0.005);

    #[test]
    fn impulse_response_starts_at_k1() {
        assert_relative_eq!(impulse_response(&LIVER, 0.0).unwrap(), 0.611, epsilon = 1e-15);
    }

    #[test]
    fn impulse_response_tends_to_ki() {
        let ki = macro_ki(&LIVER).unwrap();
        assert_relative_eq!(impulse_response(&LIVER, 1e3).unwrap(), ki, epsilon = 1e-15);
        // 0.611 * 0.014 / 0.807
        assert_relative_eq!(ki, 0.010_599_752_168_525_4, max_relative = 1e-12);
        assert!((ki - 0.0106).abs() < 5e-5);
    }

    #[test]
    fn impulse_response_rejects_bad_domain() {
        let p = KineticParams::new(0.5, 0.0, 0.0, 0.0);
        assert!(matches!(impulse_response(&p, 1.0), Err(Error::Domain(_))));
        assert!(matches!(impulse_response(&LIVER, -1.0), Err(Error::Domain(_))));
        assert!(matches!(impulse_response(&LIVER, f64::NAN), Err(Error::Domain(_))));
    }

    #[test]
    fn ki_limits() {
        assert_eq!(macro_ki(&KineticParams::new(0.4, 0.3, 0.0, 0.0)).unwrap(), 0.0);
        assert_relative_eq!(macro_ki(&KineticParams::new(0.4, 0.0, 0.2, 0.0)).unwrap(), 0.4, max_relative = 1e-15);
        assert!(macro_ki(&KineticParams::new(0.4, 0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn clamp_examples() {
        let p = multi_clamp([5.0, -1.0, 0.5, 2.0], &ParamBounds::default());
        assert_eq!(p, KineticParams::new(2.0, 0.01, 0.5, 1.0));
        let inside = [0.3, 0.4, 0.05, 0.2];
        assert_eq!(multi_clamp(inside, &ParamBounds::default()).to_array(), inside);
    }

    #[test]
    fn clamp_maps_nan_to_lower_bound() {
        let p = multi_clamp([f64::NAN; 4], &ParamBounds::default());
        assert_eq!(p.to_array(), ParamBounds::default().lower());
    }

    #[test]
    fn bounds_reject_inverted_interval() {
        let mut iv = ParamBounds::default().intervals();
        iv[2] = Interval::new(1.0, 0.5);
        assert!(ParamBounds::new(iv).is_err());
    }

    fn any_f64() -> impl Strategy<Value = f64> {
        prop_oneof![-1e3..1e3f64, Just(f64::INFINITY), Just(f64::NEG_INFINITY)]
    }

    proptest! {
        #[test]
        fn clamp_is_idempotent_projection(raw in prop::array::uniform4(any_f64())) {
            let b = ParamBounds::default();
            let once = multi_clamp(raw, &b);
            prop_assert!(b.contains(&once));
            prop_assert!(once.validate().is_ok());
            prop_assert_eq!(multi_clamp(once.to_array(), &b), once);
        }

        #[test]
        fn clamp_is_non_expansive(
            x in prop::array::uniform4(-10.0..10.0f64),
            y in prop::array::uniform4(-10.0..10.0f64),
        ) {
            let b = ParamBounds::default();
            let (px, py) = (multi_clamp(x, &b).to_array(), multi_clamp(y, &b).to_array());
            for i in 0..4 {
                prop_assert!((px[i] - py[i]).abs() <= (x[i] - y[i]).abs());
            }
        }

        #[test]
        fn impulse_response_is_monotone_and_above_ki(
            k1 in 0.01..2.0f64, k2 in 0.01..3.0f64, k3 in 0.01..1.0f64,
            t1 in 0.0..100.0f64, dt in 0.0..100.0f64,
        ) {
            let p = KineticParams::new(k1, k2, k3, 0.0);
            let ki = macro_ki(&p).unwrap();
            let h1 = impulse_response(&p, t1).unwrap();
            let h2 = impulse_response(&p, t1 + dt).unwrap();
            prop_assert!(h2 <= h1 * (1.0 + 1e-15));
            prop_assert!(h2 >= ki * (1.0 - 1e-15));
        }
    }
}
