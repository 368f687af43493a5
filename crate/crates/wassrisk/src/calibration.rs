//! Radius selection for ambiguity balls: the finite-sample confidence radius
//! built from measure-concentration constants, and the shrinking radius
//! schedule that keeps the robust optimum consistent as samples accumulate.
//!
//! The concentration constants `c1` and `c2` are deliberately mandatory.
//! They depend on the tail exponent, the tail moment, and the dimension in a
//! way this crate cannot estimate from data, and inventing defaults would
//! manufacture confidence the inputs do not carry.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::RiskSpec;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("confidence level {0} is outside (0, 1)")]
    BadConfidence(f64),
    #[error("{name} must be {requirement}; got {value}")]
    BadConstant { name: &'static str, requirement: &'static str, value: f64 },
    #[error("sample count must be positive")]
    NoSamples,
    #[error("dimension must be positive")]
    NoDimension,
    #[error("schedule outside the admissible window: {0}")]
    ScheduleOutsideWindow(String),
}

/// Inputs of the finite-sample radius formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationInputs {
    /// Sample count.
    pub n: usize,
    /// Confidence level in (0, 1): the guarantee fails with probability at
    /// most `eta`.
    pub eta: f64,
    /// Sample space dimension.
    pub m: usize,
    /// Light-tail exponent, > 1: the sampled distribution must have a finite
    /// exponential moment of this order.
    pub a: f64,
    /// Concentration constants, > 0. They come from the concentration
    /// inequality for the sampled distribution (via its tail exponent,
    /// tail moment, and dimension) and must be supplied by the caller.
    pub c1: f64,
    pub c2: f64,
    /// Envelope constant of the aggregation family; scales the plain
    /// transport radius up to the risk-aggregated ball.
    pub c: f64,
}

impl CalibrationInputs {
    /// Inputs with the envelope constant taken from the risk specification,
    /// so the two can never drift apart.
    pub fn for_risk(
        n: usize,
        eta: f64,
        m: usize,
        a: f64,
        c1: f64,
        c2: f64,
        risk: RiskSpec,
    ) -> Result<Self, CalibrationError> {
        let inputs = CalibrationInputs { n, eta, m, a, c1, c2, c: risk.envelope_constant() };
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        if self.n == 0 {
            return Err(CalibrationError::NoSamples);
        }
        if self.m == 0 {
            return Err(CalibrationError::NoDimension);
        }
        if !self.eta.is_finite() || self.eta <= 0.0 || self.eta >= 1.0 {
            return Err(CalibrationError::BadConfidence(self.eta));
        }
        for (name, value) in [("c1", self.c1), ("c2", self.c2)] {
            if !value.is_finite() || value <= 0.0 {
                return Err(CalibrationError::BadConstant {
                    name,
                    requirement: "a finite positive constant",
                    value,
                });
            }
        }
        if !self.a.is_finite() || self.a <= 1.0 {
            return Err(CalibrationError::BadConstant {
                name: "a",
                requirement: "a finite exponent > 1",
                value: self.a,
            });
        }
        // An unbounded envelope (the ess-sup family) admits no finite-sample
        // radius at all.
        if !self.c.is_finite() || self.c <= 0.0 {
            return Err(CalibrationError::BadConstant {
                name: "c",
                requirement: "a finite positive envelope constant",
                value: self.c,
            });
        }
        Ok(())
    }

    /// The effective dimension exponent `max(m, 2)`.
    pub fn m2(&self) -> f64 {
        self.m.max(2) as f64
    }
}

/// Confidence radius at sample count `n`: with probability at least
/// `1 - eta`, the true expected loss of the robust minimizer stays below the
/// robust optimal value when the ball uses this radius.
///
/// With `e0 = log(c1 / eta) / (c2 n)`, the radius is `c e0^(1/m2)` in the
/// small-`e0` regime (`e0 <= c`) and `c e0^(1/a)` otherwise. The two branches
/// do not meet at `e0 = c` unless `a = m2`, so the radius as defined may jump
/// there; it is evaluated exactly as written. Confidence levels at or above
/// `c1` make the log nonpositive and the radius floors at zero: the guarantee
/// already holds without robustness.
pub fn radius_finite_sample(inputs: &CalibrationInputs) -> Result<f64, CalibrationError> {
    inputs.validate()?;
    let e0 = ((inputs.c1 / inputs.eta).ln() / (inputs.c2 * inputs.n as f64)).max(0.0);
    let radius = if e0 <= inputs.c {
        inputs.c * e0.powf(1.0 / inputs.m2())
    } else {
        inputs.c * e0.powf(1.0 / inputs.a)
    };
    Ok(radius)
}

/// Radius schedule descriptor for the consistency regime: the schedule `k_n`
/// must grow without bound but below every power `n^d` with `d < 1`, so the
/// radius `(k_n / n)^(1/m2)` shrinks to zero slowly enough to keep the true
/// distribution inside the ball eventually.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Schedule {
    /// The built-in window member `k_n = (log n)^2`.
    LogSquared,
    /// `k_n = n^p`; admissible exactly when `0 < p < 1`.
    Power { p: f64 },
    /// A raw schedule value for this `n`, trusted to come from a
    /// window-compliant schedule. No asymptotic check is possible for a
    /// single number.
    Value(f64),
}

/// Radius `(k_n / n)^(1/m2)` at (real-valued) sample count `n` under the
/// given schedule. Schedules outside the admissible window are rejected.
pub fn radius_schedule(n: f64, schedule: &Schedule, m: usize) -> Result<f64, CalibrationError> {
    if m == 0 {
        return Err(CalibrationError::NoDimension);
    }
    if !n.is_finite() || n <= 1.0 {
        return Err(CalibrationError::NoSamples);
    }
    let k = match *schedule {
        Schedule::LogSquared => n.ln().powi(2),
        Schedule::Power { p } => {
            if !p.is_finite() || p <= 0.0 {
                return Err(CalibrationError::ScheduleOutsideWindow(format!(
                    "k_n = n^{p} stays bounded, so log n / k_n cannot vanish"
                )));
            }
            if p >= 1.0 {
                return Err(CalibrationError::ScheduleOutsideWindow(format!(
                    "k_n = n^{p} grows at least linearly, so k_n / n^d cannot vanish for d < 1"
                )));
            }
            n.powf(p)
        }
        Schedule::Value(k) => {
            if !k.is_finite() || k <= 0.0 {
                return Err(CalibrationError::BadConstant {
                    name: "k_n",
                    requirement: "a finite positive schedule value",
                    value: k,
                });
            }
            k
        }
    };
    let m2 = m.max(2) as f64;
    Ok((k / n).powf(1.0 / m2))
}
