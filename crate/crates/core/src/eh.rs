//! Nonlinear rectifier model: maps RF input power to harvested DC power.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A strictly increasing, bounded RF-to-DC transfer curve with a closed-form
/// inverse. Solvers only see this trait, so the fitted curve below can be
/// swapped for any other saturating model.
pub trait HarvestCurve: Send + Sync {
    /// Harvested DC power for RF input `x >= 0` (W).
    fn forward(&self, x: f64) -> Result<f64>;

    /// RF input power needed to harvest `y` (W).
    fn inverse(&self, y: f64) -> Result<f64>;

    /// Supremum of `forward`; never attained.
    fn ceiling(&self) -> f64;
}

/// Rational saturation curve `F(x) = (a x + b)/(x + c) - b/c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EhModel {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Default for EhModel {
    fn default() -> Self {
        Self { a: 2.463, b: 1.635, c: 0.826 }
    }
}

impl EhModel {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        let m = Self { a, b, c };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) || !(self.a > self.b / self.c) {
            return Err(Error::Domain(format!(
                "EH model needs c > 0 and a > b/c (a={}, b={}, c={})",
                self.a, self.b, self.c
            )));
        }
        Ok(())
    }

    /// Slope at the origin, `(a c - b)/c^2`.
    pub fn small_signal_slope(&self) -> f64 {
        (self.a * self.c - self.b) / (self.c * self.c)
    }
}

impl HarvestCurve for EhModel {
    fn forward(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(Error::Domain(format!("RF input power must be nonnegative, got {x}")));
        }
        if x == f64::INFINITY {
            return Ok(self.ceiling());
        }
        // Same function as (a x + b)/(x + c) - b/c without the cancellation
        // between the two O(1) terms at small x.
        Ok(x * (self.a * self.c - self.b) / (self.c * (x + self.c)))
    }

    fn inverse(&self, y: f64) -> Result<f64> {
        if !(y >= 0.0) {
            return Err(Error::Domain(format!("DC power must be nonnegative, got {y}")));
        }
        let ceiling = self.ceiling();
        if y >= ceiling {
            return Err(Error::SaturationExceeded { target: y, ceiling });
        }
        Ok(self.c * y / (ceiling - y))
    }

    fn ceiling(&self) -> f64 {
        self.a - self.b / self.c
    }
}
