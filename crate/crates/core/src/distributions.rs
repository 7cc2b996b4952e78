//! Per-node service-time distributions.
//!
//! Only the first two moments enter the closed-form analysis; the simulator
//! draws from the full distribution.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServiceDistribution {
    Exponential {
        mean: f64,
    },
    /// Two-phase mixture: rate `rate1` with probability `p1`, else `rate2`.
    HyperExponential2 {
        p1: f64,
        rate1: f64,
        rate2: f64,
    },
    Deterministic {
        value: f64,
    },
}

impl ServiceDistribution {
    pub fn exponential(mean: f64) -> Result<Self> {
        if !(mean > 0.0 && mean.is_finite()) {
            return Err(Error::InvalidArgument(format!("exponential mean must be > 0, got {mean}")));
        }
        Ok(Self::Exponential { mean })
    }

    pub fn hyper_exponential(p1: f64, rate1: f64, rate2: f64) -> Result<Self> {
        if !(p1 > 0.0 && p1 < 1.0) {
            return Err(Error::InvalidArgument(format!("phase probability must lie in (0,1), got {p1}")));
        }
        if !(rate1 > 0.0 && rate2 > 0.0 && rate1.is_finite() && rate2.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "phase rates must be positive, got {rate1} and {rate2}"
            )));
        }
        Ok(Self::HyperExponential2 { p1, rate1, rate2 })
    }

    pub fn deterministic(value: f64) -> Result<Self> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::InvalidArgument(format!("deterministic value must be > 0, got {value}")));
        }
        Ok(Self::Deterministic { value })
    }

    /// Checks the parameter invariants of a value built without a constructor
    /// (e.g. deserialized).
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Exponential { mean } => Self::exponential(mean).map(|_| ()),
            Self::HyperExponential2 { p1, rate1, rate2 } => {
                Self::hyper_exponential(p1, rate1, rate2).map(|_| ())
            }
            Self::Deterministic { value } => Self::deterministic(value).map(|_| ()),
        }
    }

    /// Raw moment of order 1 or 2.
    pub fn moment(&self, order: u32) -> Result<f64> {
        match order {
            1 => Ok(self.mean()),
            2 => Ok(self.second_moment()),
            _ => Err(Error::InvalidArgument(format!("moment order must be 1 or 2, got {order}"))),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Self::Exponential { mean } => mean,
            Self::HyperExponential2 { p1, rate1, rate2 } => p1 / rate1 + (1.0 - p1) / rate2,
            Self::Deterministic { value } => value,
        }
    }

    pub fn second_moment(&self) -> f64 {
        match *self {
            Self::Exponential { mean } => 2.0 * mean * mean,
            Self::HyperExponential2 { p1, rate1, rate2 } => {
                2.0 * p1 / (rate1 * rate1) + 2.0 * (1.0 - p1) / (rate2 * rate2)
            }
            Self::Deterministic { value } => value * value,
        }
    }

    /// Squared coefficient of variation.
    pub fn scv(&self) -> f64 {
        let m = self.mean();
        self.second_moment() / (m * m) - 1.0
    }

    /// Mean residual service time, second moment over twice the mean.
    pub fn residual_mean(&self) -> f64 {
        self.second_moment() / (2.0 * self.mean())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Exponential { mean } => mean * sample_exp1(rng),
            Self::HyperExponential2 { p1, rate1, rate2 } => {
                let rate = if rng.random::<f64>() < p1 { rate1 } else { rate2 };
                sample_exp1(rng) / rate
            }
            Self::Deterministic { value } => value,
        }
    }

    pub fn is_exponential(&self) -> bool {
        matches!(self, Self::Exponential { .. })
    }
}

fn sample_exp1<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let e: f64 = Exp1.sample(rng);
    e
}

/// Two-phase hyper-exponential with balanced means matching `mean` and `scv`.
///
/// `scv == 1` gives an exponential.
pub fn fit_hyperexp(mean: f64, scv: f64) -> Result<ServiceDistribution> {
    if !(mean > 0.0 && mean.is_finite()) {
        return Err(Error::InvalidArgument(format!("mean must be > 0, got {mean}")));
    }
    if !(scv >= 1.0 && scv.is_finite()) {
        return Err(Error::InvalidArgument(format!("hyper-exponential fit needs scv >= 1, got {scv}")));
    }
    if scv == 1.0 {
        return ServiceDistribution::exponential(mean);
    }
    let p1 = 0.5 * (1.0 + ((scv - 1.0) / (scv + 1.0)).sqrt());
    ServiceDistribution::hyper_exponential(p1, 2.0 * p1 / mean, 2.0 * (1.0 - p1) / mean)
}
