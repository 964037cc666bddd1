//! Weibull cloud-mediation delay model.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SimError;

/// Shape `beta` and scale `lambda` (seconds) of a Weibull distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullParams {
    beta: f64,
    lambda: f64,
}

impl WeibullParams {
    /// Delay model fitted to cloud-mediated IoT round trips: shape 0.5, scale 6.37 s.
    pub const CLOUD: WeibullParams = WeibullParams { beta: 0.5, lambda: 6.37 };

    pub fn new(beta: f64, lambda: f64) -> Result<Self, SimError> {
        if !(beta > 0.0 && beta.is_finite() && lambda > 0.0 && lambda.is_finite()) {
            return Err(SimError::InvalidConfig(format!("weibull parameters must be positive, got ({beta}, {lambda})")));
        }
        Ok(Self { beta, lambda })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        let z = x / self.lambda;
        (self.beta / self.lambda) * z.powf(self.beta - 1.0) * (-z.powf(self.beta)).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        -(-(x / self.lambda).powf(self.beta)).exp_m1()
    }

    /// Inverse CDF: `lambda * (-ln(1 - u))^(1/beta)`.
    pub fn quantile(&self, u: f64) -> Result<f64, SimError> {
        if !(u > 0.0 && u < 1.0) {
            return Err(SimError::DomainError(u));
        }
        Ok(self.lambda * (-(-u).ln_1p()).powf(1.0 / self.beta))
    }

    pub fn median(&self) -> f64 {
        self.lambda * std::f64::consts::LN_2.powf(1.0 / self.beta)
    }

    /// One draw by inverse transform of an open-interval uniform.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let u: f64 = rng.gen();
            if u > 0.0 {
                return self.quantile(u).expect("u in (0,1)");
            }
        }
    }
}

/// Free-function form of [`WeibullParams::quantile`].
pub fn sample_weibull(p: &WeibullParams, u: f64) -> Result<f64, SimError> {
    p.quantile(u)
}
