//! Scalar Gauss–Markov plant and the remote estimator's error dynamics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `x[n+1] = a x[n] + w[n]`, `w ~ N(0, sigma2)`, known `x0`, horizon `N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantModel {
    pub a: f64,
    pub sigma2: f64,
    pub x0: f64,
    pub horizon: usize,
}

impl PlantModel {
    pub fn new(a: f64, sigma2: f64, x0: f64, horizon: usize) -> Result<Self> {
        let plant = Self { a, sigma2, x0, horizon };
        plant.validate()?;
        Ok(plant)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise variance must be positive, got {}",
                self.sigma2
            )));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be >= 1".into()));
        }
        if !self.a.is_finite() || !self.x0.is_finite() {
            return Err(Error::InvalidArgument("plant parameters must be finite".into()));
        }
        Ok(())
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }
}

/// Error recursion valid under symmetric policies: reset on delivery,
/// otherwise propagate through the plant.
pub fn error_step(plant: &PlantModel, e: f64, delivered: bool, w: f64) -> f64 {
    if delivered {
        0.0
    } else {
        plant.a * e + w
    }
}

/// Total expected squared error over the horizon when nothing is ever
/// delivered, starting from a known initial state.
pub fn predicted_open_loop_cost(plant: &PlantModel) -> f64 {
    let a2 = plant.a * plant.a;
    let mut var = 0.0;
    let mut total = 0.0;
    for _ in 0..plant.horizon {
        var = a2 * var + plant.sigma2;
        total += var;
    }
    total
}

/// Remote estimate and the matching estimation error.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EstimatorState {
    pub estimate: f64,
    pub error: f64,
}

impl EstimatorState {
    /// Estimator that knows the initial state exactly.
    pub fn known(x0: f64) -> Self {
        Self { estimate: x0, error: 0.0 }
    }

    /// Advances the conditional-mean estimator of a symmetric policy one step:
    /// `x` is the new plant state, `delivered` whether it reached the estimator.
    pub fn advance(&mut self, plant: &PlantModel, x: f64, delivered: bool) {
        self.estimate = if delivered { x } else { plant.a * self.estimate };
        self.error = x - self.estimate;
    }
}
