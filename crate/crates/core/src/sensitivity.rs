//! Weight bounds from a causal sensitivity model.
//!
//! A sensitivity model turns the nominal propensity `e_t(x)` of the scored
//! arm into an interval `[lower, upper]` straddling 1 that every ensemble
//! weight must respect. The marginal sensitivity model (MSM) for binary
//! treatments is built in; other models plug in through
//! [`WeightBoundsProvider`].

use serde::{Deserialize, Serialize};

use crate::error::{ModensError, Result};

/// Propensities are clamped into `[ε, 1-ε]` before bounds are computed.
pub const DEFAULT_PROPENSITY_CLAMP: f64 = 1e-3;

/// Strength `Γ ≥ 1` of the allowed violation of ignorability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityConfig {
    gamma: f64,
}

impl SensitivityConfig {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma >= 1.0) {
            return Err(ModensError::domain(format!(
                "sensitivity parameter gamma must be finite and >= 1, got {gamma}"
            )));
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// Admissible range for ensemble weights at one `(t, x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WeightBounds {
    lower: f64,
    upper: f64,
}

impl WeightBounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower > 0.0 && lower <= 1.0 && upper >= 1.0 && upper.is_finite()) {
            return Err(ModensError::domain(format!(
                "weight bounds must satisfy 0 < lower <= 1 <= upper < inf, got [{lower}, {upper}]"
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn contains(&self, w: f64) -> bool {
        w >= self.lower && w <= self.upper
    }

    /// True when no weight other than 1 is admissible.
    pub fn is_identity(&self) -> bool {
        self.lower == 1.0 && self.upper == 1.0
    }
}

pub fn identity_bounds() -> WeightBounds {
    WeightBounds {
        lower: 1.0,
        upper: 1.0,
    }
}

/// MSM weight bounds for nominal propensity `e` of the scored arm.
///
/// `lower = e + (1-e)/Γ`, `upper = e + Γ(1-e)`, evaluated as deviations from 1
/// so that `Γ = 1` yields exactly `(1, 1)` and the straddle holds exactly.
pub fn msm_bounds(e: f64, cfg: SensitivityConfig) -> Result<WeightBounds> {
    if !(0.0..=1.0).contains(&e) {
        return Err(ModensError::domain(format!(
            "propensity must lie in [0, 1], got {e}"
        )));
    }
    let gamma = cfg.gamma;
    let rest = 1.0 - e;
    let lower = 1.0 - (1.0 - 1.0 / gamma) * rest;
    let upper = 1.0 + (gamma - 1.0) * rest;
    WeightBounds::new(lower, upper)
}

pub fn clamp_propensity(e: f64, clamp: f64) -> f64 {
    e.clamp(clamp, 1.0 - clamp)
}

/// Elementwise [`msm_bounds`] after clamping each propensity to `[ε, 1-ε]`.
pub fn bounds_for_dataset(
    propensities: &[f64],
    cfg: SensitivityConfig,
    clamp: f64,
) -> Result<Vec<WeightBounds>> {
    propensities
        .iter()
        .map(|&e| {
            if !(0.0..=1.0).contains(&e) {
                return Err(ModensError::domain(format!(
                    "propensity must lie in [0, 1], got {e}"
                )));
            }
            msm_bounds(clamp_propensity(e, clamp), cfg)
        })
        .collect()
}

/// Source of weight bounds for a query point.
///
/// `propensity` is the nominal propensity `e_t(x)` of the arm `treatment`.
pub trait WeightBoundsProvider: Send + Sync {
    fn bounds(&self, treatment: u8, covariates: &[f64], propensity: f64) -> Result<WeightBounds>;
}

/// Binary-treatment marginal sensitivity model.
#[derive(Clone, Copy, Debug)]
pub struct MarginalSensitivityModel {
    pub config: SensitivityConfig,
    pub clamp: f64,
}

impl MarginalSensitivityModel {
    pub fn new(config: SensitivityConfig) -> Self {
        Self {
            config,
            clamp: DEFAULT_PROPENSITY_CLAMP,
        }
    }
}

impl WeightBoundsProvider for MarginalSensitivityModel {
    fn bounds(&self, _treatment: u8, _covariates: &[f64], propensity: f64) -> Result<WeightBounds> {
        if !(0.0..=1.0).contains(&propensity) {
            return Err(ModensError::domain(format!(
                "propensity must lie in [0, 1], got {propensity}"
            )));
        }
        msm_bounds(clamp_propensity(propensity, self.clamp), self.config)
    }
}
