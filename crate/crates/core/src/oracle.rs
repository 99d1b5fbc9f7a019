//! Randomized greedy-versus-exhaustive checks of the quantile optimizer.

use rand::Rng;

use crate::dist::{default_tol, ComponentDistribution, Family};
use crate::error::Result;
use crate::modulate::{brute_force_extreme_quantile, check_optimality, maximize_quantile, minimize_quantile};
use crate::sensitivity::{msm_bounds, SensitivityConfig, WeightBounds};

pub const GAMMAS: [f64; 3] = [1.5, 3.0, 10.0];
pub const BETAS: [f64; 3] = [0.05, 0.5, 0.975];
/// Allowed greedy/brute-force gap, in units of `1 + max scale`.
pub const ORACLE_TOL: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct OracleInstance {
    pub components: Vec<ComponentDistribution>,
    pub gamma: f64,
    pub propensity: f64,
    pub bounds: WeightBounds,
    pub beta: f64,
}

impl OracleInstance {
    pub fn max_scale(&self) -> f64 {
        self.components.iter().map(|c| c.scale()).fold(0.0, f64::max)
    }
}

/// Locations in `U(-5, 5)`, scales in `U(0.2, 3)`, families mixed at random.
pub fn random_instance<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Result<OracleInstance> {
    let components = (0..m)
        .map(|_| {
            let family = if rng.random_bool(0.5) {
                Family::Gaussian
            } else {
                Family::Cauchy
            };
            ComponentDistribution::new(family, rng.random_range(-5.0..5.0), rng.random_range(0.2..3.0))
        })
        .collect::<Result<Vec<_>>>()?;
    let gamma = GAMMAS[rng.random_range(0..GAMMAS.len())];
    let propensity = rng.random_range(0.05..0.95);
    let beta = BETAS[rng.random_range(0..BETAS.len())];
    Ok(OracleInstance {
        components,
        gamma,
        propensity,
        bounds: msm_bounds(propensity, SensitivityConfig::new(gamma)?)?,
        beta,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleOutcome {
    /// Largest normalized gap over the maximization and minimization.
    pub deviation: f64,
    /// `check_optimality` accepted the greedy maximizer.
    pub certified: bool,
}

impl OracleOutcome {
    pub fn passes(&self) -> bool {
        self.deviation <= ORACLE_TOL && self.certified
    }
}

pub fn check_instance(inst: &OracleInstance) -> Result<OracleOutcome> {
    let tol = default_tol(&inst.components);
    let norm = 1.0 + inst.max_scale();
    let (q_max, w_max) = maximize_quantile(&inst.components, &inst.bounds, inst.beta, tol)?;
    let (q_min, _) = minimize_quantile(&inst.components, &inst.bounds, inst.beta, tol)?;
    let b_max = brute_force_extreme_quantile(&inst.components, &inst.bounds, inst.beta, true)?;
    let b_min = brute_force_extreme_quantile(&inst.components, &inst.bounds, inst.beta, false)?;
    let deviation = ((q_max - b_max).abs() / norm).max((q_min - b_min).abs() / norm);
    let certified = check_optimality(&inst.components, &w_max, &inst.bounds, inst.beta)?;
    Ok(OracleOutcome { deviation, certified })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn small_sweep_agrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for m in 2..=5 {
            for _ in 0..5 {
                let inst = random_instance(m, &mut rng).unwrap();
                let out = check_instance(&inst).unwrap();
                assert!(out.passes(), "{inst:?} {out:?}");
            }
        }
    }

    #[test]
    fn refuses_large_ensembles() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inst = random_instance(11, &mut rng).unwrap();
        assert!(check_instance(&inst).is_err());
    }
}
