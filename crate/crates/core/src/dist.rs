//! Location–scale predictive distributions and weighted finite mixtures.
//!
//! Every ensemble member predicts one [`ComponentDistribution`] at a query
//! point. A [`WeightedMixture`] averages member CDFs with nonnegative weights
//! whose mean is one, so `F(y) = m⁻¹ Σᵢ wᵢ Fᵢ(y)` is itself a proper CDF.

use std::f64::consts::{FRAC_1_PI, PI, SQRT_2};

use serde::Serialize;
use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::error::{ModensError, Result};

/// Tolerance on `mean(weights) = 1` accepted at mixture construction.
pub const WEIGHT_MEAN_TOL: f64 = 1e-9;

/// Maximum number of bracket doublings before a quantile search gives up.
const MAX_WIDENINGS: usize = 60;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Cauchy,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Family::Gaussian => f.write_str("gaussian"),
            Family::Cauchy => f.write_str("cauchy"),
        }
    }
}

/// One ensemble member's predictive law at a fixed query point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ComponentDistribution {
    family: Family,
    location: f64,
    scale: f64,
}

impl ComponentDistribution {
    pub fn new(family: Family, location: f64, scale: f64) -> Result<Self> {
        if !location.is_finite() {
            return Err(ModensError::domain(format!(
                "location must be finite, got {location}"
            )));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(ModensError::domain(format!(
                "scale must be finite and positive, got {scale}"
            )));
        }
        Ok(Self {
            family,
            location,
            scale,
        })
    }

    pub fn gaussian(location: f64, scale: f64) -> Result<Self> {
        Self::new(Family::Gaussian, location, scale)
    }

    pub fn cauchy(location: f64, scale: f64) -> Result<Self> {
        Self::new(Family::Cauchy, location, scale)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn location(&self) -> f64 {
        self.location
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Mirror image under `y -> -y`. Both families are symmetric, so only the
    /// location changes sign.
    pub fn reflected(&self) -> Self {
        Self {
            location: -self.location,
            ..*self
        }
    }

    pub fn cdf(&self, y: f64) -> f64 {
        let z = (y - self.location) / self.scale;
        match self.family {
            Family::Gaussian => 0.5 * erfc(-z / SQRT_2),
            Family::Cauchy => {
                if z < -1.0 {
                    // keeps relative precision deep in the left tail
                    (-1.0 / z).atan() * FRAC_1_PI
                } else {
                    0.5 + z.atan() * FRAC_1_PI
                }
            }
        }
    }

    /// Inverse CDF. `p` must lie strictly inside (0, 1); callers that have not
    /// validated `p` should use [`component_quantile`].
    pub fn quantile(&self, p: f64) -> f64 {
        debug_assert!(p > 0.0 && p < 1.0);
        let z = match self.family {
            Family::Gaussian => {
                // the rational erfc⁻¹ is only a starting point; Newton on the
                // accurate erfc brings the round trip down to ~1e-16
                let mut z = -SQRT_2 * erfc_inv(2.0 * p);
                for _ in 0..2 {
                    let density = (-0.5 * z * z - LN_SQRT_2PI).exp();
                    if density > 0.0 {
                        z -= (0.5 * erfc(-z / SQRT_2) - p) / density;
                    }
                }
                z
            }
            Family::Cauchy => {
                if p < 0.5 {
                    -1.0 / (PI * p).tan()
                } else {
                    (PI * (p - 0.5)).tan()
                }
            }
        };
        self.location + self.scale * z
    }

    pub fn logpdf(&self, y: f64) -> f64 {
        let z = (y - self.location) / self.scale;
        match self.family {
            Family::Gaussian => -LN_SQRT_2PI - self.scale.ln() - 0.5 * z * z,
            Family::Cauchy => -PI.ln() - self.scale.ln() - (z * z).ln_1p(),
        }
    }

    pub fn pdf(&self, y: f64) -> f64 {
        self.logpdf(y).exp()
    }

    /// Smallest `C` such that the density is `C`-Lipschitz on the reals.
    pub fn density_lipschitz(&self) -> f64 {
        let s2 = self.scale * self.scale;
        match self.family {
            // max |φ'(z)| = 1/√(2πe), attained at |z| = 1
            Family::Gaussian => 1.0 / (s2 * (2.0 * PI * std::f64::consts::E).sqrt()),
            // max |p'(z)| = 9 / (8√3 π), attained at |z| = 1/√3
            Family::Cauchy => 9.0 / (8.0 * 3f64.sqrt() * PI * s2),
        }
    }
}

/// `F(y; d)`. Rejects NaN inputs.
pub fn component_cdf(d: &ComponentDistribution, y: f64) -> Result<f64> {
    if y.is_nan() {
        return Err(ModensError::domain("cdf evaluated at NaN"));
    }
    Ok(d.cdf(y))
}

pub fn component_quantile(d: &ComponentDistribution, p: f64) -> Result<f64> {
    check_open_unit(p, "quantile level")?;
    Ok(d.quantile(p))
}

pub fn component_logpdf(d: &ComponentDistribution, y: f64) -> Result<f64> {
    if y.is_nan() {
        return Err(ModensError::domain("logpdf evaluated at NaN"));
    }
    Ok(d.logpdf(y))
}

pub(crate) fn check_open_unit(p: f64, what: &str) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(ModensError::domain(format!(
            "{what} must lie in (0, 1), got {p}"
        )))
    }
}

/// Scale-relative default accuracy for quantile searches over `components`.
pub fn default_tol(components: &[ComponentDistribution]) -> f64 {
    let max_scale = components.iter().map(|c| c.scale).fold(0.0, f64::max);
    1e-9 * (1.0 + max_scale)
}

/// A finite mixture `F(y) = m⁻¹ Σᵢ wᵢ Fᵢ(y)` with `mean(w) = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedMixture {
    components: Vec<ComponentDistribution>,
    weights: Vec<f64>,
}

impl WeightedMixture {
    pub fn new(components: Vec<ComponentDistribution>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(ModensError::domain("mixture needs at least one component"));
        }
        if components.len() != weights.len() {
            return Err(ModensError::domain(format!(
                "{} components but {} weights",
                components.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(ModensError::domain(format!(
                "mixture weights must be finite and nonnegative, got {w}"
            )));
        }
        let mean = weights.iter().sum::<f64>() / weights.len() as f64;
        if (mean - 1.0).abs() > WEIGHT_MEAN_TOL {
            return Err(ModensError::domain(format!(
                "mixture weights must average to 1, got mean {mean}"
            )));
        }
        Ok(Self {
            components,
            weights,
        })
    }

    /// Equal unit weights: the plain ensemble average.
    pub fn uniform(components: Vec<ComponentDistribution>) -> Result<Self> {
        let m = components.len();
        Self::new(components, vec![1.0; m])
    }

    pub fn components(&self) -> &[ComponentDistribution] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn cdf(&self, y: f64) -> f64 {
        weighted_cdf(&self.components, &self.weights, y)
    }

    pub fn pdf(&self, y: f64) -> f64 {
        let total: f64 = self
            .components
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| w * c.pdf(y))
            .sum();
        total / self.components.len() as f64
    }

    /// β-quantile to absolute accuracy `tol` by bracketed bisection.
    pub fn quantile(&self, beta: f64, tol: f64) -> Result<f64> {
        weighted_quantile(&self.components, &self.weights, beta, tol, None)
    }
}

pub fn mixture_cdf(mix: &WeightedMixture, y: f64) -> Result<f64> {
    if y.is_nan() {
        return Err(ModensError::domain("cdf evaluated at NaN"));
    }
    Ok(mix.cdf(y))
}

pub fn mixture_pdf(mix: &WeightedMixture, y: f64) -> Result<f64> {
    if y.is_nan() {
        return Err(ModensError::domain("pdf evaluated at NaN"));
    }
    Ok(mix.pdf(y))
}

pub fn mixture_quantile(mix: &WeightedMixture, beta: f64, tol: f64) -> Result<f64> {
    mix.quantile(beta, tol)
}

pub(crate) fn weighted_cdf(components: &[ComponentDistribution], weights: &[f64], y: f64) -> f64 {
    let total: f64 = components
        .iter()
        .zip(weights)
        .map(|(c, w)| w * c.cdf(y))
        .sum();
    total / components.len() as f64
}

/// Bisection for the β-quantile of `m⁻¹ Σ wᵢ Fᵢ`.
///
/// The default bracket is `[minᵢ Fᵢ⁻¹(ε), maxᵢ Fᵢ⁻¹(1-ε)]` with
/// `ε = min(β, 1-β) · w_min / m`, which straddles β for any mean-one weights.
/// `lower_hint` is an optional point known (or believed) to sit at or below
/// the answer; it is only used if it actually brackets.
pub(crate) fn weighted_quantile(
    components: &[ComponentDistribution],
    weights: &[f64],
    beta: f64,
    tol: f64,
    lower_hint: Option<f64>,
) -> Result<f64> {
    check_open_unit(beta, "quantile rank")?;
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(ModensError::domain(format!(
            "quantile tolerance must be positive, got {tol}"
        )));
    }
    let m = components.len() as f64;
    let w_min = weights
        .iter()
        .copied()
        .filter(|w| *w > 0.0)
        .fold(f64::INFINITY, f64::min)
        .min(1.0);
    let eps = (beta.min(1.0 - beta) * w_min / m).max(f64::MIN_POSITIVE);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for c in components {
        lo = lo.min(c.quantile(eps));
        hi = hi.max(c.quantile(1.0 - eps));
    }
    let f = |y: f64| weighted_cdf(components, weights, y);

    if let Some(h) = lower_hint {
        if h.is_finite() && h < hi && f(h) <= beta {
            lo = lo.max(h);
        }
    }

    let mut widenings = 0;
    while !(f(lo) <= beta && f(hi) >= beta) {
        if widenings == MAX_WIDENINGS {
            return Err(ModensError::Internal(format!(
                "quantile bracket [{lo}, {hi}] failed to straddle rank {beta}"
            )));
        }
        let centre = 0.5 * (lo + hi);
        let half = (hi - lo).max(1.0);
        lo = centre - half;
        hi = centre + half;
        widenings += 1;
    }

    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < beta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Standard normal CDF by composite Simpson quadrature of the density,
    /// independent of the erfc path.
    fn phi_by_quadrature(x: f64) -> f64 {
        let a = -12.0;
        let n = 200_000;
        let h = (x - a) / n as f64;
        let g = |t: f64| (-0.5 * t * t).exp() / (2.0 * PI).sqrt();
        let mut s = g(a) + g(x);
        for i in 1..n {
            let t = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 * g(t) } else { 2.0 * g(t) };
        }
        s * h / 3.0
    }

    fn bisect(f: impl Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn cdf_closed_forms() {
        let g = ComponentDistribution::gaussian(0.0, 1.0).unwrap();
        assert_eq!(g.cdf(0.0), 0.5);
        let c = ComponentDistribution::cauchy(0.0, 1.0).unwrap();
        assert!((c.cdf(1.0) - 0.75).abs() < 1e-15);
        let g23 = ComponentDistribution::gaussian(2.0, 3.0).unwrap();
        assert_eq!(g23.cdf(2.0), 0.5);
    }

    #[test]
    fn erfc_path_matches_quadrature() {
        let g = ComponentDistribution::gaussian(0.0, 1.0).unwrap();
        for x in [-3.0, -1.0, 0.3, 1.959964, 4.0] {
            assert!((g.cdf(x) - phi_by_quadrature(x)).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn quantile_examples() {
        let c = ComponentDistribution::cauchy(0.0, 1.0).unwrap();
        assert!((c.quantile(0.75) - 1.0).abs() < 1e-12);
        let g = ComponentDistribution::gaussian(0.0, 1.0).unwrap();
        assert!(g.quantile(0.5).abs() < 1e-15);

        // Invert the quadrature CDF by bisection; 1.959963984540054 is the
        // resulting 0.975 standard-normal quantile.
        let oracle = bisect(phi_by_quadrature, 0.975, 0.0, 5.0);
        assert!((oracle - 1.959963984540054).abs() < 1e-9);
        let g12 = ComponentDistribution::gaussian(1.0, 2.0).unwrap();
        assert!((g12.quantile(0.975) - (1.0 + 2.0 * 1.959963984540054)).abs() < 1e-9);
    }

    #[test]
    fn quantile_rejects_closed_endpoints() {
        let g = ComponentDistribution::gaussian(0.0, 1.0).unwrap();
        assert!(component_quantile(&g, 0.0).is_err());
        assert!(component_quantile(&g, 1.0).is_err());
        assert!(component_quantile(&g, f64::NAN).is_err());
        assert!(component_cdf(&g, f64::NAN).is_err());
    }

    #[test]
    fn construction_rejects_bad_parameters() {
        assert!(ComponentDistribution::gaussian(0.0, 0.0).is_err());
        assert!(ComponentDistribution::gaussian(0.0, -1.0).is_err());
        assert!(ComponentDistribution::cauchy(f64::NAN, 1.0).is_err());
        assert!(ComponentDistribution::cauchy(0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn logpdf_peaks() {
        let g = ComponentDistribution::gaussian(0.0, 1.0).unwrap();
        assert!((g.logpdf(0.0) + 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
        let c = ComponentDistribution::cauchy(0.0, 1.0).unwrap();
        assert!((c.logpdf(0.0) + PI.ln()).abs() < 1e-15);
        let c32 = ComponentDistribution::cauchy(3.0, 2.0).unwrap();
        assert!((c32.logpdf(3.0) + (2.0 * PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn densities_integrate_to_one() {
        for d in [
            ComponentDistribution::gaussian(0.5, 0.7).unwrap(),
            ComponentDistribution::cauchy(-1.0, 0.5).unwrap(),
        ] {
            let (a, b, n) = (-2000.0, 2000.0, 4_000_000);
            let h = (b - a) / n as f64;
            let mass: f64 = (0..n).map(|i| d.pdf(a + (i as f64 + 0.5) * h)).sum::<f64>() * h;
            // Cauchy tails beyond ±2000 hold 2·atan(1/4000)/π of the mass.
            let tail = match d.family() {
                Family::Gaussian => 0.0,
                Family::Cauchy => 1.0 - d.cdf(b) + d.cdf(a),
            };
            assert!((mass + tail - 1.0).abs() < 1e-4, "{d:?}: {mass}");
        }
    }

    #[test]
    fn mixture_examples() {
        let g0 = ComponentDistribution::gaussian(0.0, 1.0).unwrap();
        let single = WeightedMixture::new(vec![g0], vec![1.0]).unwrap();
        assert_eq!(single.cdf(0.7), g0.cdf(0.7));

        let g2 = ComponentDistribution::gaussian(2.0, 1.0).unwrap();
        let pair = WeightedMixture::uniform(vec![g0, g2]).unwrap();
        assert!((pair.cdf(1.0) - 0.5).abs() < 1e-15);
        assert!((pair.quantile(0.5, 1e-12).unwrap() - 1.0).abs() < 1e-11);

        let g4 = ComponentDistribution::gaussian(4.0, 1.0).unwrap();
        let skew = WeightedMixture::new(vec![g0, g4], vec![0.5, 1.5]).unwrap();
        let expected = 0.25 * phi_by_quadrature(4.0) + 0.375;
        assert!((skew.cdf(4.0) - expected).abs() < 1e-12);
        assert!((skew.cdf(4.0) - 0.62499).abs() < 1e-5);

        // 0.25 Φ(q) + 0.75 Φ(q - 4) = 0.5 solved on the quadrature CDF.
        let oracle = bisect(
            |q| 0.25 * phi_by_quadrature(q) + 0.75 * phi_by_quadrature(q - 4.0),
            0.5,
            0.0,
            5.0,
        );
        let q = skew.quantile(0.5, 1e-12).unwrap();
        assert!((q - oracle).abs() < 1e-9, "{q} vs {oracle}");
        assert!((q - 3.5694).abs() < 1e-4);

        let c = ComponentDistribution::cauchy(0.0, 1.0).unwrap();
        let one = WeightedMixture::uniform(vec![c]).unwrap();
        assert!((one.quantile(0.75, 1e-12).unwrap() - 1.0).abs() < 1e-11);
    }

    #[test]
    fn mixture_pdf_examples() {
        let g0 = ComponentDistribution::gaussian(0.0, 1.0).unwrap();
        let single = WeightedMixture::uniform(vec![g0]).unwrap();
        assert!((single.pdf(0.0) - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-15);
        let twin = WeightedMixture::uniform(vec![g0, g0]).unwrap();
        assert!((twin.pdf(0.4) - g0.pdf(0.4)).abs() < 1e-15);

        let g1 = ComponentDistribution::gaussian(1.0, 1.0).unwrap();
        for w in [0.0, 0.3, 1.0, 1.7, 2.0] {
            let mix = WeightedMixture::new(vec![g0, g1], vec![w, 2.0 - w]).unwrap();
            let n = 200_000;
            let h = 100.0 / n as f64;
            let mass: f64 = (0..n).map(|i| mix.pdf(-50.0 + (i as f64 + 0.5) * h)).sum::<f64>() * h;
            assert!((mass - 1.0).abs() < 1e-6, "w={w}: {mass}");
        }
    }

    #[test]
    fn mixture_rejects_bad_weights() {
        let g = ComponentDistribution::gaussian(0.0, 1.0).unwrap();
        assert!(WeightedMixture::new(vec![], vec![]).is_err());
        assert!(WeightedMixture::new(vec![g, g], vec![1.0, 1.5]).is_err());
        assert!(WeightedMixture::new(vec![g, g], vec![-0.5, 2.5]).is_err());
        assert!(WeightedMixture::new(vec![g], vec![1.0, 1.0]).is_err());
        let mix = WeightedMixture::uniform(vec![g]).unwrap();
        assert!(mix.quantile(0.5, 0.0).is_err());
        assert!(mixture_cdf(&mix, f64::NAN).is_err());
        assert!(mix.quantile(1.0, 1e-9).is_err());
    }

    #[test]
    fn quantile_survives_zero_weights() {
        let a = ComponentDistribution::cauchy(-10.0, 1.0).unwrap();
        let b = ComponentDistribution::gaussian(10.0, 0.1).unwrap();
        let mix = WeightedMixture::new(vec![a, b], vec![0.0, 2.0]).unwrap();
        let q = mix.quantile(0.3, 1e-10).unwrap();
        assert!((q - b.quantile(0.3)).abs() < 1e-9);
    }

    #[test]
    fn lipschitz_constants_match_finite_differences() {
        for d in [
            ComponentDistribution::gaussian(0.0, 0.8).unwrap(),
            ComponentDistribution::cauchy(0.0, 1.3).unwrap(),
        ] {
            let h = 1e-4;
            let slope = (-100_000..100_000)
                .map(|i| i as f64 * h)
                .map(|y| ((d.pdf(y + h) - d.pdf(y)) / h).abs())
                .fold(0.0, f64::max);
            let c = d.density_lipschitz();
            assert!(slope <= c + 1e-9 && slope > 0.999 * c, "{slope} vs {c}");
        }
    }
}
