//! Coverage-cost evaluation: coverage of de-confounded test outcomes, interval
//! cost functions, and the search for the smallest Γ reaching a target.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize, Serializer};

use crate::dist::{default_tol, ComponentDistribution};
use crate::ensemble::{predict_propensity, Dataset, EnsembleModel, MlpParams};
use crate::error::{ModensError, Result};
use crate::modulate::{outcome_interval, OutcomeInterval};
use crate::par::{self, ExecutionMode};
use crate::sensitivity::{msm_bounds, clamp_propensity, SensitivityConfig, DEFAULT_PROPENSITY_CLAMP};

pub const GAMMA_MIN: f64 = 1.0;
pub const GAMMA_MAX: f64 = 50.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostKind {
    /// Mean interval length over the empirical outcome standard deviation.
    #[default]
    AbsStd,
    /// Raw mean length; compared across methods with [`cost_relative`].
    Relative,
    /// Mean empirical outcome mass inside each interval.
    Mass,
}

impl std::str::FromStr for CostKind {
    type Err = ModensError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "abs-std" => Ok(CostKind::AbsStd),
            "relative" => Ok(CostKind::Relative),
            "mass" => Ok(CostKind::Mass),
            other => Err(ModensError::Config(format!(
                "unknown cost kind `{other}` (expected abs-std, relative or mass)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub target_coverage: f64,
    pub gamma_max: f64,
    pub gamma_tol: f64,
    /// Interval miscoverage; `None` means `1 - target_coverage`, or 0.01 when
    /// the target is 1.
    pub alpha: Option<f64>,
    /// Potential-outcome arm that is predicted and scored.
    pub arm: u8,
    pub cost: CostKind,
    pub propensity_clamp: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            target_coverage: 0.95,
            gamma_max: GAMMA_MAX,
            gamma_tol: 0.05,
            alpha: None,
            arm: 1,
            cost: CostKind::AbsStd,
            propensity_clamp: DEFAULT_PROPENSITY_CLAMP,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ModensError::Config(msg));
        if !(self.target_coverage > 0.0 && self.target_coverage <= 1.0) {
            return bad(format!("target coverage must lie in (0, 1], got {}", self.target_coverage));
        }
        if !(self.gamma_max >= GAMMA_MIN && self.gamma_max.is_finite()) {
            return bad(format!("gamma_max must be finite and at least 1, got {}", self.gamma_max));
        }
        if !(self.gamma_tol > 0.0) {
            return bad(format!("gamma_tol must be positive, got {}", self.gamma_tol));
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a < 1.0) {
                return bad(format!("alpha must lie in (0, 1), got {a}"));
            }
        }
        if self.arm > 1 {
            return bad(format!("arm must be 0 or 1, got {}", self.arm));
        }
        if !(self.propensity_clamp > 0.0 && self.propensity_clamp < 0.5) {
            return bad(format!("propensity_clamp must lie in (0, 0.5), got {}", self.propensity_clamp));
        }
        Ok(())
    }

    pub fn resolved_alpha(&self) -> f64 {
        self.alpha.unwrap_or(if self.target_coverage < 1.0 {
            1.0 - self.target_coverage
        } else {
            0.01
        })
    }
}

fn check_lengths(intervals: &[OutcomeInterval], outcomes: &[f64]) -> Result<()> {
    if intervals.len() != outcomes.len() {
        return Err(ModensError::domain(format!(
            "{} intervals for {} outcomes",
            intervals.len(),
            outcomes.len()
        )));
    }
    if intervals.is_empty() {
        return Err(ModensError::domain("no intervals to evaluate"));
    }
    Ok(())
}

/// Fraction of outcomes inside their (closed) interval.
pub fn coverage(intervals: &[OutcomeInterval], outcomes: &[f64]) -> Result<f64> {
    check_lengths(intervals, outcomes)?;
    let hits = intervals
        .iter()
        .zip(outcomes)
        .filter(|(iv, &y)| iv.contains(y))
        .count();
    Ok(hits as f64 / outcomes.len() as f64)
}

pub fn mean_length(intervals: &[OutcomeInterval]) -> f64 {
    intervals.iter().map(OutcomeInterval::length).sum::<f64>() / intervals.len() as f64
}

pub fn cost_abs_std(intervals: &[OutcomeInterval], outcome_std: f64) -> Result<f64> {
    if !(outcome_std > 0.0 && outcome_std.is_finite()) {
        return Err(ModensError::domain(format!(
            "outcome standard deviation must be positive, got {outcome_std}"
        )));
    }
    if intervals.is_empty() {
        return Err(ModensError::domain("no intervals to evaluate"));
    }
    Ok(mean_length(intervals) / outcome_std)
}

/// Each method's mean length over the smallest one; the best maps to 1.
pub fn cost_relative(lengths: &BTreeMap<String, f64>) -> Result<BTreeMap<String, f64>> {
    if lengths.is_empty() {
        return Err(ModensError::domain("no methods to compare"));
    }
    if let Some((k, v)) = lengths.iter().find(|(_, &v)| !(v > 0.0 && v.is_finite())) {
        return Err(ModensError::domain(format!("method `{k}` has nonpositive length {v}")));
    }
    let best = lengths.values().copied().fold(f64::INFINITY, f64::min);
    Ok(lengths.iter().map(|(k, v)| (k.clone(), v / best)).collect())
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Empirical CDF interpolated linearly through `(y₍ₖ₎, k/(n-1))`, `k = 0..n`,
/// and flat outside the sample range.
#[derive(Clone, Debug)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(values: &[f64]) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(ModensError::domain("empirical CDF needs finite, nonempty data"));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { sorted })
    }

    pub fn eval(&self, y: f64) -> f64 {
        let s = &self.sorted;
        let n = s.len();
        if y < s[0] {
            return 0.0;
        }
        if y >= s[n - 1] {
            return 1.0;
        }
        // last index with s[k] <= y; k + 1 < n here
        let k = s.partition_point(|&v| v <= y) - 1;
        let frac = (y - s[k]) / (s[k + 1] - s[k]);
        (k as f64 + frac) / (n - 1) as f64
    }
}

pub fn cost_mass(intervals: &[OutcomeInterval], test_outcomes: &[f64]) -> Result<f64> {
    let cdf = EmpiricalCdf::new(test_outcomes)?;
    if intervals.is_empty() {
        return Err(ModensError::domain("no intervals to evaluate"));
    }
    Ok(intervals
        .iter()
        .map(|iv| cdf.eval(iv.hi) - cdf.eval(iv.lo))
        .sum::<f64>()
        / intervals.len() as f64)
}

pub fn interval_cost(kind: CostKind, intervals: &[OutcomeInterval], outcomes: &[f64]) -> Result<f64> {
    match kind {
        CostKind::AbsStd => cost_abs_std(intervals, sample_std(outcomes)),
        CostKind::Relative => Ok(mean_length(intervals)),
        CostKind::Mass => cost_mass(intervals, outcomes),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub gamma: f64,
    pub coverage: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GammaStar {
    Found(f64),
    Failure,
}

impl Serialize for GammaStar {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            GammaStar::Found(g) => s.serialize_f64(*g),
            GammaStar::Failure => s.serialize_str("FAILURE"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SearchResult {
    pub gamma_star: GammaStar,
    /// Coverage at Γ*, or at the largest Γ on failure.
    pub coverage: f64,
    /// Intervals at Γ*, or at the largest Γ on failure.
    pub intervals: Vec<OutcomeInterval>,
    /// Intervals at the largest Γ.
    pub intervals_at_max: Vec<OutcomeInterval>,
    pub probes: Vec<Probe>,
}

/// Smallest Γ in `[1, gamma_max]` whose intervals reach the target coverage,
/// by bisection down to `gamma_tol`, reporting the feasible endpoint.
pub fn gamma_star_search<F>(mut pipeline: F, outcomes: &[f64], config: &EvalConfig) -> Result<SearchResult>
where
    F: FnMut(f64) -> Result<Vec<OutcomeInterval>>,
{
    config.validate()?;
    let target = config.target_coverage;
    let mut probes = Vec::new();
    let mut probe = |gamma: f64, probes: &mut Vec<Probe>| -> Result<(f64, Vec<OutcomeInterval>)> {
        let iv = pipeline(gamma)?;
        let c = coverage(&iv, outcomes)?;
        probes.push(Probe { gamma, coverage: c });
        Ok((c, iv))
    };

    let (c_max, iv_max) = probe(config.gamma_max, &mut probes)?;
    if c_max < target {
        return Ok(SearchResult {
            gamma_star: GammaStar::Failure,
            coverage: c_max,
            intervals: iv_max.clone(),
            intervals_at_max: iv_max,
            probes,
        });
    }
    let (c_min, iv_min) = probe(GAMMA_MIN, &mut probes)?;
    if c_min >= target {
        return Ok(SearchResult {
            gamma_star: GammaStar::Found(GAMMA_MIN),
            coverage: c_min,
            intervals: iv_min,
            intervals_at_max: iv_max,
            probes,
        });
    }
    let (mut lo, mut hi) = (GAMMA_MIN, config.gamma_max);
    let mut best = (c_max, iv_max.clone());
    while hi - lo > config.gamma_tol {
        let mid = 0.5 * (lo + hi);
        let (c, iv) = probe(mid, &mut probes)?;
        if c >= target {
            hi = mid;
            best = (c, iv);
        } else {
            lo = mid;
        }
    }
    Ok(SearchResult {
        gamma_star: GammaStar::Found(hi),
        coverage: best.0,
        intervals: best.1,
        intervals_at_max: iv_max,
        probes,
    })
}

/// Per-point components and propensities, fixed across Γ probes.
pub struct IntervalPipeline {
    components: Vec<Vec<ComponentDistribution>>,
    /// Clamped nominal propensity of the scored arm.
    propensities: Vec<f64>,
    alpha: f64,
    mode: ExecutionMode,
}

impl IntervalPipeline {
    pub fn new(
        model: &EnsembleModel,
        propensity: &MlpParams,
        covariates: ArrayView2<'_, f64>,
        arm: u8,
        alpha: f64,
        clamp: f64,
        mode: ExecutionMode,
    ) -> Result<Self> {
        let components = model.predict_components_batch(covariates, arm)?;
        let e1 = predict_propensity(propensity, covariates)?;
        let propensities = e1
            .into_iter()
            .map(|e| clamp_propensity(if arm == 1 { e } else { 1.0 - e }, clamp))
            .collect();
        Self::from_parts(components, propensities, alpha, mode)
    }

    pub fn from_parts(
        components: Vec<Vec<ComponentDistribution>>,
        propensities: Vec<f64>,
        alpha: f64,
        mode: ExecutionMode,
    ) -> Result<Self> {
        if components.len() != propensities.len() {
            return Err(ModensError::domain("one propensity per query point is required"));
        }
        Ok(Self {
            components,
            propensities,
            alpha,
            mode,
        })
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn intervals(&self, gamma: f64) -> Result<Vec<OutcomeInterval>> {
        let cfg = SensitivityConfig::new(gamma)?;
        par::try_map_range(self.mode, self.len(), |i| {
            let comps = &self.components[i];
            let bounds = msm_bounds(self.propensities[i], cfg)?;
            Ok(outcome_interval(comps, &bounds, self.alpha, default_tol(comps))?.with_gamma(gamma))
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentReport {
    pub config: EvalConfig,
    pub alpha: f64,
    pub seed: u64,
    pub gamma_star: GammaStar,
    pub achieved_coverage: f64,
    /// Absent on failure.
    pub coverage_cost: Option<f64>,
    pub cost_at_gamma_max: f64,
    pub mean_length: f64,
    pub n_test: usize,
    pub probes: Vec<Probe>,
    pub runtime_seconds: Option<f64>,
    #[serde(skip)]
    pub intervals: Vec<OutcomeInterval>,
    #[serde(skip)]
    pub outcomes: Vec<f64>,
}

impl ExperimentReport {
    pub fn is_failure(&self) -> bool {
        self.gamma_star == GammaStar::Failure
    }
}

/// Scores the configured arm of `test` against the modulated ensemble.
pub fn run_experiment(
    test: &Dataset,
    model: &EnsembleModel,
    propensity: &MlpParams,
    config: &EvalConfig,
    seed: u64,
    mode: ExecutionMode,
) -> Result<ExperimentReport> {
    config.validate()?;
    let outcomes = test.potential_arm(config.arm)?;
    let alpha = config.resolved_alpha();
    let pipeline = IntervalPipeline::new(
        model,
        propensity,
        test.covariates.view(),
        config.arm,
        alpha,
        config.propensity_clamp,
        mode,
    )?;
    let search = gamma_star_search(|g| pipeline.intervals(g), &outcomes, config)?;
    let cost_at_gamma_max = interval_cost(config.cost, &search.intervals_at_max, &outcomes)?;
    let coverage_cost = match search.gamma_star {
        GammaStar::Failure => None,
        GammaStar::Found(_) => Some(interval_cost(config.cost, &search.intervals, &outcomes)?),
    };
    Ok(ExperimentReport {
        config: config.clone(),
        alpha,
        seed,
        gamma_star: search.gamma_star,
        achieved_coverage: search.coverage,
        coverage_cost,
        cost_at_gamma_max,
        mean_length: mean_length(&search.intervals),
        n_test: outcomes.len(),
        probes: search.probes,
        runtime_seconds: None,
        intervals: search.intervals,
        outcomes,
    })
}

pub fn write_report(path: impl AsRef<Path>, report: &ExperimentReport) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(report)
        .map_err(|e| ModensError::Internal(format!("serializing report: {e}")))?;
    std::fs::write(path, text + "\n").map_err(|e| ModensError::io(path, e))
}

/// `index, lo, hi, y, covered` rows.
pub fn write_point_csv(path: impl AsRef<Path>, intervals: &[OutcomeInterval], outcomes: &[f64]) -> Result<()> {
    let path = path.as_ref();
    check_lengths(intervals, outcomes)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| ModensError::parse(path, e.to_string()))?;
    let csv_err = |e: csv::Error| ModensError::parse(path, e.to_string());
    w.write_record(["index", "lo", "hi", "y", "covered"]).map_err(csv_err)?;
    for (i, (iv, y)) in intervals.iter().zip(outcomes).enumerate() {
        w.write_record([
            i.to_string(),
            iv.lo.to_string(),
            iv.hi.to_string(),
            y.to_string(),
            u8::from(iv.contains(*y)).to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| ModensError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(lo: f64, hi: f64) -> OutcomeInterval {
        OutcomeInterval { lo, hi, alpha: 0.1, gamma: None }
    }

    #[test]
    fn coverage_examples() {
        let ivs = vec![iv(0.0, 1.0); 6];
        assert_eq!(coverage(&ivs, &[0.5; 6]).unwrap(), 1.0);
        assert_eq!(coverage(&ivs, &[2.0; 6]).unwrap(), 0.0);
        assert_eq!(coverage(&ivs, &[0.0, 1.0, 0.5, -1.0, 1.5, 9.0]).unwrap(), 0.5);
        assert!(coverage(&ivs, &[0.5; 5]).is_err());
        assert!(coverage(&[], &[]).is_err());
    }

    #[test]
    fn abs_std_examples() {
        assert_eq!(cost_abs_std(&[iv(0.0, 1.0), iv(0.0, 1.0)], 1.0).unwrap(), 1.0);
        assert_eq!(cost_abs_std(&[iv(3.0, 3.0)], 1.0).unwrap(), 0.0);
        assert_eq!(cost_abs_std(&[iv(0.0, 2.0), iv(0.0, 4.0)], 2.0).unwrap(), 1.5);
        assert!(cost_abs_std(&[iv(0.0, 1.0)], 0.0).is_err());
    }

    #[test]
    fn relative_examples() {
        let m: BTreeMap<String, f64> = [("a".to_string(), 2.0), ("b".to_string(), 4.0)].into();
        let r = cost_relative(&m).unwrap();
        assert_eq!((r["a"], r["b"]), (1.0, 2.0));
        let one: BTreeMap<String, f64> = [("x".to_string(), 3.0)].into();
        assert_eq!(cost_relative(&one).unwrap()["x"], 1.0);
        let bad: BTreeMap<String, f64> = [("x".to_string(), 0.0)].into();
        assert!(cost_relative(&bad).is_err());
        assert!(cost_relative(&BTreeMap::new()).is_err());
    }

    #[test]
    fn mass_examples() {
        let ys: Vec<f64> = (0..100).map(f64::from).collect();
        assert_eq!(cost_mass(&[iv(-1.0, 200.0)], &ys).unwrap(), 1.0);
        assert_eq!(cost_mass(&[iv(10.5, 10.5)], &ys).unwrap(), 0.0);
        let half = cost_mass(&[iv(0.0, 49.5)], &ys).unwrap();
        assert!((half - 0.5).abs() <= 0.01, "{half}");
    }

    #[test]
    fn step_function_search() {
        let outcomes = [0.0];
        let cfg = EvalConfig { target_coverage: 0.9, ..EvalConfig::default() };
        let step = |threshold: f64| {
            move |g: f64| -> Result<Vec<OutcomeInterval>> {
                Ok(vec![if g >= threshold { iv(-1.0, 1.0) } else { iv(1.0, 2.0) }])
            }
        };
        let r = gamma_star_search(step(7.0), &outcomes, &cfg).unwrap();
        match r.gamma_star {
            GammaStar::Found(g) => assert!((7.0..=7.0 + cfg.gamma_tol).contains(&g), "{g}"),
            GammaStar::Failure => panic!("should succeed"),
        }
        assert_eq!(r.coverage, 1.0);
        assert!(matches!(
            gamma_star_search(step(1.0), &outcomes, &cfg).unwrap().gamma_star,
            GammaStar::Found(g) if g == 1.0
        ));
        let fail = gamma_star_search(step(60.0), &outcomes, &cfg).unwrap();
        assert_eq!(fail.gamma_star, GammaStar::Failure);
        assert_eq!(fail.coverage, 0.0);
    }

    #[test]
    fn alpha_defaults() {
        let cfg = EvalConfig { target_coverage: 0.9, ..EvalConfig::default() };
        assert!((cfg.resolved_alpha() - 0.1).abs() < 1e-15);
        assert_eq!(EvalConfig { target_coverage: 1.0, ..cfg.clone() }.resolved_alpha(), 0.01);
        assert_eq!(EvalConfig { alpha: Some(0.2), ..cfg }.resolved_alpha(), 0.2);
        assert!(EvalConfig { target_coverage: 0.0, ..EvalConfig::default() }.validate().is_err());
    }

    #[test]
    fn failure_serializes_as_marker() {
        assert_eq!(serde_json::to_string(&GammaStar::Failure).unwrap(), "\"FAILURE\"");
        assert_eq!(serde_json::to_string(&GammaStar::Found(2.5)).unwrap(), "2.5");
    }
}
