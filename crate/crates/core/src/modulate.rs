//! Partial identification by modulating ensemble weights.
//!
//! The outcome interval at a query point is
//! `[inf_w F_w⁻¹(α/2), sup_w F_w⁻¹(1-α/2)]`, where `F_w = m⁻¹ Σᵢ wᵢ Fᵢ` and
//! the weights range over the polytope `{w : lower ≤ wᵢ ≤ upper, mean(w) = 1}`.
//!
//! The maximizer moves weight from components with more mass left of the
//! current quantile to components with less, which never decreases the
//! quantile. The optimum is reached exactly when no such pair remains
//! ([`check_optimality`]). A bulk phase first jumps straight to the vertex
//! that is optimal for the current quantile, then the pairwise transfers
//! finish the job.

use serde::Serialize;

use crate::dist::{check_open_unit, default_tol, weighted_quantile, ComponentDistribution};
use crate::error::{ModensError, Result};
use crate::par::{self, ExecutionMode};
use crate::sensitivity::WeightBounds;

/// Mass difference below which two components count as tied.
pub const TOL_MASS: f64 = 1e-9;

/// Slack used when deciding whether a weight sits at a bound.
pub const WEIGHT_SLACK: f64 = 1e-12;

/// Largest ensemble the brute-force oracle accepts (cost grows as `m·2^m`).
pub const BRUTE_FORCE_MAX_M: usize = 10;

const MAX_BULK_ROUNDS: usize = 64;

/// Per-member modulation weights, each within its bounds and with mean one.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>, bounds: &WeightBounds) -> Result<Self> {
        if weights.is_empty() {
            return Err(ModensError::domain("weight vector must be nonempty"));
        }
        let lo = bounds.lower() - WEIGHT_SLACK;
        let hi = bounds.upper() + WEIGHT_SLACK;
        if let Some(w) = weights.iter().find(|w| !(**w >= lo && **w <= hi)) {
            return Err(ModensError::domain(format!(
                "weight {w} outside bounds [{}, {}]",
                bounds.lower(),
                bounds.upper()
            )));
        }
        let mean = weights.iter().sum::<f64>() / weights.len() as f64;
        if (mean - 1.0).abs() > crate::dist::WEIGHT_MEAN_TOL {
            return Err(ModensError::domain(format!(
                "weights must average to 1, got mean {mean}"
            )));
        }
        Ok(Self(weights))
    }

    pub fn unit(m: usize) -> Self {
        Self(vec![1.0; m])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }
}

/// A partially identified prediction interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OutcomeInterval {
    pub lo: f64,
    pub hi: f64,
    pub alpha: f64,
    /// Sensitivity parameter the bounds came from, when known.
    pub gamma: Option<f64>,
}

impl OutcomeInterval {
    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    /// Closed-interval membership.
    pub fn contains(&self, y: f64) -> bool {
        self.lo <= y && y <= self.hi
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = Some(gamma);
        self
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Strategy {
    /// Pairwise transfers only, one saturating transfer per quantile solve.
    Greedy,
    /// Vertex jumps at the current quantile, then pairwise transfers.
    #[default]
    Bulk,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct OptimizerOptions {
    /// Absolute quantile accuracy; defaults to [`default_tol`].
    pub tol: Option<f64>,
    pub strategy: Strategy,
}

impl OptimizerOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol: Some(tol),
            ..Self::default()
        }
    }
}

/// Result of an extreme-quantile search.
#[derive(Clone, Debug)]
pub struct Extremum {
    pub quantile: f64,
    pub weights: WeightVector,
    /// Working quantile after each accepted update, starting from unit weights.
    pub trace: Vec<f64>,
    pub quantile_solves: usize,
}

fn validate(components: &[ComponentDistribution], beta: f64, tol: f64) -> Result<()> {
    if components.is_empty() {
        return Err(ModensError::domain("ensemble must have at least one member"));
    }
    check_open_unit(beta, "quantile rank")?;
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(ModensError::domain(format!(
            "quantile tolerance must be positive, got {tol}"
        )));
    }
    Ok(())
}

fn masses_at(components: &[ComponentDistribution], q: f64) -> Vec<f64> {
    components.iter().map(|c| c.cdf(q)).collect()
}

/// Cheapest admissible weights at fixed masses: `upper` on the components
/// with the least mass left of `q`, `lower` on the rest, one fractional
/// component absorbing whatever keeps the sum at `m`.
fn vertex_for_masses(masses: &[f64], bounds: &WeightBounds) -> Vec<f64> {
    let m = masses.len();
    let (lower, upper) = (bounds.lower(), bounds.upper());
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| masses[a].total_cmp(&masses[b]).then(a.cmp(&b)));

    let mut w = vec![lower; m];
    let mut budget = m as f64 * (1.0 - lower);
    let mut fractional = None;
    for &i in &order {
        if budget <= 0.0 {
            break;
        }
        let give = (upper - lower).min(budget);
        w[i] = lower + give;
        budget -= give;
        if give < upper - lower {
            fractional = Some(i);
        }
    }
    if let Some(i) = fractional {
        let others: f64 = (0..m).filter(|&k| k != i).map(|k| w[k]).sum();
        w[i] = (m as f64 - others).clamp(lower, upper);
    }
    w
}

/// Moves weight from `sender` to `receiver` until one of them saturates. The
/// pair's sum is preserved by pushing the rounding residual onto the
/// component that stays interior.
fn transfer(w: &mut [f64], receiver: usize, sender: usize, bounds: &WeightBounds) {
    let receivable = bounds.upper() - w[receiver];
    let sendable = w[sender] - bounds.lower();
    let total = w[receiver] + w[sender];
    if receivable < sendable {
        w[receiver] = bounds.upper();
        w[sender] = total - bounds.upper();
    } else {
        w[sender] = bounds.lower();
        w[receiver] = total - bounds.lower();
    }
}

/// Receiver/sender pair violating the optimality condition at these masses,
/// if any. Ties go to the lowest index.
fn improving_pair(w: &[f64], masses: &[f64], bounds: &WeightBounds) -> Option<(usize, usize)> {
    let mut receiver: Option<usize> = None;
    let mut sender: Option<usize> = None;
    for i in 0..w.len() {
        if w[i] < bounds.upper() - WEIGHT_SLACK
            && receiver.is_none_or(|r| masses[i] < masses[r])
        {
            receiver = Some(i);
        }
        if w[i] > bounds.lower() + WEIGHT_SLACK && sender.is_none_or(|s| masses[i] > masses[s]) {
            sender = Some(i);
        }
    }
    match (receiver, sender) {
        (Some(r), Some(s)) if r != s && masses[s] - masses[r] > TOL_MASS => Some((r, s)),
        _ => None,
    }
}

/// Supremum of the mixture β-quantile over admissible weights.
pub fn maximize_quantile(
    components: &[ComponentDistribution],
    bounds: &WeightBounds,
    beta: f64,
    tol: f64,
) -> Result<(f64, WeightVector)> {
    let ext = maximize_quantile_with(
        components,
        bounds,
        beta,
        OptimizerOptions {
            tol: Some(tol),
            ..Default::default()
        },
    )?;
    Ok((ext.quantile, ext.weights))
}

pub fn maximize_quantile_with(
    components: &[ComponentDistribution],
    bounds: &WeightBounds,
    beta: f64,
    opts: OptimizerOptions,
) -> Result<Extremum> {
    let tol = opts.tol.unwrap_or_else(|| default_tol(components));
    validate(components, beta, tol)?;
    let m = components.len();

    let mut solves = 1;
    let mut w = vec![1.0; m];
    let mut q = weighted_quantile(components, &w, beta, tol, None)?;
    let mut trace = vec![q];

    if bounds.is_identity() || m == 1 {
        return Ok(Extremum {
            quantile: q,
            weights: WeightVector(w),
            trace,
            quantile_solves: solves,
        });
    }

    if opts.strategy == Strategy::Bulk {
        for _ in 0..MAX_BULK_ROUNDS {
            let candidate = vertex_for_masses(&masses_at(components, q), bounds);
            if candidate == w {
                break;
            }
            let q_new = weighted_quantile(components, &candidate, beta, tol, Some(q - tol))?;
            solves += 1;
            if q_new < q {
                break;
            }
            let gain = q_new - q;
            w = candidate;
            q = q_new;
            trace.push(q);
            if gain < tol / 10.0 {
                break;
            }
        }
    }

    // Pairwise transfers; a full sweep of m transfers gaining less than
    // tol/10 means we are cycling on floating-point ties.
    let max_transfers = 8 * m * m + 64;
    let mut sweep_start = q;
    let mut in_sweep = 0;
    for _ in 0..max_transfers {
        let masses = masses_at(components, q);
        let Some((r, s)) = improving_pair(&w, &masses, bounds) else {
            break;
        };
        transfer(&mut w, r, s, bounds);
        q = weighted_quantile(components, &w, beta, tol, Some(q - tol))?;
        solves += 1;
        trace.push(q);
        in_sweep += 1;
        if in_sweep == m {
            if q - sweep_start < tol / 10.0 {
                break;
            }
            sweep_start = q;
            in_sweep = 0;
        }
    }

    Ok(Extremum {
        quantile: q,
        weights: WeightVector(w),
        trace,
        quantile_solves: solves,
    })
}

/// Infimum of the mixture β-quantile, via `y -> -y`:
/// `inf_w F_w⁻¹(β) = -sup_w G_w⁻¹(1-β)` for the mirrored components `G`.
pub fn minimize_quantile(
    components: &[ComponentDistribution],
    bounds: &WeightBounds,
    beta: f64,
    tol: f64,
) -> Result<(f64, WeightVector)> {
    let ext = minimize_quantile_with(components, bounds, beta, OptimizerOptions::with_tol(tol))?;
    Ok((ext.quantile, ext.weights))
}

pub fn minimize_quantile_with(
    components: &[ComponentDistribution],
    bounds: &WeightBounds,
    beta: f64,
    opts: OptimizerOptions,
) -> Result<Extremum> {
    check_open_unit(beta, "quantile rank")?;
    let mirrored: Vec<_> = components.iter().map(|c| c.reflected()).collect();
    let mut ext = maximize_quantile_with(&mirrored, bounds, 1.0 - beta, opts)?;
    ext.quantile = -ext.quantile;
    for q in &mut ext.trace {
        *q = -*q;
    }
    Ok(ext)
}

/// `[inf F⁻¹(α/2), sup F⁻¹(1-α/2)]` over admissible weights.
pub fn outcome_interval(
    components: &[ComponentDistribution],
    bounds: &WeightBounds,
    alpha: f64,
    tol: f64,
) -> Result<OutcomeInterval> {
    check_open_unit(alpha, "miscoverage alpha")?;
    let (lo, _) = minimize_quantile(components, bounds, alpha / 2.0, tol)?;
    let (hi, _) = maximize_quantile(components, bounds, 1.0 - alpha / 2.0, tol)?;
    if lo > hi {
        return Err(ModensError::Internal(format!(
            "interval endpoints crossed: [{lo}, {hi}] at alpha {alpha}"
        )));
    }
    Ok(OutcomeInterval {
        lo,
        hi,
        alpha,
        gamma: None,
    })
}

/// One query point for [`outcome_intervals`].
#[derive(Clone, Debug)]
pub struct IntervalQuery {
    pub components: Vec<ComponentDistribution>,
    pub bounds: WeightBounds,
}

/// [`outcome_interval`] over many query points, each at its default tolerance.
pub fn outcome_intervals(
    queries: &[IntervalQuery],
    alpha: f64,
    mode: ExecutionMode,
) -> Result<Vec<OutcomeInterval>> {
    par::try_map_range(mode, queries.len(), |i| {
        let q = &queries[i];
        outcome_interval(&q.components, &q.bounds, alpha, default_tol(&q.components))
    })
}

/// Exhaustive search over one-fractional-coordinate vertices of the weight
/// polytope. Returns the extreme quantile and the weights attaining it.
pub fn brute_force_extremum(
    components: &[ComponentDistribution],
    bounds: &WeightBounds,
    beta: f64,
    maximize: bool,
) -> Result<(f64, Vec<f64>)> {
    let m = components.len();
    if m > BRUTE_FORCE_MAX_M {
        return Err(ModensError::Refused(format!(
            "brute-force oracle limited to m <= {BRUTE_FORCE_MAX_M} (got {m}); cost grows as m*2^m"
        )));
    }
    let tol = default_tol(components) / 100.0;
    validate(components, beta, tol)?;

    if bounds.is_identity() || m == 1 {
        let w = vec![1.0; m];
        let q = weighted_quantile(components, &w, beta, tol, None)?;
        return Ok((q, w));
    }

    let (lower, upper) = (bounds.lower(), bounds.upper());
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut w = vec![0.0; m];
    for f in 0..m {
        for mask in 0u32..(1 << (m - 1)) {
            let mut bit = 0;
            let mut others = 0.0;
            for (i, wi) in w.iter_mut().enumerate() {
                if i == f {
                    continue;
                }
                *wi = if mask & (1 << bit) != 0 { upper } else { lower };
                others += *wi;
                bit += 1;
            }
            let wf = m as f64 - others;
            if wf < lower - WEIGHT_SLACK || wf > upper + WEIGHT_SLACK {
                continue;
            }
            w[f] = wf.clamp(lower, upper);
            let q = weighted_quantile(components, &w, beta, tol, None)?;
            let better = match &best {
                None => true,
                Some((b, _)) => {
                    if maximize {
                        q > *b
                    } else {
                        q < *b
                    }
                }
            };
            if better {
                best = Some((q, w.clone()));
            }
        }
    }
    best.ok_or_else(|| ModensError::Internal("no feasible vertex found".into()))
}

pub fn brute_force_extreme_quantile(
    components: &[ComponentDistribution],
    bounds: &WeightBounds,
    beta: f64,
    maximize: bool,
) -> Result<f64> {
    brute_force_extremum(components, bounds, beta, maximize).map(|(q, _)| q)
}

/// True iff no pair `(j, k)` exists with `w_j > lower`, `w_k < upper` and
/// `F_j(q) > F_k(q) + TOL_MASS` at the current β-quantile `q`, i.e. the
/// weights maximize the β-quantile.
pub fn check_optimality(
    components: &[ComponentDistribution],
    weights: &WeightVector,
    bounds: &WeightBounds,
    beta: f64,
) -> Result<bool> {
    let w = weights.as_slice();
    if w.len() != components.len() {
        return Err(ModensError::domain(format!(
            "{} weights for {} components",
            w.len(),
            components.len()
        )));
    }
    let tol = default_tol(components);
    validate(components, beta, tol)?;
    let q = weighted_quantile(components, w, beta, tol, None)?;
    let masses = masses_at(components, q);
    for j in 0..w.len() {
        if w[j] <= bounds.lower() + WEIGHT_SLACK {
            continue;
        }
        for k in 0..w.len() {
            if k != j && w[k] < bounds.upper() - WEIGHT_SLACK && masses[j] > masses[k] + TOL_MASS {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Inputs of the finite-ensemble coverage guarantee.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CoverageBound {
    pub m: usize,
    pub epsilon: f64,
    pub alpha: f64,
    /// Caller-supplied bound on the expected weight estimation error.
    pub weight_error: f64,
}

impl CoverageBound {
    pub fn new(m: usize, epsilon: f64, alpha: f64, weight_error: f64) -> Result<Self> {
        if m == 0 {
            return Err(ModensError::domain("ensemble size must be positive"));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(ModensError::domain(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        check_open_unit(alpha, "miscoverage alpha")?;
        if !(weight_error >= 0.0 && weight_error.is_finite()) {
            return Err(ModensError::domain(format!(
                "weight error must be nonnegative, got {weight_error}"
            )));
        }
        Ok(Self {
            m,
            epsilon,
            alpha,
            weight_error,
        })
    }

    /// `α + ε + 2·weight_error`.
    pub fn failure_probability(&self) -> f64 {
        self.alpha + self.epsilon + 2.0 * self.weight_error
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CoverageDiagnostic {
    /// Lower bound `1 - 2 exp(-m ε² / 2)` on conditional coverage, floored at 0.
    pub inner: f64,
    /// Probability with which the inner bound may fail.
    pub outer_failure: f64,
}

pub fn empirical_coverage_bound(cb: &CoverageBound) -> CoverageDiagnostic {
    let exponent = -(cb.m as f64) * cb.epsilon * cb.epsilon / 2.0;
    CoverageDiagnostic {
        inner: (1.0 - 2.0 * exponent.exp()).max(0.0),
        outer_failure: cb.failure_probability(),
    }
}
