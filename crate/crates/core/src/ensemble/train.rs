//! Maximum-likelihood training on bootstrap resamples.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::mlp::{Head, Layer, MlpParams, OutputTransform};
use super::model::EnsembleModel;
use crate::error::{ModensError, Result};
use crate::par::{self, ExecutionMode};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
/// Robust-standardized outcomes are clipped here when calibrating a Cauchy
/// head's location from its Gaussian pretraining pass.
const CALIBRATION_CLIP: f64 = 5.0;
/// Standard deviation of Uniform(0, 1).
const UNIFORM_SD: f64 = 0.288_675_134_594_812_9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub head: Head,
    /// Hidden layer widths.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub members: usize,
    /// Affine outcome scaling before training; `None` picks per head
    /// (mean/sd for Gaussian, median/half-IQR for Cauchy).
    pub standardize: Option<bool>,
    /// Share of `epochs` spent on the Gaussian warm start of a Cauchy head.
    pub pretrain_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            head: Head::Gaussian,
            hidden: vec![64, 64],
            epochs: 2000,
            learning_rate: 1e-2,
            members: 16,
            standardize: None,
            pretrain_fraction: 0.25,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.members == 0 {
            return Err(ModensError::Config("members must be at least 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(ModensError::Config("hidden widths must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModensError::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.pretrain_fraction) {
            return Err(ModensError::Config(format!(
                "pretrain_fraction must lie in [0, 1), got {}",
                self.pretrain_fraction
            )));
        }
        Ok(())
    }

    fn layer_sizes(&self, head: Head, input: usize) -> Vec<usize> {
        let mut sizes = vec![input];
        sizes.extend(&self.hidden);
        sizes.push(head.output_dim());
        sizes
    }
}

/// Losses before and after optimization, in the model's normalized units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// `n` row indices drawn uniformly with replacement.
pub fn bootstrap_indices<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Network input rows: covariates, with the treatment appended as a last
/// column when `with_treatment`.
pub(crate) fn design_matrix(covariates: ArrayView2<'_, f64>, treatments: Option<&[u8]>) -> Array2<f64> {
    let (n, d) = covariates.dim();
    match treatments {
        None => covariates.to_owned(),
        Some(t) => {
            let mut x = Array2::zeros((n, d + 1));
            x.slice_mut(ndarray::s![.., ..d]).assign(&covariates);
            for (i, &ti) in t.iter().enumerate() {
                x[[i, d]] = f64::from(ti);
            }
            x
        }
    }
}

struct Adam {
    m: Vec<Layer>,
    v: Vec<Layer>,
    step: i32,
    lr: f64,
}

impl Adam {
    fn new(params: &MlpParams, lr: f64) -> Self {
        let zeros: Vec<Layer> = params
            .layers
            .iter()
            .map(|l| Layer::zeros(l.weights.ncols(), l.weights.nrows()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            lr,
        }
    }

    fn update(&mut self, params: &mut MlpParams, grads: &[Layer]) {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step);
        let lr = self.lr;
        for (((p, g), m), v) in params
            .layers
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let step = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            };
            ndarray::Zip::from(&mut p.weights)
                .and(&g.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .for_each(|p, &g, m, v| step(p, g, m, v));
            ndarray::Zip::from(&mut p.biases)
                .and(&g.biases)
                .and(&mut m.biases)
                .and(&mut v.biases)
                .for_each(|p, &g, m, v| step(p, g, m, v));
        }
    }
}

/// Full-batch Adam for `epochs` steps. Returns the parameters with the lowest
/// loss seen, including the starting point.
fn optimize(
    mut params: MlpParams,
    inputs: ArrayView2<'_, f64>,
    targets: &[f64],
    epochs: usize,
    lr: f64,
) -> Result<(MlpParams, TrainReport)> {
    let mut adam = Adam::new(&params, lr);
    let mut initial = None;
    let mut best = (f64::INFINITY, params.clone());
    for epoch in 0..=epochs {
        let (loss, grads) = params.loss_and_grad(inputs, targets)?;
        if !loss.is_finite() {
            return Err(ModensError::Training(format!(
                "{:?} head: loss became {loss} at epoch {epoch} (best so far {:.6e}, learning rate {lr})",
                params.head, best.0
            )));
        }
        initial.get_or_insert(loss);
        if loss < best.0 {
            best = (loss, params.clone());
        }
        if epoch < epochs {
            adam.update(&mut params, &grads);
        }
    }
    Ok((
        best.1,
        TrainReport {
            initial_loss: initial.expect("at least one evaluation"),
            final_loss: best.0,
        },
    ))
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Median and half the interquartile range (the Cauchy scale estimate).
fn median_half_iqr(values: &[f64]) -> (f64, f64) {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let med = sorted_quantile(&s, 0.5);
    let half_iqr = 0.5 * (sorted_quantile(&s, 0.75) - sorted_quantile(&s, 0.25));
    (med, half_iqr)
}

fn output_transform(head: Head, targets: &[f64], standardize: Option<bool>) -> OutputTransform {
    let on = standardize.unwrap_or(true);
    let (shift, scale) = match head {
        Head::Propensity => return OutputTransform::default(),
        _ if !on => return OutputTransform::default(),
        Head::Gaussian => mean_sd(targets),
        Head::Cauchy => median_half_iqr(targets),
    };
    let scale = if scale > 0.0 && scale.is_finite() { scale } else { 1.0 };
    OutputTransform { shift, scale }
}

/// Mid-ranks mapped to zero mean and unit variance.
fn rank_scores(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut scores = vec![0.0; n];
    for (rank, &i) in order.iter().enumerate() {
        scores[i] = ((rank as f64 + 0.5) / n as f64 - 0.5) / UNIFORM_SD;
    }
    scores
}

/// Warm start for a Cauchy head: fit a Gaussian head to outcome ranks, map
/// its location output affinely onto the (clipped) outcomes by least
/// squares, and set the log-scale bias to the log median absolute residual.
fn cauchy_warm_start(
    init: &MlpParams,
    inputs: ArrayView2<'_, f64>,
    targets: &[f64],
    epochs: usize,
    lr: f64,
) -> Result<MlpParams> {
    let mut gauss = init.clone();
    gauss.head = Head::Gaussian;
    let (mut params, _) = optimize(gauss, inputs, &rank_scores(targets), epochs, lr)?;
    params.head = Head::Cauchy;

    let mu: Vec<f64> = params.raw_outputs(inputs)?.column(0).to_vec();
    let clipped: Vec<f64> = targets
        .iter()
        .map(|y| y.clamp(-CALIBRATION_CLIP, CALIBRATION_CLIP))
        .collect();
    let (mx, sx) = mean_sd(&mu);
    let (my, _) = mean_sd(&clipped);
    let cov = mu
        .iter()
        .zip(&clipped)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / mu.len() as f64;
    let slope = if sx > 0.0 { cov / (sx * sx) } else { 0.0 };
    let intercept = my - slope * mx;

    let last = params.layers.last_mut().expect("output layer");
    last.weights.row_mut(0).mapv_inplace(|w| slope * w);
    last.biases[0] = intercept + slope * last.biases[0];

    let mut resid: Vec<f64> = mu
        .iter()
        .zip(targets)
        .map(|(m, y)| (y - (intercept + slope * m)).abs())
        .collect();
    resid.sort_by(f64::total_cmp);
    let spread = sorted_quantile(&resid, 0.5).max(super::mlp::MIN_SCALE);
    last.weights.row_mut(1).fill(0.0);
    last.biases[1] = spread.ln();
    Ok(params)
}

fn fit_head(
    head: Head,
    inputs: ArrayView2<'_, f64>,
    targets: &[f64],
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(MlpParams, TrainReport)> {
    let sizes = config.layer_sizes(head, inputs.ncols());
    let mut init = MlpParams::init(head, &sizes, rng)?;
    init.output = output_transform(head, targets, config.standardize);
    let normalized: Vec<f64> = targets
        .iter()
        .map(|y| (y - init.output.shift) / init.output.scale)
        .collect();

    if head != Head::Cauchy {
        return optimize(init, inputs, &normalized, config.epochs, config.learning_rate);
    }

    let pre_epochs = (config.epochs as f64 * config.pretrain_fraction).round() as usize;
    let initial_loss = init.loss(inputs, &normalized)?;
    let start = if pre_epochs > 0 {
        let warm = cauchy_warm_start(&init, inputs, &normalized, pre_epochs, config.learning_rate)?;
        if warm.loss(inputs, &normalized)? <= initial_loss {
            warm
        } else {
            init
        }
    } else {
        init
    };
    let (params, report) = optimize(
        start,
        inputs,
        &normalized,
        config.epochs - pre_epochs,
        config.learning_rate,
    )?;
    Ok((
        params,
        TrainReport {
            initial_loss,
            final_loss: report.final_loss,
        },
    ))
}

fn check_trainable(data: &Dataset) -> Result<()> {
    if data.len() < 2 {
        return Err(ModensError::Training(format!(
            "need at least 2 rows to train, got {}",
            data.len()
        )));
    }
    Ok(())
}

/// One ensemble member fit to a bootstrap resample of `data`.
pub fn train_member_with_report(
    data: &Dataset,
    config: &TrainConfig,
    seed: u64,
) -> Result<(MlpParams, TrainReport)> {
    config.validate()?;
    check_trainable(data)?;
    if config.head == Head::Propensity {
        return Err(ModensError::Config(
            "outcome members need a gaussian or cauchy head".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = data.select(&bootstrap_indices(data.len(), &mut rng));
    let inputs = design_matrix(sample.covariates.view(), Some(&sample.treatments));
    fit_head(config.head, inputs.view(), &sample.outcomes, config, &mut rng)
}

pub fn train_member(data: &Dataset, config: &TrainConfig, seed: u64) -> Result<MlpParams> {
    train_member_with_report(data, config, seed).map(|(p, _)| p)
}

/// `config.members` members trained with seeds `seed + 1, seed + 2, …`.
pub fn train_ensemble(
    data: &Dataset,
    config: &TrainConfig,
    seed: u64,
    mode: ExecutionMode,
) -> Result<EnsembleModel> {
    config.validate()?;
    let members = par::try_map_range(mode, config.members, |j| {
        train_member(data, config, seed.wrapping_add(j as u64 + 1))
    })?;
    EnsembleModel::new(members, seed)
}

/// Logistic network for `P(t = 1 | x)` fit by cross-entropy on all rows.
pub fn fit_propensity(data: &Dataset, config: &TrainConfig, seed: u64) -> Result<MlpParams> {
    config.validate()?;
    check_trainable(data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let targets: Vec<f64> = data.treatments.iter().map(|&t| f64::from(t)).collect();
    fit_head(
        Head::Propensity,
        data.covariates.view(),
        &targets,
        config,
        &mut rng,
    )
    .map(|(p, _)| p)
}

/// `e₁(x)` for every row of `covariates`; `e₀ = 1 − e₁`.
pub fn predict_propensity(params: &MlpParams, covariates: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    if params.head != Head::Propensity {
        return Err(ModensError::Config("not a propensity network".into()));
    }
    let raw = params.raw_outputs(covariates)?;
    Ok(raw.column(0).iter().map(|&l| super::mlp::sigmoid(l)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn toy(n: usize, f: impl Fn(f64, u8) -> f64) -> Dataset {
        let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64 / n as f64);
        let t: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let y = (0..n).map(|i| f(x[[i, 0]], t[i])).collect();
        Dataset::new(x, t, y, None).unwrap()
    }

    fn small(head: Head) -> TrainConfig {
        TrainConfig {
            head,
            hidden: vec![8],
            epochs: 300,
            learning_rate: 2e-2,
            members: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_never_increases_loss() {
        let data = toy(40, |x, t| 2.0 * x + f64::from(t) + (x * 37.0).sin() * 0.1);
        for head in [Head::Gaussian, Head::Cauchy] {
            let (_, r) = train_member_with_report(&data, &small(head), 3).unwrap();
            assert!(r.final_loss <= r.initial_loss, "{head:?} {r:?}");
        }
    }

    #[test]
    fn seeds_give_distinct_members() {
        let data = toy(30, |x, _| x);
        let a = train_member(&data, &small(Head::Gaussian), 1).unwrap();
        let b = train_member(&data, &small(Head::Gaussian), 2).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, train_member(&data, &small(Head::Gaussian), 1).unwrap());
    }

    #[test]
    fn ensemble_of_one_is_member_seed_plus_one() {
        let data = toy(30, |x, _| x);
        let cfg = TrainConfig {
            members: 1,
            ..small(Head::Gaussian)
        };
        let model = train_ensemble(&data, &cfg, 10, ExecutionMode::Parallel).unwrap();
        assert_eq!(model.members[0], train_member(&data, &cfg, 11).unwrap());
    }

    #[test]
    fn bootstrap_inclusion_frequency() {
        let n = 50;
        let trials = 4000;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut hits = 0usize;
        for _ in 0..trials {
            if bootstrap_indices(n, &mut rng).contains(&0) {
                hits += 1;
            }
        }
        let p = 1.0 - (1.0 - 1.0 / n as f64).powi(n as i32);
        let se = (p * (1.0 - p) / trials as f64).sqrt();
        let freq = hits as f64 / trials as f64;
        assert!((freq - p).abs() < 3.0 * se, "{freq} vs {p}");
    }

    #[test]
    fn propensity_and_training_errors() {
        let data = toy(10, |x, _| x);
        let one = data.select(&[0]);
        assert!(matches!(
            train_member(&one, &small(Head::Gaussian), 0),
            Err(ModensError::Training(_))
        ));
        assert!(train_member(&data, &small(Head::Propensity), 0).is_err());
        let p = fit_propensity(&data, &small(Head::Propensity), 0).unwrap();
        let e1 = predict_propensity(&p, data.covariates.view()).unwrap();
        assert!(e1.iter().all(|&e| e > 0.0 && e < 1.0));
        assert!(predict_propensity(&train_member(&data, &small(Head::Gaussian), 0).unwrap(), data.covariates.view()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { members: 0, ..TrainConfig::default() },
            TrainConfig { hidden: vec![4, 0], ..TrainConfig::default() },
            TrainConfig { learning_rate: -1.0, ..TrainConfig::default() },
            TrainConfig { pretrain_fraction: 1.0, ..TrainConfig::default() },
        ] {
            assert!(bad.validate().is_err());
        }
        let cfg: TrainConfig = serde_json::from_str(r#"{"head":"cauchy","epochs":5}"#).unwrap();
        assert_eq!(cfg.hidden, vec![64, 64]);
        assert_eq!(cfg.head, Head::Cauchy);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch":5}"#).is_err());
    }

    #[test]
    fn rank_scores_are_standardized() {
        let s = rank_scores(&[10.0, -3.0, 1e9, 0.0]);
        let (m, _) = mean_sd(&s);
        assert!(m.abs() < 1e-15);
        assert!(s[2] > s[0] && s[0] > s[3] && s[3] > s[1]);
    }
}
