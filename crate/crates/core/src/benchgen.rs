//! Semi-synthetic hidden-confounding benchmark.
//!
//! Feature rows are randomly projected onto `n_visible` visible confounders,
//! one treatment coordinate and `n_hidden` hidden confounders. The confounder
//! columns are rank-normalized to a uniform grid on `[0, 1)`, the treatment
//! column is rank-normalized and thresholded, and the pre-noise outcome is the
//! quadratic form `u = vᵀ M v` with a boosted treatment diagonal. Only the
//! visible block is emitted as covariates.
//!
//! Everything is drawn from one seeded stream, in this order: fallback
//! features, row allocation, projection, outcome matrix, observation noise.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, LogNormal, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ensemble::Dataset;
use crate::error::{ModensError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    #[default]
    Cauchy,
    Gaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_visible: usize,
    pub n_hidden: usize,
    pub treatment_threshold: f64,
    pub treatment_boost: f64,
    pub noise_scale: f64,
    pub noise: NoiseFamily,
    /// Drop observation noise entirely (`y = u`).
    pub deterministic: bool,
    /// Zero the hidden block before forming `u`, which removes hidden
    /// confounding while keeping every other draw unchanged.
    pub suppress_hidden: bool,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    /// Shape of the fallback factor-model features.
    pub n_features: usize,
    pub factor_rank: usize,
    pub idiosyncratic_sd: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_visible: 32,
            n_hidden: 32,
            treatment_threshold: 2.0 / 3.0,
            treatment_boost: 64.0,
            noise_scale: 1.0,
            noise: NoiseFamily::Cauchy,
            deterministic: false,
            suppress_hidden: false,
            n_train: 8192,
            n_valid: 2048,
            n_test: 2048,
            n_features: 128,
            factor_rank: 8,
            idiosyncratic_sd: 8.0,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ModensError::Config(msg));
        if self.n_visible == 0 || self.n_hidden == 0 {
            return bad("n_visible and n_hidden must be at least 1".into());
        }
        if !(self.treatment_threshold > 0.0 && self.treatment_threshold < 1.0) {
            return bad(format!(
                "treatment_threshold must lie in (0, 1), got {}",
                self.treatment_threshold
            ));
        }
        if !(self.treatment_boost > 0.0 && self.treatment_boost.is_finite()) {
            return bad(format!("treatment_boost must be positive, got {}", self.treatment_boost));
        }
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return bad(format!("noise_scale must be positive, got {}", self.noise_scale));
        }
        if self.n_train == 0 || self.n_valid == 0 || self.n_test == 0 {
            return bad("split sizes must be positive".into());
        }
        if self.n_features == 0 || self.factor_rank == 0 {
            return bad("n_features and factor_rank must be positive".into());
        }
        if !(self.idiosyncratic_sd >= 0.0 && self.idiosyncratic_sd.is_finite()) {
            return bad(format!(
                "idiosyncratic_sd must be nonnegative, got {}",
                self.idiosyncratic_sd
            ));
        }
        Ok(())
    }

    /// Length of `v`: visible block, treatment, hidden block.
    pub fn dim(&self) -> usize {
        self.n_visible + 1 + self.n_hidden
    }

    pub fn treatment_index(&self) -> usize {
        self.n_visible
    }

    pub fn n_total(&self) -> usize {
        self.n_train + self.n_valid + self.n_test
    }
}

/// Fallback features: a rank-`factor_rank` factor model with log-normal
/// loadings plus independent Gaussian noise per entry.
pub fn factor_features<R: Rng + ?Sized>(n: usize, config: &GeneratorConfig, rng: &mut R) -> Array2<f64> {
    let k = config.factor_rank;
    let p = config.n_features;
    let lognormal = LogNormal::new(0.0, 1.0).expect("valid log-normal");
    let loadings = Array2::from_shape_simple_fn((k, p), || lognormal.sample(rng));
    let factors = Array2::from_shape_simple_fn((n, k), || rng.sample::<f64, _>(StandardNormal));
    let mut x = factors.dot(&loadings);
    if config.idiosyncratic_sd > 0.0 {
        let noise = Normal::new(0.0, config.idiosyncratic_sd).expect("valid normal");
        x.mapv_inplace(|v| v + noise.sample(rng));
    }
    x
}

/// `features · G` with `G` a `p × dim` matrix of standard normals.
pub fn random_projection<R: Rng + ?Sized>(
    features: ArrayView2<'_, f64>,
    config: &GeneratorConfig,
    rng: &mut R,
) -> Result<Array2<f64>> {
    let (n, p) = features.dim();
    if n == 0 || p == 0 {
        return Err(ModensError::domain("feature matrix is empty"));
    }
    let g = Array2::from_shape_simple_fn((p, config.dim()), || rng.sample::<f64, _>(StandardNormal));
    Ok(features.dot(&g))
}

/// Value at 0-based rank `k` (ties broken by position) becomes `k / n`.
pub fn rank_normalize(column: ArrayView1<'_, f64>) -> Array1<f64> {
    let n = column.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| column[a].total_cmp(&column[b]).then(a.cmp(&b)));
    let mut out = Array1::zeros(n);
    for (k, &i) in order.iter().enumerate() {
        out[i] = k as f64 / n as f64;
    }
    out
}

pub fn binarize_treatment(column: ArrayView1<'_, f64>, threshold: f64) -> Vec<u8> {
    column.iter().map(|&v| u8::from(v >= threshold)).collect()
}

pub fn quadratic_outcome(v: ArrayView1<'_, f64>, m: ArrayView2<'_, f64>) -> Result<f64> {
    if m.nrows() != v.len() || m.ncols() != v.len() {
        return Err(ModensError::domain(format!(
            "vector of length {} against a {}x{} matrix",
            v.len(),
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(v.dot(&m.dot(&v)))
}

/// Standard normal `dim × dim` matrix with the treatment diagonal boosted.
pub fn outcome_matrix<R: Rng + ?Sized>(config: &GeneratorConfig, rng: &mut R) -> Array2<f64> {
    let d = config.dim();
    let mut m = Array2::from_shape_simple_fn((d, d), || rng.sample::<f64, _>(StandardNormal));
    let t = config.treatment_index();
    m[[t, t]] *= config.treatment_boost;
    m
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedData {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

struct Noise {
    dist: Option<NoiseDist>,
}

enum NoiseDist {
    Cauchy(Cauchy<f64>),
    Gaussian(Normal<f64>),
}

impl Noise {
    fn new(config: &GeneratorConfig) -> Self {
        let dist = (!config.deterministic).then(|| match config.noise {
            NoiseFamily::Cauchy => {
                NoiseDist::Cauchy(Cauchy::new(0.0, config.noise_scale).expect("validated scale"))
            }
            NoiseFamily::Gaussian => {
                NoiseDist::Gaussian(Normal::new(0.0, config.noise_scale).expect("validated scale"))
            }
        });
        Self { dist }
    }

    fn observe<R: Rng + ?Sized>(&self, u: f64, rng: &mut R) -> f64 {
        match &self.dist {
            None => u,
            Some(NoiseDist::Cauchy(c)) => u + c.sample(rng),
            Some(NoiseDist::Gaussian(g)) => u + g.sample(rng),
        }
    }
}

/// Train/valid/test splits; `features = None` uses [`factor_features`].
pub fn generate_dataset(features: Option<ArrayView2<'_, f64>>, config: &GeneratorConfig) -> Result<GeneratedData> {
    config.validate()?;
    let n = config.n_total();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let fallback;
    let features = match features {
        Some(f) => f,
        None => {
            fallback = factor_features(n, config, &mut rng);
            fallback.view()
        }
    };
    if features.nrows() < n {
        return Err(ModensError::domain(format!(
            "requested {n} rows ({} + {} + {}) but the feature matrix has {}",
            config.n_train,
            config.n_valid,
            config.n_test,
            features.nrows()
        )));
    }
    let mut rows: Vec<usize> = (0..features.nrows()).collect();
    rows.shuffle(&mut rng);
    rows.truncate(n);
    let mut selected = Array2::zeros((n, features.ncols()));
    for (r, &i) in rows.iter().enumerate() {
        selected.row_mut(r).assign(&features.row(i));
    }

    let mut v = random_projection(selected.view(), config, &mut rng)?;
    let m = outcome_matrix(config, &mut rng);
    for j in 0..config.dim() {
        let ranked = rank_normalize(v.column(j));
        v.column_mut(j).assign(&ranked);
    }
    let ti = config.treatment_index();
    let treatments = binarize_treatment(v.column(ti), config.treatment_threshold);
    for (i, &t) in treatments.iter().enumerate() {
        v[[i, ti]] = f64::from(t);
    }
    let visible = v.slice(s![.., ..config.n_visible]).to_owned();
    if config.suppress_hidden {
        v.slice_mut(s![.., ti + 1..]).fill(0.0);
    }

    let noise = Noise::new(config);
    let mut outcomes = Vec::with_capacity(n);
    for i in 0..n {
        let u = quadratic_outcome(v.row(i), m.view())?;
        outcomes.push(noise.observe(u, &mut rng));
    }

    let test_start = config.n_train + config.n_valid;
    let mut potential = Vec::with_capacity(config.n_test);
    for i in test_start..n {
        let mut arm_row = v.row(i).to_owned();
        let mut pair = [0.0; 2];
        for (arm, slot) in pair.iter_mut().enumerate() {
            arm_row[ti] = arm as f64;
            *slot = noise.observe(quadratic_outcome(arm_row.view(), m.view())?, &mut rng);
        }
        potential.push(pair);
    }

    let split = |lo: usize, hi: usize, po: Option<Vec<[f64; 2]>>| {
        Dataset::new(
            visible.slice(s![lo..hi, ..]).to_owned(),
            treatments[lo..hi].to_vec(),
            outcomes[lo..hi].to_vec(),
            po,
        )
    };
    Ok(GeneratedData {
        train: split(0, config.n_train, None)?,
        valid: split(config.n_train, test_start, None)?,
        test: split(test_start, n, Some(potential))?,
    })
}

/// Numeric CSV with a header row; every column is a feature.
pub fn read_features(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| ModensError::parse(path, e.to_string()))?;
    let mut values = Vec::new();
    let mut width = None;
    for (r, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| ModensError::parse(path, format!("row {}: {e}", r + 1)))?;
        if *width.get_or_insert(record.len()) != record.len() {
            return Err(ModensError::parse(path, format!("row {} has {} fields", r + 1, record.len())));
        }
        for (c, raw) in record.iter().enumerate() {
            let v: f64 = raw.trim().parse().map_err(|_| {
                ModensError::parse(path, format!("row {}, column {}: cannot parse {raw:?}", r + 1, c + 1))
            })?;
            values.push(v);
        }
    }
    let p = width.ok_or_else(|| ModensError::parse(path, "no data rows"))?;
    Array2::from_shape_vec((values.len() / p, p), values).map_err(|e| ModensError::Internal(e.to_string()))
}
