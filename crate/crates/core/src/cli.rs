//! The `modens` command line.
//!
//! Settings are resolved as: command-line flags, then the `--config` file,
//! then built-in defaults. The config file is JSON with optional sections
//! `seed`, `generate`, `train`, `intervals`, `eval` and `report`; a manifest
//! written by an earlier run is accepted too, which replays its settings.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::benchgen::{self, GeneratorConfig, NoiseFamily};
use crate::ensemble::{
    fit_propensity, load_model, propensity_path, read_dataset, save_model, train_ensemble,
    write_dataset, EnsembleModel, Head, MlpParams, TrainConfig,
};
use crate::error::{ModensError, Result};
use crate::eval::{
    self, cost_mass, cost_relative, coverage, mean_length, run_experiment, sample_std, write_point_csv,
    write_report, CostKind, EvalConfig, IntervalPipeline,
};
use crate::oracle::{check_instance, random_instance, ORACLE_TOL};
use crate::par::{self, ExecutionMode};
use crate::sensitivity::DEFAULT_PROPENSITY_CLAMP;

#[derive(Debug, Parser)]
#[command(name = "modens", version, about = "Partially identified causal outcome intervals from modulated ensembles")]
pub struct Cli {
    /// Seed for every random stream (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON config file or a manifest from an earlier run; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for outputs and manifests.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Worker threads (falls back to MODENS_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the semi-synthetic train/valid/test benchmark.
    Generate(GenerateArgs),
    /// Train an outcome ensemble and a propensity model.
    Train(TrainArgs),
    /// Outcome intervals for every row of a dataset at a fixed Γ.
    Intervals(IntervalsArgs),
    /// Search the smallest Γ reaching a target test coverage.
    GammaSearch(GammaSearchArgs),
    /// Compare the greedy optimizer with exhaustive search on random instances.
    OracleCheck(OracleArgs),
    /// Coverage-versus-Γ curves and cost tables as CSV.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Feature matrix CSV (header row, all numeric), or `none` for the built-in factor model.
    #[arg(long)]
    pub features: Option<String>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_valid: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub noise: Option<NoiseFamily>,
    #[arg(long)]
    pub noise_scale: Option<f64>,
    /// Zero the hidden confounders in the outcome.
    #[arg(long)]
    pub suppress_hidden: bool,
    /// No observation noise.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub head: Option<Head>,
    #[arg(long)]
    pub members: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Hidden widths, comma separated (e.g. `64,64`).
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Model file (default `<out-dir>/model.json`); the propensity model goes next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Propensity model (default: `<model stem>.propensity.json`).
    #[arg(long)]
    pub propensity: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IntervalsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub arm: Option<u8>,
    /// Output CSV (default `<out-dir>/intervals.csv`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub arm: Option<u8>,
    /// abs-std, relative or mass.
    #[arg(long)]
    pub cost: Option<CostKind>,
}

#[derive(Debug, Args)]
pub struct GammaSearchArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub target: Option<f64>,
    #[command(flatten)]
    pub eval: EvalArgs,
    #[arg(long)]
    pub gamma_tol: Option<f64>,
    /// Report JSON (default `<out-dir>/report.json`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-point CSV (default: report path with `.points.csv`).
    #[arg(long)]
    pub points: Option<PathBuf>,
    /// Store wall-clock runtime in the report (makes it run-dependent).
    #[arg(long)]
    pub record_runtime: bool,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Ensemble size, at most 10.
    #[arg(long, default_value_t = 6)]
    pub m: usize,
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, requires = "test")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub propensity: Option<PathBuf>,
    #[arg(long, requires = "model")]
    pub test: Option<PathBuf>,
    /// Γ grid for the coverage curve.
    #[arg(long, value_delimiter = ',')]
    pub gammas: Option<Vec<f64>>,
    #[command(flatten)]
    pub eval: EvalArgs,
    /// gamma-search reports to tabulate; the method name is the file stem.
    #[arg(long, num_args = 1..)]
    pub reports: Vec<PathBuf>,
}

impl std::str::FromStr for NoiseFamily {
    type Err = ModensError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cauchy" => Ok(NoiseFamily::Cauchy),
            "gaussian" => Ok(NoiseFamily::Gaussian),
            other => Err(ModensError::Config(format!("unknown noise family `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntervalsConfig {
    pub gamma: f64,
    pub alpha: f64,
    pub arm: u8,
    pub propensity_clamp: f64,
}

impl Default for IntervalsConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            alpha: 0.1,
            arm: 1,
            propensity_clamp: DEFAULT_PROPENSITY_CLAMP,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub gammas: Vec<f64>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            gammas: vec![1.0, 2.0, 5.0, 10.0, 25.0, 50.0],
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    seed: Option<u64>,
    generate: Option<GeneratorConfig>,
    train: Option<TrainConfig>,
    intervals: Option<IntervalsConfig>,
    eval: Option<EvalConfig>,
    report: Option<ReportConfig>,
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| {
        ModensError::Config(format!("cannot read config {}: {e}", path.display()))
    })?;
    let bad = |e: serde_json::Error| {
        ModensError::Config(format!(
            "{} line {}, column {}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    };
    let mut value: Value = serde_json::from_str(&text).map_err(bad)?;
    // a manifest nests the resolved settings under "config"
    if let Some(obj) = value.as_object_mut() {
        if let Some(inner) = obj.remove("config") {
            let mut inner = inner;
            if let (Some(seed), Some(map)) = (obj.get("seed"), inner.as_object_mut()) {
                map.entry("seed").or_insert(seed.clone());
            }
            value = inner;
        }
    }
    serde_json::from_value(value).map_err(bad)
}

struct Context {
    seed: u64,
    out_dir: PathBuf,
    file: ConfigFile,
    mode: ExecutionMode,
}

impl Context {
    fn out(&self, explicit: &Option<PathBuf>, default_name: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.out_dir.join(default_name))
    }

    fn write_manifest(
        &self,
        subcommand: &str,
        config: Value,
        inputs: BTreeMap<String, String>,
        outputs: Vec<&Path>,
    ) -> Result<()> {
        let canonical = serde_json::to_string(&config).expect("config serializes");
        let hash: String = Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        let manifest = json!({
            "tool": "modens",
            "version": env!("CARGO_PKG_VERSION"),
            "subcommand": subcommand,
            "seed": self.seed,
            "config": config,
            "config_sha256": hash,
            "inputs": inputs,
            "outputs": outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        });
        let path = self.out_dir.join(format!("{subcommand}.manifest.json"));
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| ModensError::io(&path, e))
    }
}

fn prepare_out_dir(dir: &Path) -> Result<()> {
    let unusable = |e: std::io::Error| {
        ModensError::Config(format!("output directory {} is not writable: {e}", dir.display()))
    };
    std::fs::create_dir_all(dir).map_err(unusable)?;
    let probe = dir.join(".modens-write-check");
    std::fs::write(&probe, b"").map_err(unusable)?;
    std::fs::remove_file(&probe).map_err(unusable)
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var("MODENS_THREADS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| ModensError::Config(format!("MODENS_THREADS must be a positive integer, got {v:?}"))),
        _ => Ok(None),
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("config serializes")
}

fn cmd_generate(ctx: &Context, args: &GenerateArgs) -> Result<i32> {
    let mut cfg = ctx.file.generate.clone().unwrap_or_default();
    cfg.seed = ctx.seed;
    if let Some(v) = args.n_train {
        cfg.n_train = v;
    }
    if let Some(v) = args.n_valid {
        cfg.n_valid = v;
    }
    if let Some(v) = args.n_test {
        cfg.n_test = v;
    }
    if let Some(v) = args.noise {
        cfg.noise = v;
    }
    if let Some(v) = args.noise_scale {
        cfg.noise_scale = v;
    }
    cfg.suppress_hidden |= args.suppress_hidden;
    cfg.deterministic |= args.deterministic;
    cfg.validate()?;

    let features = match args.features.as_deref() {
        None | Some("none") => None,
        Some(path) => Some(benchgen::read_features(path)?),
    };
    let data = benchgen::generate_dataset(features.as_ref().map(|f| f.view()), &cfg)?;
    let paths: Vec<PathBuf> = ["train.csv", "valid.csv", "test.csv"]
        .iter()
        .map(|n| ctx.out_dir.join(n))
        .collect();
    for (path, d) in paths.iter().zip([&data.train, &data.valid, &data.test]) {
        write_dataset(path, d)?;
    }
    let mut inputs = BTreeMap::new();
    inputs.insert("features".to_string(), args.features.clone().unwrap_or_else(|| "none".into()));
    ctx.write_manifest(
        "generate",
        json!({ "generate": to_value(&cfg) }),
        inputs,
        paths.iter().map(PathBuf::as_path).collect(),
    )?;
    println!(
        "wrote {} train, {} valid, {} test rows to {}",
        data.train.len(),
        data.valid.len(),
        data.test.len(),
        ctx.out_dir.display()
    );
    Ok(0)
}

/// Seed of the propensity network, disjoint from the member seeds `seed + j`.
fn propensity_seed(seed: u64) -> u64 {
    seed.wrapping_add(1 << 32)
}

fn cmd_train(ctx: &Context, args: &TrainArgs) -> Result<i32> {
    let mut cfg = ctx.file.train.clone().unwrap_or_default();
    if let Some(v) = args.head {
        cfg.head = v;
    }
    if let Some(v) = args.members {
        cfg.members = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = &args.hidden {
        cfg.hidden = v.clone();
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    cfg.validate()?;
    if cfg.head == Head::Propensity {
        return Err(ModensError::Config("--head must be gaussian or cauchy".into()));
    }

    let data = read_dataset(&args.data)?;
    let model = train_ensemble(&data, &cfg, ctx.seed, ctx.mode)?;
    let prop_cfg = TrainConfig {
        head: Head::Propensity,
        ..cfg.clone()
    };
    let prop = fit_propensity(&data, &prop_cfg, propensity_seed(ctx.seed))?;

    let out = ctx.out(&args.out, "model.json");
    let prop_out = propensity_path(&out);
    save_model(&model, &out)?;
    save_model(&EnsembleModel::new(vec![prop], propensity_seed(ctx.seed))?, &prop_out)?;
    let mut inputs = BTreeMap::new();
    inputs.insert("data".to_string(), args.data.display().to_string());
    ctx.write_manifest("train", json!({ "train": to_value(&cfg) }), inputs, vec![&out, &prop_out])?;
    println!("trained {} {:?} members; model written to {}", model.len(), cfg.head, out.display());
    Ok(0)
}

fn load_models(args: &ModelArgs) -> Result<(EnsembleModel, MlpParams, PathBuf)> {
    let model = load_model(&args.model)?;
    let prop_path = args.propensity.clone().unwrap_or_else(|| propensity_path(&args.model));
    let mut prop = load_model(&prop_path)?;
    if prop.head() != Head::Propensity || prop.len() != 1 {
        return Err(ModensError::Config(format!(
            "{} is not a propensity model",
            prop_path.display()
        )));
    }
    Ok((model, prop.members.remove(0), prop_path))
}

fn cmd_intervals(ctx: &Context, args: &IntervalsArgs) -> Result<i32> {
    let mut cfg = ctx.file.intervals.clone().unwrap_or_default();
    if let Some(v) = args.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = args.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = args.arm {
        cfg.arm = v;
    }
    if cfg.arm > 1 {
        return Err(ModensError::Config(format!("--arm must be 0 or 1, got {}", cfg.arm)));
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(ModensError::Config(format!("--alpha must lie in (0, 1), got {}", cfg.alpha)));
    }
    if !(cfg.gamma >= 1.0) {
        return Err(ModensError::Config(format!("--gamma must be at least 1, got {}", cfg.gamma)));
    }
    let (model, prop, prop_path) = load_models(&args.model)?;
    let data = read_dataset(&args.data)?;
    let pipeline = IntervalPipeline::new(
        &model,
        &prop,
        data.covariates.view(),
        cfg.arm,
        cfg.alpha,
        cfg.propensity_clamp,
        ctx.mode,
    )?;
    let intervals = pipeline.intervals(cfg.gamma)?;

    let out = ctx.out(&args.out, "intervals.csv");
    let mut w = csv::Writer::from_path(&out).map_err(|e| ModensError::parse(&out, e.to_string()))?;
    let csv_err = |e: csv::Error| ModensError::parse(&out, e.to_string());
    w.write_record(["index", "lo", "hi"]).map_err(csv_err)?;
    for (i, iv) in intervals.iter().enumerate() {
        w.write_record([i.to_string(), iv.lo.to_string(), iv.hi.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| ModensError::io(&out, e))?;

    let mut inputs = BTreeMap::new();
    inputs.insert("model".to_string(), args.model.model.display().to_string());
    inputs.insert("propensity".to_string(), prop_path.display().to_string());
    inputs.insert("data".to_string(), args.data.display().to_string());
    ctx.write_manifest("intervals", json!({ "intervals": to_value(&cfg) }), inputs, vec![&out])?;
    println!("wrote {} intervals to {}", intervals.len(), out.display());
    Ok(0)
}

fn apply_eval_args(cfg: &mut EvalConfig, args: &EvalArgs) {
    if let Some(v) = args.alpha {
        cfg.alpha = Some(v);
    }
    if let Some(v) = args.arm {
        cfg.arm = v;
    }
    if let Some(v) = args.cost {
        cfg.cost = v;
    }
}

fn cmd_gamma_search(ctx: &Context, args: &GammaSearchArgs) -> Result<i32> {
    let started = Instant::now();
    let mut cfg = ctx.file.eval.clone().unwrap_or_default();
    if let Some(v) = args.target {
        cfg.target_coverage = v;
    }
    if let Some(v) = args.gamma_tol {
        cfg.gamma_tol = v;
    }
    apply_eval_args(&mut cfg, &args.eval);
    cfg.validate()?;

    let (model, prop, prop_path) = load_models(&args.model)?;
    let test = read_dataset(&args.test)?;
    let mut report = run_experiment(&test, &model, &prop, &cfg, ctx.seed, ctx.mode)?;
    if args.record_runtime {
        report.runtime_seconds = Some(started.elapsed().as_secs_f64());
    }

    let out = ctx.out(&args.out, "report.json");
    let points = args
        .points
        .clone()
        .unwrap_or_else(|| out.with_extension("points.csv"));
    write_report(&out, &report)?;
    write_point_csv(&points, &report.intervals, &report.outcomes)?;

    let mut inputs = BTreeMap::new();
    inputs.insert("model".to_string(), args.model.model.display().to_string());
    inputs.insert("propensity".to_string(), prop_path.display().to_string());
    inputs.insert("test".to_string(), args.test.display().to_string());
    ctx.write_manifest("gamma-search", json!({ "eval": to_value(&cfg) }), inputs, vec![&out, &points])?;
    match report.gamma_star {
        eval::GammaStar::Found(g) => println!(
            "gamma* = {g} (coverage {}, cost {})",
            report.achieved_coverage,
            report.coverage_cost.unwrap_or(f64::NAN)
        ),
        eval::GammaStar::Failure => println!(
            "FAILURE: coverage {} at gamma {} is below target {}",
            report.achieved_coverage, cfg.gamma_max, cfg.target_coverage
        ),
    }
    Ok(0)
}

fn cmd_oracle_check(ctx: &Context, args: &OracleArgs) -> Result<i32> {
    if args.m > crate::modulate::BRUTE_FORCE_MAX_M {
        return Err(ModensError::Refused(format!(
            "--m {} exceeds the brute-force limit of {} (cost grows as m*2^m)",
            args.m,
            crate::modulate::BRUTE_FORCE_MAX_M
        )));
    }
    if args.m == 0 {
        return Err(ModensError::Config("--m must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let instances = (0..args.trials)
        .map(|_| random_instance(args.m, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let outcomes = par::try_map_range(ctx.mode, instances.len(), |i| check_instance(&instances[i]))?;
    let max_dev = outcomes.iter().map(|o| o.deviation).fold(0.0, f64::max);
    let uncertified = outcomes.iter().filter(|o| !o.certified).count();
    println!(
        "m = {}, trials = {}: max normalized deviation {max_dev:.3e} (limit {ORACLE_TOL:e}), {uncertified} uncertified maximizers",
        args.m, args.trials
    );
    Ok(if outcomes.iter().all(|o| o.passes()) { 0 } else { 1 })
}

fn cmd_report(ctx: &Context, args: &ReportArgs) -> Result<i32> {
    if args.model.is_none() && args.reports.is_empty() {
        return Err(ModensError::Config(
            "report needs --model/--test for a coverage curve or --reports for a cost table".into(),
        ));
    }
    let mut outputs = Vec::new();
    let mut inputs = BTreeMap::new();
    let mut cfg = ctx.file.eval.clone().unwrap_or_default();
    apply_eval_args(&mut cfg, &args.eval);
    cfg.validate()?;
    let mut rcfg = ctx.file.report.clone().unwrap_or_default();
    if let Some(g) = &args.gammas {
        rcfg.gammas = g.clone();
    }

    if let (Some(model_path), Some(test_path)) = (&args.model, &args.test) {
        let margs = ModelArgs {
            model: model_path.clone(),
            propensity: args.propensity.clone(),
        };
        let (model, prop, prop_path) = load_models(&margs)?;
        let test = read_dataset(test_path)?;
        let outcomes = test.potential_arm(cfg.arm)?;
        let pipeline = IntervalPipeline::new(
            &model,
            &prop,
            test.covariates.view(),
            cfg.arm,
            cfg.resolved_alpha(),
            cfg.propensity_clamp,
            ctx.mode,
        )?;
        let std = sample_std(&outcomes);
        let path = ctx.out_dir.join("coverage_curve.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| ModensError::parse(&path, e.to_string()))?;
        let csv_err = |e: csv::Error| ModensError::parse(&path, e.to_string());
        w.write_record(["gamma", "coverage", "mean_length", "cost_abs_std", "cost_mass"])
            .map_err(csv_err)?;
        for &g in &rcfg.gammas {
            let iv = pipeline.intervals(g)?;
            w.write_record([
                g.to_string(),
                coverage(&iv, &outcomes)?.to_string(),
                mean_length(&iv).to_string(),
                (mean_length(&iv) / std).to_string(),
                cost_mass(&iv, &outcomes)?.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| ModensError::io(&path, e))?;
        inputs.insert("model".to_string(), model_path.display().to_string());
        inputs.insert("propensity".to_string(), prop_path.display().to_string());
        inputs.insert("test".to_string(), test_path.display().to_string());
        outputs.push(path);
    }

    if !args.reports.is_empty() {
        let mut rows = Vec::new();
        for path in &args.reports {
            let text = std::fs::read_to_string(path).map_err(|e| ModensError::io(path, e))?;
            let v: Value = serde_json::from_str(&text).map_err(|e| {
                ModensError::parse(path, format!("line {}, column {}: {e}", e.line(), e.column()))
            })?;
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            rows.push((name, v));
        }
        let lengths: BTreeMap<String, f64> = rows
            .iter()
            .filter(|(_, v)| v["gamma_star"].is_number())
            .filter_map(|(n, v)| v["mean_length"].as_f64().map(|l| (n.clone(), l)))
            .collect();
        let relative = if lengths.is_empty() {
            BTreeMap::new()
        } else {
            cost_relative(&lengths)?
        };
        let path = ctx.out_dir.join("cost_table.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| ModensError::parse(&path, e.to_string()))?;
        let csv_err = |e: csv::Error| ModensError::parse(&path, e.to_string());
        w.write_record([
            "method",
            "gamma_star",
            "achieved_coverage",
            "coverage_cost",
            "mean_length",
            "relative_excess",
        ])
        .map_err(csv_err)?;
        let field = |v: &Value| match v {
            Value::Null => String::new(),
            Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        for (name, v) in &rows {
            w.write_record([
                name.clone(),
                field(&v["gamma_star"]),
                field(&v["achieved_coverage"]),
                field(&v["coverage_cost"]),
                field(&v["mean_length"]),
                relative.get(name).map(|r| (r - 1.0).to_string()).unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| ModensError::io(&path, e))?;
        for (i, p) in args.reports.iter().enumerate() {
            inputs.insert(format!("report_{i}"), p.display().to_string());
        }
        outputs.push(path);
    }

    ctx.write_manifest(
        "report",
        json!({ "eval": to_value(&cfg), "report": to_value(&rcfg) }),
        inputs,
        outputs.iter().map(PathBuf::as_path).collect(),
    )?;
    for p in &outputs {
        println!("wrote {}", p.display());
    }
    Ok(0)
}

/// Exit status for an error: 2 for usage or configuration problems, 1 otherwise.
pub fn exit_code(err: &ModensError) -> i32 {
    match err {
        ModensError::Config(_) | ModensError::Refused(_) => 2,
        _ => 1,
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    if let Some(n) = thread_count(cli.threads)? {
        if n == 0 {
            return Err(ModensError::Config("--threads must be at least 1".into()));
        }
        par::init_thread_pool(n);
    }
    let file = load_config(cli.config.as_deref())?;
    prepare_out_dir(&cli.out_dir)?;
    let ctx = Context {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        out_dir: cli.out_dir,
        file,
        mode: ExecutionMode::Parallel,
    };
    match &cli.command {
        Command::Generate(a) => cmd_generate(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Intervals(a) => cmd_intervals(&ctx, a),
        Command::GammaSearch(a) => cmd_gamma_search(&ctx, a),
        Command::OracleCheck(a) => cmd_oracle_check(&ctx, a),
        Command::Report(a) => cmd_report(&ctx, a),
    }
}

/// Parses `args`, runs the command, prints errors and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_config_is_unwrapped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        std::fs::write(
            &path,
            r#"{"tool":"modens","seed":7,"config":{"generate":{"n_train":10}}}"#,
        )
        .unwrap();
        let cfg = load_config(Some(&path)).unwrap();
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.generate.unwrap().n_train, 10);

        std::fs::write(&path, r#"{"generate":{"n_trian":10}}"#).unwrap();
        assert!(matches!(load_config(Some(&path)), Err(ModensError::Config(_))));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&ModensError::Config("x".into())), 2);
        assert_eq!(exit_code(&ModensError::Refused("x".into())), 2);
        assert_eq!(exit_code(&ModensError::Training("x".into())), 1);
    }

    #[test]
    fn parses_global_flags_after_subcommand() {
        let cli = Cli::try_parse_from(["modens", "oracle-check", "--m", "3", "--seed", "5"]).unwrap();
        assert_eq!(cli.seed, Some(5));
        assert!(Cli::try_parse_from(["modens", "oracle-check", "--bogus"]).is_err());
    }
}
