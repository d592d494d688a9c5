//! Comparison of adversarial training pipelines across methods and seeds.

use anyhow::{bail, ensure, Context, Result};
use mim_robust_core::adversary::{AttackConfig, StepMode};
use mim_robust_core::data::{gen_dataset, LinkFunction, MultiIndexTask};
use mim_robust_core::model::{random_head, Activation, TwoLayerNet};
use mim_robust_core::rng;
use mim_robust_core::robust_train::{adversarial_train_full, standard_train, TestProbe, TrainConfig};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

/// Environment variable holding an integer mixed into every seed.
pub const SALT_VAR: &str = "MIM_ROBUST_SEED_SALT";

/// Salt from the environment; 0 when unset.
pub fn env_salt() -> Result<u64> {
    match std::env::var(SALT_VAR) {
        Ok(s) => s.trim().parse().with_context(|| format!("{SALT_VAR} must be an unsigned integer, got {s:?}")),
        Err(std::env::VarError::NotPresent) => Ok(0),
        Err(e) => bail!("cannot read {SALT_VAR}: {e}"),
    }
}

pub fn salted(seed: u64, salt: u64) -> u64 {
    rng::mix(seed, salt)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// Adversarial training of all layers from random initialization.
    FullAD,
    /// Standard pretraining, then adversarial training of all layers.
    SDthenADall,
    /// Standard pretraining, then adversarial training with W frozen.
    SDthenADsecond,
    /// Rows of W set to the target direction and frozen.
    KnownUFixed,
    /// Rows of W set to the target direction and trained.
    KnownUTrainable,
}

impl Method {
    pub fn tag(&self) -> &'static str {
        match self {
            Method::FullAD => "FullAD",
            Method::SDthenADall => "SDthenADall",
            Method::SDthenADsecond => "SDthenADsecond",
            Method::KnownUFixed => "KnownUFixed",
            Method::KnownUTrainable => "KnownUTrainable",
        }
    }

    pub fn pretrains(&self) -> bool {
        matches!(self, Method::SDthenADall | Method::SDthenADsecond)
    }

    pub fn freezes_w(&self) -> bool {
        matches!(self, Method::SDthenADsecond | Method::KnownUFixed)
    }

    pub fn knows_u(&self) -> bool {
        matches!(self, Method::KnownUFixed | Method::KnownUTrainable)
    }
}

impl std::str::FromStr for Method {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .with_context(|| format!("unknown method tag {s:?}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Teacher {
    #[serde(alias = "ReLU", alias = "Relu")]
    Relu,
    #[serde(alias = "Tanh")]
    Tanh,
    #[serde(alias = "He2")]
    He2,
}

impl Teacher {
    pub fn link(&self) -> LinkFunction {
        match self {
            Teacher::Relu => LinkFunction::Relu,
            Teacher::Tanh => LinkFunction::Tanh,
            Teacher::He2 => LinkFunction::He2,
        }
    }
}

/// Configuration of one experiment. Every field except `teacher`, `methods`
/// and `seeds` has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "default_id")]
    pub id: String,
    pub teacher: Teacher,
    #[serde(default = "hundred")]
    pub d: usize,
    #[serde(rename = "N", default = "hundred")]
    pub n_neurons: usize,
    /// Attack budget for training and testing; overrides `attack.epsilon`.
    #[serde(default = "one")]
    pub epsilon: f64,
    pub methods: Vec<Method>,
    #[serde(default = "default_batch")]
    pub batch: usize,
    /// Per-method batch sizes replacing `batch` in the adversarial stage.
    #[serde(default)]
    pub batch_override: BTreeMap<Method, usize>,
    /// Adversarial training iterations.
    #[serde(default = "default_iters")]
    pub iters: usize,
    #[serde(default = "hundred")]
    pub probe_every: usize,
    pub seeds: Vec<u64>,
    /// Training attack.
    #[serde(default = "default_attack")]
    pub attack: AttackConfig,
    #[serde(default = "default_test_n")]
    pub test_n: usize,
    #[serde(default = "default_test_steps")]
    pub test_attack_steps: usize,
    /// Step size of the test attack; defaults to `attack.step_size`.
    #[serde(default)]
    pub test_step_size: Option<f64>,
    #[serde(default = "default_test_mode")]
    pub test_step_mode: StepMode,
    /// Step size for a.
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Step size for W and b.
    #[serde(default = "default_lr_w")]
    pub lr_w: f64,
    /// Standard pretraining iterations for the SD methods.
    #[serde(default = "default_sd_iters")]
    pub sd_iters: usize,
    /// Pretraining batch size; defaults to `batch`.
    #[serde(default)]
    pub sd_batch: Option<usize>,
    #[serde(default = "default_sd_lr")]
    pub sd_lr: f64,
    #[serde(default = "default_sd_lr_w")]
    pub sd_lr_w: f64,
    #[serde(default)]
    pub noise_std: f64,
    /// Orientation of the rows for the known-direction methods.
    #[serde(default)]
    pub known_u_signs: KnownUSigns,
}

/// Rows of W for the known-direction methods: all +u, or +u / -u with
/// independent fair signs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnownUSigns {
    Positive,
    #[default]
    Random,
}

fn default_id() -> String {
    "comparison".into()
}
fn hundred() -> usize {
    100
}
fn one() -> f64 {
    1.0
}
fn default_batch() -> usize {
    300
}
fn default_iters() -> usize {
    2000
}
fn default_attack() -> AttackConfig {
    AttackConfig::new(1.0, 5, 0.1)
}
fn default_test_n() -> usize {
    10_000
}
fn default_test_steps() -> usize {
    20
}
fn default_test_mode() -> StepMode {
    StepMode::Signed
}
fn default_lr() -> f64 {
    DEFAULT_LR
}
fn default_lr_w() -> f64 {
    DEFAULT_LR_W
}
fn default_sd_lr() -> f64 {
    DEFAULT_SD_LR
}
fn default_sd_lr_w() -> f64 {
    DEFAULT_SD_LR_W
}
fn default_sd_iters() -> usize {
    2000
}

pub const DEFAULT_LR: f64 = 0.01;
pub const DEFAULT_LR_W: f64 = 0.01;
pub const DEFAULT_SD_LR: f64 = 0.005;
pub const DEFAULT_SD_LR_W: f64 = 4.0;

impl ExperimentSpec {
    /// Spec with defaults for the given teacher, methods and seeds.
    pub fn new(teacher: Teacher, methods: Vec<Method>, seeds: Vec<u64>) -> Self {
        let v = serde_json::json!({ "teacher": teacher, "methods": methods, "seeds": seeds });
        serde_json::from_value(v).expect("defaults deserialize")
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.methods.is_empty(), "methods must not be empty");
        ensure!(!self.seeds.is_empty(), "seeds must not be empty");
        ensure!(self.d >= 1 && self.n_neurons >= 1, "d and N must be positive");
        ensure!(self.batch >= 1 && self.batch_override.values().all(|&b| b >= 1), "batch sizes must be positive");
        ensure!(self.test_n >= 1, "test_n must be positive");
        ensure!(self.epsilon >= 0.0 && self.epsilon.is_finite(), "epsilon must be finite and nonnegative");
        ensure!(
            self.lr > 0.0 && self.lr_w > 0.0 && self.sd_lr > 0.0 && self.sd_lr_w > 0.0,
            "learning rates must be positive"
        );
        self.train_attack().validate()?;
        self.test_attack().validate()?;
        Ok(())
    }

    pub fn train_attack(&self) -> AttackConfig {
        AttackConfig { epsilon: self.epsilon, ..self.attack }
    }

    pub fn test_attack(&self) -> AttackConfig {
        AttackConfig {
            epsilon: self.epsilon,
            steps: self.test_attack_steps,
            step_size: self.test_step_size.unwrap_or(self.attack.step_size),
            step_mode: self.test_step_mode,
            ..self.attack
        }
    }

    pub fn batch_for(&self, m: Method) -> usize {
        self.batch_override.get(&m).copied().unwrap_or(self.batch)
    }

    /// Defaults filled in and the attack budget synchronized.
    pub fn resolved(&self) -> ExperimentSpec {
        let mut s = self.clone();
        s.attack.epsilon = s.epsilon;
        s.test_step_size = Some(self.test_attack().step_size);
        s.sd_batch = Some(self.sd_batch.unwrap_or(self.batch));
        s
    }
}

/// One probe of one (method, seed) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub experiment: String,
    pub method: String,
    pub seed: u64,
    pub iter: usize,
    pub samples: usize,
    pub robust_test_risk: f64,
    pub std_test_risk: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub method: String,
    pub seed: u64,
    pub iter: usize,
    pub wall_s: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: ExperimentSpec,
    pub version: String,
    pub generator: String,
    pub salt: u64,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub records: Vec<ResultRecord>,
    pub timings: Vec<TimingRecord>,
}

/// Per-seed objects shared by every method.
struct SeedContext {
    seed: u64,
    task: MultiIndexTask,
    probe: TestProbe,
    w_random: DMatrix<f64>,
    w_sd: Option<DMatrix<f64>>,
}

fn seed_context(spec: &ExperimentSpec, seed: u64, salt: u64, pretrain: bool) -> Result<SeedContext> {
    let s = salted(seed, salt);
    let mut r = rng::stream(s, "teacher-u", 0);
    let u = rng::unit_sphere(&mut r, spec.d);
    let task = MultiIndexTask::single_index(&u, spec.teacher.link(), spec.noise_std)?;
    let probe = TestProbe {
        data: gen_dataset(&task, spec.test_n, rng::derive(s, "test-set")),
        attack: spec.test_attack(),
        seed: rng::derive(s, "test-pgd"),
    };
    let init = TwoLayerNet::random_init(spec.n_neurons, spec.d, Activation::Relu, rng::derive(s, "init"));
    let w_sd = if pretrain {
        let cfg = TrainConfig {
            iters: spec.sd_iters,
            batch: spec.sd_batch.unwrap_or(spec.batch),
            lr: spec.sd_lr,
            lr_w: Some(spec.sd_lr_w),
            attack: AttackConfig::none(),
            freeze_first_layer: false,
            train_bias: true,
            seed: rng::derive(s, "sd-data"),
            probe_every: 0,
        };
        let (net, _) = standard_train(&init, &task, &cfg, None)?;
        Some(normalize_rows(&net.w))
    } else {
        None
    };
    Ok(SeedContext { seed, task, probe, w_random: init.w, w_sd })
}

fn normalize_rows(w: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = w.clone();
    for mut r in out.row_iter_mut() {
        let n = r.norm();
        if n > 0.0 {
            r /= n;
        }
    }
    out
}

fn run_cell(
    spec: &ExperimentSpec,
    ctx: &SeedContext,
    method: Method,
    salt: u64,
) -> Result<(Vec<ResultRecord>, Vec<TimingRecord>)> {
    let s = salted(ctx.seed, salt);
    let w = if method.knows_u() {
        let signs: Vec<f64> = match spec.known_u_signs {
            KnownUSigns::Positive => vec![1.0; spec.n_neurons],
            KnownUSigns::Random => {
                let mut r = rng::stream(s, "known-u-signs", 0);
                (0..spec.n_neurons).map(|_| rng::sign(&mut r)).collect()
            }
        };
        DMatrix::from_fn(spec.n_neurons, spec.d, |j, l| signs[j] * ctx.task.u[(0, l)])
    } else if method.pretrains() {
        ctx.w_sd.clone().context("missing pretrained weights")?
    } else {
        ctx.w_random.clone()
    };
    // same second layer and biases for every method
    let (a, b) = random_head(spec.n_neurons, rng::derive(s, "ad-head"));
    let net = TwoLayerNet::new(a, w, b, Activation::Relu)?;
    let batch = spec.batch_for(method);
    let cfg = TrainConfig {
        iters: spec.iters,
        batch,
        lr: spec.lr,
        lr_w: Some(spec.lr_w),
        attack: spec.train_attack(),
        freeze_first_layer: method.freezes_w(),
        train_bias: true,
        seed: rng::derive(s, "ad-data"),
        probe_every: spec.probe_every,
    };
    let (_, trace) = adversarial_train_full(&net, &ctx.task, &cfg, Some(&ctx.probe))
        .with_context(|| format!("{} seed {}", method.tag(), ctx.seed))?;
    let mut recs = Vec::new();
    let mut times = Vec::new();
    let rec = |iter: usize, robust: f64, standard: f64| ResultRecord {
        experiment: spec.id.clone(),
        method: method.tag().to_string(),
        seed: ctx.seed,
        iter,
        samples: iter * batch,
        robust_test_risk: robust,
        std_test_risk: standard,
    };
    if let Some(p) = trace.initial {
        recs.push(rec(0, p.robust, p.standard));
        times.push(TimingRecord { method: method.tag().into(), seed: ctx.seed, iter: 0, wall_s: 0.0 });
    }
    for r in &trace.records {
        let (Some(rob), Some(std)) = (r.robust_test_risk, r.std_test_risk) else { continue };
        recs.push(rec(r.iter, rob, std));
        times.push(TimingRecord { method: method.tag().into(), seed: ctx.seed, iter: r.iter, wall_s: r.wall_s });
    }
    Ok((recs, times))
}

/// Runs every (method, seed) cell on a pool of `threads` workers.
pub fn run_experiment_records(spec: &ExperimentSpec, salt: u64, threads: usize) -> Result<ExperimentOutput> {
    spec.validate()?;
    let spec = spec.resolved();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build()?;
    let pretrain = spec.methods.iter().any(Method::pretrains);
    pool.install(|| {
        let contexts: Vec<SeedContext> =
            spec.seeds.par_iter().map(|&seed| seed_context(&spec, seed, salt, pretrain)).collect::<Result<_>>()?;
        let cells: Vec<(usize, Method)> =
            (0..contexts.len()).flat_map(|i| spec.methods.iter().map(move |&m| (i, m))).collect();
        let results: Vec<(Vec<ResultRecord>, Vec<TimingRecord>)> =
            cells.par_iter().map(|&(i, m)| run_cell(&spec, &contexts[i], m, salt)).collect::<Result<_>>()?;
        let mut out = ExperimentOutput { records: Vec::new(), timings: Vec::new() };
        for (r, t) in results {
            out.records.extend(r);
            out.timings.extend(t);
        }
        Ok(out)
    })
}

/// Writes results.csv, timings.csv and manifest.json into `out_dir`.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: &Path, threads: usize, salt: u64) -> Result<ExperimentOutput> {
    let out = run_experiment_records(spec, salt, threads)?;
    fs::create_dir_all(out_dir)?;
    write_csv(&out_dir.join("results.csv"), &out.records)?;
    write_csv(&out_dir.join("timings.csv"), &out.timings)?;
    let manifest = Manifest {
        spec: spec.resolved(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        generator: rng::GENERATOR_ID.to_string(),
        salt,
    };
    fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(out)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<ResultRecord>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    r.deserialize().map(|x| x.map_err(Into::into)).collect()
}

/// Which risk column to aggregate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Robust,
    Standard,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub iter: usize,
    pub method: String,
    pub mean_risk: f64,
    pub std_risk: f64,
    pub n_seeds: usize,
}

/// Mean and sample standard deviation over seeds for every (method, iter).
pub fn emit_plot_data(records: &[ResultRecord], metric: Metric) -> Result<Vec<PlotRow>> {
    ensure!(!records.is_empty(), "no records to aggregate");
    let mut groups: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    for r in records {
        let v = match metric {
            Metric::Robust => r.robust_test_risk,
            Metric::Standard => r.std_test_risk,
        };
        groups.entry((r.method.clone(), r.iter)).or_default().push(v);
    }
    Ok(groups
        .into_iter()
        .map(|((method, iter), v)| {
            let n = v.len();
            let mean = v.iter().sum::<f64>() / n as f64;
            let std =
                if n > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
            PlotRow { iter, method, mean_risk: mean, std_risk: std, n_seeds: n }
        })
        .collect())
}

/// Robust test risk of each (method, seed) at the last probed iteration.
pub fn final_risks(records: &[ResultRecord]) -> BTreeMap<(String, u64), f64> {
    let mut last: BTreeMap<(String, u64), (usize, f64)> = BTreeMap::new();
    for r in records {
        let e = last.entry((r.method.clone(), r.seed)).or_insert((r.iter, r.robust_test_risk));
        if r.iter >= e.0 {
            *e = (r.iter, r.robust_test_risk);
        }
    }
    last.into_iter().map(|(k, (_, v))| (k, v)).collect()
}
