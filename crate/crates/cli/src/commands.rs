//! Implementations behind the command-line subcommands.

use crate::experiment::{
    emit_plot_data, read_records, run_experiment, salted, write_csv, ExperimentSpec, Manifest, Metric,
};
use crate::io::{read_json, write_json};
use anyhow::{bail, ensure, Context, Result};
use mim_robust_core::adversary::{estimate_adv_risk, AttackConfig, Norm, RiskEstimate, StepMode};
use mim_robust_core::approx::{
    monomial_dual, poly_dual_weights, relu_dual_weights, riemann_second_layer, DualWeightFn, RiemannConfig,
};
use mim_robust_core::data::{gen_dataset, MultiIndexTask};
use mim_robust_core::linalg;
use mim_robust_core::model::{Activation, Checkpoint, CheckpointMeta, TwoLayerNet};
use mim_robust_core::oracles::{alg2_single_index_fl, alg3_multi_index_fl, check_dfl, check_sfl_alignment, Alg2Config};
use mim_robust_core::poly::Poly;
use mim_robust_core::quad::SphereRule;
use mim_robust_core::rng;
use mim_robust_core::robust_train::{
    init_phase2, robust_fit_second_layer, with_second_layer, DataSource, Phase2Config, TestProbe,
};
use mim_robust_core::tensor::SymTensor;
use mim_robust_core::verify::{theorem1_check, InequalityReport};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub fn parse_norm(s: &str) -> Result<Norm> {
    match s.to_ascii_lowercase().as_str() {
        "l2" => Ok(Norm::L2),
        "linf" => Ok(Norm::Linf),
        _ => bail!("unknown norm {s:?} (expected l2 or linf)"),
    }
}

pub fn parse_mode(s: &str) -> Result<StepMode> {
    match s.to_ascii_lowercase().as_str() {
        "signed" => Ok(StepMode::Signed),
        "normalized" => Ok(StepMode::Normalized),
        _ => bail!("unknown step mode {s:?} (expected signed or normalized)"),
    }
}

pub fn parse_activation(s: &str) -> Result<Activation> {
    match s.to_ascii_lowercase().as_str() {
        "relu" => Ok(Activation::Relu),
        "tanh" => Ok(Activation::Tanh),
        _ => bail!("unknown activation {s:?} (expected relu or tanh)"),
    }
}

pub fn datagen(task: &Path, n: usize, seed: u64, salt: u64, out: &Path) -> Result<()> {
    let task: MultiIndexTask = read_json(task)?;
    let data = gen_dataset(&task, n, salted(seed, salt));
    let mut w = csv::Writer::from_path(out).with_context(|| format!("cannot write {}", out.display()))?;
    let mut header: Vec<String> = (0..task.d).map(|i| format!("x{i}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut row: Vec<String> = data.x.row(i).iter().map(|v| v.to_string()).collect();
        row.push(data.y[i].to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct AttackEvalReport {
    attack: AttackConfig,
    risk: RiskEstimate,
}

pub fn attack_eval(
    model: &Path,
    task: &Path,
    attack: AttackConfig,
    n: usize,
    seed: u64,
    salt: u64,
    out: &Path,
) -> Result<RiskEstimate> {
    let net = read_json::<Checkpoint>(model)?.to_net()?;
    let task: MultiIndexTask = read_json(task)?;
    attack.validate()?;
    let risk = estimate_adv_risk(&net, &task, &attack, n, salted(seed, salt))?;
    write_json(out, &AttackEvalReport { attack, risk })?;
    Ok(risk)
}

/// First-layer weights as written by `feature-learn`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeightsFile {
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    #[serde(default)]
    pub alg: String,
    #[serde(default)]
    pub seed: u64,
}

impl WeightsFile {
    pub fn matrix(&self) -> Result<DMatrix<f64>> {
        ensure!(!self.w.is_empty(), "weight file has no rows");
        Ok(linalg::from_rows(&self.w)?)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Alg3Config {
    #[serde(rename = "N")]
    pub n_neurons: usize,
    /// Number of training samples.
    pub n: usize,
    #[serde(default = "one")]
    pub r_a: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

pub fn feature_learn(alg: &str, task: &Path, config: &Path, salt: u64, out: &Path) -> Result<DMatrix<f64>> {
    let task: MultiIndexTask = read_json(task)?;
    let (w, seed) = match alg {
        "alg2" => {
            let mut cfg: Alg2Config = read_json(config)?;
            let seed = cfg.seed;
            cfg.seed = salted(seed, salt);
            (alg2_single_index_fl(&task, &cfg)?.net.w, seed)
        }
        "alg3" => {
            let cfg: Alg3Config = read_json(config)?;
            let s = salted(cfg.seed, salt);
            let data = gen_dataset(&task, cfg.n, rng::derive(s, "alg3-data"));
            (alg3_multi_index_fl(&data, cfg.n_neurons, cfg.r_a, s)?, cfg.seed)
        }
        _ => bail!("unknown algorithm {alg:?} (expected alg2 or alg3)"),
    };
    write_json(out, &WeightsFile { w: linalg::to_rows(&w), alg: alg.into(), seed })?;
    Ok(w)
}

pub fn oracle_check(w: &Path, task: &Path, zeta: f64, sfl: bool, seed: u64, salt: u64, out: &Path) -> Result<f64> {
    let w = read_json::<WeightsFile>(w)?.matrix()?;
    let task: MultiIndexTask = read_json(task)?;
    let s = salted(seed, salt);
    let rep = if sfl { check_sfl_alignment(&w, &task.u, zeta, s)? } else { check_dfl(&w, &task.u, zeta, s)? };
    write_json(out, &rep)?;
    Ok(rep.alpha_hat)
}

#[allow(clippy::too_many_arguments)]
pub fn robust_train(
    task: &Path,
    phase2: &Path,
    w: &Path,
    act: Activation,
    test_n: usize,
    test_steps: usize,
    salt: u64,
    out: &Path,
    trace_out: Option<&Path>,
) -> Result<TwoLayerNet> {
    let task: MultiIndexTask = read_json(task)?;
    let mut cfg: Phase2Config = read_json(phase2)?;
    let orig_seed = cfg.seed;
    cfg.seed = salted(cfg.seed, salt);
    let w = read_json::<WeightsFile>(w)?.matrix()?;
    ensure!(w.ncols() == task.d, "W has {} columns, task dimension is {}", w.ncols(), task.d);
    let (a0, b) = init_phase2(w.nrows(), cfg.r_b, cfg.seed);
    let features = TwoLayerNet::new(a0, w, b, act)?;
    let probe = (cfg.probe_every > 0).then(|| TestProbe {
        data: gen_dataset(&task, test_n, rng::derive(cfg.seed, "test-set")),
        attack: AttackConfig { steps: test_steps, ..cfg.attack },
        seed: rng::derive(cfg.seed, "test-pgd"),
    });
    let fixed;
    let source = if cfg.n_fa > 0 {
        fixed = gen_dataset(&task, cfg.n_fa, rng::derive(cfg.seed, "phase2-data"));
        DataSource::Fixed(&fixed)
    } else {
        DataSource::Stream { task: &task, seed: cfg.seed }
    };
    let (a, trace) = robust_fit_second_layer(&features, source, &cfg, probe.as_ref())?;
    let net = with_second_layer(&features, &a);
    write_json(out, &Checkpoint::from_net(&net, CheckpointMeta { seed: orig_seed, phase: "phase2".into() }))?;
    if let Some(p) = trace_out {
        write_csv(p, &trace.records)?;
    }
    Ok(net)
}

/// Reconstruction error at one evaluation point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointError {
    pub z: Vec<f64>,
    pub value: f64,
    pub target: f64,
    pub error: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ApproxReport {
    pub case: String,
    pub max_error: f64,
    pub points: Vec<PointError>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DualCase {
    h: Poly,
    #[serde(default)]
    sigma: Option<Poly>,
    #[serde(default = "three")]
    r_b: f64,
    #[serde(default = "grid")]
    grid: usize,
    #[serde(default = "nodes")]
    nodes: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MonomialCase {
    k: usize,
    s: usize,
    /// Row-major entries of the order-s tensor over R^k.
    tensor: Vec<f64>,
    #[serde(default = "twenty")]
    points: usize,
    #[serde(default = "nodes")]
    sphere_nodes: usize,
    #[serde(default)]
    seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RiemannCase {
    h: Poly,
    #[serde(rename = "N")]
    n_neurons: usize,
    d: usize,
    zeta: f64,
    #[serde(default = "three")]
    r_b: f64,
    #[serde(default = "one")]
    z_max: f64,
    #[serde(default = "grid")]
    grid: usize,
    #[serde(default)]
    seed: u64,
}

fn three() -> f64 {
    3.0
}
fn grid() -> usize {
    101
}
fn nodes() -> usize {
    10_000
}
fn twenty() -> usize {
    20
}

fn grid_points(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn report(case: &str, points: Vec<PointError>) -> ApproxReport {
    let max_error = points.iter().map(|p| p.error).fold(0.0, f64::max);
    ApproxReport { case: case.into(), max_error, points }
}

fn point(z: Vec<f64>, value: f64, target: f64) -> PointError {
    PointError { z, value, target, error: (value - target).abs() }
}

pub fn approx_verify(case: &str, config: &Path, salt: u64) -> Result<ApproxReport> {
    let raw = std::fs::read_to_string(config).with_context(|| format!("cannot read {}", config.display()))?;
    match case {
        "relu-dual" | "poly-dual" => {
            let c: DualCase = serde_json::from_str(&raw)?;
            let zs = grid_points(-c.r_b, c.r_b, c.grid);
            let pts = if case == "relu-dual" {
                let dual = relu_dual_weights(&c.h, c.r_b)?;
                zs.iter().map(|&z| point(vec![z], dual.reconstruct(z, c.nodes), c.h.eval(z))).collect()
            } else {
                let sigma = c.sigma.context("poly-dual needs an activation polynomial `sigma`")?;
                let dual = poly_dual_weights(&c.h, &sigma, c.r_b)?;
                zs.iter().map(|&z| point(vec![z], dual.reconstruct(z, c.nodes), c.h.eval(z))).collect()
            };
            Ok(report(case, pts))
        }
        "monomial" => {
            let c: MonomialCase = serde_json::from_str(&raw)?;
            let t = SymTensor::new(c.k, c.s, c.tensor)?;
            let dual = monomial_dual(&t)?;
            let rule =
                SphereRule::new(c.k, c.sphere_nodes).with_context(|| format!("no sphere rule for k = {}", c.k))?;
            let mut r = rng::stream(salted(c.seed, salt), "approx-monomial", 0);
            let pts = (0..c.points)
                .map(|_| {
                    let z = rng::gaussian_vec(&mut r, c.k);
                    point(z.clone(), dual.reconstruct(&z, &rule), t.contract(&z))
                })
                .collect();
            Ok(report(case, pts))
        }
        "riemann" => {
            let c: RiemannCase = serde_json::from_str(&raw)?;
            ensure!(c.d >= 1 && c.n_neurons >= 2, "need d >= 1 and N >= 2");
            let s = salted(c.seed, salt);
            let mut r = rng::stream(s, "approx-riemann", 0);
            let u = DMatrix::from_row_slice(1, c.d, &rng::unit_sphere(&mut r, c.d));
            // half the neurons on +u, half on -u
            let w = DMatrix::from_fn(c.n_neurons, c.d, |j, l| if j % 2 == 0 { u[(0, l)] } else { -u[(0, l)] });
            let b = DVector::from_fn(c.n_neurons, |_, _| r.random_range(-c.r_b..c.r_b));
            let hhat = DualWeightFn::ReluUnivariate(relu_dual_weights(&c.h, c.r_b)?);
            let mut cfg = RiemannConfig::new(c.zeta, c.r_b);
            cfg.seed = s;
            let fit = riemann_second_layer(&hhat, &w, &b, &u, &cfg)?;
            let pts = grid_points(-c.z_max, c.z_max, c.grid)
                .into_iter()
                .map(|z| point(vec![z], fit.eval(&[z], &Activation::Relu), c.h.eval(z)))
                .collect();
            Ok(report(case, pts))
        }
        _ => bail!("unknown case {case:?} (expected relu-dual, poly-dual, monomial or riemann)"),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn theorem1(
    model: &Path,
    task: &Path,
    attack: AttackConfig,
    n: usize,
    m_proj: usize,
    slack: f64,
    seed: u64,
    salt: u64,
    out: &Path,
) -> Result<InequalityReport> {
    let net = read_json::<Checkpoint>(model)?.to_net()?;
    let task: MultiIndexTask = read_json(task)?;
    let rep = theorem1_check(&net, &task, &attack, n, m_proj, slack, salted(seed, salt))?;
    write_json(out, &rep)?;
    Ok(rep)
}

/// Runs an experiment from a spec file or from a previous run's manifest.
/// A manifest carries its own salt.
pub fn experiment(spec: Option<&Path>, manifest: Option<&Path>, out: &Path, threads: usize, salt: u64) -> Result<()> {
    let (spec, salt) = match (spec, manifest) {
        (Some(p), None) => (read_json::<ExperimentSpec>(p)?, salt),
        (None, Some(p)) => {
            let m: Manifest = read_json(p)?;
            (m.spec, m.salt)
        }
        _ => bail!("give exactly one of --spec and --manifest"),
    };
    run_experiment(&spec, out, threads, salt)?;
    Ok(())
}

pub fn plot_data(input: &Path, out: &Path, metric: Metric) -> Result<()> {
    let rows = emit_plot_data(&read_records(input)?, metric)?;
    write_csv(out, &rows)
}
