//! Robust second-layer fitting, full adversarial and standard training, and
//! the sufficient hyperparameter calculator.

use crate::adversary::{adv_losses_on, pgd_attack_batch, AttackConfig};
use crate::data::{gen_dataset, Dataset, MultiIndexTask};
use crate::error::{invalid, shape, Error, Result};
use crate::model::{Activation, Predictor, TwoLayerNet};
use crate::rng;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Configuration of the robust second-layer fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase2Config {
    /// Constraint ||a|| <= r_a / sqrt(N).
    pub r_a: f64,
    /// Biases are drawn from Unif(-r_b, r_b).
    pub r_b: f64,
    /// Number of samples in the fixed data set; 0 streams fresh batches.
    #[serde(default)]
    pub n_fa: usize,
    pub lr: f64,
    pub iters: usize,
    pub batch: usize,
    pub attack: AttackConfig,
    #[serde(default)]
    pub seed: u64,
    /// Evaluate the probe every this many iterations (0 disables probing).
    #[serde(default)]
    pub probe_every: usize,
}

impl Phase2Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_a > 0.0) {
            return Err(invalid("r_a must be positive"));
        }
        if !(self.r_b >= 0.0) {
            return Err(invalid("r_b must be nonnegative"));
        }
        if !(self.lr > 0.0) {
            return Err(invalid("lr must be positive"));
        }
        if self.batch == 0 {
            return Err(invalid("batch must be positive"));
        }
        self.attack.validate()
    }
}

/// One training iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub samples: usize,
    pub batch_adv_loss: f64,
    pub robust_test_risk: Option<f64>,
    pub std_test_risk: Option<f64>,
    pub wall_s: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Probe before the first update, if a probe was given.
    pub initial: Option<ProbeResult>,
    pub records: Vec<TraceRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub robust: f64,
    pub standard: f64,
}

/// Fixed test set used to track robust and standard risk during training.
#[derive(Clone, Debug)]
pub struct TestProbe {
    pub data: Dataset,
    pub attack: AttackConfig,
    pub seed: u64,
}

impl TestProbe {
    pub fn eval<P: Predictor + ?Sized>(&self, p: &P) -> Result<ProbeResult> {
        let losses = adv_losses_on(p, &self.data, &self.attack, self.seed)?;
        let robust = losses.iter().sum::<f64>() / losses.len() as f64;
        let f = p.predict_batch(&self.data.x);
        let standard = (f - &self.data.y).norm_squared() / self.data.len() as f64;
        Ok(ProbeResult { robust, standard })
    }
}

/// Where training samples come from.
#[derive(Clone, Copy, Debug)]
pub enum DataSource<'a> {
    Fixed(&'a Dataset),
    /// Fresh batches from the task, keyed by the seed and the iteration.
    Stream {
        task: &'a MultiIndexTask,
        seed: u64,
    },
}

/// Zero second layer and biases drawn from Unif(-r_b, r_b).
pub fn init_phase2(n: usize, r_b: f64, seed: u64) -> (DVector<f64>, DVector<f64>) {
    let mut r = rng::stream(seed, "phase2-bias", 0);
    let b = DVector::from_fn(n, |_, _| if r_b > 0.0 { r.random_range(-r_b..r_b) } else { 0.0 });
    (DVector::zeros(n), b)
}

fn project_ball(a: &mut DVector<f64>, radius: f64) {
    let n = a.norm();
    if n > radius {
        *a *= radius / n;
    }
}

/// Batches of a fixed data set, reshuffled every epoch.
struct Batcher<'a> {
    data: &'a Dataset,
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
    seed: u64,
}

impl<'a> Batcher<'a> {
    fn new(data: &'a Dataset, seed: u64) -> Self {
        Batcher { data, order: (0..data.len()).collect(), pos: data.len(), epoch: 0, seed }
    }

    fn next(&mut self, b: usize) -> Dataset {
        let n = self.data.len();
        if b >= n {
            return self.data.clone();
        }
        let mut idx = Vec::with_capacity(b);
        while idx.len() < b {
            if self.pos >= n {
                self.order.shuffle(&mut rng::stream(self.seed, "batch-shuffle", self.epoch));
                self.epoch += 1;
                self.pos = 0;
            }
            idx.push(self.order[self.pos]);
            self.pos += 1;
        }
        self.data.select(&idx)
    }
}

fn stream_batch(task: &MultiIndexTask, batch: usize, seed: u64, iter: usize) -> Dataset {
    gen_dataset(task, batch, rng::mix(rng::derive(seed, "train-batch"), iter as u64))
}

/// Projected gradient descent-ascent on the second layer with W and b frozen.
/// Each iteration attacks the batch with PGD, takes a gradient step on a for
/// the perturbed squared loss and rescales a onto the ball ||a|| <= r_a/sqrt(N).
pub fn robust_fit_second_layer(
    features: &TwoLayerNet,
    source: DataSource<'_>,
    cfg: &Phase2Config,
    probe: Option<&TestProbe>,
) -> Result<(DVector<f64>, TrainTrace)> {
    cfg.validate()?;
    features.validate()?;
    if let DataSource::Fixed(d) = source {
        if d.is_empty() {
            return Err(Error::EmptyData);
        }
        if d.dim() != features.dim() {
            return Err(shape(format!("data dim {} vs network dim {}", d.dim(), features.dim())));
        }
    }
    let nn = features.width();
    let radius = cfg.r_a / (nn as f64).sqrt();
    let mut net = features.clone();
    project_ball(&mut net.a, radius);
    let mut trace = TrainTrace::default();
    if let Some(p) = probe {
        trace.initial = Some(p.eval(&net)?);
    }
    let mut batcher = match source {
        DataSource::Fixed(d) => Some(Batcher::new(d, cfg.seed)),
        DataSource::Stream { .. } => None,
    };
    let start = Instant::now();
    let mut samples = 0;
    for it in 1..=cfg.iters {
        let batch = match (&mut batcher, source) {
            (Some(b), _) => b.next(cfg.batch),
            (None, DataSource::Stream { task, seed }) => stream_batch(task, cfg.batch, seed, it),
            _ => unreachable!(),
        };
        samples += batch.len();
        let att = pgd_attack_batch(&net, &batch.x, &batch.y, &cfg.attack, rng::mix(cfg.seed, it as u64))?;
        let loss = att.losses.iter().sum::<f64>() / att.losses.len() as f64;
        let xp = &batch.x + &att.delta;
        let feats = net.features(&xp);
        let r = (&feats * &net.a - &batch.y) * (2.0 / batch.len() as f64);
        let ga = feats.tr_mul(&r);
        net.a -= ga * cfg.lr;
        project_ball(&mut net.a, radius);
        let (rob, std) = match probe {
            Some(p) if cfg.probe_every > 0 && (it % cfg.probe_every == 0 || it == cfg.iters) => {
                let pr = p.eval(&net)?;
                (Some(pr.robust), Some(pr.standard))
            }
            _ => (None, None),
        };
        trace.records.push(TraceRecord {
            iter: it,
            samples,
            batch_adv_loss: loss,
            robust_test_risk: rob,
            std_test_risk: std,
            wall_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok((net.a, trace))
}

/// Network with the given second layer on frozen features.
pub fn with_second_layer(features: &TwoLayerNet, a: &DVector<f64>) -> TwoLayerNet {
    let mut n = features.clone();
    n.a = a.clone();
    n
}

/// Empirical adversarial risk (1/n) sum_i max_delta (f(x_i + delta) - y_i)^2
/// with the inner maximum approximated by PGD.
pub fn empirical_adv_risk(
    a: &DVector<f64>,
    w: &DMatrix<f64>,
    b: &DVector<f64>,
    act: &Activation,
    data: &Dataset,
    attack: &AttackConfig,
    seed: u64,
) -> Result<f64> {
    let net = TwoLayerNet::new(a.clone(), w.clone(), b.clone(), act.clone())?;
    let l = adv_losses_on(&net, data, attack, seed)?;
    Ok(l.iter().sum::<f64>() / l.len() as f64)
}

/// Squared loss of the network with second layer `a` at fixed perturbed inputs.
pub fn perturbed_loss(features: &TwoLayerNet, a: &DVector<f64>, x_pert: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let f = features.features(x_pert) * a;
    (f - y).norm_squared() / y.len() as f64
}

/// Direct solve of min (1/n)||Phi a - y||^2 subject to ||a|| <= radius, via the
/// eigen-decomposition of Phi^T Phi / n and bisection on the multiplier.
pub fn constrained_least_squares(phi: &DMatrix<f64>, y: &DVector<f64>, radius: f64) -> Result<DVector<f64>> {
    let n = phi.nrows();
    if n == 0 || y.len() != n {
        return Err(shape("design and labels disagree"));
    }
    let g = phi.tr_mul(phi) / n as f64;
    let c = phi.tr_mul(y) / n as f64;
    let eig = g.symmetric_eigen();
    let q = &eig.eigenvectors;
    let lam = &eig.eigenvalues;
    let ct = q.tr_mul(&c);
    let tol = 1e-12 * lam.amax().max(1e-300);
    let sol = |mu: f64| -> DVector<f64> {
        let z = DVector::from_fn(lam.len(), |i, _| {
            let den = lam[i] + mu;
            if den > tol {
                ct[i] / den
            } else {
                0.0
            }
        });
        q * z
    };
    let a0 = sol(0.0);
    if a0.norm() <= radius {
        return Ok(a0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while sol(hi).norm() > radius {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sol(mid).norm() > radius {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(sol(hi))
}

/// How the first layer is initialized in the training baselines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstLayerInit {
    /// Rows uniform on the unit sphere.
    Random,
    /// Row j equals u_{j mod k}.
    TargetDirections,
    /// Rows taken from a given matrix.
    FromCheckpoint(#[serde(skip)] Option<DMatrix<f64>>),
}

/// First-layer weights for the chosen initialization.
pub fn init_first_layer(init: &FirstLayerInit, n: usize, task: &MultiIndexTask, seed: u64) -> Result<DMatrix<f64>> {
    match init {
        FirstLayerInit::Random => Ok(TwoLayerNet::random_init(n, task.d, Activation::Relu, seed).w),
        FirstLayerInit::TargetDirections => Ok(DMatrix::from_fn(n, task.d, |j, l| task.u[(j % task.k, l)])),
        FirstLayerInit::FromCheckpoint(Some(w)) => {
            if w.shape() != (n, task.d) {
                return Err(shape(format!("checkpoint W is {:?}, expected ({n}, {})", w.shape(), task.d)));
            }
            Ok(w.clone())
        }
        FirstLayerInit::FromCheckpoint(None) => Err(invalid("checkpoint initialization without weights")),
    }
}

/// Online training of all layers on adversarially perturbed batches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iters: usize,
    pub batch: usize,
    /// Step size for a.
    pub lr: f64,
    /// Step size for the first-layer parameters W and b; defaults to `lr`.
    #[serde(default)]
    pub lr_w: Option<f64>,
    pub attack: AttackConfig,
    #[serde(default)]
    pub freeze_first_layer: bool,
    #[serde(default = "yes")]
    pub train_bias: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub probe_every: usize,
}

fn yes() -> bool {
    true
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(invalid("batch must be positive"));
        }
        if !(self.lr > 0.0) || self.lr_w.is_some_and(|l| !(l > 0.0)) {
            return Err(invalid("learning rates must be positive"));
        }
        self.attack.validate()
    }
}

/// Online adversarial training: a fresh batch per iteration, PGD
/// perturbations, one SGD step on (a, W, b) for the perturbed squared loss.
/// Batches are keyed by `cfg.seed` and the iteration number.
pub fn adversarial_train_full(
    net: &TwoLayerNet,
    task: &MultiIndexTask,
    cfg: &TrainConfig,
    probe: Option<&TestProbe>,
) -> Result<(TwoLayerNet, TrainTrace)> {
    cfg.validate()?;
    net.validate()?;
    if net.dim() != task.d {
        return Err(shape(format!("network dim {} vs task dim {}", net.dim(), task.d)));
    }
    let mut net = net.clone();
    if !cfg.freeze_first_layer {
        net.unit_rows = false;
    }
    let mut trace = TrainTrace::default();
    if let Some(p) = probe {
        trace.initial = Some(p.eval(&net)?);
    }
    let lr_w = cfg.lr_w.unwrap_or(cfg.lr);
    let start = Instant::now();
    for it in 1..=cfg.iters {
        let batch = stream_batch(task, cfg.batch, cfg.seed, it);
        let (xp, loss) = if cfg.attack.epsilon > 0.0 && cfg.attack.steps > 0 {
            let att = pgd_attack_batch(&net, &batch.x, &batch.y, &cfg.attack, rng::mix(cfg.seed ^ 0xa77a, it as u64))?;
            let l = att.losses.iter().sum::<f64>() / att.losses.len() as f64;
            (&batch.x + att.delta, l)
        } else {
            let l = net.mse(&batch.x, &batch.y);
            (batch.x.clone(), l)
        };
        let g = net.grad_params(&xp, &batch.y);
        net.a -= g.a * cfg.lr;
        if !cfg.freeze_first_layer {
            net.w -= g.w * lr_w;
        }
        if cfg.train_bias {
            net.b -= g.b * lr_w;
        }
        if !loss.is_finite() {
            return Err(invalid(format!("training diverged at iteration {it}")));
        }
        let (rob, std) = match probe {
            Some(p) if cfg.probe_every > 0 && (it % cfg.probe_every == 0 || it == cfg.iters) => {
                let pr = p.eval(&net)?;
                (Some(pr.robust), Some(pr.standard))
            }
            _ => (None, None),
        };
        trace.records.push(TraceRecord {
            iter: it,
            samples: it * cfg.batch,
            batch_adv_loss: loss,
            robust_test_risk: rob,
            std_test_risk: std,
            wall_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok((net, trace))
}

/// `adversarial_train_full` with the attack budget forced to zero.
pub fn standard_train(
    net: &TwoLayerNet,
    task: &MultiIndexTask,
    cfg: &TrainConfig,
    probe: Option<&TestProbe>,
) -> Result<(TwoLayerNet, TrainTrace)> {
    let mut c = cfg.clone();
    c.attack.epsilon = 0.0;
    adversarial_train_full(net, task, &c, probe)
}

/// Which sufficient-condition theorem the plan follows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    LipschitzDfl,
    LipschitzSfl,
    PolyDfl,
    PolySfl,
}

/// Multipliers standing in for the hidden polylogarithmic factors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanConstants {
    pub c_ra: f64,
    pub c_rb: f64,
    pub c_n: f64,
    pub c_zeta: f64,
    pub c_nfa: f64,
}

impl Default for PlanConstants {
    fn default() -> Self {
        PlanConstants { c_ra: 1.0, c_rb: 1.0, c_n: 1.0, c_zeta: 1.0, c_nfa: 1.0 }
    }
}

/// Problem quantities entering the plan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanInputs {
    pub k: usize,
    /// Adversary budget.
    pub epsilon: f64,
    /// Target excess risk.
    pub tol: f64,
    /// Estimate of the optimal adversarial risk; <= 0 means unknown.
    pub ar_star: f64,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "one")]
    pub beta: f64,
    /// Activation degree for the polynomial regimes.
    #[serde(default = "one_usize")]
    pub q: usize,
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperparamPlan {
    pub r_a: f64,
    pub r_b: f64,
    pub n_min: f64,
    pub zeta_max: f64,
    pub n_fa_min: f64,
    pub eps1: f64,
    pub eps_tilde: f64,
    pub regime: Regime,
    pub constants: PlanConstants,
}

/// Sufficient hyperparameters with the hidden factors replaced by `c`.
pub fn theorem_hyperparams(inp: &PlanInputs, regime: Regime, c: &PlanConstants) -> Result<HyperparamPlan> {
    if !(inp.tol > 0.0) {
        return Err(invalid("tolerance must be positive"));
    }
    if inp.k == 0 || !(inp.epsilon >= 0.0) || !(inp.alpha > 0.0) || !(inp.beta > 0.0) {
        return Err(invalid("need k >= 1, epsilon >= 0, alpha > 0, beta > 0"));
    }
    let e1 = inp.epsilon.max(1.0);
    let et = if inp.ar_star > 0.0 { inp.tol.min(inp.tol * inp.tol / inp.ar_star) } else { inp.tol };
    let k = inp.k as f64;
    let (al, be) = (inp.alpha, inp.beta);
    let rho = e1 / et.sqrt();
    let q1 = inp.q as f64 + 1.0;
    let (r_a, r_b, n_min, zeta_max, n_fa_min) = match regime {
        Regime::LipschitzDfl => {
            let zeta = c.c_zeta * (et / (e1 * e1)).powf(k + 2.0 + 1.0 / k);
            (
                c.c_ra * rho.powf(k + 1.0 + 1.0 / k) / al,
                c.c_rb * e1 * rho.powf(1.0 + 1.0 / k),
                c.c_n * rho.powf(k + 3.0 + 2.0 / k) / (al * zeta.powf((k - 1.0) / 2.0)),
                zeta,
                c.c_nfa * e1.powi(4) / (al.powi(4) * inp.tol * inp.tol) * (e1 * e1 / et).powf(2.0 * k + 4.0 + 4.0 / k),
            )
        }
        Regime::LipschitzSfl => (
            c.c_ra * rho.powf(k + 1.0 + 1.0 / k) / (al * be),
            c.c_rb * e1 * rho.powf(1.0 + 1.0 / k),
            c.c_n * (e1 * e1 / et).powf(k + 3.0 + 2.0 / k) / (al * be * be),
            c.c_zeta * be * be * (et / (e1 * e1)).powf(k + 2.0 + 1.0 / k),
            c.c_nfa * e1.powi(4) / (al.powi(4) * be.powi(4) * inp.tol * inp.tol)
                * (e1 * e1 / et).powf(2.0 * k + 4.0 + 4.0 / k),
        ),
        Regime::PolyDfl => {
            let zeta = c.c_zeta * et / e1.powf(2.0 * q1);
            (
                c.c_ra,
                c.c_rb * e1,
                c.c_n * e1.powf(q1) / (al * zeta.powf((k - 1.0) / 2.0) * et.sqrt()),
                zeta,
                c.c_nfa * e1.powf(4.0 * q1) / (al.powi(4) * inp.tol * inp.tol),
            )
        }
        Regime::PolySfl => (
            c.c_ra,
            c.c_rb * e1,
            c.c_n * e1.powf(2.0 * q1) / (al * be * be * et),
            c.c_zeta * be * be * et / e1.powf(2.0 * q1),
            c.c_nfa * e1.powf(4.0 * q1) / (al.powi(4) * be.powi(4) * inp.tol * inp.tol),
        ),
    };
    let plan = HyperparamPlan { r_a, r_b, n_min, zeta_max, n_fa_min, eps1: e1, eps_tilde: et, regime, constants: *c };
    for (name, v) in [("r_a", r_a), ("r_b", r_b), ("N", n_min), ("zeta", zeta_max), ("n_FA", n_fa_min)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(invalid(format!("{name} bound is not positive and finite ({v})")));
        }
    }
    Ok(plan)
}
