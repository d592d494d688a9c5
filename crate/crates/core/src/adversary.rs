//! Norm-bounded input perturbations: PGD, exact linear attacks, closed-form
//! linear adversarial risks and the robust linear minimizer.

use crate::data::{gen_dataset, Dataset, MultiIndexTask};
use crate::error::{invalid, shape, Error, Result};
use crate::linalg;
use crate::model::Predictor;
use crate::rng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// sqrt(2/pi) = E|Z| for Z ~ N(0,1).
pub const MEAN_ABS_NORMAL: f64 = 0.797_884_560_802_865_4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    L2,
    Linf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    /// delta += step * sign(grad), then project.
    Signed,
    /// delta += step * grad / ||grad||_2, then project.
    Normalized,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PgdInit {
    Zero,
    RandomBall,
}

/// Projected gradient ascent on (f(x + delta) - y)^2.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub epsilon: f64,
    #[serde(default = "default_norm")]
    pub norm: Norm,
    pub steps: usize,
    pub step_size: f64,
    #[serde(default = "default_mode")]
    pub step_mode: StepMode,
    /// Return the best iterate (including delta = 0) instead of the last one.
    #[serde(default = "default_true")]
    pub keep_best: bool,
    #[serde(default = "default_init")]
    pub init: PgdInit,
}

fn default_norm() -> Norm {
    Norm::L2
}
fn default_mode() -> StepMode {
    StepMode::Signed
}
fn default_true() -> bool {
    true
}
fn default_init() -> PgdInit {
    PgdInit::Zero
}

impl AttackConfig {
    pub fn new(epsilon: f64, steps: usize, step_size: f64) -> Self {
        AttackConfig {
            epsilon,
            norm: Norm::L2,
            steps,
            step_size,
            step_mode: StepMode::Signed,
            keep_best: true,
            init: PgdInit::Zero,
        }
    }

    pub fn with_norm(mut self, norm: Norm) -> Self {
        self.norm = norm;
        self
    }

    pub fn with_mode(mut self, mode: StepMode) -> Self {
        self.step_mode = mode;
        self
    }

    /// No perturbation at all.
    pub fn none() -> Self {
        AttackConfig::new(0.0, 0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(invalid(format!("epsilon must be finite and nonnegative, got {}", self.epsilon)));
        }
        if self.steps > 0 && !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(invalid(format!("step size must be positive, got {}", self.step_size)));
        }
        Ok(())
    }
}

/// Project `delta` onto the epsilon-ball in place.
pub fn project(delta: &mut [f64], eps: f64, norm: Norm) {
    match norm {
        Norm::L2 => {
            let n = linalg::norm2(delta);
            if n > eps {
                let s = if n > 0.0 { eps / n } else { 0.0 };
                delta.iter_mut().for_each(|x| *x *= s);
            }
        }
        Norm::Linf => delta.iter_mut().for_each(|x| *x = x.clamp(-eps, eps)),
    }
}

fn random_ball_point<R: Rng + ?Sized>(r: &mut R, d: usize, eps: f64, norm: Norm) -> Vec<f64> {
    match norm {
        Norm::L2 => {
            let dir = rng::unit_sphere(r, d);
            let rad = eps * r.random::<f64>().powf(1.0 / d as f64);
            dir.into_iter().map(|x| x * rad).collect()
        }
        Norm::Linf => (0..d).map(|_| eps * (2.0 * r.random::<f64>() - 1.0)).collect(),
    }
}

/// Result of attacking a batch of samples.
#[derive(Clone, Debug)]
pub struct BatchAttack {
    /// n x d perturbations.
    pub delta: DMatrix<f64>,
    /// Squared loss at the returned perturbation.
    pub losses: Vec<f64>,
}

/// Core PGD loop on a block of rows with a given starting point.
fn attack_rows<P: Predictor + ?Sized>(
    p: &P,
    x: &DMatrix<f64>,
    y: &[f64],
    cfg: &AttackConfig,
    init: DMatrix<f64>,
) -> BatchAttack {
    let (n, d) = x.shape();
    let mut delta = init;
    let zero_start = delta.iter().all(|&v| v == 0.0);
    let mut best = DMatrix::zeros(n, d);
    let mut best_loss = vec![f64::NEG_INFINITY; n];
    if cfg.epsilon == 0.0 || (cfg.steps == 0 && zero_start) {
        let v = p.predict_batch(x);
        let losses = (0..n).map(|i| (v[i] - y[i]).powi(2)).collect();
        return BatchAttack { delta: DMatrix::zeros(n, d), losses };
    }
    if cfg.keep_best && !zero_start {
        let v = p.predict_batch(x);
        for i in 0..n {
            best_loss[i] = (v[i] - y[i]).powi(2);
        }
    }
    let mut last_loss = vec![0.0; n];
    for t in 0..=cfg.steps {
        let xp = x + &delta;
        let (v, g) =
            if t == cfg.steps { (p.predict_batch(&xp), DMatrix::zeros(0, 0)) } else { p.value_grad_batch(&xp) };
        for i in 0..n {
            let l = (v[i] - y[i]).powi(2);
            last_loss[i] = l;
            if cfg.keep_best && l > best_loss[i] {
                best_loss[i] = l;
                best.set_row(i, &delta.row(i));
            }
        }
        if t == cfg.steps {
            break;
        }
        let mut buf = vec![0.0; d];
        for i in 0..n {
            let r = v[i] - y[i];
            for j in 0..d {
                buf[j] = 2.0 * r * g[(i, j)];
            }
            match cfg.step_mode {
                StepMode::Signed => {
                    for j in 0..d {
                        let s = if buf[j] > 0.0 {
                            1.0
                        } else if buf[j] < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        buf[j] = delta[(i, j)] + cfg.step_size * s;
                    }
                }
                StepMode::Normalized => {
                    let gn = linalg::norm2(&buf);
                    let s = if gn > 0.0 { cfg.step_size / gn } else { 0.0 };
                    for j in 0..d {
                        buf[j] = delta[(i, j)] + s * buf[j];
                    }
                }
            }
            project(&mut buf, cfg.epsilon, cfg.norm);
            for j in 0..d {
                delta[(i, j)] = buf[j];
            }
        }
    }
    if cfg.keep_best {
        BatchAttack { delta: best, losses: best_loss }
    } else {
        BatchAttack { delta, losses: last_loss }
    }
}

/// PGD on a single sample. `rng` is only used for random-ball starts.
pub fn pgd_attack<P: Predictor + ?Sized, R: Rng + ?Sized>(
    p: &P,
    x: &[f64],
    y: f64,
    cfg: &AttackConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if x.len() != p.input_dim() {
        return Err(shape(format!("input has {} entries, predictor expects {}", x.len(), p.input_dim())));
    }
    let d = x.len();
    let init = match cfg.init {
        PgdInit::Zero => DMatrix::zeros(1, d),
        PgdInit::RandomBall => DMatrix::from_row_slice(1, d, &random_ball_point(rng, d, cfg.epsilon, cfg.norm)),
    };
    let xm = DMatrix::from_row_slice(1, d, x);
    let out = attack_rows(p, &xm, &[y], cfg, init);
    Ok(linalg::row(&out.delta, 0))
}

const CHUNK: usize = 256;

/// PGD on every row of `x`. Random starts use per-row streams of `seed`, so
/// the result does not depend on the number of threads.
pub fn pgd_attack_batch<P: Predictor + ?Sized>(
    p: &P,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<BatchAttack> {
    cfg.validate()?;
    let (n, d) = x.shape();
    if d != p.input_dim() || y.len() != n {
        return Err(shape(format!("inputs {n}x{d}, labels {}, predictor dim {}", y.len(), p.input_dim())));
    }
    let run = |lo: usize, hi: usize| {
        let xs = x.rows(lo, hi - lo).into_owned();
        let init = match cfg.init {
            PgdInit::Zero => DMatrix::zeros(hi - lo, d),
            PgdInit::RandomBall => {
                let rows: Vec<Vec<f64>> = (lo..hi)
                    .map(|i| random_ball_point(&mut rng::stream(seed, "pgd-init", i as u64), d, cfg.epsilon, cfg.norm))
                    .collect();
                DMatrix::from_fn(hi - lo, d, |i, j| rows[i][j])
            }
        };
        attack_rows(p, &xs, &y.as_slice()[lo..hi], cfg, init)
    };
    if n <= CHUNK {
        return Ok(run(0, n));
    }
    let parts: Vec<BatchAttack> =
        (0..n.div_ceil(CHUNK)).into_par_iter().map(|c| run(c * CHUNK, ((c + 1) * CHUNK).min(n))).collect();
    let mut delta = DMatrix::zeros(n, d);
    let mut losses = Vec::with_capacity(n);
    for (c, part) in parts.into_iter().enumerate() {
        delta.rows_mut(c * CHUNK, part.losses.len()).copy_from(&part.delta);
        losses.extend(part.losses);
    }
    Ok(BatchAttack { delta, losses })
}

/// Exact maximizer of (<w, x + delta> - y)^2 over the epsilon-ball.
/// sign(0) is taken as +1.
pub fn exact_linear_attack(w: &[f64], x: &[f64], y: f64, eps: f64, norm: Norm) -> Vec<f64> {
    let r = linalg::dot(w, x) - y;
    let s = if r >= 0.0 { 1.0 } else { -1.0 };
    match norm {
        Norm::L2 => {
            let n = linalg::norm2(w);
            if n == 0.0 {
                return vec![0.0; w.len()];
            }
            w.iter().map(|wi| s * eps * wi / n).collect()
        }
        Norm::Linf => w.iter().map(|&wi| s * eps * if wi >= 0.0 { 1.0 } else { -1.0 }).collect(),
    }
}

/// Closed-form L2 adversarial risk of x -> <w,x> against y = <u,x>, x ~ N(0, sigma):
/// s^2 + eps^2 ||w||^2 + 2 eps sqrt(2/pi) s ||w||, s = ||sigma^{1/2}(w - u)||.
pub fn linear_adv_risk_l2(w: &DVector<f64>, u: &DVector<f64>, sigma: &DMatrix<f64>, eps: f64) -> Result<f64> {
    check_linear_args(w, u, sigma, eps)?;
    linalg::check_spd(sigma)?;
    let e = w - u;
    let s = e.dot(&(sigma * &e)).max(0.0).sqrt();
    let n = w.norm();
    Ok(s * s + eps * eps * n * n + 2.0 * eps * MEAN_ABS_NORMAL * s * n)
}

/// Closed-form Linf adversarial risk with identity covariance:
/// ||w-u||^2 + eps^2 ||w||_1^2 + 2 eps sqrt(2/pi) ||w-u|| ||w||_1.
pub fn linear_adv_risk_linf(w: &DVector<f64>, u: &DVector<f64>, eps: f64) -> Result<f64> {
    let id = DMatrix::identity(w.len(), w.len());
    check_linear_args(w, u, &id, eps)?;
    let s = (w - u).norm();
    let n = w.lp_norm(1);
    Ok(s * s + eps * eps * n * n + 2.0 * eps * MEAN_ABS_NORMAL * s * n)
}

fn check_linear_args(w: &DVector<f64>, u: &DVector<f64>, sigma: &DMatrix<f64>, eps: f64) -> Result<()> {
    if w.len() != u.len() || sigma.nrows() != w.len() || sigma.ncols() != w.len() {
        return Err(shape(format!("w {}, u {}, sigma {}x{}", w.len(), u.len(), sigma.nrows(), sigma.ncols())));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(invalid("epsilon must be finite and nonnegative"));
    }
    Ok(())
}

/// R(w) = s^2 + eps^2 n^2 + 2 eps c s n with s = ||sigma^{1/2}(w-u)|| and
/// n = ||w||_2 (L2 attacks) or ||w||_1 (Linf attacks).
struct LinearRobustObjective<'a> {
    u: &'a DVector<f64>,
    sigma: &'a DMatrix<f64>,
    eps: f64,
    norm: Norm,
}

impl LinearRobustObjective<'_> {
    fn parts(&self, w: &DVector<f64>) -> (DVector<f64>, f64, f64, DVector<f64>) {
        let e = w - self.u;
        let q = self.sigma * &e;
        let s = e.dot(&q).max(0.0).sqrt();
        let (n, gn) = match self.norm {
            Norm::L2 => {
                let n = w.norm();
                (n, if n > 0.0 { w / n } else { DVector::zeros(w.len()) })
            }
            Norm::Linf => (
                w.lp_norm(1),
                w.map(|x| {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }),
            ),
        };
        (q, s, n, gn)
    }

    fn value(&self, w: &DVector<f64>) -> f64 {
        let (_, s, n, _) = self.parts(w);
        s * s + self.eps * self.eps * n * n + 2.0 * self.eps * MEAN_ABS_NORMAL * s * n
    }

    fn grad(&self, w: &DVector<f64>) -> DVector<f64> {
        let (q, s, n, gn) = self.parts(w);
        let c = MEAN_ABS_NORMAL;
        let gs = if s > 0.0 { &q / s } else { DVector::zeros(w.len()) };
        &q * 2.0 + &gn * (2.0 * self.eps * self.eps * n) + (gs * n + &gn * s) * (2.0 * self.eps * c)
    }

    fn hess(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let (q, s, n, gn) = self.parts(w);
        let c = MEAN_ABS_NORMAL;
        let d = w.len();
        let gs = &q / s;
        let hs = self.sigma / s - &q * q.transpose() / (s * s * s);
        let hn = match self.norm {
            Norm::L2 => DMatrix::identity(d, d) / n - w * w.transpose() / (n * n * n),
            Norm::Linf => DMatrix::zeros(d, d),
        };
        let e2 = self.eps * self.eps;
        self.sigma * 2.0
            + (&gn * gn.transpose() + &hn * n) * (2.0 * e2)
            + (&gn * gs.transpose() + &gs * gn.transpose() + hs * n + hn * s) * (2.0 * self.eps * c)
    }
}

/// Minimizer of the closed-form L2 adversarial risk for y = <u, x>,
/// x ~ N(0, sigma). The objective is convex with kinks at w = u and w = 0;
/// both are tested for optimality before Newton iterations on the smooth part.
pub fn optimal_linear_robust_weight(u: &DVector<f64>, sigma: &DMatrix<f64>, eps: f64) -> Result<DVector<f64>> {
    check_linear_args(u, u, sigma, eps)?;
    linalg::check_spd(sigma)?;
    minimize_linear_robust(u, sigma, eps, Norm::L2, DEFAULT_MAX_ITER)
}

/// Minimizer of the closed-form Linf adversarial risk with identity covariance.
pub fn optimal_linear_robust_weight_linf(u: &DVector<f64>, eps: f64) -> Result<DVector<f64>> {
    let id = DMatrix::identity(u.len(), u.len());
    check_linear_args(u, u, &id, eps)?;
    minimize_linear_robust(u, &id, eps, Norm::Linf, DEFAULT_MAX_ITER)
}

/// Iteration cap of the closed-form risk minimizers.
pub const DEFAULT_MAX_ITER: usize = 500;

/// Minimizer of the closed-form risk for either norm with an explicit
/// iteration cap. Linf requires the identity covariance.
pub fn linear_robust_minimizer(
    u: &DVector<f64>,
    sigma: &DMatrix<f64>,
    eps: f64,
    norm: Norm,
    max_iter: usize,
) -> Result<DVector<f64>> {
    check_linear_args(u, u, sigma, eps)?;
    linalg::check_spd(sigma)?;
    if norm == Norm::Linf && (sigma - DMatrix::identity(u.len(), u.len())).amax() > 0.0 {
        return Err(invalid("the Linf closed form assumes identity covariance"));
    }
    minimize_linear_robust(u, sigma, eps, norm, max_iter)
}

/// Largest epsilon for which w = u is still optimal.
pub fn linear_kink_threshold(u: &DVector<f64>, sigma: &DMatrix<f64>, norm: Norm) -> Result<f64> {
    let g = match norm {
        Norm::L2 => u / u.norm(),
        // minimal-norm subgradient of ||.||_1
        Norm::Linf => u.map(|x| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }),
    };
    let sinv_g = sigma.clone().cholesky().ok_or_else(|| invalid("covariance not positive definite"))?.solve(&g);
    let q = g.dot(&sinv_g);
    Ok(MEAN_ABS_NORMAL / q.sqrt())
}

fn minimize_linear_robust(
    u: &DVector<f64>,
    sigma: &DMatrix<f64>,
    eps: f64,
    norm: Norm,
    max_iter: usize,
) -> Result<DVector<f64>> {
    let d = u.len();
    if eps == 0.0 || u.norm() == 0.0 {
        return Ok(u.clone());
    }
    if norm == Norm::Linf && (0..d).any(|i| u[i] == 0.0) && !is_diagonal(sigma) {
        return Err(invalid("Linf minimizer with zero entries in u needs a diagonal covariance"));
    }
    // kink at w = u
    if eps <= linear_kink_threshold(u, sigma, norm)? {
        return Ok(u.clone());
    }
    // kink at w = 0: optimal iff dual_norm(sigma u) <= eps c ||sigma^{1/2} u||
    let su = sigma * u;
    let s0 = u.dot(&su).sqrt();
    let dual = match norm {
        Norm::L2 => su.norm(),
        Norm::Linf => su.amax(),
    };
    if dual <= eps * MEAN_ABS_NORMAL * s0 {
        return Ok(DVector::zeros(d));
    }
    let obj = LinearRobustObjective { u, sigma, eps, norm };
    if norm == Norm::Linf {
        return minimize_linf_active_set(&obj, max_iter);
    }
    let shrink = sigma + DMatrix::identity(d, d) * eps;
    let mut w = shrink.lu().solve(&su).ok_or_else(|| invalid("singular start system"))?;
    let mut lambda = 0.0;
    for it in 0..max_iter {
        let g = obj.grad(&w);
        let gnorm = g.norm();
        if gnorm <= 1e-10 {
            return Ok(w);
        }
        let mut h = obj.hess(&w);
        for i in 0..d {
            h[(i, i)] += lambda;
        }
        let step = match h.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => {
                lambda = (lambda * 10.0).max(1e-8);
                continue;
            }
        };
        let f0 = obj.value(&w);
        let slope = g.dot(&step);
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-16 {
            let cand = &w - &step * t;
            let fc = obj.value(&cand);
            if fc <= f0 - 1e-4 * t * slope || (fc <= f0 && t < 1e-8) {
                w = cand;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            // fall back to a plain gradient step
            let mut t = 1.0 / (1.0 + h.norm());
            while t > 1e-20 {
                let cand = &w - &g * t;
                if obj.value(&cand) < f0 {
                    w = cand;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                return Err(Error::NotConverged { iterations: it, grad_norm: gnorm, value: f0 });
            }
        }
        lambda *= 0.1;
    }
    let g = obj.grad(&w);
    Err(Error::NotConverged { iterations: max_iter, grad_norm: g.norm(), value: obj.value(&w) })
}

/// Newton on faces of the l1 ball: coordinates with w_i = 0 are held at zero
/// until their optimality condition fails, and an active coordinate that
/// would change sign during a line search is clamped to zero.
fn minimize_linf_active_set(obj: &LinearRobustObjective<'_>, max_iter: usize) -> Result<DVector<f64>> {
    let u = obj.u;
    let d = u.len();
    let c = MEAN_ABS_NORMAL;
    let eps = obj.eps;
    let mut sign: Vec<f64> = u
        .iter()
        .map(|&x| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
        .collect();
    let mut w = DVector::from_fn(d, |i, _| u[i] / (1.0 + eps));
    let mut lambda = 0.0;
    let mut total = 0;
    let kkt_tol = 1e-10;
    loop {
        let act: Vec<usize> = (0..d).filter(|&i| sign[i] != 0.0).collect();
        // Newton on the current face
        loop {
            total += 1;
            let g_full = obj.grad(&w);
            let g = DVector::from_fn(act.len(), |r, _| g_full[act[r]]);
            let gnorm = g.norm();
            if gnorm <= kkt_tol || act.is_empty() {
                break;
            }
            if total > max_iter {
                return Err(Error::NotConverged { iterations: total, grad_norm: gnorm, value: obj.value(&w) });
            }
            let h_full = obj.hess(&w);
            let mut h = DMatrix::from_fn(act.len(), act.len(), |r, q| h_full[(act[r], act[q])]);
            for r in 0..act.len() {
                h[(r, r)] += lambda;
            }
            let Some(ch) = h.cholesky() else {
                lambda = (lambda * 10.0).max(1e-8);
                continue;
            };
            let step = ch.solve(&g);
            // largest step keeping every active sign
            let mut t_max = 1.0;
            let mut hit = None;
            for (r, &i) in act.iter().enumerate() {
                if step[r] * w[i] > 0.0 {
                    let t = w[i] / step[r];
                    if t < t_max {
                        t_max = t;
                        hit = Some(i);
                    }
                }
            }
            let f0 = obj.value(&w);
            let slope = g.dot(&step);
            let mut t = t_max;
            let mut moved = false;
            while t > 1e-16 {
                let mut cand = w.clone();
                for (r, &i) in act.iter().enumerate() {
                    cand[i] -= t * step[r];
                }
                if t == t_max {
                    if let Some(i) = hit {
                        cand[i] = 0.0;
                    }
                }
                let fc = obj.value(&cand);
                if fc <= f0 - 1e-4 * t * slope || (fc <= f0 && t < 1e-8) {
                    let clamped = t == t_max && hit.is_some();
                    w = cand;
                    moved = true;
                    if clamped {
                        sign[hit.unwrap()] = 0.0;
                    }
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                return Err(Error::NotConverged { iterations: total, grad_norm: gnorm, value: f0 });
            }
            lambda *= 0.1;
            if (0..d).any(|i| sign[i] == 0.0 && act.contains(&i)) {
                break;
            }
        }
        if act.iter().any(|&i| sign[i] == 0.0) {
            continue;
        }
        // optimality of the zero coordinates
        let e = &w - u;
        let q = obj.sigma * &e;
        let s = e.dot(&q).max(0.0).sqrt();
        let n = w.lp_norm(1);
        let smooth = if s > 0.0 { &q * (2.0 + 2.0 * eps * c * n / s) } else { &q * 2.0 };
        let radius = 2.0 * eps * eps * n + 2.0 * eps * c * s;
        let worst = (0..d)
            .filter(|&i| sign[i] == 0.0 && smooth[i].abs() > radius + kkt_tol)
            .max_by(|&a, &b| (smooth[a].abs() - radius).total_cmp(&(smooth[b].abs() - radius)));
        match worst {
            None => return Ok(w),
            Some(i) => {
                sign[i] = -smooth[i].signum();
                w[i] = sign[i] * 1e-12;
            }
        }
        if total > max_iter {
            let g = obj.grad(&w);
            return Err(Error::NotConverged { iterations: total, grad_norm: g.norm(), value: obj.value(&w) });
        }
    }
}

fn is_diagonal(m: &DMatrix<f64>) -> bool {
    (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] == 0.0))
}

/// Monte-Carlo estimate of an adversarial risk.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n: usize,
}

impl RiskEstimate {
    pub fn from_losses(losses: &[f64]) -> RiskEstimate {
        let n = losses.len();
        let mean = losses.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        RiskEstimate { mean, std_err: (var / n as f64).sqrt(), n }
    }
}

/// Per-sample attacked losses on a fixed data set.
pub fn adv_losses_on<P: Predictor + ?Sized>(p: &P, data: &Dataset, cfg: &AttackConfig, seed: u64) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    Ok(pgd_attack_batch(p, &data.x, &data.y, cfg, seed)?.losses)
}

/// Adversarial risk estimate on a fixed data set.
pub fn adv_risk_on<P: Predictor + ?Sized>(
    p: &P,
    data: &Dataset,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<RiskEstimate> {
    Ok(RiskEstimate::from_losses(&adv_losses_on(p, data, cfg, seed)?))
}

/// Adversarial risk estimate on n fresh samples from the task.
pub fn estimate_adv_risk<P: Predictor + ?Sized>(
    p: &P,
    task: &MultiIndexTask,
    cfg: &AttackConfig,
    n: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    if n == 0 {
        return Err(Error::EmptyData);
    }
    if p.input_dim() != task.d {
        return Err(shape(format!("predictor dim {} vs task dim {}", p.input_dim(), task.d)));
    }
    let data = gen_dataset(task, n, rng::derive(seed, "adv-risk-data"));
    adv_risk_on(p, &data, cfg, seed)
}

/// Adversarial risk of a linear predictor using the exact attack.
pub fn exact_linear_risk_on(w: &[f64], data: &Dataset, eps: f64, norm: Norm) -> RiskEstimate {
    let losses: Vec<f64> = (0..data.len())
        .map(|i| {
            let x = linalg::row(&data.x, i);
            let delta = exact_linear_attack(w, &x, data.y[i], eps, norm);
            let xp: Vec<f64> = x.iter().zip(&delta).map(|(a, b)| a + b).collect();
            (linalg::dot(w, &xp) - data.y[i]).powi(2)
        })
        .collect();
    RiskEstimate::from_losses(&losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, LinearPredictor, TwoLayerNet};

    #[test]
    fn exact_attack_examples() {
        let d = exact_linear_attack(&[3.0, 4.0], &[1.0, 0.0], 0.0, 1.0, Norm::L2);
        assert!((d[0] - 0.6).abs() < 1e-15 && (d[1] - 0.8).abs() < 1e-15);
        let d = exact_linear_attack(&[3.0, -4.0], &[1.0, 0.0], 5.0, 0.5, Norm::Linf);
        assert_eq!(d, vec![-0.5, 0.5]);
        // zero residual picks the + sign
        let d = exact_linear_attack(&[1.0, 0.0], &[0.0, 0.0], 0.0, 1.0, Norm::L2);
        assert_eq!(d, vec![1.0, 0.0]);
    }

    #[test]
    fn closed_form_at_truth() {
        let u = DVector::from_vec(vec![0.6, 0.8]);
        let id = DMatrix::identity(2, 2);
        let r = linear_adv_risk_l2(&u, &u, &id, 0.5).unwrap();
        assert!((r - 0.25).abs() < 1e-15);
        let z = DVector::zeros(2);
        assert!((linear_adv_risk_l2(&z, &u, &id, 0.7).unwrap() - 1.0).abs() < 1e-15);
        assert!(linear_adv_risk_l2(&u, &u, &DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]), 0.1).is_err());
    }

    #[test]
    fn pgd_on_linear_reaches_boundary() {
        let p = LinearPredictor { w: DVector::from_vec(vec![1.0, -2.0, 0.5]) };
        let cfg = AttackConfig::new(0.7, 20, 0.2).with_mode(StepMode::Normalized);
        let x = [0.3, 0.1, -0.4];
        let mut r = rng::stream(0, "t", 0);
        let d = pgd_attack(&p, &x, 2.0, &cfg, &mut r).unwrap();
        let e = exact_linear_attack(p.w.as_slice(), &x, 2.0, 0.7, Norm::L2);
        for j in 0..3 {
            assert!((d[j] - e[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn keep_best_never_below_clean_loss() {
        let net = TwoLayerNet::random_init(6, 4, Activation::Tanh, 9);
        let x = crate::data::sample_gaussian_inputs(40, 4, 2);
        let y = DVector::from_fn(40, |i, _| x[(i, 0)]);
        let clean = net.predict_batch(&x);
        let cfg = AttackConfig::new(0.5, 5, 0.3);
        let out = pgd_attack_batch(&net, &x, &y, &cfg, 1).unwrap();
        for i in 0..40 {
            assert!(out.losses[i] >= (clean[i] - y[i]).powi(2) - 1e-15);
            assert!(out.delta.row(i).norm() <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn batch_chunks_match_single_rows() {
        let net = TwoLayerNet::random_init(5, 3, Activation::Relu, 1);
        let x = crate::data::sample_gaussian_inputs(600, 3, 5);
        let y = DVector::from_fn(600, |i, _| x[(i, 1)].tanh());
        let cfg = AttackConfig::new(0.4, 4, 0.1).with_norm(Norm::Linf);
        let out = pgd_attack_batch(&net, &x, &y, &cfg, 0).unwrap();
        let mut r = rng::stream(0, "unused", 0);
        for i in [0usize, 255, 256, 599] {
            let d = pgd_attack(&net, &linalg::row(&x, i), y[i], &cfg, &mut r).unwrap();
            for j in 0..3 {
                assert!((d[j] - out.delta[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn isotropic_minimizer_is_shrunk_truth() {
        let u = DVector::from_vec(vec![0.6, 0.8]);
        let w = optimal_linear_robust_weight(&u, &DMatrix::identity(2, 2), 1.0).unwrap();
        let c = w.dot(&u);
        assert!(c > 0.0 && c < 1.0);
        assert!((&w - &u * c).norm() < 1e-8);
    }

    #[test]
    fn minimizer_stays_at_truth_below_threshold() {
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        let u = DVector::from_vec(vec![1.0, 1.0]) / 2f64.sqrt();
        let t = linear_kink_threshold(&u, &sigma, Norm::L2).unwrap();
        // sqrt(2/pi) / sqrt(u^T sigma^{-1} u) with u^T sigma^{-1} u = 0.625
        assert!((t - MEAN_ABS_NORMAL / 0.625f64.sqrt()).abs() < 1e-14);
        let w = optimal_linear_robust_weight(&u, &sigma, 0.5).unwrap();
        assert_eq!(w, u);
    }
}
