//! Statistical checks of the projection inequality and the linear
//! counterexamples outside the isotropic l2 setting.

use crate::adversary::{
    adv_losses_on, linear_adv_risk_l2, linear_kink_threshold, linear_robust_minimizer, AttackConfig, Norm,
    RiskEstimate, DEFAULT_MAX_ITER,
};
use crate::approx::conditional_projection_net;
use crate::data::{gen_dataset, MultiIndexTask};
use crate::error::{invalid, shape, Result};
use crate::linalg;
use crate::model::{Composed, Predictor, TwoLayerNet};
use crate::rng;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Default one-sided slack in combined standard errors.
pub const DEFAULT_SLACK: f64 = 3.0;

/// Comparison of AR(h(U .)) (lhs) against AR(f) (rhs).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub lhs: RiskEstimate,
    pub rhs: RiskEstimate,
    pub slack: f64,
    /// sqrt(se_lhs^2 + se_rhs^2).
    pub combined_se: f64,
    /// Mean and standard error of the per-sample differences lhs - rhs.
    pub paired_diff: f64,
    pub paired_se: f64,
    pub pass: bool,
}

impl InequalityReport {
    fn new(l: &[f64], r: &[f64], slack: f64) -> Self {
        let lhs = RiskEstimate::from_losses(l);
        let rhs = RiskEstimate::from_losses(r);
        let diffs: Vec<f64> = l.iter().zip(r).map(|(a, b)| a - b).collect();
        let d = RiskEstimate::from_losses(&diffs);
        let combined_se = (lhs.std_err.powi(2) + rhs.std_err.powi(2)).sqrt();
        let pass = lhs.mean <= rhs.mean + slack * combined_se;
        InequalityReport { lhs, rhs, slack, combined_se, paired_diff: d.mean, paired_se: d.std_err, pass }
    }
}

/// Adversarial risks of two predictors on a shared test set with a shared
/// attack seed (common random numbers).
pub fn compare_adv_risks<P: Predictor + ?Sized, Q: Predictor + ?Sized>(
    lhs: &P,
    rhs: &Q,
    task: &MultiIndexTask,
    attack: &AttackConfig,
    n_mc: usize,
    slack: f64,
    seed: u64,
) -> Result<InequalityReport> {
    if lhs.input_dim() != task.d || rhs.input_dim() != task.d {
        return Err(shape("predictors must act on the task's input space"));
    }
    if n_mc < 2 {
        return Err(invalid("need at least two Monte-Carlo samples"));
    }
    let data = gen_dataset(task, n_mc, rng::derive(seed, "theorem1-data"));
    let pgd_seed = rng::derive(seed, "theorem1-pgd");
    let l = adv_losses_on(lhs, &data, attack, pgd_seed)?;
    let r = adv_losses_on(rhs, &data, attack, pgd_seed)?;
    Ok(InequalityReport::new(&l, &r, slack))
}

/// AR(h(U .)) <= AR(f) with h(z) = E[f(x) | U x = z] estimated from `m_proj`
/// Gaussian draws. Requires an l2 attack.
pub fn theorem1_check(
    f: &TwoLayerNet,
    task: &MultiIndexTask,
    attack: &AttackConfig,
    n_mc: usize,
    m_proj: usize,
    slack: f64,
    seed: u64,
) -> Result<InequalityReport> {
    if attack.norm != Norm::L2 {
        return Err(invalid("the projection inequality is stated for l2 attacks"));
    }
    let h = conditional_projection_net(f, &task.u, m_proj, rng::derive(seed, "theorem1-projection"))?;
    let hu = Composed { inner: &h, proj: &task.u };
    compare_adv_risks(&hu, f, task, attack, n_mc, slack, seed)
}

/// Closed-form version for a linear predictor x -> <w, x> on a linear
/// single-index task: h has weight U^T U w. Returns (lhs, rhs).
pub fn theorem1_linear_closed_form(w: &DVector<f64>, u: &DVector<f64>, eps: f64) -> Result<(f64, f64)> {
    let d = w.len();
    let id = DMatrix::identity(d, d);
    let un = u / u.norm();
    let proj = &un * un.dot(w);
    Ok((linear_adv_risk_l2(&proj, u, &id, eps)?, linear_adv_risk_l2(w, u, &id, eps)?))
}

/// Outcome of a linear counterexample search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleReport {
    pub w_star: Vec<f64>,
    /// Angle between w* and u in radians; 0 when w* = 0.
    pub angle: f64,
    pub threshold: f64,
    /// Largest epsilon for which w* = u exactly.
    pub kink_epsilon: f64,
    /// cos(w* - u, -sign(u)) for Linf; absent for the anisotropic case.
    pub shift_cosine: Option<f64>,
    pub confirmed: bool,
}

/// Angle threshold for the anisotropic counterexample.
pub const ANISOTROPIC_THRESHOLD: f64 = 0.01;
/// Angle threshold for the Linf counterexample.
pub const LINF_THRESHOLD: f64 = 0.001;

/// Minimizes the closed-form l2 risk under x ~ N(0, sigma) and reports the
/// angle between w* and u.
pub fn counterexample_anisotropic(sigma: &DMatrix<f64>, u: &DVector<f64>, eps: f64) -> Result<CounterexampleReport> {
    counterexample_anisotropic_capped(sigma, u, eps, DEFAULT_MAX_ITER)
}

pub fn counterexample_anisotropic_capped(
    sigma: &DMatrix<f64>,
    u: &DVector<f64>,
    eps: f64,
    max_iter: usize,
) -> Result<CounterexampleReport> {
    let w = linear_robust_minimizer(u, sigma, eps, Norm::L2, max_iter)?;
    let angle = if w.norm() == 0.0 { 0.0 } else { linalg::angle(w.as_slice(), u.as_slice()) };
    Ok(CounterexampleReport {
        w_star: w.as_slice().to_vec(),
        angle,
        threshold: ANISOTROPIC_THRESHOLD,
        kink_epsilon: linear_kink_threshold(u, sigma, Norm::L2)?,
        shift_cosine: None,
        confirmed: angle > ANISOTROPIC_THRESHOLD,
    })
}

/// Minimizes the closed-form Linf risk with isotropic inputs; confirmed when
/// w* - u points along -sign(u) (cosine >= 0.9) and w* leaves the direction of u.
pub fn counterexample_linf(u: &DVector<f64>, eps: f64) -> Result<CounterexampleReport> {
    counterexample_linf_capped(u, eps, DEFAULT_MAX_ITER)
}

pub fn counterexample_linf_capped(u: &DVector<f64>, eps: f64, max_iter: usize) -> Result<CounterexampleReport> {
    let d = u.len();
    let id = DMatrix::identity(d, d);
    let w = linear_robust_minimizer(u, &id, eps, Norm::Linf, max_iter)?;
    let angle = if w.norm() == 0.0 { 0.0 } else { linalg::angle(w.as_slice(), u.as_slice()) };
    let shift = &w - u;
    let neg_sign = u.map(|x| {
        if x > 0.0 {
            -1.0
        } else if x < 0.0 {
            1.0
        } else {
            0.0
        }
    });
    let cos = if shift.norm() == 0.0 { 0.0 } else { shift.dot(&neg_sign) / (shift.norm() * neg_sign.norm()) };
    Ok(CounterexampleReport {
        w_star: w.as_slice().to_vec(),
        angle,
        threshold: LINF_THRESHOLD,
        kink_epsilon: linear_kink_threshold(u, &id, Norm::Linf)?,
        shift_cosine: Some(cos),
        confirmed: cos >= 0.9 && angle > LINF_THRESHOLD,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::StepMode;
    use crate::data::LinkFunction;
    use crate::model::Activation;

    #[test]
    fn isotropic_has_no_counterexample() {
        let u = DVector::from_vec(vec![0.6, 0.8]);
        for eps in [1.0, 2.0] {
            let r = counterexample_anisotropic(&DMatrix::identity(2, 2), &u, eps).unwrap();
            assert!(r.angle <= 1e-6 && !r.confirmed);
        }
    }

    #[test]
    fn small_eps_limit() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        let u = DVector::from_vec(vec![1.0, 1.0]) / 2f64.sqrt();
        assert!(counterexample_anisotropic(&s, &u, 1e-4).unwrap().angle <= 1e-3);
    }

    #[test]
    fn anisotropic_regimes() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        let u = DVector::from_vec(vec![1.0, 1.0]) / 2f64.sqrt();
        // below the kink the minimizer is u itself
        let r = counterexample_anisotropic(&s, &u, 0.5).unwrap();
        assert!((r.kink_epsilon - 1.0093).abs() < 1e-3, "{}", r.kink_epsilon);
        assert!(r.angle < 1e-12);
        // above it w* turns away from u
        let r = counterexample_anisotropic(&s, &u, 2.0).unwrap();
        assert!(r.confirmed, "{r:?}");
        let again = counterexample_anisotropic_capped(&s, &u, 2.0, 2 * DEFAULT_MAX_ITER).unwrap();
        assert_eq!(again.confirmed, r.confirmed);
    }

    #[test]
    fn linf_regimes() {
        let u = DVector::from_element(4, 0.5);
        let r = counterexample_linf(&u, 0.3).unwrap();
        assert!(r.angle <= 1e-6);
        let u = DVector::from_vec(vec![0.8, 0.5, 0.33]);
        let u = &u / u.norm();
        assert_eq!(counterexample_linf(&u, 0.0).unwrap().w_star, u.as_slice().to_vec());
        let r = counterexample_linf(&u, 0.05).unwrap();
        assert!(r.kink_epsilon > 0.05 && r.angle < 1e-12);
        let r = counterexample_linf(&u, 0.8).unwrap();
        assert!(r.confirmed, "{r:?}");
    }

    #[test]
    fn linear_closed_form_gap() {
        let u = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let w = DVector::from_vec(vec![0.9, 0.3, -0.2]);
        let (l, r) = theorem1_linear_closed_form(&w, &u, 1.0).unwrap();
        assert!(l < r);
        let (l, r) = theorem1_linear_closed_form(&DVector::from_vec(vec![0.7, 0.0, 0.0]), &u, 1.0).unwrap();
        assert!((l - r).abs() < 1e-15);
    }

    #[test]
    fn projected_predictor_matches_itself() {
        let task = MultiIndexTask::single_index(&[0.0, 1.0, 0.0, 0.0], LinkFunction::Tanh, 0.0).unwrap();
        let mut net = TwoLayerNet::random_init(6, 1, Activation::Relu, 3);
        net.a = DVector::from_fn(6, |i, _| 0.5 - 0.2 * i as f64);
        let lifted = TwoLayerNet::new(net.a.clone(), &net.w * &task.u, net.b.clone(), Activation::Relu).unwrap();
        let att = AttackConfig::new(1.0, 10, 0.2).with_mode(StepMode::Normalized);
        let r = theorem1_check(&lifted, &task, &att, 2000, 16, DEFAULT_SLACK, 1).unwrap();
        assert!((r.lhs.mean - r.rhs.mean).abs() <= 3.0 * r.combined_se + 1e-12);
        assert!(r.pass);
        assert!(theorem1_check(&lifted, &task, &att.with_norm(Norm::Linf), 100, 4, 3.0, 1).is_err());
    }
}
