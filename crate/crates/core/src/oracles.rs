//! Feature-learning oracles, their conformance checks and subspace metrics.

use crate::data::{gen_dataset, Dataset, MultiIndexTask};
use crate::error::{invalid, shape, Error, Result};
use crate::linalg;
use crate::model::{Activation, TwoLayerNet};
use crate::rng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Oracle accuracy parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleParams {
    pub zeta: f64,
    pub alpha: f64,
    #[serde(default = "one")]
    pub beta: f64,
}

fn one() -> f64 {
    1.0
}

impl OracleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.zeta > 0.0 && self.zeta < 1.0) {
            return Err(invalid(format!("zeta must lie in (0,1), got {}", self.zeta)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(invalid(format!("alpha must lie in (0,1], got {}", self.alpha)));
        }
        if self.beta <= 0.0 {
            return Err(invalid("beta must be positive"));
        }
        Ok(())
    }
}

/// Unit vectors on S^{k-1} with pairwise distances at least `radius`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PackingSet {
    pub k: usize,
    pub radius: f64,
    pub points: Vec<Vec<f64>>,
}

impl PackingSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn min_distance(&self) -> f64 {
        let mut m = f64::INFINITY;
        for i in 0..self.points.len() {
            for j in 0..i {
                m = m.min(dist(&self.points[i], &self.points[j]));
            }
        }
        m
    }

    /// Index of the nearest point; ties go to the lowest index.
    pub fn nearest(&self, v: &[f64]) -> usize {
        let mut best = 0;
        let mut bd = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = dist(p, v);
            if d < bd {
                bd = d;
                best = i;
            }
        }
        best
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Maximal packing of S^{k-1} with the given radius.
///
/// k = 1 gives {+1, -1}. For k = 2 the equispaced configuration with
/// floor(2 pi / theta) points, theta = 2 asin(radius / 2), rotated by a
/// random angle; consecutive gaps are below 2 theta, so it is maximal.
/// For k >= 3, greedy rejection sampling that stops after 10^4 * M_bound
/// consecutive rejections, M_bound being a volume bound on the packing size.
pub fn build_packing(k: usize, radius: f64, seed: u64) -> Result<PackingSet> {
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    if !(radius > 0.0 && radius <= 2.0) {
        return Err(invalid(format!("packing radius must lie in (0, 2], got {radius}")));
    }
    let mut r = rng::stream(seed, "packing", k as u64);
    let points = match k {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => {
            let theta = 2.0 * (radius / 2.0).asin();
            let m = ((2.0 * PI / theta) * (1.0 + 1e-12)).floor().max(2.0) as usize;
            let off = r.random::<f64>() * 2.0 * PI / m as f64;
            (0..m)
                .map(|i| {
                    let t = off + 2.0 * PI * i as f64 / m as f64;
                    vec![t.cos(), t.sin()]
                })
                .collect()
        }
        _ => {
            let theta = 2.0 * (radius / 2.0).asin();
            // area(S^{k-1}) / area of a cap of angular radius theta/2
            let cap = (theta / 2.0).sin().powi(k as i32 - 1);
            let m_bound = (4.0 / cap).ceil().min(1e6) as usize;
            let limit = 10_000 * m_bound;
            let mut pts: Vec<Vec<f64>> = Vec::new();
            let mut misses = 0usize;
            while misses < limit {
                let v = rng::unit_sphere(&mut r, k);
                if pts.iter().all(|p| dist(p, &v) >= radius) {
                    pts.push(v);
                    misses = 0;
                } else {
                    misses += 1;
                }
            }
            pts
        }
    };
    Ok(PackingSet { k, radius, points })
}

/// Coverage report produced by the DFL/SFL checkers.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleReport {
    pub zeta: f64,
    /// Probe directions in the coordinates of U (points of S^{k-1}).
    pub probes: Vec<Vec<f64>>,
    /// Fraction of rows with <w_i, U^T p> >= 1 - zeta, per probe.
    pub fractions: Vec<f64>,
    /// min over probes of fraction / zeta^{(k-1)/2}.
    pub alpha_hat: f64,
    /// SFL: indices with residual <= zeta.
    #[serde(default)]
    pub selected: Vec<usize>,
    /// SFL: ||w_i - U^T U w_i||^2 per neuron.
    #[serde(default)]
    pub residuals: Vec<f64>,
    /// SFL: |S| / N.
    #[serde(default)]
    pub selected_fraction: f64,
    /// SFL: number of selected directions falling in each packing cell.
    #[serde(default)]
    pub coverage: Vec<usize>,
    /// SFL: packing cells without any selected direction.
    #[serde(default)]
    pub empty_cells: Vec<usize>,
}

impl OracleReport {
    pub fn passes(&self, alpha: f64) -> bool {
        self.alpha_hat >= alpha
    }
}

fn check_shapes(w: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<()> {
    if w.ncols() != u.ncols() {
        return Err(shape(format!("W has {} columns, U has {}", w.ncols(), u.ncols())));
    }
    let e = linalg::orthonormality_error(u);
    if e > 1e-8 {
        return Err(invalid(format!("U rows are not orthonormal (error {e:.2e})")));
    }
    Ok(())
}

/// Fraction of rows with <w_i, u> >= 1 - zeta.
pub fn probe_fraction(w: &DMatrix<f64>, u: &[f64], zeta: f64) -> f64 {
    let n = w.nrows();
    let hits = (0..n).filter(|&i| w.row(i).iter().zip(u).map(|(a, b)| a * b).sum::<f64>() >= 1.0 - zeta).count();
    hits as f64 / n as f64
}

/// Checks the deterministic feature-learner coverage condition on a packing
/// of probe directions in span(U).
pub fn check_dfl(w: &DMatrix<f64>, u: &DMatrix<f64>, zeta: f64, seed: u64) -> Result<OracleReport> {
    check_shapes(w, u)?;
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(invalid("zeta must lie in (0,1)"));
    }
    for i in 0..w.nrows() {
        let n = w.row(i).norm();
        if (n - 1.0).abs() > 1e-6 {
            return Err(invalid(format!("row {i} of W has norm {n}, expected 1")));
        }
    }
    let k = u.nrows();
    let pack = build_packing(k, (2.0 * zeta).sqrt(), seed)?;
    let fractions: Vec<f64> = pack
        .points
        .iter()
        .map(|p| {
            let amb = u.transpose() * DVector::from_column_slice(p);
            probe_fraction(w, amb.as_slice(), zeta)
        })
        .collect();
    let norm = zeta.powf((k as f64 - 1.0) / 2.0);
    let alpha_hat = fractions.iter().fold(f64::INFINITY, |m, &f| m.min(f)) / norm;
    Ok(OracleReport {
        zeta,
        probes: pack.points,
        fractions,
        alpha_hat,
        selected: vec![],
        residuals: vec![],
        selected_fraction: 0.0,
        coverage: vec![],
        empty_cells: vec![],
    })
}

/// Strong feature-learner check: residuals, the set S and a packing-cell
/// histogram of the selected directions.
pub fn check_sfl_alignment(w: &DMatrix<f64>, u: &DMatrix<f64>, zeta: f64, seed: u64) -> Result<OracleReport> {
    check_shapes(w, u)?;
    let n = w.nrows();
    let k = u.nrows();
    let proj = w * u.transpose();
    let residuals: Vec<f64> = (0..n)
        .map(|i| {
            let t = w.row(i).norm_squared() - proj.row(i).norm_squared();
            t.max(0.0)
        })
        .collect();
    let selected: Vec<usize> = (0..n).filter(|&i| residuals[i] <= zeta).collect();
    let pack = build_packing(k, (2.0 * zeta).sqrt().min(2.0), seed)?;
    let mut coverage = vec![0usize; pack.len()];
    for &i in &selected {
        let v: Vec<f64> = proj.row(i).iter().copied().collect();
        let nv = linalg::norm2(&v);
        if nv > 0.0 {
            let v: Vec<f64> = v.iter().map(|x| x / nv).collect();
            coverage[pack.nearest(&v)] += 1;
        }
    }
    let empty_cells = (0..pack.len()).filter(|&c| coverage[c] == 0).collect();
    Ok(OracleReport {
        zeta,
        probes: pack.points,
        fractions: vec![],
        alpha_hat: 0.0,
        selected_fraction: selected.len() as f64 / n as f64,
        selected,
        residuals,
        coverage,
        empty_cells,
    })
}

/// Hyperparameters of the single-index learner (two gradient steps per
/// sample with interpolation on even steps).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alg2Config {
    #[serde(rename = "N")]
    pub n_neurons: usize,
    /// Number of iterations T; T/2 samples are consumed.
    #[serde(rename = "T")]
    pub iters: usize,
    pub eta: f64,
    #[serde(default = "half")]
    pub zeta_interp: f64,
    #[serde(default = "default_q")]
    pub q: usize,
    /// Magnitudes r_l for l = 1..q; empty means all ones.
    #[serde(default)]
    pub r_l: Vec<f64>,
    #[serde(default = "one")]
    pub r_a: f64,
    #[serde(default)]
    pub seed: u64,
}

fn half() -> f64 {
    0.5
}

fn default_q() -> usize {
    4
}

impl Alg2Config {
    pub fn new(n_neurons: usize, iters: usize, seed: u64) -> Self {
        Alg2Config { n_neurons, iters, eta: ALG2_DEFAULT_ETA, zeta_interp: 0.5, q: 4, r_l: vec![], r_a: 1.0, seed }
    }
}

/// Step size tuned on the g(z) = z^2 task.
pub const ALG2_DEFAULT_ETA: f64 = 0.05;

/// Output of the single-index learner.
#[derive(Clone, Debug)]
pub struct Alg2Output {
    pub net: TwoLayerNet,
}

/// Single-index feature learner. Every iteration takes a spherical gradient
/// step on sample floor(t/2); at even t > 0 the weights are first moved back
/// toward their value two steps earlier.
pub fn alg2_single_index_fl(task: &MultiIndexTask, cfg: &Alg2Config) -> Result<Alg2Output> {
    alg2_with_observer(task, cfg, |_, _| {})
}

/// As `alg2_single_index_fl`, calling `obs(t, W)` after every iteration.
pub fn alg2_with_observer<F: FnMut(usize, &DMatrix<f64>)>(
    task: &MultiIndexTask,
    cfg: &Alg2Config,
    mut obs: F,
) -> Result<Alg2Output> {
    if task.k != 1 {
        return Err(invalid(format!("single-index learner needs k = 1, got k = {}", task.k)));
    }
    let n = cfg.n_neurons;
    if n == 0 || cfg.q == 0 {
        return Err(invalid("need N >= 1 and q >= 1"));
    }
    let r_l = if cfg.r_l.is_empty() { vec![1.0; cfg.q] } else { cfg.r_l.clone() };
    if r_l.len() != cfg.q {
        return Err(invalid(format!("r_l has {} entries, q = {}", r_l.len(), cfg.q)));
    }
    let d = task.d;
    let mut rw = rng::stream(cfg.seed, "alg2-w", 0);
    let mut rs = rng::stream(cfg.seed, "alg2-signs", 0);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| rng::unit_sphere(&mut rw, d)).collect();
    let mut w = linalg::from_rows(&rows)?;
    let a: Vec<f64> = (0..n).map(|_| rng::sign(&mut rs) * cfg.r_a / n as f64).collect();
    let beta: Vec<Vec<f64>> = (0..n).map(|_| r_l.iter().map(|r| rng::sign(&mut rs) * r).collect()).collect();
    let data = gen_dataset(task, cfg.iters / 2 + 1, rng::derive(cfg.seed, "alg2-data"));
    let act = Activation::HermiteMix { beta: beta.clone() };
    let mut hist: [DMatrix<f64>; 2] = [w.clone(), w.clone()];
    for t in 0..cfg.iters {
        if t % 2 == 0 && t > 0 {
            let prev = &hist[t % 2];
            w = &w - (&w - prev) * cfg.zeta_interp;
            normalize_rows(&mut w);
        }
        hist[t % 2] = w.clone();
        let s = t / 2;
        let x: Vec<f64> = data.x.row(s).iter().copied().collect();
        let y = data.y[s];
        let pre: Vec<f64> = (0..n).map(|j| w.row(j).iter().zip(&x).map(|(p, q)| p * q).sum()).collect();
        let f: f64 = (0..n).map(|j| a[j] * act.value(j, pre[j])).sum();
        let r = f - y;
        for j in 0..n {
            let c = 2.0 * r * a[j] * act.deriv(j, pre[j]);
            // (I - w w^T) x = x - <w,x> w
            for (l, xl) in x.iter().enumerate() {
                let g = c * (xl - pre[j] * w[(j, l)]);
                w[(j, l)] -= cfg.eta * g;
            }
        }
        normalize_rows(&mut w);
        obs(t, &w);
    }
    let net = TwoLayerNet { a: DVector::from_vec(a), w, b: DVector::zeros(n), act, unit_rows: true };
    Ok(Alg2Output { net })
}

fn normalize_rows(w: &mut DMatrix<f64>) {
    for mut r in w.row_iter_mut() {
        let n = r.norm();
        if n > 0.0 {
            r /= n;
        }
    }
}

/// Labels with the empirical mean and the linear part (1/n) sum y_i x_i removed.
pub fn alg3_preprocess(data: &Dataset) -> DVector<f64> {
    let n = data.len() as f64;
    let alpha = data.y.sum() / n;
    let beta = data.x.tr_mul(&data.y) / n;
    let lin = &data.x * &beta;
    DVector::from_fn(data.len(), |i, _| data.y[i] - alpha - lin[i])
}

/// Symmetric initialization of the multi-index learner: pairs (j, N-1-j)
/// share weights and have opposite second-layer signs.
pub fn alg3_init(n: usize, d: usize, r_a: f64, seed: u64) -> Result<TwoLayerNet> {
    if n == 0 || n % 2 == 1 {
        return Err(invalid(format!("N must be even and positive, got {n}")));
    }
    let mut r = rng::stream(seed, "alg3-init", 0);
    let mut w = DMatrix::zeros(n, d);
    let mut a = DVector::zeros(n);
    for j in 0..n / 2 {
        let v = rng::unit_sphere(&mut r, d);
        let s = rng::sign(&mut r) * r_a;
        for l in 0..d {
            w[(j, l)] = v[l];
            w[(n - 1 - j, l)] = v[l];
        }
        a[j] = s;
        a[n - 1 - j] = -s;
    }
    Ok(TwoLayerNet { a, w, b: DVector::zeros(n), act: Activation::Relu, unit_rows: true })
}

/// Multi-index feature learner: one full-batch gradient step from the
/// symmetric initialization on preprocessed labels, W = -grad_W, rows
/// normalized.
pub fn alg3_multi_index_fl(data: &Dataset, n: usize, r_a: f64, seed: u64) -> Result<DMatrix<f64>> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let net = alg3_init(n, data.dim(), r_a, seed)?;
    let y = alg3_preprocess(data);
    let g = net.grad_params(&data.x, &y);
    let mut w = -g.w;
    for j in 0..n {
        if w.row(j).norm() == 0.0 {
            return Err(Error::RankDeficient(format!("gradient row {j} vanished")));
        }
    }
    normalize_rows(&mut w);
    Ok(w)
}

/// Top-k right singular directions of W as orthonormal rows.
pub fn pca_subspace_estimate(w: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let (n, d) = w.shape();
    if k == 0 || k > d || n < k {
        return Err(invalid(format!("need 1 <= k <= min(N, d), got k={k}, N={n}, d={d}")));
    }
    // eigen-decomposition of the d x d Gram matrix W^T W
    let g = w.tr_mul(w);
    let eig = g.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
    let top = eig.eigenvalues[order[0]].max(0.0);
    let kth = eig.eigenvalues[order[k - 1]].max(0.0);
    if top == 0.0 || kth <= 1e-20 * top {
        return Err(Error::RankDeficient(format!("W has rank below {k}")));
    }
    let mut u = DMatrix::zeros(k, d);
    for (r, &i) in order.iter().take(k).enumerate() {
        u.set_row(r, &eig.eigenvectors.column(i).transpose());
    }
    Ok(u)
}

/// Principal angles between span(U_hat) and span(U), ascending.
pub fn subspace_alignment(u_hat: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<Vec<f64>> {
    if u_hat.ncols() != u.ncols() {
        return Err(shape("subspaces live in different dimensions"));
    }
    Ok(linalg::principal_angles(u_hat, u))
}

/// ||U w_i|| for every row (the in-subspace norm).
pub fn row_alignment(w: &DMatrix<f64>, u: &DMatrix<f64>) -> Vec<f64> {
    let p = w * u.transpose();
    (0..w.nrows()).map(|i| p.row(i).norm() / w.row(i).norm()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LinkFunction;

    #[test]
    fn packing_k1() {
        let p = build_packing(1, 0.5, 0).unwrap();
        assert_eq!(p.points, vec![vec![1.0], vec![-1.0]]);
    }

    #[test]
    fn packing_circle_count() {
        for &r in &[0.05, 0.3, 0.447, 1.0, 1.5] {
            let p = build_packing(2, r, 3).unwrap();
            let arc = 2.0 * PI / (2.0 * (r / 2.0f64).asin());
            assert!(p.len() as f64 >= arc.floor() - 1.0 && p.len() as f64 <= arc.ceil(), "r={r}: {}", p.len());
            assert!(p.min_distance() >= r - 1e-12);
        }
    }

    #[test]
    fn packing_sphere_is_packing() {
        let p = build_packing(3, 0.9, 1).unwrap();
        assert!(p.min_distance() >= 0.9);
        assert!(p.len() >= 8);
        for v in &p.points {
            assert!((linalg::norm2(v) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dfl_aligned_rows() {
        let u = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0]);
        let w = DMatrix::from_fn(10, 3, |_, j| if j == 1 { 1.0 } else { 0.0 });
        let rep = check_dfl(&w, &u, 0.2, 0).unwrap();
        let max = rep.fractions.iter().cloned().fold(0.0, f64::max);
        assert_eq!(max, 1.0);
        // the opposite probe sees none of the rows
        assert_eq!(rep.alpha_hat, 0.0);
    }

    #[test]
    fn dfl_orthogonal_rows() {
        let u = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0]);
        let w = DMatrix::from_fn(10, 3, |_, j| if j == 0 { 1.0 } else { 0.0 });
        let rep = check_dfl(&w, &u, 0.5, 0).unwrap();
        assert!(rep.fractions.iter().all(|&f| f == 0.0));
        assert_eq!(rep.alpha_hat, 0.0);
    }

    #[test]
    fn dfl_rejects_non_unit_rows() {
        let u = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let w = DMatrix::from_row_slice(1, 2, &[2.0, 0.0]);
        assert!(check_dfl(&w, &u, 0.1, 0).is_err());
    }

    #[test]
    fn sfl_boundary_is_included() {
        let zeta: f64 = 0.1;
        let u = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        let w = DMatrix::from_fn(5, 3, |_, j| match j {
            0 => (1.0 - zeta).sqrt(),
            1 => zeta.sqrt(),
            _ => 0.0,
        });
        let rep = check_sfl_alignment(&w, &u, zeta, 0).unwrap();
        for r in &rep.residuals {
            assert!((r - zeta).abs() < 1e-15);
        }
        assert_eq!(rep.selected.len(), 5);
    }

    #[test]
    fn sfl_extremes() {
        let u = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let inside = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let rep = check_sfl_alignment(&inside, &u, 0.1, 0).unwrap();
        assert_eq!(rep.selected_fraction, 1.0);
        assert!(rep.empty_cells.is_empty());
        let outside = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, -1.0]);
        assert!(check_sfl_alignment(&outside, &u, 0.1, 0).unwrap().selected.is_empty());
    }

    #[test]
    fn alg3_symmetric_init_outputs_zero() {
        let net = alg3_init(8, 5, 1.0, 2).unwrap();
        let x = crate::data::sample_gaussian_inputs(20, 5, 1);
        use crate::model::Predictor;
        assert!(net.predict_batch(&x).amax() <= 1e-12);
        assert!(alg3_init(7, 5, 1.0, 2).is_err());
    }

    #[test]
    fn alg3_preprocessing_matches_closed_form() {
        // The linear coefficient is (1/n) sum y_i x_i rather than a regression
        // fit, so the residual mean and correlation are -<beta, xbar> and
        // beta - alpha xbar - (X^T X / n) beta, both O(1/sqrt(n)).
        let u = linalg::random_orthonormal(1, 6, 0).unwrap();
        let task = MultiIndexTask::new(u, LinkFunction::He2, 0.0).unwrap();
        let data = gen_dataset(&task, 4000, 4);
        let y = alg3_preprocess(&data);
        let n = data.len() as f64;
        let beta = data.x.tr_mul(&data.y) / n;
        let alpha = data.y.sum() / n;
        let xbar = data.x.row_mean().transpose();
        assert!((y.mean() + beta.dot(&xbar)).abs() < 1e-12);
        let corr = data.x.tr_mul(&y) / n;
        let expect = &beta - &xbar * alpha - data.x.tr_mul(&data.x) / n * &beta;
        assert!((corr - expect).amax() < 1e-12);
        assert!(y.mean().abs() < 4.0 / n.sqrt());
    }

    #[test]
    fn alg2_keeps_unit_rows() {
        let task = MultiIndexTask::single_index(&[1.0, 0.0, 0.0, 0.0], LinkFunction::He2, 0.0).unwrap();
        let cfg = Alg2Config::new(6, 40, 1);
        alg2_with_observer(&task, &cfg, |_, w| {
            for r in w.row_iter() {
                assert!((r.norm() - 1.0).abs() < 1e-9);
            }
        })
        .unwrap();
    }

    #[test]
    fn alg2_zero_interpolation_is_identity() {
        // with zeta = 0 the even-step interpolation leaves w unchanged, so the
        // run equals plain two-steps-per-sample spherical SGD
        let task = MultiIndexTask::single_index(&[0.0, 1.0, 0.0], LinkFunction::He2, 0.0).unwrap();
        let mut cfg = Alg2Config::new(4, 10, 3);
        cfg.zeta_interp = 0.0;
        let a = alg2_single_index_fl(&task, &cfg).unwrap().net.w;
        cfg.zeta_interp = 1e-300;
        let b = alg2_single_index_fl(&task, &cfg).unwrap().net.w;
        assert_eq!(a, b);
    }

    #[test]
    fn pca_recovers_exact_subspace() {
        let u = linalg::random_orthonormal(2, 6, 9).unwrap();
        let c = DMatrix::from_fn(10, 2, |i, j| ((i * 3 + j * 7) % 5) as f64 - 2.0 + 0.1 * i as f64);
        let w = c * &u;
        let uh = pca_subspace_estimate(&w, 2).unwrap();
        for a in subspace_alignment(&uh, &u).unwrap() {
            assert!(a <= 1e-8);
        }
        assert!(pca_subspace_estimate(&DMatrix::zeros(3, 4), 1).is_err());
    }

    #[test]
    fn alignment_angles() {
        let u = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let uh = DMatrix::from_row_slice(1, 2, &[0.8, 0.6]);
        assert!((subspace_alignment(&uh, &u).unwrap()[0] - 0.8f64.acos()).abs() < 1e-12);
        let orth = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        assert!((subspace_alignment(&orth, &u).unwrap()[0] - PI / 2.0).abs() < 1e-12);
    }
}
