use crate::data::sample_gaussian_inputs;
use crate::error::{invalid, shape, Result};
use crate::linalg;
use crate::model::{Predictor, TwoLayerNet};
use crate::rng;
use nalgebra::{DMatrix, DVector};

/// Monte-Carlo estimate of h(z) = E[f(x) | U x = z] for isotropic Gaussian
/// inputs: h(z) = (1/m) sum_i f(U^T z + (I - U^T U) x_i).
pub struct ConditionalProjection<'a, P: Predictor + ?Sized> {
    pub f: &'a P,
    pub u: DMatrix<f64>,
    /// Rows (I - U^T U) x_i.
    pub residuals: DMatrix<f64>,
}

impl<P: Predictor + ?Sized> ConditionalProjection<'_, P> {
    pub fn m(&self) -> usize {
        self.residuals.nrows()
    }

    fn lifted(&self, z: &[f64]) -> DMatrix<f64> {
        let base = self.u.tr_mul(&DVector::from_column_slice(z));
        let mut x = self.residuals.clone();
        for mut r in x.row_iter_mut() {
            r += base.transpose();
        }
        x
    }

    /// h(z) and the Monte-Carlo standard error of the average.
    pub fn eval_with_stderr(&self, z: &[f64]) -> (f64, f64) {
        let vals = self.f.predict_batch(&self.lifted(z));
        let m = vals.len() as f64;
        let mean = vals.mean();
        let var = if vals.len() > 1 { vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0) } else { 0.0 };
        (mean, (var / m).sqrt())
    }
}

impl<P: Predictor + ?Sized> Predictor for ConditionalProjection<'_, P> {
    fn input_dim(&self) -> usize {
        self.u.nrows()
    }

    fn predict(&self, z: &[f64]) -> f64 {
        self.f.predict_batch(&self.lifted(z)).mean()
    }

    fn input_grad(&self, z: &[f64]) -> Vec<f64> {
        let (_, g) = self.f.value_grad_batch(&self.lifted(z));
        let mean = g.row_mean();
        (&self.u * mean.transpose()).as_slice().to_vec()
    }
}

fn residual_draws(u: &DMatrix<f64>, m: usize, seed: u64) -> Result<DMatrix<f64>> {
    if m == 0 {
        return Err(invalid("need at least one Monte-Carlo draw"));
    }
    if linalg::orthonormality_error(u) > 1e-8 {
        return Err(invalid("U must have orthonormal rows"));
    }
    let x = sample_gaussian_inputs(m, u.ncols(), rng::derive(seed, "conditional-projection"));
    Ok(&x - (&x * u.transpose()) * u)
}

/// Conditional projection of an arbitrary predictor; deterministic per seed.
pub fn conditional_projection<'a, P: Predictor + ?Sized>(
    f: &'a P,
    u: &DMatrix<f64>,
    m: usize,
    seed: u64,
) -> Result<ConditionalProjection<'a, P>> {
    if f.input_dim() != u.ncols() {
        return Err(shape(format!("predictor dim {} vs U with {} columns", f.input_dim(), u.ncols())));
    }
    Ok(ConditionalProjection { f, u: u.clone(), residuals: residual_draws(u, m, seed)? })
}

/// The same estimate for a two-layer network, written as a network over R^k
/// with m N neurons: weights U w_j, biases b_j + <w_j, r_i>, outputs a_j / m.
/// Agrees with `conditional_projection` for the same seed.
pub fn conditional_projection_net(net: &TwoLayerNet, u: &DMatrix<f64>, m: usize, seed: u64) -> Result<TwoLayerNet> {
    if net.dim() != u.ncols() {
        return Err(shape(format!("network dim {} vs U with {} columns", net.dim(), u.ncols())));
    }
    let res = residual_draws(u, m, seed)?;
    let nn = net.width();
    let k = u.nrows();
    let uw = &net.w * u.transpose();
    let shifts = &res * net.w.transpose();
    let mut w = DMatrix::zeros(m * nn, k);
    let mut a = DVector::zeros(m * nn);
    let mut b = DVector::zeros(m * nn);
    for i in 0..m {
        for j in 0..nn {
            let r = i * nn + j;
            w.row_mut(r).copy_from(&uw.row(j));
            a[r] = net.a[j] / m as f64;
            b[r] = net.b[j] + shifts[(i, j)];
        }
    }
    let idx: Vec<usize> = (0..m).flat_map(|_| 0..nn).collect();
    let act = net.act.select(&idx);
    TwoLayerNet::new(a, w, b, act)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, LinearPredictor};

    struct NormSq(usize);

    impl Predictor for NormSq {
        fn input_dim(&self) -> usize {
            self.0
        }
        fn predict(&self, x: &[f64]) -> f64 {
            x.iter().map(|v| v * v).sum()
        }
        fn input_grad(&self, x: &[f64]) -> Vec<f64> {
            x.iter().map(|v| 2.0 * v).collect()
        }
    }

    #[test]
    fn projected_net_is_unchanged() {
        let u = linalg::random_orthonormal(2, 6, 1).unwrap();
        let mut net = TwoLayerNet::random_init(5, 2, Activation::Tanh, 2);
        net.a = DVector::from_fn(5, |i, _| 0.3 * i as f64 - 0.5);
        let lifted = TwoLayerNet::new(net.a.clone(), &net.w * &u, net.b.clone(), Activation::Tanh).unwrap();
        for m in [1, 7] {
            let h = conditional_projection(&lifted, &u, m, 3).unwrap();
            for z in [[0.1, -0.4], [1.5, 2.0]] {
                assert!((h.predict(&z) - net.forward(&z)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_and_quadratic() {
        let u = linalg::random_orthonormal(1, 10, 4).unwrap();
        let w = DVector::from_fn(10, |i, _| 0.1 * i as f64 - 0.3);
        let f = LinearPredictor { w: w.clone() };
        let m = 500;
        let h = conditional_projection(&f, &u, m, 5).unwrap();
        let uw = (&u * &w)[0];
        let perp = (&w - u.transpose() * (&u * &w)).norm();
        for z in [-1.0, 0.0, 2.0] {
            assert!((h.predict(&[z]) - uw * z).abs() <= 4.0 * perp / (m as f64).sqrt());
        }
        let g = NormSq(10);
        let h = conditional_projection(&g, &u, 2000, 6).unwrap();
        let (v, se) = h.eval_with_stderr(&[1.5]);
        assert!((v - (2.25 + 9.0)).abs() <= 4.0 * se);
    }

    #[test]
    fn stderr_scales_with_m() {
        let u = linalg::random_orthonormal(1, 8, 7).unwrap();
        let f = LinearPredictor { w: DVector::from_fn(8, |i, _| (i as f64).cos()) };
        let se1 = conditional_projection(&f, &u, 10_000, 1).unwrap().eval_with_stderr(&[0.5]).1;
        let se4 = conditional_projection(&f, &u, 40_000, 1).unwrap().eval_with_stderr(&[0.5]).1;
        let ratio = se4 / se1;
        assert!((0.45..=0.55).contains(&ratio), "{ratio}");
    }

    #[test]
    fn net_form_matches_generic() {
        let u = linalg::random_orthonormal(2, 7, 8).unwrap();
        let mut net = TwoLayerNet::random_init(4, 7, Activation::Relu, 9);
        net.a = DVector::from_vec(vec![1.0, -0.5, 0.25, 2.0]);
        let h = conditional_projection(&net, &u, 64, 10).unwrap();
        let hn = conditional_projection_net(&net, &u, 64, 10).unwrap();
        for z in [[0.2, -0.1], [-1.0, 1.3]] {
            assert!((h.predict(&z) - hn.forward(&z)).abs() < 1e-12);
            let g1 = h.input_grad(&z);
            let g2 = hn.input_grad(&z);
            assert!(g1.iter().zip(&g2).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }
}
