//! Two-layer networks f(x) = sum_j a_j sigma_j(<w_j, x> + b_j).

use crate::error::{invalid, shape, Result};
use crate::linalg;
use crate::poly::{hermite_all, Poly};
use crate::rng;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Activation. `HermiteMix` holds one coefficient row per neuron:
/// sigma_j(z) = sum_{l=1}^q beta[j][l-1] He_l(z).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Polynomial { coeffs: Poly },
    HermiteMix { beta: Vec<Vec<f64>> },
}

impl Activation {
    #[inline]
    pub fn value(&self, j: usize, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Polynomial { coeffs } => coeffs.eval(z),
            Activation::HermiteMix { beta } => {
                let h = hermite_all(beta[j].len(), z);
                beta[j].iter().zip(&h[1..]).map(|(b, v)| b * v).sum()
            }
        }
    }

    /// Derivative; the ReLU derivative at 0 is taken as 0.
    #[inline]
    pub fn deriv(&self, j: usize, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Polynomial { coeffs } => coeffs.derivative().eval(z),
            Activation::HermiteMix { beta } => {
                let q = beta[j].len();
                if q == 0 {
                    return 0.0;
                }
                let h = hermite_all(q - 1, z);
                beta[j].iter().enumerate().map(|(l, b)| b * ((l + 1) as f64).sqrt() * h[l]).sum()
            }
        }
    }

    /// Value and derivative in one pass.
    #[inline]
    pub fn value_deriv(&self, j: usize, z: f64) -> (f64, f64) {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    (z, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                (t, 1.0 - t * t)
            }
            Activation::HermiteMix { beta } => {
                let q = beta[j].len();
                let h = hermite_all(q, z);
                let v = beta[j].iter().zip(&h[1..]).map(|(b, v)| b * v).sum();
                let d = beta[j].iter().enumerate().map(|(l, b)| b * ((l + 1) as f64).sqrt() * h[l]).sum();
                (v, d)
            }
            _ => (self.value(j, z), self.deriv(j, z)),
        }
    }

    /// Upper bound on |sigma_j'| over [-r, r].
    pub fn deriv_bound(&self, j: usize, r: f64) -> f64 {
        match self {
            Activation::Relu | Activation::Tanh => 1.0,
            Activation::Polynomial { coeffs } => {
                let d = coeffs.derivative();
                d.coeffs.iter().enumerate().map(|(i, c)| c.abs() * r.powi(i as i32)).sum()
            }
            Activation::HermiteMix { beta } => {
                let mut p = Poly::zero();
                for (l, b) in beta[j].iter().enumerate() {
                    p = p.add(&Poly::hermite(l + 1).scale(*b));
                }
                let d = p.derivative();
                d.coeffs.iter().enumerate().map(|(i, c)| c.abs() * r.powi(i as i32)).sum()
            }
        }
    }

    /// Activation for a subset of neurons.
    pub(crate) fn select(&self, idx: &[usize]) -> Activation {
        match self {
            Activation::HermiteMix { beta } => {
                Activation::HermiteMix { beta: idx.iter().map(|&j| beta[j].clone()).collect() }
            }
            a => a.clone(),
        }
    }
}

/// Anything that maps R^d to R with an input gradient.
pub trait Predictor: Sync {
    fn input_dim(&self) -> usize;

    fn predict(&self, x: &[f64]) -> f64;

    fn input_grad(&self, x: &[f64]) -> Vec<f64>;

    /// Predictions for every row of `x`.
    fn predict_batch(&self, x: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_fn(x.nrows(), |i, _| self.predict(&linalg::row(x, i)))
    }

    /// Predictions and input gradients (as rows) for every row of `x`.
    fn value_grad_batch(&self, x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let n = x.nrows();
        let d = self.input_dim();
        let mut g = DMatrix::zeros(n, d);
        let mut v = DVector::zeros(n);
        for i in 0..n {
            let xi = linalg::row(x, i);
            v[i] = self.predict(&xi);
            let gi = self.input_grad(&xi);
            for j in 0..d {
                g[(i, j)] = gi[j];
            }
        }
        (v, g)
    }
}

/// Linear predictor x -> <w, x>.
#[derive(Clone, Debug)]
pub struct LinearPredictor {
    pub w: DVector<f64>,
}

impl Predictor for LinearPredictor {
    fn input_dim(&self) -> usize {
        self.w.len()
    }
    fn predict(&self, x: &[f64]) -> f64 {
        linalg::dot(self.w.as_slice(), x)
    }
    fn input_grad(&self, _x: &[f64]) -> Vec<f64> {
        self.w.as_slice().to_vec()
    }
    fn predict_batch(&self, x: &DMatrix<f64>) -> DVector<f64> {
        x * &self.w
    }
    fn value_grad_batch(&self, x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let g = DMatrix::from_fn(x.nrows(), self.w.len(), |_, j| self.w[j]);
        (x * &self.w, g)
    }
}

/// x -> inner(P x) for a fixed k x d matrix P.
pub struct Composed<'a, P: Predictor + ?Sized> {
    pub inner: &'a P,
    pub proj: &'a DMatrix<f64>,
}

impl<P: Predictor + ?Sized> Predictor for Composed<'_, P> {
    fn input_dim(&self) -> usize {
        self.proj.ncols()
    }
    fn predict(&self, x: &[f64]) -> f64 {
        let z = self.proj * DVector::from_column_slice(x);
        self.inner.predict(z.as_slice())
    }
    fn input_grad(&self, x: &[f64]) -> Vec<f64> {
        let z = self.proj * DVector::from_column_slice(x);
        let g = DVector::from_vec(self.inner.input_grad(z.as_slice()));
        (self.proj.transpose() * g).as_slice().to_vec()
    }
    fn predict_batch(&self, x: &DMatrix<f64>) -> DVector<f64> {
        self.inner.predict_batch(&(x * self.proj.transpose()))
    }
    fn value_grad_batch(&self, x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let (v, g) = self.inner.value_grad_batch(&(x * self.proj.transpose()));
        (v, g * self.proj)
    }
}

/// Gradients of the empirical squared loss with respect to (a, W, b).
#[derive(Clone, Debug)]
pub struct ParamGrad {
    pub a: DVector<f64>,
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// Two-layer network with N neurons on R^d.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoLayerNet {
    pub a: DVector<f64>,
    /// N x d first-layer weights; row j is w_j.
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    pub act: Activation,
    /// Whether rows of W are required to have unit norm.
    pub unit_rows: bool,
}

impl TwoLayerNet {
    pub fn new(a: DVector<f64>, w: DMatrix<f64>, b: DVector<f64>, act: Activation) -> Result<Self> {
        let net = TwoLayerNet { a, w, b, act, unit_rows: false };
        net.validate()?;
        Ok(net)
    }

    pub fn width(&self) -> usize {
        self.a.len()
    }

    pub fn dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.len();
        if n == 0 {
            return Err(invalid("network has no neurons"));
        }
        if self.w.nrows() != n || self.b.len() != n {
            return Err(shape(format!(
                "a has {n} entries, W has {} rows, b has {} entries",
                self.w.nrows(),
                self.b.len()
            )));
        }
        if let Activation::HermiteMix { beta } = &self.act {
            if beta.len() != n {
                return Err(shape(format!("hermite_mix has {} rows for {n} neurons", beta.len())));
            }
        }
        if self.unit_rows {
            for j in 0..n {
                let r = self.w.row(j).norm();
                if (r - 1.0).abs() > 1e-6 {
                    return Err(invalid(format!("row {j} of W has norm {r}")));
                }
            }
        }
        Ok(())
    }

    /// Pre-activations X W^T + 1 b^T, shape n x N.
    pub fn preactivations(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut pre = x * self.w.transpose();
        for (j, mut col) in pre.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.b[j]);
        }
        pre
    }

    /// Activated features sigma(X W^T + b), shape n x N.
    pub fn features(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut pre = self.preactivations(x);
        for (j, mut col) in pre.column_iter_mut().enumerate() {
            col.apply(|z| *z = self.act.value(j, *z));
        }
        pre
    }

    /// Forward pass on one input.
    pub fn forward(&self, x: &[f64]) -> f64 {
        (0..self.width())
            .map(|j| {
                let z = linalg::dot(self.w.row(j).transpose().as_slice(), x) + self.b[j];
                self.a[j] * self.act.value(j, z)
            })
            .sum()
    }

    /// Gradients of (1/n) sum_i (f(x_i) - y_i)^2.
    pub fn grad_params(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> ParamGrad {
        let n = x.nrows();
        let pre = self.preactivations(x);
        let nn = self.width();
        let mut feat = DMatrix::zeros(n, nn);
        let mut dact = DMatrix::zeros(n, nn);
        for j in 0..nn {
            for i in 0..n {
                let (v, d) = self.act.value_deriv(j, pre[(i, j)]);
                feat[(i, j)] = v;
                dact[(i, j)] = d;
            }
        }
        let f = &feat * &self.a;
        let r = (f - y) * (2.0 / n as f64);
        let ga = feat.tr_mul(&r);
        // M_ij = r_i a_j sigma'(pre_ij)
        for j in 0..nn {
            let aj = self.a[j];
            for i in 0..n {
                dact[(i, j)] *= r[i] * aj;
            }
        }
        let gb = DVector::from_fn(nn, |j, _| dact.column(j).sum());
        let gw = dact.tr_mul(x);
        ParamGrad { a: ga, w: gw, b: gb }
    }

    /// Mean squared loss on (x, y).
    pub fn mse(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
        let f = self.predict_batch(x);
        (f - y).norm_squared() / y.len() as f64
    }

    /// Restrict to rows `idx`.
    pub fn select(&self, idx: &[usize]) -> TwoLayerNet {
        TwoLayerNet {
            a: DVector::from_fn(idx.len(), |i, _| self.a[idx[i]]),
            w: DMatrix::from_fn(idx.len(), self.dim(), |i, j| self.w[(idx[i], j)]),
            b: DVector::from_fn(idx.len(), |i, _| self.b[idx[i]]),
            act: self.act.select(idx),
            unit_rows: self.unit_rows,
        }
    }

    /// Network with unit-sphere rows, a ~ N(0, 1/N^2), b ~ N(0, 1).
    pub fn random_init(n: usize, d: usize, act: Activation, seed: u64) -> TwoLayerNet {
        let mut rw = rng::stream(seed, "init-w", 0);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| rng::unit_sphere(&mut rw, d)).collect();
        let (a, b) = random_head(n, seed);
        TwoLayerNet { a, w: linalg::from_rows(&rows).expect("rows"), b, act, unit_rows: true }
    }
}

/// Second layer and biases: a ~ N(0, 1/N^2), b ~ N(0, 1).
pub fn random_head(n: usize, seed: u64) -> (DVector<f64>, DVector<f64>) {
    let mut ra = rng::stream(seed, "init-a", 0);
    let mut rb = rng::stream(seed, "init-b", 0);
    let a = DVector::from_fn(n, |_, _| rng::gaussian(&mut ra) / n as f64);
    let b = DVector::from_fn(n, |_, _| rng::gaussian(&mut rb));
    (a, b)
}

impl Predictor for TwoLayerNet {
    fn input_dim(&self) -> usize {
        self.dim()
    }

    fn predict(&self, x: &[f64]) -> f64 {
        self.forward(x)
    }

    fn input_grad(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut g = vec![0.0; d];
        for j in 0..self.width() {
            let row = self.w.row(j);
            let z = row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.b[j];
            let c = self.a[j] * self.act.deriv(j, z);
            if c != 0.0 {
                for (gi, wi) in g.iter_mut().zip(row.iter()) {
                    *gi += c * wi;
                }
            }
        }
        g
    }

    fn predict_batch(&self, x: &DMatrix<f64>) -> DVector<f64> {
        self.features(x) * &self.a
    }

    fn value_grad_batch(&self, x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let mut pre = self.preactivations(x);
        let n = x.nrows();
        let mut v = DVector::zeros(n);
        for j in 0..self.width() {
            let aj = self.a[j];
            for i in 0..n {
                let (s, ds) = self.act.value_deriv(j, pre[(i, j)]);
                v[i] += aj * s;
                pre[(i, j)] = aj * ds;
            }
        }
        (v, pre * &self.w)
    }
}

/// A network re-expressed on k-dimensional inputs z = U_hat x.
#[derive(Clone, Debug)]
pub struct ReducedNet {
    pub net: TwoLayerNet,
    /// ||P_perp w_j|| for each neuron.
    pub residuals: Vec<f64>,
    pub u_hat: DMatrix<f64>,
}

impl ReducedNet {
    /// Evaluate on an ambient input x in R^d.
    pub fn predict_ambient(&self, x: &[f64]) -> f64 {
        let z = &self.u_hat * DVector::from_column_slice(x);
        self.net.forward(z.as_slice())
    }
}

/// Replace every w_j by U_hat w_j (the component in span(U_hat)).
pub fn project_to_subspace(net: &TwoLayerNet, u_hat: &DMatrix<f64>) -> Result<ReducedNet> {
    if u_hat.ncols() != net.dim() {
        return Err(shape(format!("U_hat has {} columns, net has d = {}", u_hat.ncols(), net.dim())));
    }
    let err = linalg::orthonormality_error(u_hat);
    if err > 1e-8 {
        return Err(invalid(format!("U_hat rows are not orthonormal (error {err:.2e})")));
    }
    let wk = &net.w * u_hat.transpose();
    let back = &wk * u_hat;
    let residuals = (0..net.width()).map(|j| (net.w.row(j) - back.row(j)).norm()).collect();
    let reduced = TwoLayerNet { a: net.a.clone(), w: wk, b: net.b.clone(), act: net.act.clone(), unit_rows: false };
    Ok(ReducedNet { net: reduced, residuals, u_hat: u_hat.clone() })
}

/// Serialized form of a network.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub act: Activation,
    pub a: Vec<f64>,
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    #[serde(default)]
    pub meta: CheckpointMeta,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub phase: String,
}

impl Checkpoint {
    pub fn from_net(net: &TwoLayerNet, meta: CheckpointMeta) -> Self {
        Checkpoint {
            d: net.dim(),
            n: net.width(),
            act: net.act.clone(),
            a: net.a.as_slice().to_vec(),
            w: linalg::to_rows(&net.w),
            b: net.b.as_slice().to_vec(),
            meta,
        }
    }

    pub fn to_net(&self) -> Result<TwoLayerNet> {
        let w = if self.w.is_empty() { DMatrix::zeros(0, self.d) } else { linalg::from_rows(&self.w)? };
        if w.ncols() != self.d || w.nrows() != self.n {
            return Err(shape(format!("W is {}x{}, expected {}x{}", w.nrows(), w.ncols(), self.n, self.d)));
        }
        TwoLayerNet::new(DVector::from_vec(self.a.clone()), w, DVector::from_vec(self.b.clone()), self.act.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_net(act: Activation) -> TwoLayerNet {
        let w = DMatrix::from_row_slice(2, 3, &[0.5, -0.2, 0.1, -0.3, 0.4, 0.7]);
        TwoLayerNet::new(DVector::from_vec(vec![1.5, -0.7]), w, DVector::from_vec(vec![0.1, -0.2]), act).unwrap()
    }

    #[test]
    fn single_relu_neuron() {
        let net = TwoLayerNet::new(
            DVector::from_vec(vec![1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_vec(vec![0.0]),
            Activation::Relu,
        )
        .unwrap();
        assert_eq!(net.forward(&[2.0]), 2.0);
        assert_eq!(net.forward(&[-1.0]), 0.0);
        assert_eq!(net.input_grad(&[0.0]), vec![0.0]);
    }

    #[test]
    fn batch_matches_single() {
        for act in
            [Activation::Relu, Activation::Tanh, Activation::HermiteMix { beta: vec![vec![1.0, 0.5], vec![-0.3, 0.2]] }]
        {
            let net = small_net(act);
            let x = DMatrix::from_row_slice(3, 3, &[0.3, 1.0, -0.5, -1.1, 0.2, 0.9, 2.0, -0.4, 0.0]);
            let (v, g) = net.value_grad_batch(&x);
            for i in 0..3 {
                let xi = linalg::row(&x, i);
                assert!((v[i] - net.forward(&xi)).abs() < 1e-12);
                let gi = net.input_grad(&xi);
                for j in 0..3 {
                    assert!((g[(i, j)] - gi[j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let r = TwoLayerNet::new(DVector::zeros(2), DMatrix::zeros(3, 4), DVector::zeros(2), Activation::Relu);
        assert!(r.is_err());
    }

    #[test]
    fn projection_onto_full_space_is_identity() {
        let net = small_net(Activation::Tanh);
        let u = DMatrix::<f64>::identity(3, 3);
        let red = project_to_subspace(&net, &u).unwrap();
        let x = [0.3, -0.2, 1.1];
        assert!((red.predict_ambient(&x) - net.forward(&x)).abs() < 1e-14);
        assert!(red.residuals.iter().all(|&r| r < 1e-14));
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = small_net(Activation::Polynomial { coeffs: Poly::new(vec![0.0, 1.0, 0.5]) });
        let c = Checkpoint::from_net(&net, CheckpointMeta { seed: 3, phase: "test".into() });
        let js = serde_json::to_string(&c).unwrap();
        let back: Checkpoint = serde_json::from_str(&js).unwrap();
        assert_eq!(back.to_net().unwrap(), net);
    }
}
