//! Infinite-width dual weights: densities hhat(v, b) on S^{k-1} x [-r_b, r_b]
//! with int hhat(v, b) sigma(<v, z> + b) dtau_k(v) db equal to a target.

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::poly::Poly;
use crate::quad::{gamma, CompositeRule, SphereRule};
use crate::tensor::{multinomial, sorted_multi_indices, PolyTensor, SymTensor};
use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;

/// Default number of quadrature nodes for bias integrals.
pub const BIAS_NODES: usize = 10_000;
/// Default number of sphere quadrature points for k = 2 and 3.
pub const SPHERE_NODES: usize = 10_000;
/// Largest accepted condition number of the moment matrix.
pub const MAX_CONDITION: f64 = 1e10;

/// ReLU dual of a univariate polynomial:
/// f(a, b) = (1 - a) h''(b) + a h'(r_b)/r_b - 3 b (h'(r_b) r_b - h(r_b)) / r_b^3.
#[derive(Clone, Debug, PartialEq)]
pub struct ReluDual {
    pub h: Poly,
    pub r_b: f64,
    h2: Poly,
    lin: f64,
    cst: f64,
}

impl ReluDual {
    pub fn eval(&self, a: f64, b: f64) -> f64 {
        (1.0 - a) * self.h2.eval(b) + a * self.lin - 3.0 * b * self.cst
    }

    /// E_{a, b}[2 r_b f(a, b) relu(a z + b)] by composite Gauss-Legendre
    /// quadrature with a panel edge at the kink.
    pub fn reconstruct(&self, z: f64, nodes: usize) -> f64 {
        let rule = CompositeRule::with_nodes(nodes, 10);
        [1.0, -1.0]
            .iter()
            .map(|&a| {
                let g = |b: f64| self.eval(a, b) * (a * z + b).max(0.0);
                0.5 * rule.integrate_with_breaks(g, -self.r_b, self.r_b, &[-a * z])
            })
            .sum()
    }

    /// Upper bound on sup |f| over {+-1} x [-r_b, r_b].
    pub fn sup_bound(&self) -> f64 {
        [1.0, -1.0]
            .iter()
            .map(|&a| {
                let p = self.h2.scale(1.0 - a).add(&Poly::new(vec![a * self.lin, -3.0 * self.cst]));
                poly_sup_bound(&p, -self.r_b, self.r_b)
            })
            .fold(0.0, f64::max)
    }
}

/// Dual weights of a univariate polynomial `h` for the ReLU activation.
pub fn relu_dual_weights(h: &Poly, r_b: f64) -> Result<ReluDual> {
    if !(r_b > 0.0 && r_b.is_finite()) {
        return Err(invalid("r_b must be positive"));
    }
    let d1 = h.derivative();
    Ok(ReluDual {
        h: h.clone(),
        r_b,
        h2: d1.derivative(),
        lin: d1.eval(r_b) / r_b,
        cst: (d1.eval(r_b) * r_b - h.eval(r_b)) / r_b.powi(3),
    })
}

/// Max of |p| on a fine grid plus half a grid step times a bound on |p'|.
fn poly_sup_bound(p: &Poly, lo: f64, hi: f64) -> f64 {
    let n = 10_000;
    let h = (hi - lo) / n as f64;
    let grid = (0..=n).map(|i| p.eval(lo + h * i as f64).abs()).fold(0.0, f64::max);
    let r = lo.abs().max(hi.abs());
    let dp = p.derivative();
    let lip: f64 = dp.coeffs.iter().enumerate().map(|(i, c)| c.abs() * r.powi(i as i32)).sum();
    grid + 0.5 * h * lip
}

/// Piecewise-constant dual weights for a polynomial activation of degree q:
/// E_{b ~ Unif(-r_b, r_b)}[2 r_b f(b) sigma(z + b)] = h(z) for every z.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyDual {
    pub sigma: Poly,
    pub r_b: f64,
    /// Coefficients of h in the basis g_0, ..., g_q.
    pub beta: Vec<f64>,
    /// g_i for i = 0..=q.
    pub basis: Vec<Poly>,
    /// Value of f on [m, m + 1) for m = -q, ..., q - 1.
    pub cells: Vec<f64>,
}

impl PolyDual {
    pub fn q(&self) -> usize {
        self.sigma.degree()
    }

    pub fn eval(&self, b: f64) -> f64 {
        let q = self.q() as f64;
        if !(b >= -q && b <= q) {
            return 0.0;
        }
        let m = ((b + q).floor() as usize).min(self.cells.len() - 1);
        self.cells[m]
    }

    /// Integer cell edges in [-q, q].
    pub fn breaks(&self) -> Vec<f64> {
        let q = self.q() as i64;
        (-q..=q).map(|m| m as f64).collect()
    }

    /// E_b[2 r_b f(b) sigma(z + b)] by quadrature.
    pub fn reconstruct(&self, z: f64, nodes: usize) -> f64 {
        let rule = CompositeRule::with_nodes(nodes, 10);
        rule.integrate_with_breaks(|b| self.eval(b) * self.sigma.eval(z + b), -self.r_b, self.r_b, &self.breaks())
    }

    pub fn sup_bound(&self) -> f64 {
        self.cells.iter().fold(0.0, |m, c| m.max(c.abs()))
    }
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Dual weights of `h` for the polynomial activation `sigma` (degree q >= deg h).
pub fn poly_dual_weights(h: &Poly, sigma: &Poly, r_b: f64) -> Result<PolyDual> {
    let q = sigma.degree();
    let p = h.degree();
    if sigma.is_zero() {
        return Err(invalid("activation polynomial is zero"));
    }
    if q < p {
        return Err(invalid(format!("activation degree {q} is below target degree {p}")));
    }
    if !(r_b >= q as f64) {
        return Err(invalid(format!("r_b = {r_b} must be at least q = {q}")));
    }
    // g_q(z) = int_{-q}^0 sigma(z + b) db
    let s = sigma.antiderivative();
    let gq = s.sub(&s.shift(-(q as f64)));
    // g_{q-i}(z) = sum_j c_{i,j} g_q(z + j), c_{i,j} = (-1)^{i-j} C(i, j)
    let c = |i: usize, j: usize| if (i - j).is_multiple_of(2) { binom(i, j) } else { -binom(i, j) };
    let mut basis = vec![Poly::zero(); q + 1];
    for i in 0..=q {
        let mut g = Poly::zero();
        for j in 0..=i {
            g = g.add(&gq.shift(j as f64).scale(c(i, j)));
        }
        basis[q - i] = g;
    }
    let scale = basis.iter().map(|g| g.coeffs.iter().fold(0.0, |m: f64, x| m.max(x.abs()))).fold(0.0, f64::max);
    for (i, g) in basis.iter().enumerate() {
        if g.coeff(i).abs() <= 1e-13 * scale {
            return Err(Error::IllConditioned(format!("leading coefficient of g_{i} vanishes")));
        }
    }
    // back-substitution: sum_i beta_i g_i = h with beta_i = 0 for i > p
    let mut beta = vec![0.0; q + 1];
    for j in (0..=p).rev() {
        let rest: f64 = ((j + 1)..=p).map(|i| basis[i].coeff(j) * beta[i]).sum();
        beta[j] = (h.coeff(j) - rest) / basis[j].coeff(j);
    }
    // f(b) = sum_i beta_{q-i} sum_j c_{i,j} 1[-q + j <= b <= j]
    let mut cells = vec![0.0; 2 * q];
    for i in 0..=q {
        for j in 0..=i {
            let w = beta[q - i] * c(i, j);
            for cell in &mut cells[j..j + q] {
                *cell += w;
            }
        }
    }
    Ok(PolyDual { sigma: sigma.clone(), r_b, beta, basis, cells })
}

/// Dual of a symmetric order-s tensor on S^{k-1}:
/// int f(v) <v, z>^s dtau_k(v) = T[z^{(x) s}].
///
/// Represented in the reduced basis phi_alpha(v) = sqrt(multinomial(alpha)) v^alpha
/// over sorted multi-indices, where the Gram matrix is invertible. This agrees
/// with vec(v^{(x) s})^T M^+ vec(T) for the full moment matrix M.
#[derive(Clone, Debug, PartialEq)]
pub struct MonomialDual {
    pub k: usize,
    pub s: usize,
    pub indices: Vec<Vec<usize>>,
    /// G^{-1} t in the reduced basis.
    pub coeffs: Vec<f64>,
    pub condition: f64,
}

fn reduced_features(v: &[f64], indices: &[Vec<usize>]) -> Vec<f64> {
    indices.iter().map(|idx| multinomial(idx).sqrt() * idx.iter().map(|&i| v[i]).product::<f64>()).collect()
}

impl MonomialDual {
    pub fn eval(&self, v: &[f64]) -> f64 {
        linalg::dot(&reduced_features(v, &self.indices), &self.coeffs)
    }

    /// int f(v) <v, z>^s dtau_k(v) by sphere quadrature.
    pub fn reconstruct(&self, z: &[f64], rule: &SphereRule) -> f64 {
        rule.integrate(|v| self.eval(v) * linalg::dot(v, z).powi(self.s as i32))
    }

    /// Bound on sup |f|: Cauchy-Schwarz with ||phi(v)|| = ||v||^s = 1.
    pub fn sup_bound(&self) -> f64 {
        linalg::norm2(&self.coeffs)
    }
}

fn sphere_rule(k: usize) -> Result<SphereRule> {
    SphereRule::new(k, SPHERE_NODES).ok_or_else(|| invalid(format!("sphere quadrature supports k <= 3, got {k}")))
}

/// Full k^s x k^s moment matrix E[vec(v^{(x) s}) vec(v^{(x) s})^T].
pub fn moment_matrix(k: usize, s: usize) -> Result<DMatrix<f64>> {
    let rule = sphere_rule(k)?;
    let t = SymTensor::zeros(k, s);
    let n = t.data.len();
    let mut m = DMatrix::zeros(n, n);
    for (v, w) in rule.points.iter().zip(&rule.weights) {
        let f: Vec<f64> = (0..n).map(|i| t.index_of(i).iter().map(|&j| v[j]).product()).collect();
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] += w * f[i] * f[j];
            }
        }
    }
    Ok(m)
}

/// Dual weights of a symmetric tensor.
pub fn monomial_dual(t: &SymTensor) -> Result<MonomialDual> {
    let (k, s) = (t.dim, t.order);
    if k == 0 || k > 3 {
        return Err(invalid(format!("monomial duals support 1 <= k <= 3, got {k}")));
    }
    if !t.is_symmetric(1e-12) {
        return Err(invalid("tensor is not symmetric"));
    }
    let indices = sorted_multi_indices(k, s);
    let n = indices.len();
    let rule = sphere_rule(k)?;
    let mut g = DMatrix::zeros(n, n);
    for (v, w) in rule.points.iter().zip(&rule.weights) {
        let f = reduced_features(v, &indices);
        for i in 0..n {
            for j in 0..n {
                g[(i, j)] += w * f[i] * f[j];
            }
        }
    }
    let condition = linalg::sym_condition(&g);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned(format!("moment matrix condition number {condition:.3e}")));
    }
    let rhs = DVector::from_iterator(n, indices.iter().map(|idx| multinomial(idx).sqrt() * t.get(idx)));
    let sol =
        g.cholesky().ok_or_else(|| Error::IllConditioned("moment matrix is not positive definite".into()))?.solve(&rhs);
    Ok(MonomialDual { k, s, indices, coeffs: sol.as_slice().to_vec(), condition })
}

/// ReLU dual of a polynomial h(z) = sum_s T^(s)[z^{(x) s}] over R^k:
/// hhat(v, b) = sum_s (f_s(v) g_s(1, b) + f_s(-v) g_s(-1, b)) / 2 with f_s the
/// monomial dual of T^(s) and g_s the ReLU dual of z -> z^s.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorReluDual {
    pub k: usize,
    pub r_b: f64,
    pub parts: Vec<(MonomialDual, ReluDual)>,
}

impl TensorReluDual {
    pub fn eval(&self, v: &[f64], b: f64) -> f64 {
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        self.parts.iter().map(|(m, r)| 0.5 * (m.eval(v) * r.eval(1.0, b) + m.eval(&neg) * r.eval(-1.0, b))).sum()
    }

    pub fn sup_bound(&self) -> f64 {
        self.parts.iter().map(|(m, r)| m.sup_bound() * r.sup_bound()).sum()
    }
}

pub fn tensor_relu_dual(h: &PolyTensor, r_b: f64) -> Result<TensorReluDual> {
    let mut parts = Vec::new();
    for t in &h.tensors {
        if t.frobenius() == 0.0 {
            continue;
        }
        parts.push((monomial_dual(t)?, relu_dual_weights(&Poly::monomial(t.order), r_b)?));
    }
    Ok(TensorReluDual { k: h.arity, r_b, parts })
}

/// Normalizing constant Z_k of the density Z_k (1 + b^2)^{-(k+1)/2} on R.
pub fn lipschitz_z(k: usize) -> f64 {
    let kf = k as f64;
    gamma((kf + 1.0) / 2.0) / (PI.sqrt() * gamma(kf / 2.0))
}

/// T(v, bt) = (v, bt) / sqrt(1 + bt^2), a point of S^k.
pub fn lipschitz_transform(v: &[f64], bt: f64) -> Vec<f64> {
    let s = (1.0 + bt * bt).sqrt();
    v.iter().map(|x| x / s).chain(std::iter::once(bt / s)).collect()
}

/// Factor Z_k r_z^k / (r_z^2 + b^2)^{(k+2)/2} multiplying p(T(v, b / r_z)).
pub fn lipschitz_density_factor(k: usize, r_z: f64, b: f64) -> f64 {
    let kf = k as f64;
    lipschitz_z(k) * r_z.powf(kf) / (r_z * r_z + b * b).powf((kf + 2.0) / 2.0)
}

/// Experimental change-of-variables wrapper for the Lipschitz construction.
/// The sphere function p on S^k must be supplied by the caller; only the
/// wrapper hhat(v, b) = factor(b) p(T(v, b / r_z)) is built here, tabulated on
/// a (direction, bias) grid and interpolated linearly in b.
#[derive(Clone, Debug, PartialEq)]
pub struct LipschitzDual {
    pub k: usize,
    pub r_z: f64,
    pub r_b: f64,
    pub delta: f64,
    /// Angles (k = 2) or the two points of S^0 (k = 1).
    pub directions: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    /// table[i][l] = hhat(directions[i], biases[l]).
    pub table: Vec<Vec<f64>>,
}

impl LipschitzDual {
    pub fn eval(&self, v: &[f64], b: f64) -> f64 {
        let i = match self.k {
            1 => usize::from(v[0] < 0.0),
            _ => {
                let n = self.directions.len();
                let t = v[1].atan2(v[0]).rem_euclid(2.0 * PI);
                ((t / (2.0 * PI) * n as f64).round() as usize) % n
            }
        };
        let nb = self.biases.len();
        let pos = ((b + self.r_b) / (2.0 * self.r_b) * (nb - 1) as f64).clamp(0.0, (nb - 1) as f64);
        let l = (pos.floor() as usize).min(nb - 2);
        let fr = pos - l as f64;
        self.table[i][l] * (1.0 - fr) + self.table[i][l + 1] * fr
    }

    pub fn sup_bound(&self) -> f64 {
        self.table.iter().flatten().fold(0.0, |m, x| m.max(x.abs()))
    }
}

pub fn lipschitz_dual_tabulate<F: Fn(&[f64]) -> f64>(
    p: F,
    k: usize,
    r_z: f64,
    r_b: f64,
    delta: f64,
    grid: (usize, usize),
) -> Result<LipschitzDual> {
    if k == 0 || k > 2 {
        return Err(invalid(format!("Lipschitz wrapper supports k in {{1, 2}}, got {k}")));
    }
    if !(r_z > 0.0 && r_b > 0.0 && delta > 0.0) {
        return Err(invalid("r_z, r_b and delta must be positive"));
    }
    let (nv, nb) = (grid.0.max(2), grid.1.max(2));
    let directions: Vec<Vec<f64>> = if k == 1 {
        vec![vec![1.0], vec![-1.0]]
    } else {
        (0..nv)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / nv as f64;
                vec![t.cos(), t.sin()]
            })
            .collect()
    };
    let biases: Vec<f64> = (0..nb).map(|l| -r_b + 2.0 * r_b * l as f64 / (nb - 1) as f64).collect();
    let table = directions
        .iter()
        .map(|v| {
            biases.iter().map(|&b| lipschitz_density_factor(k, r_z, b) * p(&lipschitz_transform(v, b / r_z))).collect()
        })
        .collect();
    Ok(LipschitzDual { k, r_z, r_b, delta, directions, biases, table })
}
