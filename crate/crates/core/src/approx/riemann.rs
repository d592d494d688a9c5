use super::DualWeightFn;
use crate::error::{invalid, shape, Error, Result};
use crate::model::{Activation, TwoLayerNet};
use crate::oracles::{build_packing, PackingSet};
use crate::quad::GaussLegendre;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiemannConfig {
    pub zeta: f64,
    pub r_b: f64,
    /// Failure probability used for the default subinterval count.
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Number A of half-range subintervals; 2A cells of width r_b / A.
    #[serde(default)]
    pub subintervals: Option<usize>,
    /// Packing of S^{k-1}; built with radius 2 sqrt(2 zeta) when absent.
    #[serde(default)]
    pub packing: Option<PackingSet>,
    #[serde(default)]
    pub seed: u64,
    /// Gauss-Legendre order per cell and direction.
    #[serde(default = "default_order")]
    pub order: usize,
}

fn default_delta() -> f64 {
    0.1
}

fn default_order() -> usize {
    12
}

impl RiemannConfig {
    pub fn new(zeta: f64, r_b: f64) -> Self {
        RiemannConfig { zeta, r_b, delta: 0.1, subintervals: None, packing: None, seed: 0, order: default_order() }
    }
}

/// Finite-width second layer on aligned first-layer weights.
#[derive(Clone, Debug)]
pub struct RiemannFit {
    pub a: DVector<f64>,
    /// v_j = U w_j / ||U w_j|| as rows.
    pub v: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Neuron indices S_i per packing point.
    pub groups: Vec<Vec<usize>>,
    pub packing: PackingSet,
    pub subintervals: usize,
}

impl RiemannFit {
    /// sum_j a_j sigma(<v_j, z> + b_j).
    pub fn eval(&self, z: &[f64], act: &Activation) -> f64 {
        (0..self.a.len())
            .filter(|&j| self.a[j] != 0.0)
            .map(|j| {
                let pre: f64 = (0..z.len()).map(|l| self.v[(j, l)] * z[l]).sum::<f64>() + self.b[j];
                self.a[j] * act.value(j, pre)
            })
            .sum()
    }

    /// The fitted network over R^k.
    pub fn reduced_net(&self, act: Activation) -> Result<TwoLayerNet> {
        TwoLayerNet::new(self.a.clone(), self.v.clone(), self.b.clone(), act)
    }
}

/// Angular extent of each packing point's Voronoi cell on the circle.
fn circle_cells(p: &PackingSet) -> Vec<(f64, f64)> {
    let ang: Vec<f64> = p.points.iter().map(|v| v[1].atan2(v[0])).collect();
    let mut order: Vec<usize> = (0..ang.len()).collect();
    order.sort_by(|&a, &b| ang[a].total_cmp(&ang[b]).then(a.cmp(&b)));
    let m = order.len();
    let mut cells = vec![(0.0, 0.0); m];
    for (pos, &i) in order.iter().enumerate() {
        let prev = ang[order[(pos + m - 1) % m]];
        let next = ang[order[(pos + 1) % m]];
        let gl = (ang[i] - prev).rem_euclid(2.0 * PI);
        let gr = (next - ang[i]).rem_euclid(2.0 * PI);
        let (gl, gr) = if m == 1 { (PI, PI) } else { (gl, gr) };
        cells[i] = (ang[i] - gl / 2.0, ang[i] + gr / 2.0);
    }
    cells
}

/// a*_j = int hhat(v, b) 1[i = Pi_1(v), b_j = Pi_2(i, b)] dtau_k(v) db for
/// j in S_i, zero outside S. Pi_1 maps v to its nearest packing point and
/// Pi_2 maps b to the nearest bias of the group; ties go to the lowest index.
pub fn riemann_second_layer(
    hhat: &DualWeightFn,
    w: &DMatrix<f64>,
    b: &DVector<f64>,
    u: &DMatrix<f64>,
    cfg: &RiemannConfig,
) -> Result<RiemannFit> {
    let k = u.nrows();
    let n = w.nrows();
    if !(1..=2).contains(&k) {
        return Err(invalid(format!("Riemann construction supports k in {{1, 2}}, got {k}")));
    }
    if hhat.arity() != k {
        return Err(shape(format!("dual weights have arity {}, subspace has dimension {k}", hhat.arity())));
    }
    if !hhat.uses_bias() {
        return Err(invalid("dual weights without a bias variable cannot be discretized"));
    }
    if w.ncols() != u.ncols() || b.len() != n {
        return Err(shape("W, b and U disagree"));
    }
    if !(cfg.zeta > 0.0 && cfg.zeta < 1.0) || !(cfg.r_b > 0.0) || !(cfg.delta > 0.0 && cfg.delta < 1.0) {
        return Err(invalid("need zeta in (0, 1), r_b > 0, delta in (0, 1)"));
    }
    if b.iter().any(|x| x.abs() > cfg.r_b) {
        return Err(invalid("biases must lie in [-r_b, r_b]"));
    }
    let packing = match &cfg.packing {
        Some(p) if p.k == k => p.clone(),
        Some(p) => return Err(shape(format!("packing on S^{} for k = {k}", p.k - 1))),
        None => build_packing(k, (2.0 * (2.0 * cfg.zeta).sqrt()).min(2.0), cfg.seed)?,
    };
    let m = packing.len();
    let uw = w * u.transpose();
    let mut v = DMatrix::zeros(n, k);
    let group_r = (2.0 * cfg.zeta).sqrt();
    let mut groups = vec![Vec::new(); m];
    for j in 0..n {
        let nrm = uw.row(j).norm();
        if nrm == 0.0 {
            v[(j, 0)] = 1.0;
            continue;
        }
        let vj: Vec<f64> = (0..k).map(|l| uw[(j, l)] / nrm).collect();
        for (l, x) in vj.iter().enumerate() {
            v[(j, l)] = *x;
        }
        // the groups are disjoint because the packing radius is twice group_r
        if let Some(i) = (0..m)
            .find(|&i| packing.points[i].iter().zip(&vj).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt() <= group_r)
        {
            groups[i].push(j);
        }
    }
    if let Some(i) = groups.iter().position(|g| g.is_empty()) {
        return Err(Error::EmptyCell(format!("packing cell {i} has no aligned neuron")));
    }
    let min_size = groups.iter().map(Vec::len).min().unwrap_or(0);
    let a_count = cfg.subintervals.unwrap_or_else(|| {
        let ms = min_size as f64;
        ((ms / (2.0 * (ms * m as f64 / cfg.delta).ln())).floor() as usize).max(1)
    });
    let width = cfg.r_b / a_count as f64;
    for (i, g) in groups.iter().enumerate() {
        let mut hit = vec![false; 2 * a_count];
        for &j in g {
            let l = (((b[j] + cfg.r_b) / width).floor() as usize).min(2 * a_count - 1);
            hit[l] = true;
        }
        if let Some(l) = hit.iter().position(|h| !h) {
            let lo = -cfg.r_b + width * l as f64;
            return Err(Error::EmptyCell(format!(
                "packing cell {i}, bias subinterval {l} [{lo:.6}, {:.6}) holds no bias",
                lo + width
            )));
        }
    }
    let arcs = if k == 2 { circle_cells(&packing) } else { Vec::new() };
    let gl = GaussLegendre::new(cfg.order.max(1));
    let breaks = hhat.bias_breaks();
    let r_b = cfg.r_b;
    let bias_integral = |f: &dyn Fn(f64) -> f64, lo: f64, hi: f64| -> f64 {
        let mut pts: Vec<f64> = breaks.iter().copied().filter(|&x| x > lo && x < hi).collect();
        pts.push(lo);
        pts.push(hi);
        pts.sort_by(f64::total_cmp);
        pts.windows(2).map(|s| gl.integrate(f, s[0], s[1])).sum()
    };
    let per_group: Vec<Vec<(usize, f64)>> = groups
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            let mut sorted = g.clone();
            sorted.sort_by(|&x, &y| b[x].total_cmp(&b[y]).then(x.cmp(&y)));
            let mut out = Vec::with_capacity(sorted.len());
            for (pos, &j) in sorted.iter().enumerate() {
                // equal biases: the lowest index keeps the whole cell
                if pos > 0 && b[sorted[pos - 1]] == b[j] {
                    out.push((j, 0.0));
                    continue;
                }
                let next = sorted[pos + 1..].iter().find(|&&x| b[x] != b[j]);
                let lo = if pos == 0 { -r_b } else { 0.5 * (b[sorted[pos - 1]] + b[j]) };
                let hi = next.map_or(r_b, |&x| 0.5 * (b[j] + b[x]));
                let val = if k == 1 {
                    let p = &packing.points[i];
                    0.5 * bias_integral(&|t| hhat.density(p, t), lo, hi)
                } else {
                    let (t0, t1) = arcs[i];
                    gl.integrate(
                        |th| {
                            let dir = [th.cos(), th.sin()];
                            bias_integral(&|t| hhat.density(&dir, t), lo, hi)
                        },
                        t0,
                        t1,
                    ) / (2.0 * PI)
                };
                out.push((j, val));
            }
            out
        })
        .collect();
    let mut a = DVector::zeros(n);
    for (j, val) in per_group.into_iter().flatten() {
        a[j] = val;
    }
    Ok(RiemannFit { a, v, b: b.clone(), groups, packing, subintervals: a_count })
}
