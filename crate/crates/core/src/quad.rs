//! Quadrature rules: Gauss-Legendre on intervals and simple product rules on
//! low-dimensional spheres.

use std::f64::consts::PI;

/// Gauss-Legendre nodes and weights on [-1, 1].
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussLegendre { nodes, weights }
    }

    /// Integral of f over [a, b].
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> f64 {
        let h = 0.5 * (b - a);
        let c = 0.5 * (a + b);
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(c + h * x)).sum::<f64>() * h
    }
}

/// Legendre P_n and its derivative at x.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite Gauss-Legendre rule: equal panels, each with a fixed-order rule.
#[derive(Clone, Debug)]
pub struct CompositeRule {
    pub panels: usize,
    base: GaussLegendre,
}

impl CompositeRule {
    /// About `nodes` evaluation points in total using `order`-point panels.
    pub fn with_nodes(nodes: usize, order: usize) -> Self {
        let panels = (nodes / order).max(1);
        CompositeRule { panels, base: GaussLegendre::new(order) }
    }

    pub fn order(&self) -> usize {
        self.base.nodes.len()
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> f64 {
        let h = (b - a) / self.panels as f64;
        (0..self.panels)
            .map(|p| {
                let lo = a + h * p as f64;
                self.base.integrate(&f, lo, lo + h)
            })
            .sum()
    }

    /// Integral over [a, b] with panel edges forced at the given breakpoints,
    /// so piecewise-smooth integrands are handled at full order.
    pub fn integrate_with_breaks<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64, breaks: &[f64]) -> f64 {
        let mut pts: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
        pts.push(a);
        pts.push(b);
        pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
        pts.dedup();
        let total = b - a;
        pts.windows(2)
            .map(|w| {
                let len = w[1] - w[0];
                let panels = ((self.panels as f64 * len / total).ceil() as usize).max(1);
                let h = len / panels as f64;
                (0..panels)
                    .map(|p| {
                        let lo = w[0] + h * p as f64;
                        self.base.integrate(&f, lo, lo + h)
                    })
                    .sum::<f64>()
            })
            .sum()
    }
}

/// Quadrature for the uniform probability measure on the unit sphere S^{k-1}.
#[derive(Clone, Debug)]
pub struct SphereRule {
    pub k: usize,
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl SphereRule {
    /// k = 1: the two points of S^0. k = 2: `n` equispaced angles, exact for
    /// trigonometric polynomials of degree < n. k = 3: Gauss-Legendre in
    /// cos(theta) times equispaced azimuths, with about `n` points in total.
    pub fn new(k: usize, n: usize) -> Option<Self> {
        match k {
            1 => Some(SphereRule { k, points: vec![vec![1.0], vec![-1.0]], weights: vec![0.5, 0.5] }),
            2 => {
                let n = n.max(3);
                let points = (0..n)
                    .map(|i| {
                        let t = 2.0 * PI * i as f64 / n as f64;
                        vec![t.cos(), t.sin()]
                    })
                    .collect();
                Some(SphereRule { k, points, weights: vec![1.0 / n as f64; n] })
            }
            3 => {
                let nt = ((n as f64 / 2.0).sqrt().ceil() as usize).max(2);
                let np = 2 * nt;
                let gl = GaussLegendre::new(nt);
                let mut points = Vec::with_capacity(nt * np);
                let mut weights = Vec::with_capacity(nt * np);
                for (c, w) in gl.nodes.iter().zip(&gl.weights) {
                    let s = (1.0 - c * c).max(0.0).sqrt();
                    for j in 0..np {
                        let p = 2.0 * PI * j as f64 / np as f64;
                        points.push(vec![s * p.cos(), s * p.sin(), *c]);
                        weights.push(w / (2.0 * np as f64));
                    }
                }
                Some(SphereRule { k, points, weights })
            }
            _ => None,
        }
    }

    pub fn integrate<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        self.points.iter().zip(&self.weights).map(|(p, w)| w * f(p)).sum()
    }
}

/// Surface area of S^{k-1} in R^k.
pub fn sphere_area(k: usize) -> f64 {
    let kf = k as f64;
    2.0 * PI.powf(kf / 2.0) / gamma(kf / 2.0)
}

/// Gamma function for positive half-integers and integers.
pub fn gamma(x: f64) -> f64 {
    if (x - x.round()).abs() < 1e-12 {
        (1..x.round() as usize).map(|i| i as f64).product()
    } else if (x - 0.5 - (x - 0.5).round()).abs() < 1e-12 {
        let mut g = PI.sqrt();
        let mut t = 0.5;
        while t < x - 1e-9 {
            g *= t;
            t += 1.0;
        }
        g
    } else {
        panic!("gamma only implemented for integers and half-integers")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_polynomial_exactness() {
        let g = GaussLegendre::new(7);
        for p in 0..14 {
            let exact = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
            let v = g.integrate(|x| x.powi(p), -1.0, 1.0);
            assert!((v - exact).abs() < 1e-13, "degree {p}: {v}");
        }
        assert!((g.weights.iter().sum::<f64>() - 2.0).abs() < 1e-13);
    }

    #[test]
    fn large_rule_is_accurate() {
        let g = GaussLegendre::new(400);
        let v = g.integrate(f64::exp, 0.0, 1.0);
        assert!((v - (std::f64::consts::E - 1.0)).abs() < 1e-13);
    }

    #[test]
    fn breaks_handle_kinks() {
        let r = CompositeRule::with_nodes(100, 10);
        let v = r.integrate_with_breaks(|x| (x - 0.3).max(0.0), -1.0, 1.0, &[0.3]);
        assert!((v - 0.5 * 0.7 * 0.7).abs() < 1e-14);
    }

    #[test]
    fn sphere_moments() {
        for (k, n) in [(2usize, 64usize), (3, 400)] {
            let r = SphereRule::new(k, n).unwrap();
            assert!((r.integrate(|_| 1.0) - 1.0).abs() < 1e-13);
            let m2 = r.integrate(|v| v[0] * v[0]);
            assert!((m2 - 1.0 / k as f64).abs() < 1e-13);
        }
    }

    #[test]
    fn areas() {
        assert!((sphere_area(2) - 2.0 * PI).abs() < 1e-12);
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-12);
    }
}
