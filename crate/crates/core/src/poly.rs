//! Univariate polynomials and normalized probabilists' Hermite polynomials.

use serde::{Deserialize, Serialize};

/// Polynomial with coefficients in ascending order of degree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Poly {
    pub coeffs: Vec<f64>,
}

impl Poly {
    pub fn new(coeffs: Vec<f64>) -> Self {
        let mut p = Poly { coeffs };
        p.trim();
        p
    }

    pub fn zero() -> Self {
        Poly { coeffs: vec![] }
    }

    pub fn constant(c: f64) -> Self {
        Poly::new(vec![c])
    }

    /// The monomial z^n.
    pub fn monomial(n: usize) -> Self {
        let mut c = vec![0.0; n + 1];
        c[n] = 1.0;
        Poly { coeffs: c }
    }

    fn trim(&mut self) {
        while self.coeffs.last() == Some(&0.0) {
            self.coeffs.pop();
        }
    }

    /// Degree, with the zero polynomial reported as 0.
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeff(&self, i: usize) -> f64 {
        self.coeffs.get(i).copied().unwrap_or(0.0)
    }

    pub fn eval(&self, z: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * z + c)
    }

    pub fn derivative(&self) -> Poly {
        Poly::new(self.coeffs.iter().enumerate().skip(1).map(|(i, c)| c * i as f64).collect())
    }

    /// Antiderivative vanishing at 0.
    pub fn antiderivative(&self) -> Poly {
        let mut c = vec![0.0];
        c.extend(self.coeffs.iter().enumerate().map(|(i, a)| a / (i + 1) as f64));
        Poly::new(c)
    }

    /// The polynomial z -> p(z + s).
    pub fn shift(&self, s: f64) -> Poly {
        // Horner in polynomial arithmetic: p(z+s) = (...(c_n (z+s) + c_{n-1})(z+s) ...)
        let lin = Poly::new(vec![s, 1.0]);
        let mut acc = Poly::zero();
        for &c in self.coeffs.iter().rev() {
            acc = acc.mul(&lin).add(&Poly::constant(c));
        }
        acc
    }

    pub fn add(&self, o: &Poly) -> Poly {
        let n = self.coeffs.len().max(o.coeffs.len());
        Poly::new((0..n).map(|i| self.coeff(i) + o.coeff(i)).collect())
    }

    pub fn sub(&self, o: &Poly) -> Poly {
        self.add(&o.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Poly {
        Poly::new(self.coeffs.iter().map(|c| c * s).collect())
    }

    pub fn mul(&self, o: &Poly) -> Poly {
        if self.is_zero() || o.is_zero() {
            return Poly::zero();
        }
        let mut c = vec![0.0; self.coeffs.len() + o.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in o.coeffs.iter().enumerate() {
                c[i + j] += a * b;
            }
        }
        Poly::new(c)
    }

    /// Integral over [lo, hi].
    pub fn integrate(&self, lo: f64, hi: f64) -> f64 {
        let a = self.antiderivative();
        a.eval(hi) - a.eval(lo)
    }

    /// Normalized Hermite polynomial He_j / sqrt(j!) in monomial form.
    pub fn hermite(j: usize) -> Poly {
        let mut prev = Poly::constant(1.0);
        if j == 0 {
            return prev;
        }
        let z = Poly::monomial(1);
        let mut cur = z.clone();
        for i in 1..j {
            let next = z.mul(&cur).sub(&prev.scale(i as f64));
            prev = cur;
            cur = next;
        }
        let fact: f64 = (1..=j).map(|i| i as f64).product();
        cur.scale(1.0 / fact.sqrt())
    }
}

/// Values of the normalized Hermite polynomials He_0..He_q at z.
pub fn hermite_all(q: usize, z: f64) -> Vec<f64> {
    // Raw probabilists' recurrence, normalized at the end; stable for moderate q.
    let mut out = Vec::with_capacity(q + 1);
    let mut prev = 1.0;
    out.push(prev);
    if q == 0 {
        return out;
    }
    let mut cur = z;
    out.push(cur);
    for j in 1..q {
        let next = z * cur - j as f64 * prev;
        prev = cur;
        cur = next;
        out.push(cur);
    }
    let mut fact = 1.0;
    for (j, v) in out.iter_mut().enumerate().skip(1) {
        fact *= j as f64;
        *v /= fact.sqrt();
    }
    out
}

/// Normalized Hermite polynomial He_j(z)/sqrt(j!).
pub fn hermite_eval(j: usize, z: f64) -> f64 {
    hermite_all(j, z)[j]
}

/// Derivative of the normalized He_j, equal to sqrt(j) He_{j-1}.
pub fn hermite_deriv(j: usize, z: f64) -> f64 {
    if j == 0 {
        0.0
    } else {
        (j as f64).sqrt() * hermite_eval(j - 1, z)
    }
}
