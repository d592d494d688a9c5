//! Symmetric tensors and polynomial functions given by tensor sums.

use crate::error::{invalid, Result};
use serde::{Deserialize, Serialize};

/// Order-s tensor over R^k stored as a flat row-major array of length k^s.
#[derive(Clone, Debug, PartialEq)]
pub struct SymTensor {
    pub dim: usize,
    pub order: usize,
    pub data: Vec<f64>,
}

impl SymTensor {
    pub fn new(dim: usize, order: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dim.pow(order as u32) {
            return Err(invalid(format!(
                "tensor of order {order} over R^{dim} needs {} entries, got {}",
                dim.pow(order as u32),
                data.len()
            )));
        }
        Ok(SymTensor { dim, order, data })
    }

    pub fn zeros(dim: usize, order: usize) -> Self {
        SymTensor { dim, order, data: vec![0.0; dim.pow(order as u32)] }
    }

    /// Scaled identity for order 2.
    pub fn identity(dim: usize, scale: f64) -> Self {
        let mut t = SymTensor::zeros(dim, 2);
        for i in 0..dim {
            t.data[i * dim + i] = scale;
        }
        t
    }

    /// Multi-index of a flat position.
    pub fn index_of(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.order];
        for p in (0..self.order).rev() {
            idx[p] = flat % self.dim;
            flat /= self.dim;
        }
        idx
    }

    pub fn flat_of(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |f, &i| f * self.dim + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.flat_of(idx)]
    }

    /// Symmetrized copy.
    pub fn symmetrize(&self) -> SymTensor {
        let mut out = SymTensor::zeros(self.dim, self.order);
        for f in 0..self.data.len() {
            let mut idx = self.index_of(f);
            idx.sort_unstable();
            let key = self.flat_of(&idx);
            out.data[key] += self.data[f];
        }
        // spread each sorted-key sum evenly over its permutations
        let mut res = SymTensor::zeros(self.dim, self.order);
        let mut counts = vec![0usize; self.data.len()];
        for f in 0..self.data.len() {
            let mut idx = self.index_of(f);
            idx.sort_unstable();
            counts[self.flat_of(&idx)] += 1;
        }
        for f in 0..self.data.len() {
            let mut idx = self.index_of(f);
            idx.sort_unstable();
            let key = self.flat_of(&idx);
            res.data[f] = out.data[key] / counts[key] as f64;
        }
        res
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let s = self.symmetrize();
        s.data.iter().zip(&self.data).all(|(a, b)| (a - b).abs() <= tol)
    }

    /// T[z, ..., z].
    pub fn contract(&self, z: &[f64]) -> f64 {
        if self.order == 0 {
            return self.data[0];
        }
        // fold last axis repeatedly
        let mut cur = self.data.clone();
        for _ in 0..self.order {
            let next: Vec<f64> = cur.chunks(self.dim).map(|c| c.iter().zip(z).map(|(a, b)| a * b).sum()).collect();
            cur = next;
        }
        cur[0]
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

#[derive(Serialize, Deserialize)]
struct PolyTensorRaw {
    arity: usize,
    tensors: Vec<Vec<f64>>,
}

/// p(z) = sum_s T^(s)[z^{(x) s}] with T^(s) symmetric of order s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolyTensorRaw", into = "PolyTensorRaw")]
pub struct PolyTensor {
    pub arity: usize,
    pub tensors: Vec<SymTensor>,
}

impl TryFrom<PolyTensorRaw> for PolyTensor {
    type Error = crate::error::Error;
    fn try_from(r: PolyTensorRaw) -> Result<Self> {
        let tensors = r
            .tensors
            .into_iter()
            .enumerate()
            .map(|(s, d)| SymTensor::new(r.arity, s, d))
            .collect::<Result<Vec<_>>>()?;
        PolyTensor::new(r.arity, tensors)
    }
}

impl From<PolyTensor> for PolyTensorRaw {
    fn from(p: PolyTensor) -> Self {
        PolyTensorRaw { arity: p.arity, tensors: p.tensors.into_iter().map(|t| t.data).collect() }
    }
}

impl PolyTensor {
    /// Tensors are indexed by order: `tensors[s]` has order s.
    pub fn new(arity: usize, tensors: Vec<SymTensor>) -> Result<Self> {
        if arity == 0 {
            return Err(invalid("polynomial arity must be positive"));
        }
        for (s, t) in tensors.iter().enumerate() {
            if t.order != s || t.dim != arity {
                return Err(invalid(format!("tensor {s} has order {} over R^{}", t.order, t.dim)));
            }
            if !t.is_symmetric(1e-12 * (1.0 + t.frobenius())) {
                return Err(invalid(format!("tensor of order {s} is not symmetric")));
            }
        }
        Ok(PolyTensor { arity, tensors })
    }

    pub fn degree(&self) -> usize {
        self.tensors.iter().rposition(|t| t.data.iter().any(|&x| x != 0.0)).unwrap_or(0)
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.tensors.iter().map(|t| t.contract(z)).sum()
    }

    /// Largest Frobenius norm among the component tensors.
    pub fn max_frobenius(&self) -> f64 {
        self.tensors.iter().map(|t| t.frobenius()).fold(0.0, f64::max)
    }
}

/// Sorted multi-indices i_1 <= ... <= i_s over {0..k-1}.
pub fn sorted_multi_indices(k: usize, s: usize) -> Vec<Vec<usize>> {
    fn rec(k: usize, s: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == s {
            out.push(cur.clone());
            return;
        }
        for i in start..k {
            cur.push(i);
            rec(k, s, i, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(k, s, 0, &mut Vec::new(), &mut out);
    out
}

/// Number of distinct orderings of a sorted multi-index.
pub fn multinomial(idx: &[usize]) -> f64 {
    let fact = |n: usize| (1..=n).map(|i| i as f64).product::<f64>();
    let mut denom = 1.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && idx[j] == idx[i] {
            j += 1;
        }
        denom *= fact(j - i);
        i = j;
    }
    fact(idx.len()) / denom
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contraction_of_identity() {
        let t = SymTensor::identity(3, 2.0);
        assert!((t.contract(&[1.0, 2.0, 3.0]) - 28.0).abs() < 1e-12);
    }

    #[test]
    fn polynomial_value() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let p = PolyTensor::new(
            2,
            vec![SymTensor::new(2, 0, vec![-s]).unwrap(), SymTensor::zeros(2, 1), SymTensor::identity(2, s)],
        )
        .unwrap();
        assert!((p.eval(&[1.0, 1.0]) - s).abs() < 1e-14);
        assert_eq!(p.degree(), 2);
    }

    #[test]
    fn asymmetric_rejected() {
        let t = SymTensor::new(2, 2, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(PolyTensor::new(2, vec![SymTensor::zeros(2, 0), SymTensor::zeros(2, 1), t]).is_err());
    }

    #[test]
    fn multi_index_counts() {
        assert_eq!(sorted_multi_indices(2, 2).len(), 3);
        assert_eq!(sorted_multi_indices(3, 3).len(), 10);
        assert_eq!(multinomial(&[0, 0, 1]), 3.0);
        assert_eq!(multinomial(&[0, 1, 2]), 6.0);
    }
}
