//! Constructive approximation: dual weights, the Riemann-sum second layer and
//! the conditional-expectation projection.

mod dual;
mod projection;
mod riemann;

pub use dual::*;
pub use projection::*;
pub use riemann::*;

/// A dual weight function hhat(v, b) on S^{k-1} x [-r_b, r_b].
#[derive(Clone, Debug, PartialEq)]
pub enum DualWeightFn {
    ReluUnivariate(ReluDual),
    PolyUnivariate(PolyDual),
    /// Bias-free: the density ignores b.
    MonomialTensor(MonomialDual),
    TensorRelu(TensorReluDual),
    LipschitzSphere(LipschitzDual),
}

impl DualWeightFn {
    pub fn arity(&self) -> usize {
        match self {
            DualWeightFn::ReluUnivariate(_) | DualWeightFn::PolyUnivariate(_) => 1,
            DualWeightFn::MonomialTensor(m) => m.k,
            DualWeightFn::TensorRelu(t) => t.k,
            DualWeightFn::LipschitzSphere(l) => l.k,
        }
    }

    /// hhat(v, b) with respect to dtau_k(v) db.
    pub fn density(&self, v: &[f64], b: f64) -> f64 {
        match self {
            DualWeightFn::ReluUnivariate(r) => r.eval(v[0], b),
            DualWeightFn::PolyUnivariate(p) => {
                if v[0] > 0.0 {
                    2.0 * p.eval(b)
                } else {
                    0.0
                }
            }
            DualWeightFn::MonomialTensor(m) => m.eval(v),
            DualWeightFn::TensorRelu(t) => t.eval(v, b),
            DualWeightFn::LipschitzSphere(l) => l.eval(v, b),
        }
    }

    /// Recorded bound on sup |hhat|.
    pub fn sup_bound(&self) -> f64 {
        match self {
            DualWeightFn::ReluUnivariate(r) => r.sup_bound(),
            DualWeightFn::PolyUnivariate(p) => 2.0 * p.sup_bound(),
            DualWeightFn::MonomialTensor(m) => m.sup_bound(),
            DualWeightFn::TensorRelu(t) => t.sup_bound(),
            DualWeightFn::LipschitzSphere(l) => l.sup_bound(),
        }
    }

    /// Bias values where the density jumps.
    pub fn bias_breaks(&self) -> Vec<f64> {
        match self {
            DualWeightFn::PolyUnivariate(p) => p.breaks(),
            DualWeightFn::LipschitzSphere(l) => l.biases.clone(),
            _ => Vec::new(),
        }
    }

    pub fn uses_bias(&self) -> bool {
        !matches!(self, DualWeightFn::MonomialTensor(_))
    }
}
