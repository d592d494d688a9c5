//! Gaussian multi-index tasks: y = g(U x) + noise with x ~ N(0, I_d).

use crate::error::{invalid, shape, Result};
use crate::linalg;
use crate::poly::hermite_all;
pub use crate::poly::hermite_eval;
use crate::rng;
use crate::tensor::PolyTensor;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Link function g: R^k -> R.
///
/// The scalar kinds act on a single index (k = 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinkFunction {
    Identity,
    Relu,
    Tanh,
    /// Normalized second Hermite polynomial (z^2 - 1)/sqrt(2).
    He2,
    Polynomial(PolyTensor),
    /// sum_j c_j He_j(z) with normalized Hermite polynomials.
    HermiteSeries {
        coeffs: Vec<f64>,
    },
}

impl LinkFunction {
    /// Number of inputs, or None for the scalar kinds (arity 1).
    pub fn arity(&self) -> usize {
        match self {
            LinkFunction::Polynomial(p) => p.arity,
            _ => 1,
        }
    }

    /// Evaluate without an arity check; `z` must have `arity()` entries.
    pub fn eval_unchecked(&self, z: &[f64]) -> f64 {
        match self {
            LinkFunction::Identity => z[0],
            LinkFunction::Relu => z[0].max(0.0),
            LinkFunction::Tanh => z[0].tanh(),
            LinkFunction::He2 => hermite_eval(2, z[0]),
            LinkFunction::Polynomial(p) => p.eval(z),
            LinkFunction::HermiteSeries { coeffs } => {
                if coeffs.is_empty() {
                    return 0.0;
                }
                hermite_all(coeffs.len() - 1, z[0]).iter().zip(coeffs).map(|(h, c)| h * c).sum()
            }
        }
    }
}

/// Evaluate g at z; errors if z has the wrong dimension.
pub fn link_eval(link: &LinkFunction, z: &[f64]) -> Result<f64> {
    if z.len() != link.arity() {
        return Err(shape(format!("link expects {} inputs, got {}", link.arity(), z.len())));
    }
    Ok(link.eval_unchecked(z))
}

#[derive(Serialize, Deserialize)]
struct TaskRaw {
    d: usize,
    k: usize,
    #[serde(rename = "U")]
    u: Vec<Vec<f64>>,
    link: LinkFunction,
    #[serde(default)]
    noise_std: f64,
}

/// A multi-index regression task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TaskRaw", into = "TaskRaw")]
pub struct MultiIndexTask {
    pub d: usize,
    pub k: usize,
    /// k x d with orthonormal rows.
    pub u: DMatrix<f64>,
    pub link: LinkFunction,
    pub noise_std: f64,
}

impl TryFrom<TaskRaw> for MultiIndexTask {
    type Error = crate::error::Error;
    fn try_from(r: TaskRaw) -> Result<Self> {
        let u = linalg::from_rows(&r.u)?;
        if u.nrows() != r.k || u.ncols() != r.d {
            return Err(shape(format!("U is {}x{}, expected {}x{}", u.nrows(), u.ncols(), r.k, r.d)));
        }
        MultiIndexTask::new(u, r.link, r.noise_std)
    }
}

impl From<MultiIndexTask> for TaskRaw {
    fn from(t: MultiIndexTask) -> Self {
        TaskRaw { d: t.d, k: t.k, u: linalg::to_rows(&t.u), link: t.link, noise_std: t.noise_std }
    }
}

impl MultiIndexTask {
    pub fn new(u: DMatrix<f64>, link: LinkFunction, noise_std: f64) -> Result<Self> {
        let (k, d) = u.shape();
        if k == 0 || k > d {
            return Err(invalid(format!("need 1 <= k <= d, got k={k}, d={d}")));
        }
        let err = linalg::orthonormality_error(&u);
        if err > 1e-10 {
            return Err(invalid(format!("U rows are not orthonormal (error {err:.2e})")));
        }
        if link.arity() != k {
            return Err(invalid(format!("link has arity {}, but k = {k}", link.arity())));
        }
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(invalid("noise_std must be finite and nonnegative"));
        }
        Ok(MultiIndexTask { d, k, u, link, noise_std })
    }

    /// Single-index task along a unit vector.
    pub fn single_index(u: &[f64], link: LinkFunction, noise_std: f64) -> Result<Self> {
        let n = linalg::norm2(u);
        let u = DMatrix::from_row_slice(1, u.len(), u) / n;
        MultiIndexTask::new(u, link, noise_std)
    }

    /// Noiseless target g(U x).
    pub fn target(&self, x: &[f64]) -> f64 {
        let z: Vec<f64> = (0..self.k).map(|i| self.u.row(i).iter().zip(x).map(|(a, b)| a * b).sum()).collect();
        self.link.eval_unchecked(&z)
    }
}

/// Samples with rows x_i and labels y_i.
#[derive(Clone, Debug)]
pub struct Dataset {
    /// n x d inputs.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Rows `idx` as a new dataset.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        let d = self.dim();
        Dataset {
            x: DMatrix::from_fn(idx.len(), d, |i, j| self.x[(idx[i], j)]),
            y: DVector::from_fn(idx.len(), |i, _| self.y[idx[i]]),
            seed: self.seed,
        }
    }
}

/// n x d matrix of i.i.d. N(0,1) entries. Row i comes from its own stream.
pub fn sample_gaussian_inputs(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
    let rows: Vec<Vec<f64>> =
        (0..n).into_par_iter().map(|i| rng::gaussian_vec(&mut rng::stream(seed, "inputs", i as u64), d)).collect();
    DMatrix::from_fn(n, d, |i, j| rows[i][j])
}

/// n samples from the task.
pub fn gen_dataset(task: &MultiIndexTask, n: usize, seed: u64) -> Dataset {
    let x = sample_gaussian_inputs(n, task.d, seed);
    let z = &x * task.u.transpose();
    let y: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let zi: Vec<f64> = z.row(i).iter().copied().collect();
            let mut v = task.link.eval_unchecked(&zi);
            if task.noise_std > 0.0 {
                v += task.noise_std * rng::gaussian(&mut rng::stream(seed, "noise", i as u64));
            }
            v
        })
        .collect();
    Dataset { x, y: DVector::from_vec(y), seed }
}

/// Like `gen_dataset` but returns an error for n = 0.
pub fn try_gen_dataset(task: &MultiIndexTask, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(crate::Error::EmptyData);
    }
    Ok(gen_dataset(task, n, seed))
}
