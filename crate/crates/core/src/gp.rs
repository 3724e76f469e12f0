//! GP posterior with an arbitrary prior mean and the Matérn-1/2 kernel.
//!
//! Inputs are fixed-size arrays so the same code serves the 2D map and the
//! 1D checks used in the tests.

use crate::error::{Error, Result};
use crate::kernel::KernelParams;
use crate::linalg::{Cholesky, DenseMatrix};
use crate::Scalar;

/// Inputs closer than this are merged before solving.
pub const DUPLICATE_TOLERANCE: f64 = 1e-9;

#[inline]
pub(crate) fn euclid<T: Scalar, const D: usize>(a: &[T; D], b: &[T; D]) -> T {
    a.iter().zip(b).map(|(u, v)| (*u - *v) * (*u - *v)).sum::<T>().sqrt()
}

/// Training inputs, latent targets and the observation noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet<T, const D: usize> {
    inputs: Vec<[T; D]>,
    targets: Vec<T>,
    noise_sigma2: T,
}

impl<T: Scalar, const D: usize> TrainingSet<T, D> {
    /// Builds a set, merging inputs within [`DUPLICATE_TOLERANCE`] of an earlier one
    /// (their targets are averaged).
    pub fn new(inputs: Vec<[T; D]>, targets: Vec<T>, noise_sigma2: T) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::contract(format!("{} inputs but {} targets", inputs.len(), targets.len())));
        }
        if !(noise_sigma2 >= T::zero()) {
            return Err(Error::contract("noise variance must be >= 0"));
        }
        let tol = T::lit(DUPLICATE_TOLERANCE);
        let mut kept: Vec<[T; D]> = Vec::with_capacity(inputs.len());
        let mut sums: Vec<(T, usize)> = Vec::with_capacity(inputs.len());
        for (x, y) in inputs.into_iter().zip(targets) {
            match kept.iter().position(|k| euclid(k, &x) <= tol) {
                Some(i) => {
                    sums[i].0 = sums[i].0 + y;
                    sums[i].1 += 1;
                }
                None => {
                    kept.push(x);
                    sums.push((y, 1));
                }
            }
        }
        let targets = sums.into_iter().map(|(s, n)| s / T::lit(n as f64)).collect();
        Ok(Self { inputs: kept, targets, noise_sigma2 })
    }

    pub fn empty(noise_sigma2: T) -> Self {
        Self { inputs: Vec::new(), targets: Vec::new(), noise_sigma2 }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[[T; D]] {
        &self.inputs
    }

    pub fn targets(&self) -> &[T] {
        &self.targets
    }

    pub fn noise_sigma2(&self) -> T {
        self.noise_sigma2
    }
}

/// Posterior mean and variance of the latent field at one location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior<T> {
    pub mean: T,
    pub variance: T,
}

/// A factorized GP conditioned on a training set; reusable across queries.
#[derive(Debug, Clone)]
pub struct LocalGp<T, const D: usize> {
    inputs: Vec<[T; D]>,
    chol: Cholesky<T>,
    /// `[K + σ²I]⁻¹ (Y − m(X))`
    weights: Vec<T>,
    params: KernelParams<T>,
}

impl<T: Scalar, const D: usize> LocalGp<T, D> {
    /// Factorizes `K_XX + σ²I` and precomputes the residual weights.
    pub fn fit(train: &TrainingSet<T, D>, prior_at_inputs: &[T], params: &KernelParams<T>) -> Result<Self> {
        if prior_at_inputs.len() != train.len() {
            return Err(Error::contract("prior values do not match training inputs"));
        }
        let n = train.len();
        let xs = train.inputs();
        let k = DenseMatrix::from_fn(n, n, |i, j| {
            let v = params.kappa(euclid(&xs[i], &xs[j]));
            if i == j {
                v + train.noise_sigma2()
            } else {
                v
            }
        });
        let chol = Cholesky::factor(&k, params.jitter())?;
        let resid: Vec<T> = train.targets().iter().zip(prior_at_inputs).map(|(y, m)| *y - *m).collect();
        let weights = chol.solve(&resid);
        Ok(Self { inputs: xs.to_vec(), chol, weights, params: *params })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[[T; D]] {
        &self.inputs
    }

    /// Posterior at `query` given the prior mean evaluated there.
    pub fn predict(&self, query: &[T; D], prior_at_query: T) -> Posterior<T> {
        if self.inputs.is_empty() {
            return Posterior { mean: prior_at_query, variance: T::one() };
        }
        let kq: Vec<T> = self.inputs.iter().map(|x| self.params.kappa(euclid(x, query))).collect();
        let mean = prior_at_query + kq.iter().zip(&self.weights).map(|(a, b)| *a * *b).sum::<T>();
        let v = self.chol.solve_lower(&kq);
        let explained: T = v.iter().map(|a| *a * *a).sum();
        let variance = (T::one() - explained).max(T::zero());
        Posterior { mean, variance }
    }
}

/// Exact GP posterior at `query`.
///
/// With an empty training set this is the prior: `(prior_mean(query), 1)`.
pub fn gp_posterior<T, const D: usize, F>(
    query: &[T; D],
    train: &TrainingSet<T, D>,
    prior_mean: F,
    params: &KernelParams<T>,
) -> Result<Posterior<T>>
where
    T: Scalar,
    F: Fn(&[T; D]) -> T,
{
    let prior: Vec<T> = train.inputs().iter().map(&prior_mean).collect();
    let gp = LocalGp::fit(train, &prior, params)?;
    Ok(gp.predict(query, prior_mean(query)))
}
