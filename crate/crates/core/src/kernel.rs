//! Unscaled Matérn ν = 1/2 (exponential) covariance kernel.
//!
//! The kernel is deliberately not abstracted: the prior construction in
//! [`crate::prior`] relies on the product rule `κ(a)·κ(b) = κ(a + b)`, which
//! only the exponential kernel satisfies among the stationary isotropic ones.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

/// Default diagonal jitter added to every covariance matrix.
pub const DEFAULT_JITTER: f64 = 1e-10;

/// Kernel hyper-parameters. Signal variance is fixed to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams<T> {
    lengthscale: T,
    jitter: T,
}

impl<T: Scalar> KernelParams<T> {
    pub fn new(lengthscale: T, jitter: T) -> Result<Self> {
        if !(lengthscale > T::zero()) || !lengthscale.is_finite() {
            return Err(Error::contract(format!("lengthscale must be > 0, got {lengthscale}")));
        }
        if !(jitter >= T::zero()) || !jitter.is_finite() {
            return Err(Error::contract(format!("jitter must be >= 0, got {jitter}")));
        }
        Ok(Self { lengthscale, jitter })
    }

    pub fn with_lengthscale(lengthscale: T) -> Result<Self> {
        Self::new(lengthscale, T::lit(DEFAULT_JITTER))
    }

    #[inline]
    pub fn lengthscale(&self) -> T {
        self.lengthscale
    }

    #[inline]
    pub fn jitter(&self) -> T {
        self.jitter
    }

    /// Always one; kept as an accessor so call sites read like the model.
    #[inline]
    pub fn signal_variance(&self) -> T {
        T::one()
    }

    /// `κ(d) = exp(-d / l)` without the sign check. Hot-loop variant.
    #[inline]
    pub fn kappa(&self, distance: T) -> T {
        (-distance / self.lengthscale).exp()
    }
}

/// Matérn-1/2 kernel value at `distance`.
pub fn matern_half<T: Scalar>(distance: T, params: &KernelParams<T>) -> Result<T> {
    if distance < T::zero() || distance.is_nan() {
        return Err(Error::contract(format!("kernel distance must be >= 0, got {distance}")));
    }
    Ok(params.kappa(distance))
}
