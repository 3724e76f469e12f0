//! Field-of-view shaped prior mean.
//!
//! Every "source" (a sensor pose with its max range, or a bubble with its
//! inflated radius) contributes `γ·κ(‖x − centre‖)` with `γ = c / κ(r)`, so
//! each contribution equals the level set `c` exactly at distance `r`. The
//! prior is the maximum over sources.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::sensor::SensorPose;
use crate::Scalar;

/// Parameters shared by the pose prior, the bubble prior and bubble growth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct PriorParams<T> {
    pub level_set_c: T,
    pub lengthscale: T,
    /// Distance bubbles keep from measured points.
    pub clearance: T,
    pub r_min: T,
    pub r_max_bubble: T,
    pub boundary_samples: usize,
    pub overlap_factor: T,
    /// Contributions below this value are not evaluated.
    pub prior_floor_eps: T,
}

impl<T: Scalar> Default for PriorParams<T> {
    fn default() -> Self {
        Self {
            level_set_c: T::one(),
            lengthscale: T::lit(0.3),
            clearance: T::lit(0.2),
            r_min: T::lit(0.15),
            r_max_bubble: T::lit(2.0),
            boundary_samples: 16,
            overlap_factor: T::lit(0.7),
            prior_floor_eps: T::lit(1e-3),
        }
    }
}

impl<T: Scalar> PriorParams<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::contract(m.to_string()));
        if !(self.level_set_c > T::zero()) {
            return bad("level set c must be > 0");
        }
        if !(self.lengthscale > T::zero()) {
            return bad("lengthscale must be > 0");
        }
        if !(self.clearance > T::zero()) {
            return bad("clearance must be > 0");
        }
        if !(self.r_min > T::zero() && self.r_min < self.r_max_bubble) {
            return bad("need 0 < r_min < r_max_bubble");
        }
        if self.boundary_samples < 8 {
            return bad("boundary_samples must be >= 8");
        }
        if !(self.overlap_factor > T::zero() && self.overlap_factor < T::one()) {
            return bad("overlap_factor must lie in (0, 1)");
        }
        if !(self.prior_floor_eps > T::zero() && self.prior_floor_eps < self.level_set_c) {
            return bad("prior_floor_eps must lie in (0, c)");
        }
        Ok(())
    }

    /// Beyond `r_eff + slack` a source contributes less than `prior_floor_eps`.
    #[inline]
    pub fn prune_slack(&self) -> T {
        self.lengthscale * (self.level_set_c / self.prior_floor_eps).ln()
    }

    /// `c·exp((r_eff − d)/l)`, i.e. `γ(r_eff)·κ(d)` evaluated without overflow-prone products.
    #[inline]
    pub fn source_value(&self, r_eff: T, distance: T) -> T {
        self.level_set_c * ((r_eff - distance) / self.lengthscale).exp()
    }

    /// Maps a log-margin `r_eff − d` back to the latent value.
    #[inline]
    pub(crate) fn value_at_margin(&self, margin: T) -> T {
        self.level_set_c * (margin / self.lengthscale).exp()
    }
}

/// Prior scale `γ = c / κ(r_eff)` that makes a source hit `c` at distance `r_eff`.
pub fn gamma<T: Scalar>(r_effective: T, params: &PriorParams<T>) -> Result<T> {
    if !(r_effective >= T::zero()) {
        return Err(Error::contract(format!("effective range must be >= 0, got {r_effective}")));
    }
    Ok(params.level_set_c * (r_effective / params.lengthscale).exp())
}

/// Pose-based prior: `max_i γ_i·κ(‖x − s_i‖)`, zero without poses.
pub fn pose_prior_mean<T: Scalar>(x: Point2<T>, poses: &[SensorPose<T>], params: &PriorParams<T>) -> T {
    best_pose_margin(x, poses, params).map_or(T::zero(), |m| params.value_at_margin(m))
}

/// Largest `r_max − d` among poses within their pruning radius.
pub(crate) fn best_pose_margin<T: Scalar>(x: Point2<T>, poses: &[SensorPose<T>], params: &PriorParams<T>) -> Option<T> {
    let slack = params.prune_slack();
    let mut best: Option<T> = None;
    for pose in poses {
        let d = pose.position.distance(x);
        if d > pose.r_max + slack {
            continue;
        }
        let m = pose.r_max - d;
        best = Some(best.map_or(m, |b: T| b.max(m)));
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_params() -> PriorParams<f64> {
        PriorParams { lengthscale: 1.0, ..PriorParams::default() }
    }

    fn pose(x: f64, y: f64, r: f64) -> SensorPose<f64> {
        SensorPose::omnidirectional(Point2::new(x, y), r).unwrap()
    }

    #[test]
    fn gamma_examples() {
        let p = unit_params();
        assert!((gamma(2.0, &p).unwrap() - 7.389056).abs() < 1e-6);
        let half = PriorParams { level_set_c: 0.5, ..p };
        assert_eq!(gamma(0.0, &half).unwrap(), 0.5);
        assert!(gamma(-1.0, &p).is_err());
    }

    #[test]
    fn prior_hits_level_set_at_effective_range() {
        let p = unit_params();
        let g = gamma(2.0, &p).unwrap();
        assert!((g * (-2.0f64).exp() - 1.0).abs() < 1e-12);
        assert_eq!(p.source_value(2.0, 2.0), 1.0);
    }

    #[test]
    fn single_pose_values() {
        let p = unit_params();
        let poses = [pose(0.0, 0.0, 2.0)];
        assert!((pose_prior_mean(Point2::new(2.0, 0.0), &poses, &p) - 1.0).abs() < 1e-12);
        assert!((pose_prior_mean(Point2::new(0.0, 0.0), &poses, &p) - 2.0f64.exp()).abs() < 1e-12);
        assert_eq!(pose_prior_mean(Point2::new(0.0, 0.0), &[], &p), 0.0);
    }

    #[test]
    fn two_poses_take_the_max() {
        let p = unit_params();
        let poses = [pose(0.0, 0.0, 2.0), pose(10.0, 0.0, 2.0)];
        let q = Point2::new(1.0, 0.0);
        let direct = |s: f64| gamma(2.0, &p).unwrap() * (-(q.x - s).abs()).exp();
        let expect = direct(0.0).max(direct(10.0));
        let got = pose_prior_mean(q, &poses, &p);
        assert!((got - expect).abs() < 1e-12);
        assert!((got - pose_prior_mean(q, &poses[..1], &p)).abs() < 1e-15);
    }

    #[test]
    fn validation_rejects_bad_params() {
        assert!(PriorParams::<f64>::default().validate().is_ok());
        assert!(PriorParams { boundary_samples: 4, ..PriorParams::<f64>::default() }.validate().is_err());
        assert!(PriorParams { r_min: 3.0, ..PriorParams::<f64>::default() }.validate().is_err());
        assert!(PriorParams { overlap_factor: 1.0, ..PriorParams::<f64>::default() }.validate().is_err());
    }
}
