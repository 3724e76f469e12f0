//! Range-sensor poses and scans.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Point2};
use crate::Scalar;

/// Sensor position, heading and field-of-view limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorPose<T> {
    pub position: Point2<T>,
    /// Radians, world frame.
    pub heading: T,
    /// Half opening angle in (0, π]; π means omnidirectional.
    pub fov_half_angle: T,
    pub r_max: T,
}

impl<T: Scalar> SensorPose<T> {
    pub fn new(position: Point2<T>, heading: T, fov_half_angle: T, r_max: T) -> Result<Self> {
        let pose = Self { position, heading, fov_half_angle, r_max };
        pose.validate()?;
        Ok(pose)
    }

    pub fn omnidirectional(position: Point2<T>, r_max: T) -> Result<Self> {
        Self::new(position, T::zero(), T::PI(), r_max)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_max > T::zero()) || !self.r_max.is_finite() {
            return Err(Error::contract(format!("r_max must be > 0, got {}", self.r_max)));
        }
        if !(self.fov_half_angle > T::zero() && self.fov_half_angle <= T::PI()) {
            return Err(Error::contract(format!("fov half angle must lie in (0, pi], got {}", self.fov_half_angle)));
        }
        if !self.position.is_finite() || !self.heading.is_finite() {
            return Err(Error::contract("non-finite sensor pose"));
        }
        Ok(())
    }

    pub fn is_omnidirectional(&self) -> bool {
        self.fov_half_angle >= T::PI() - T::lit(1e-9)
    }
}

/// One sweep of a 2D range sensor.
///
/// A range equal to `pose.r_max` encodes a max-range miss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorScan<T> {
    pub pose: SensorPose<T>,
    /// Sensor-frame bearings, strictly increasing.
    pub angles: Vec<T>,
    pub ranges: Vec<T>,
    pub noise_sigma: T,
}

impl<T: Scalar> SensorScan<T> {
    pub fn new(pose: SensorPose<T>, angles: Vec<T>, ranges: Vec<T>, noise_sigma: T) -> Result<Self> {
        let scan = Self { pose, angles, ranges, noise_sigma };
        scan.validate()?;
        Ok(scan)
    }

    pub fn validate(&self) -> Result<()> {
        self.pose.validate()?;
        if self.angles.len() != self.ranges.len() {
            return Err(Error::contract(format!("{} angles but {} ranges", self.angles.len(), self.ranges.len())));
        }
        if self.angles.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::contract("scan angles must be strictly increasing"));
        }
        if let Some(r) = self.ranges.iter().find(|r| !(**r > T::zero() && **r <= self.pose.r_max)) {
            return Err(Error::contract(format!("range {r} outside (0, r_max]")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    #[inline]
    pub fn is_hit(&self, i: usize) -> bool {
        self.ranges[i] < self.pose.r_max
    }

    /// Measured range along a sensor-frame bearing, linearly interpolated
    /// between adjacent beams. `None` outside the angular field of view.
    pub fn range_at_bearing(&self, bearing: T) -> Option<T> {
        let n = self.angles.len();
        if n == 0 {
            return None;
        }
        let b = wrap_angle(bearing);
        let first = self.angles[0];
        let last = self.angles[n - 1];
        if b >= first && b <= last {
            // First beam with angle >= b.
            let hi = self.angles.partition_point(|a| *a < b);
            if hi == 0 || self.angles[hi] == b {
                return Some(self.ranges[hi]);
            }
            let lo = hi - 1;
            let t = (b - self.angles[lo]) / (self.angles[hi] - self.angles[lo]);
            return Some(self.ranges[lo] + (self.ranges[hi] - self.ranges[lo]) * t);
        }
        let two_pi = T::PI() + T::PI();
        if self.pose.is_omnidirectional() && n > 1 {
            // Wrap-around gap between the last and the first beam.
            let b = if b > last { b } else { b + two_pi };
            let t = (b - last) / (first + two_pi - last);
            return Some(self.ranges[n - 1] + (self.ranges[0] - self.ranges[n - 1]) * t);
        }
        if b.abs() <= self.pose.fov_half_angle {
            return Some(if b < first { self.ranges[0] } else { self.ranges[n - 1] });
        }
        None
    }
}

/// World-frame hit points of a scan; max-range misses are skipped.
pub fn scan_to_points<T: Scalar>(scan: &SensorScan<T>) -> Vec<Point2<T>> {
    let s = scan.pose.position;
    (0..scan.len())
        .filter(|i| scan.is_hit(*i))
        .map(|i| s + Point2::from_angle(scan.pose.heading + scan.angles[i]) * scan.ranges[i])
        .collect()
}

/// Whether `x` lies inside the observed region of `scan` with `margin` to spare.
pub fn fov_contains<T: Scalar>(scan: &SensorScan<T>, x: Point2<T>, margin: T) -> bool {
    let v = x - scan.pose.position;
    let dist = v.norm();
    if dist == T::zero() {
        let min_range = scan.ranges.iter().fold(T::infinity(), |m, r| m.min(*r));
        return margin <= min_range;
    }
    match scan.range_at_bearing(v.angle() - scan.pose.heading) {
        Some(range) => dist + margin <= range,
        None => false,
    }
}

/// Evenly spaced sensor-frame bearings covering the field of view.
///
/// Omnidirectional sensors get `n` beams over [-π, π) so no bearing repeats;
/// otherwise the beams span [-half, half] inclusive.
pub fn beam_angles<T: Scalar>(n: usize, fov_half_angle: T) -> Vec<T> {
    if n == 0 {
        return Vec::new();
    }
    if fov_half_angle >= T::PI() - T::lit(1e-9) {
        let inc = (T::PI() + T::PI()) / T::lit(n as f64);
        (0..n).map(|i| -T::PI() + inc * T::lit(i as f64)).collect()
    } else if n == 1 {
        vec![T::zero()]
    } else {
        let inc = (fov_half_angle + fov_half_angle) / T::lit((n - 1) as f64);
        (0..n).map(|i| -fov_half_angle + inc * T::lit(i as f64)).collect()
    }
}
