//! Queryable latent occupancy field.
//!
//! The field at `x` is the GP posterior whose prior mean is the bubble (or
//! pose) prior and whose training set is the neighbourhood of the voxel
//! centroid nearest to `x`, every centroid observed at the level set `c`.
//! `mean > c` is free space, anything else is unknown; level-set crossings
//! with low variance are walls, the rest are exploration frontiers.

use std::collections::HashMap;
use std::sync::Arc;

use parking_lot::RwLock;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bubbles::BubbleCoverage;
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::gp::{LocalGp, TrainingSet};
use crate::kernel::{KernelParams, DEFAULT_JITTER};
use crate::prior::{pose_prior_mean, PriorParams};
use crate::sensor::SensorPose;
use crate::store::{CellIndex, VoxelStore};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMode {
    PoseOnly,
    Bubbles,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct FieldConfig<T> {
    /// Level set, lengthscale and bubble parameters.
    pub prior: PriorParams<T>,
    pub obs_noise_sigma2: T,
    pub neighborhood_radius: T,
    pub variance_wall_threshold: T,
    pub prior_mode: PriorMode,
    pub jitter: T,
    /// Training-set cap per local GP.
    pub max_local_points: usize,
}

impl<T: Scalar> Default for FieldConfig<T> {
    fn default() -> Self {
        Self {
            prior: PriorParams::default(),
            obs_noise_sigma2: T::lit(1e-6),
            neighborhood_radius: T::one(),
            variance_wall_threshold: T::lit(0.4),
            prior_mode: PriorMode::Bubbles,
            jitter: T::lit(DEFAULT_JITTER),
            max_local_points: 64,
        }
    }
}

impl<T: Scalar> FieldConfig<T> {
    pub fn level_set_c(&self) -> T {
        self.prior.level_set_c
    }

    pub fn lengthscale(&self) -> T {
        self.prior.lengthscale
    }

    pub fn kernel(&self) -> Result<KernelParams<T>> {
        KernelParams::new(self.prior.lengthscale, self.jitter)
    }

    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        self.kernel()?;
        if !(self.obs_noise_sigma2 >= T::zero()) {
            return Err(Error::contract("observation noise must be >= 0"));
        }
        if !(self.neighborhood_radius >= T::lit(3.0) * self.prior.lengthscale) {
            return Err(Error::contract("neighborhood radius must be at least 3 lengthscales"));
        }
        if !(self.variance_wall_threshold > T::zero() && self.variance_wall_threshold < T::one()) {
            return Err(Error::contract("variance threshold must lie in (0, 1)"));
        }
        if self.max_local_points == 0 {
            return Err(Error::contract("local GP cap must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OccupancyClass {
    Free,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrossingKind {
    Wall,
    Frontier,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample<T> {
    pub mean: T,
    pub variance: T,
    pub class: OccupancyClass,
    pub crossing: CrossingKind,
}

impl<T: Scalar> FieldSample<T> {
    pub fn new(mean: T, variance: T, level_set_c: T) -> Self {
        let class = if mean > level_set_c { OccupancyClass::Free } else { OccupancyClass::Unknown };
        Self { mean, variance, class, crossing: CrossingKind::None }
    }
}

/// Wall if both sides of a crossing have variance below the threshold, else frontier.
pub fn classify_crossing<T: Scalar>(
    a: &FieldSample<T>,
    b: &FieldSample<T>,
    config: &FieldConfig<T>,
) -> Result<CrossingKind> {
    if a.class == b.class {
        return Err(Error::contract("samples do not straddle the level set"));
    }
    Ok(kind_from_variances(a.variance, b.variance, config.variance_wall_threshold))
}

#[inline]
pub(crate) fn kind_from_variances<T: Scalar>(va: T, vb: T, threshold: T) -> CrossingKind {
    if va.max(vb) < threshold {
        CrossingKind::Wall
    } else {
        CrossingKind::Frontier
    }
}

type FitMap<T> = HashMap<(CellIndex, u64), Arc<LocalGp<T, 2>>>;

/// Factorized local GPs keyed by anchor voxel and map version.
#[derive(Debug, Default)]
pub struct GpCache<T: Scalar> {
    entries: RwLock<FitMap<T>>,
}

impl<T: Scalar> GpCache<T> {
    pub fn new() -> Self {
        Self { entries: RwLock::new(HashMap::new()) }
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.entries.write().clear();
    }

    fn get_or_fit(
        &self,
        key: (CellIndex, u64),
        fit: impl FnOnce() -> Result<LocalGp<T, 2>>,
    ) -> Result<Arc<LocalGp<T, 2>>> {
        if let Some(gp) = self.entries.read().get(&key) {
            return Ok(gp.clone());
        }
        // Fitting is deterministic, so a racing duplicate insert is harmless.
        let gp = Arc::new(fit()?);
        Ok(self.entries.write().entry(key).or_insert(gp).clone())
    }
}

/// Read-only view of a map snapshot that answers field queries.
#[derive(Debug, Clone, Copy)]
pub struct LatentField<'a, T: Scalar> {
    pub store: &'a VoxelStore<T>,
    pub coverage: &'a BubbleCoverage<T>,
    /// Sensor poses, used by the pose-only prior.
    pub poses: &'a [SensorPose<T>],
    pub config: &'a FieldConfig<T>,
    cache: Option<&'a GpCache<T>>,
    version: u64,
}

impl<'a, T: Scalar> LatentField<'a, T> {
    pub fn new(
        store: &'a VoxelStore<T>,
        coverage: &'a BubbleCoverage<T>,
        poses: &'a [SensorPose<T>],
        config: &'a FieldConfig<T>,
    ) -> Self {
        Self { store, coverage, poses, config, cache: None, version: 0 }
    }

    /// Reuses factorizations from `cache`, keyed with `version`.
    pub fn with_cache(mut self, cache: &'a GpCache<T>, version: u64) -> Self {
        self.cache = Some(cache);
        self.version = version;
        self
    }

    pub fn level_set_c(&self) -> T {
        self.config.level_set_c()
    }

    pub fn prior_mean(&self, x: Point2<T>) -> T {
        match self.config.prior_mode {
            PriorMode::Bubbles => self.coverage.prior_mean(x, &self.config.prior),
            PriorMode::PoseOnly => pose_prior_mean(x, self.poses, &self.config.prior),
        }
    }

    /// `Some(prior)` when no centroid lies within the neighbourhood radius,
    /// i.e. when the query would return the prior untouched.
    pub fn prior_only(&self, x: Point2<T>) -> Option<T> {
        match self.store.nearest_centroid(x) {
            Some(n) if n.distance <= self.config.neighborhood_radius => None,
            _ => Some(self.prior_mean(x)),
        }
    }

    fn fit_local(&self, anchor: Point2<T>) -> Result<LocalGp<T, 2>> {
        let mut neighbors = self.store.radius_search(anchor, self.config.neighborhood_radius);
        neighbors.truncate(self.config.max_local_points);
        let inputs: Vec<[T; 2]> = neighbors.iter().map(|n| n.centroid.to_array()).collect();
        let prior: Vec<T> = neighbors.iter().map(|n| self.prior_mean(n.centroid)).collect();
        let targets = vec![self.level_set_c(); inputs.len()];
        let train = TrainingSet::new(inputs, targets, self.config.obs_noise_sigma2)?;
        // Centroids are distinct cells, so the set never merges and `prior` still lines up.
        debug_assert_eq!(train.len(), prior.len());
        LocalGp::fit(&train, &prior, &self.config.kernel()?)
    }

    /// Posterior mean, variance and class at `x`.
    pub fn query(&self, x: Point2<T>) -> Result<FieldSample<T>> {
        let c = self.level_set_c();
        let prior = self.prior_mean(x);
        let anchor = match self.store.nearest_centroid(x) {
            Some(n) if n.distance <= self.config.neighborhood_radius => n,
            _ => return Ok(FieldSample::new(prior, T::one(), c)),
        };
        let wrap = |e: Error| Error::Query { x: x.x.to_f64_lossy(), y: x.y.to_f64_lossy(), source: Box::new(e) };
        let post = match self.cache {
            Some(cache) => cache
                .get_or_fit((anchor.cell, self.version), || self.fit_local(anchor.centroid))
                .map_err(wrap)?
                .predict(&x.to_array(), prior),
            None => self.fit_local(anchor.centroid).map_err(wrap)?.predict(&x.to_array(), prior),
        };
        Ok(FieldSample::new(post.mean, post.variance, c))
    }

    /// Queries every point on the current rayon pool; one result slot per input.
    pub fn batch_query(&self, points: &[Point2<T>]) -> Vec<Result<FieldSample<T>>> {
        points.par_iter().map(|p| self.query(*p)).collect()
    }
}

/// Single query without a cache.
pub fn query<T: Scalar>(
    x: Point2<T>,
    store: &VoxelStore<T>,
    coverage: &BubbleCoverage<T>,
    poses: &[SensorPose<T>],
    config: &FieldConfig<T>,
) -> Result<FieldSample<T>> {
    LatentField::new(store, coverage, poses, config).query(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bubbles::{Bubble, BubbleState};

    fn sample(mean: f64, variance: f64) -> FieldSample<f64> {
        FieldSample::new(mean, variance, 1.0)
    }

    #[test]
    fn crossing_rule() {
        let cfg = FieldConfig::<f64>::default();
        assert_eq!(classify_crossing(&sample(1.2, 0.01), &sample(0.8, 0.02), &cfg).unwrap(), CrossingKind::Wall);
        assert_eq!(classify_crossing(&sample(1.2, 0.95), &sample(0.8, 0.99), &cfg).unwrap(), CrossingKind::Frontier);
        assert_eq!(classify_crossing(&sample(1.2, 0.1), &sample(0.8, 0.5), &cfg).unwrap(), CrossingKind::Frontier);
        assert!(classify_crossing(&sample(1.2, 0.0), &sample(1.1, 0.0), &cfg).is_err());
    }

    #[test]
    fn exact_level_set_is_unknown() {
        assert_eq!(sample(1.0, 0.0).class, OccupancyClass::Unknown);
        assert_eq!(sample(1.0 + 1e-12, 0.0).class, OccupancyClass::Free);
    }

    #[test]
    fn empty_map_returns_prior() {
        let cfg = FieldConfig::<f64>::default();
        let store = VoxelStore::new(0.05).unwrap();
        let mut cov = BubbleCoverage::new();
        cov.push(Bubble { center: Point2::origin(), radius: 1.0, state: BubbleState::Fixed, edf_at_creation: 1.2 });
        let s = query(Point2::new(0.5, 0.0), &store, &cov, &[], &cfg).unwrap();
        assert_eq!(s.class, OccupancyClass::Free);
        assert_eq!(s.variance, 1.0);
        assert_eq!(s.mean, cov.prior_mean(Point2::new(0.5, 0.0), &cfg.prior));
    }

    #[test]
    fn stored_centroid_is_pinned() {
        let cfg = FieldConfig::<f64>::default();
        let mut store = VoxelStore::new(0.05).unwrap();
        store.insert_points(&[Point2::new(1.5, 0.02), Point2::new(1.5, 0.07), Point2::new(1.5, 0.12)]);
        let mut cov = BubbleCoverage::new();
        cov.push(Bubble { center: Point2::origin(), radius: 1.3, state: BubbleState::Fixed, edf_at_creation: 1.5 });
        for (_, v) in store.cells_sorted() {
            let s = query(v.centroid, &store, &cov, &[], &cfg).unwrap();
            assert!((s.mean - 1.0).abs() < 1e-3, "{}", s.mean);
            assert!(s.variance <= 10.0 * cfg.obs_noise_sigma2);
        }
    }

    #[test]
    fn cached_and_uncached_agree() {
        let cfg = FieldConfig::<f64>::default();
        let mut store = VoxelStore::new(0.05).unwrap();
        let pts: Vec<_> = (0..40).map(|i| Point2::new(2.0, -1.0 + 0.05 * i as f64)).collect();
        store.insert_points(&pts);
        let mut cov = BubbleCoverage::new();
        cov.push(Bubble { center: Point2::origin(), radius: 1.8, state: BubbleState::Fixed, edf_at_creation: 2.0 });
        let cache = GpCache::new();
        let cached = LatentField::new(&store, &cov, &[], &cfg).with_cache(&cache, 1);
        let plain = LatentField::new(&store, &cov, &[], &cfg);
        for i in 0..50 {
            let q = Point2::new(1.0 + 0.04 * i as f64, 0.3);
            assert_eq!(cached.query(q).unwrap(), plain.query(q).unwrap());
        }
        assert!(!cache.is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(FieldConfig::<f64>::default().validate().is_ok());
        let bad = FieldConfig::<f64> { neighborhood_radius: 0.5, ..FieldConfig::default() };
        assert!(bad.validate().is_err());
    }
}
