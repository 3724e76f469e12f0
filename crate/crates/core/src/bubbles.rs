//! Bubble coverage of observed free space.
//!
//! Bubbles are discs placed inside each scan's observed region, sized to keep
//! a clearance from measured points. They stand in for sensor poses in the
//! prior mean, with their radius inflated by twice the clearance.
//!
//! Growth is a deterministic breadth-first expansion:
//!
//! 1. seed a bubble at the sensor unless one already contains it;
//! 2. queue the seed and every bubble whose disc reaches the scan's range disc;
//! 3. for each dequeued bubble, try `K` candidate centres on its boundary
//!    (angles `2πk/K`, starting at 0). A candidate is accepted when it is
//!    observed with `clearance` to spare, its own radius
//!    `min(edf − clearance, r_max_bubble)` is at least `r_min`, and it is not
//!    inside `overlap_factor·r` of any existing bubble centre;
//! 4. a bubble that yields no candidate becomes fixed.

use std::collections::VecDeque;
use std::io::{Read, Write};

use rstar::primitives::GeomWithData;
use rstar::RTree;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::prior::{best_pose_margin, PriorParams};
use crate::sensor::{fov_contains, SensorPose, SensorScan};
use crate::store::{read_f64, read_u32, read_u64, VoxelStore};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BubbleState {
    /// May still spawn children.
    Active,
    /// Produced no accepted candidate on its last expansion.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bubble<T> {
    pub center: Point2<T>,
    pub radius: T,
    pub state: BubbleState,
    /// Distance field value at the centre when the bubble was created.
    pub edf_at_creation: T,
}

impl<T: Scalar> Bubble<T> {
    /// Range at which this bubble's prior contribution equals the level set.
    #[inline]
    pub fn effective_radius(&self, params: &PriorParams<T>) -> T {
        self.radius + params.clearance + params.clearance
    }

    pub fn contains(&self, p: Point2<T>) -> bool {
        self.center.distance(p) <= self.radius
    }
}

/// What one growth pass did.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GrowthReport {
    pub seeded: Option<usize>,
    /// Every bubble created in this pass (including the seed).
    pub added: Vec<usize>,
    pub reactivated: Vec<usize>,
    /// Bubbles that were expanded this pass and ended fixed.
    pub refixed: Vec<usize>,
    pub diagnostics: Vec<String>,
}

type Entry<T> = GeomWithData<[T; 2], usize>;

/// Set of bubbles plus a spatial index over their centres.
#[derive(Debug, Clone)]
pub struct BubbleCoverage<T: Scalar> {
    bubbles: Vec<Bubble<T>>,
    index: RTree<Entry<T>>,
    max_radius: T,
    /// Poses whose seed bubble could not be placed; they keep a pose prior.
    fallback_poses: Vec<SensorPose<T>>,
}

impl<T: Scalar> Default for BubbleCoverage<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> BubbleCoverage<T> {
    pub fn new() -> Self {
        Self { bubbles: Vec::new(), index: RTree::new(), max_radius: T::zero(), fallback_poses: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.bubbles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bubbles.is_empty()
    }

    pub fn bubbles(&self) -> &[Bubble<T>] {
        &self.bubbles
    }

    pub fn fallback_poses(&self) -> &[SensorPose<T>] {
        &self.fallback_poses
    }

    pub fn max_radius(&self) -> T {
        self.max_radius
    }

    /// Adds a bubble and indexes it; returns its id.
    pub fn push(&mut self, bubble: Bubble<T>) -> usize {
        let id = self.bubbles.len();
        self.max_radius = self.max_radius.max(bubble.radius);
        self.index.insert(GeomWithData::new(bubble.center.to_array(), id));
        self.bubbles.push(bubble);
        id
    }

    /// Ids of bubbles whose centre lies within `radius` of `p`, ascending.
    pub fn ids_within(&self, p: Point2<T>, radius: T) -> Vec<usize> {
        let mut ids: Vec<usize> =
            self.index.locate_within_distance(p.to_array(), radius * radius).map(|e| e.data).collect();
        ids.sort_unstable();
        ids
    }

    /// Bubble prior at `x`: max over bubbles (and fallback poses), zero when empty.
    ///
    /// Bubbles are visited nearest first; the scan stops once no farther
    /// bubble can beat the current best or the pruning radius is exceeded.
    pub fn prior_mean(&self, x: Point2<T>, params: &PriorParams<T>) -> T {
        let mut best = best_pose_margin(x, &self.fallback_poses, params);
        if !self.bubbles.is_empty() {
            let inflate = params.clearance + params.clearance;
            let max_eff = self.max_radius + inflate;
            let limit = max_eff + params.prune_slack();
            for (e, d2) in self.index.nearest_neighbor_iter_with_distance_2(x.to_array()) {
                let d = d2.sqrt();
                if d > limit || best.is_some_and(|b| max_eff - d <= b) {
                    break;
                }
                let b = &self.bubbles[e.data];
                let r_eff = b.radius + inflate;
                if d > r_eff + params.prune_slack() {
                    continue;
                }
                let m = r_eff - d;
                best = Some(best.map_or(m, |v| v.max(m)));
            }
        }
        best.map_or(T::zero(), |m| params.value_at_margin(m))
    }

    /// Marks fixed bubbles whose disc reaches the scan's range disc as active again.
    pub fn reactivate_for_scan(&mut self, scan: &SensorScan<T>) -> Vec<usize> {
        let s = scan.pose.position;
        let ids = self.ids_within(s, scan.pose.r_max + self.max_radius);
        let mut out = Vec::new();
        for id in ids {
            let b = &mut self.bubbles[id];
            if b.state == BubbleState::Fixed && b.center.distance(s) <= scan.pose.r_max + b.radius {
                b.state = BubbleState::Active;
                out.push(id);
            }
        }
        out
    }

    fn overlaps_existing(&self, p: Point2<T>, params: &PriorParams<T>) -> bool {
        let reach = params.overlap_factor * self.max_radius;
        self.index.locate_within_distance(p.to_array(), reach * reach).any(|e| {
            let b = &self.bubbles[e.data];
            b.center.distance(p) < params.overlap_factor * b.radius
        })
    }

    /// Expands the coverage with one scan. `store` must already hold the scan's points.
    pub fn grow(&mut self, scan: &SensorScan<T>, store: &VoxelStore<T>, params: &PriorParams<T>) -> GrowthReport {
        let mut report = GrowthReport { reactivated: self.reactivate_for_scan(scan), ..GrowthReport::default() };
        let s = scan.pose.position;
        let r_max = scan.pose.r_max;

        let mut queue: VecDeque<usize> = VecDeque::new();
        let contained = self.ids_within(s, self.max_radius).into_iter().any(|id| self.bubbles[id].contains(s));
        if !contained {
            let edf = store.edf(s);
            let r = edf - params.clearance;
            if r < params.r_min {
                report.diagnostics.push(format!(
                    "no room for a seed bubble at ({}, {}): edf {} leaves radius {} < r_min; keeping pose prior",
                    s.x, s.y, edf, r
                ));
                self.fallback_poses.push(scan.pose);
            } else {
                let id = self.push(Bubble {
                    center: s,
                    radius: r.min(params.r_max_bubble),
                    state: BubbleState::Active,
                    edf_at_creation: edf,
                });
                report.seeded = Some(id);
                report.added.push(id);
                queue.push_back(id);
            }
        }
        for id in self.ids_within(s, r_max + self.max_radius) {
            let b = &self.bubbles[id];
            if Some(id) != report.seeded && b.center.distance(s) <= r_max + b.radius {
                queue.push_back(id);
            }
        }

        let k = params.boundary_samples;
        let step = (T::PI() + T::PI()) / T::lit(k as f64);
        while let Some(id) = queue.pop_front() {
            let parent = self.bubbles[id];
            let mut accepted = 0usize;
            for i in 0..k {
                let c = parent.center + Point2::from_angle(step * T::lit(i as f64)) * parent.radius;
                if !fov_contains(scan, c, params.clearance) || self.overlaps_existing(c, params) {
                    continue;
                }
                let edf = store.edf(c);
                let r = (edf - params.clearance).min(params.r_max_bubble);
                if !(r >= params.r_min) {
                    continue;
                }
                debug_assert!(edf >= r + params.clearance - T::geometric_eps() * edf.abs().max(T::one()));
                let child =
                    self.push(Bubble { center: c, radius: r, state: BubbleState::Active, edf_at_creation: edf });
                report.added.push(child);
                queue.push_back(child);
                accepted += 1;
            }
            if accepted == 0 {
                self.bubbles[id].state = BubbleState::Fixed;
                report.refixed.push(id);
            } else {
                self.bubbles[id].state = BubbleState::Active;
            }
        }
        report
    }

    /// Bubbles whose centre is now closer than `radius + clearance − slack` to a stored point.
    pub fn clearance_violations(&self, store: &VoxelStore<T>, params: &PriorParams<T>, slack: T) -> Vec<usize> {
        self.bubbles
            .iter()
            .enumerate()
            .filter(|(_, b)| store.edf(b.center) < b.radius + params.clearance - slack)
            .map(|(i, _)| i)
            .collect()
    }

    /// Structured-text export: one JSON object per bubble.
    pub fn export_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Row {
            id: usize,
            x: f64,
            y: f64,
            radius: f64,
            state: BubbleState,
        }
        let rows: Vec<Row> = self
            .bubbles
            .iter()
            .enumerate()
            .map(|(id, b)| Row {
                id,
                x: b.center.x.to_f64_lossy(),
                y: b.center.y.to_f64_lossy(),
                radius: b.radius.to_f64_lossy(),
                state: b.state,
            })
            .collect();
        Ok(serde_json::to_string_pretty(&rows)?)
    }

    /// Little-endian snapshot: `b"GPLFBUB\0"`, `u32` version, `u64` bubble count,
    /// per bubble `f64 x, f64 y, f64 radius, f64 edf_at_creation, u32 state (0 active, 1 fixed)`,
    /// then `u64` fallback count and per pose `f64 x, y, heading, fov_half_angle, r_max`.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(BUBBLE_MAGIC)?;
        w.write_all(&BUBBLE_VERSION.to_le_bytes())?;
        w.write_all(&(self.bubbles.len() as u64).to_le_bytes())?;
        for b in &self.bubbles {
            for v in [b.center.x, b.center.y, b.radius, b.edf_at_creation] {
                w.write_all(&v.to_f64_lossy().to_le_bytes())?;
            }
            let state: u32 = match b.state {
                BubbleState::Active => 0,
                BubbleState::Fixed => 1,
            };
            w.write_all(&state.to_le_bytes())?;
        }
        w.write_all(&(self.fallback_poses.len() as u64).to_le_bytes())?;
        for p in &self.fallback_poses {
            for v in [p.position.x, p.position.y, p.heading, p.fov_half_angle, p.r_max] {
                w.write_all(&v.to_f64_lossy().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BUBBLE_MAGIC {
            return Err(Error::Format("not a bubble coverage snapshot".into()));
        }
        let version = read_u32(r)?;
        if version != BUBBLE_VERSION {
            return Err(Error::Format(format!("unsupported bubble snapshot version {version}")));
        }
        let mut cov = Self::new();
        let n = read_u64(r)?;
        let mut entries = Vec::with_capacity(n as usize);
        for id in 0..n as usize {
            let center = Point2::new(T::lit(read_f64(r)?), T::lit(read_f64(r)?));
            let radius = T::lit(read_f64(r)?);
            let edf_at_creation = T::lit(read_f64(r)?);
            let state = match read_u32(r)? {
                0 => BubbleState::Active,
                1 => BubbleState::Fixed,
                s => return Err(Error::Format(format!("bad bubble state {s}"))),
            };
            cov.max_radius = cov.max_radius.max(radius);
            entries.push(GeomWithData::new(center.to_array(), id));
            cov.bubbles.push(Bubble { center, radius, state, edf_at_creation });
        }
        cov.index = RTree::bulk_load(entries);
        let m = read_u64(r)?;
        for _ in 0..m {
            let position = Point2::new(T::lit(read_f64(r)?), T::lit(read_f64(r)?));
            let (heading, fov, r_max) = (T::lit(read_f64(r)?), T::lit(read_f64(r)?), T::lit(read_f64(r)?));
            cov.fallback_poses.push(SensorPose::new(position, heading, fov, r_max)?);
        }
        Ok(cov)
    }
}

const BUBBLE_MAGIC: &[u8; 8] = b"GPLFBUB\0";
const BUBBLE_VERSION: u32 = 1;

/// Bubble prior mean at `x`.
pub fn bubble_prior_mean<T: Scalar>(x: Point2<T>, coverage: &BubbleCoverage<T>, params: &PriorParams<T>) -> T {
    coverage.prior_mean(x, params)
}

/// One deterministic growth pass; see the module docs for the rule.
pub fn grow_bubbles<T: Scalar>(
    coverage: &mut BubbleCoverage<T>,
    scan: &SensorScan<T>,
    store: &VoxelStore<T>,
    params: &PriorParams<T>,
) -> GrowthReport {
    coverage.grow(scan, store, params)
}

/// Re-queues fixed bubbles that the new scan can reach.
pub fn reactivate_for_scan<T: Scalar>(coverage: &mut BubbleCoverage<T>, scan: &SensorScan<T>) -> Vec<usize> {
    coverage.reactivate_for_scan(scan)
}
