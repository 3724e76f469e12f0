//! Reconstruction error metrics, the log-odds grid baseline and timing statistics.

use rayon::prelude::*;
use rstar::RTree;
use serde::{Deserialize, Serialize};

use crate::contour::ContourSegment;
use crate::error::{Error, Result};
use crate::field::CrossingKind;
use crate::geometry::Point2;
use crate::sensor::SensorScan;
use crate::simulator::World;
use crate::Scalar;

/// Point-to-surface error summary in millimeters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconError {
    pub mean_abs: f64,
    pub rmse: f64,
    pub n_samples: usize,
}

/// Mean and RMS distance from each sample to the nearest obstacle segment, in millimeters.
pub fn point_to_surface_errors<T: Scalar>(samples: &[Point2<T>], world: &World<T>) -> Result<ReconError> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no reconstruction samples"));
    }
    if world.is_empty() {
        return Err(Error::EmptyInput("world has no obstacles"));
    }
    let d: Vec<f64> = samples.par_iter().map(|p| world.distance_to_surface(*p).to_f64_lossy()).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let ms = d.iter().map(|x| x * x).sum::<f64>() / n;
    Ok(ReconError { mean_abs: mean * 1e3, rmse: ms.sqrt() * 1e3, n_samples: d.len() })
}

/// Points every `spacing` or closer along each segment, endpoints included.
pub fn sample_reconstruction<T: Scalar>(segments: &[ContourSegment<T>], spacing: T) -> Result<Vec<Point2<T>>> {
    if !(spacing > T::zero()) {
        return Err(Error::contract("sample spacing must be > 0"));
    }
    let mut out = Vec::new();
    for s in segments {
        let n = (s.length() / spacing).ceil().to_usize().unwrap_or(0);
        if n == 0 {
            out.push(s.a);
            continue;
        }
        out.extend((0..=n).map(|k| s.a.lerp(s.b, T::lit(k as f64 / n as f64))));
    }
    Ok(out)
}

/// Log-odds occupancy grid parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OccGridConfig {
    pub resolution: f64,
    pub hit: f64,
    pub miss: f64,
    pub occupied_threshold: f64,
    pub free_threshold: f64,
    pub min_log_odds: f64,
    pub max_log_odds: f64,
}

impl Default for OccGridConfig {
    fn default() -> Self {
        Self {
            resolution: 0.05,
            hit: 0.85,
            miss: -0.4,
            occupied_threshold: 2.0,
            free_threshold: -2.0,
            min_log_odds: -4.0,
            max_log_odds: 4.0,
        }
    }
}

/// Dense log-odds grid with cell `(i, j)` covering `origin + [i, i+1)·res × [j, j+1)·res`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccGrid {
    pub config: OccGridConfig,
    pub origin: [f64; 2],
    pub nx: usize,
    pub ny: usize,
    pub log_odds: Vec<f64>,
}

impl OccGrid {
    pub fn new(config: OccGridConfig, min: [f64; 2], max: [f64; 2]) -> Result<Self> {
        if !(config.resolution > 0.0) || !(config.min_log_odds < 0.0 && config.max_log_odds > 0.0) {
            return Err(Error::contract("invalid occupancy grid configuration"));
        }
        if !(max[0] > min[0] && max[1] > min[1]) {
            return Err(Error::contract("occupancy grid bounds must have max > min"));
        }
        let nx = ((max[0] - min[0]) / config.resolution).ceil() as usize;
        let ny = ((max[1] - min[1]) / config.resolution).ceil() as usize;
        Ok(Self { config, origin: min, nx, ny, log_odds: vec![0.0; nx * ny] })
    }

    fn cell_of(&self, p: [f64; 2]) -> (i64, i64) {
        (
            ((p[0] - self.origin[0]) / self.config.resolution).floor() as i64,
            ((p[1] - self.origin[1]) / self.config.resolution).floor() as i64,
        )
    }

    fn in_grid(&self, c: (i64, i64)) -> bool {
        c.0 >= 0 && c.1 >= 0 && (c.0 as usize) < self.nx && (c.1 as usize) < self.ny
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.log_odds[j * self.nx + i]
    }

    fn add(&mut self, c: (i64, i64), delta: f64) {
        if self.in_grid(c) {
            let k = c.1 as usize * self.nx + c.0 as usize;
            self.log_odds[k] = (self.log_odds[k] + delta).clamp(self.config.min_log_odds, self.config.max_log_odds);
        }
    }

    /// Cells crossed by the segment `a → b` in order, ending with the cell containing `b`.
    pub fn traverse(&self, a: [f64; 2], b: [f64; 2]) -> Vec<(i64, i64)> {
        let res = self.config.resolution;
        let mut cell = self.cell_of(a);
        let end = self.cell_of(b);
        let d = [b[0] - a[0], b[1] - a[1]];
        let step = [d[0].signum() as i64, d[1].signum() as i64];
        let next_boundary = |k: usize, c: i64| {
            let edge = self.origin[k] + res * (c + if d[k] > 0.0 { 1 } else { 0 }) as f64;
            if d[k] == 0.0 {
                f64::INFINITY
            } else {
                (edge - [a[0], a[1]][k]) / d[k]
            }
        };
        let mut t_max = [next_boundary(0, cell.0), next_boundary(1, cell.1)];
        let t_delta = [
            if d[0] == 0.0 { f64::INFINITY } else { res / d[0].abs() },
            if d[1] == 0.0 { f64::INFINITY } else { res / d[1].abs() },
        ];
        let mut out = vec![cell];
        let limit = ((end.0 - cell.0).abs() + (end.1 - cell.1).abs()) as usize;
        for _ in 0..limit {
            if t_max[0] < t_max[1] {
                cell.0 += step[0];
                t_max[0] += t_delta[0];
            } else {
                cell.1 += step[1];
                t_max[1] += t_delta[1];
            }
            out.push(cell);
            if cell == end {
                break;
            }
        }
        out
    }

    /// Miss update on every cell before the beam end, hit update on the end cell of a hit.
    pub fn integrate_scan<T: Scalar>(&mut self, scan: &SensorScan<T>) {
        let s = [scan.pose.position.x.to_f64_lossy(), scan.pose.position.y.to_f64_lossy()];
        let heading = scan.pose.heading.to_f64_lossy();
        for i in 0..scan.len() {
            let a = heading + scan.angles[i].to_f64_lossy();
            let r = scan.ranges[i].to_f64_lossy();
            let e = [s[0] + r * a.cos(), s[1] + r * a.sin()];
            let cells = self.traverse(s, e);
            let (last, before) = cells.split_last().expect("traversal is never empty");
            for c in before {
                self.add(*c, self.config.miss);
            }
            if scan.is_hit(i) {
                self.add(*last, self.config.hit);
            } else {
                self.add(*last, self.config.miss);
            }
        }
    }

    pub fn cell_centre(&self, i: usize, j: usize) -> [f64; 2] {
        let r = self.config.resolution;
        [self.origin[0] + (i as f64 + 0.5) * r, self.origin[1] + (j as f64 + 0.5) * r]
    }

    /// Centres of cells above the occupied threshold, row-major.
    pub fn occupied_points(&self) -> Vec<[f64; 2]> {
        let mut out = Vec::new();
        for j in 0..self.ny {
            for i in 0..self.nx {
                if self.get(i, j) > self.config.occupied_threshold {
                    out.push(self.cell_centre(i, j));
                }
            }
        }
        out
    }
}

/// Runs every scan through a fresh grid over `[min, max]`.
pub fn baseline_occupancy_grid<T: Scalar>(
    scans: &[SensorScan<T>],
    config: OccGridConfig,
    min: [f64; 2],
    max: [f64; 2],
) -> Result<(OccGrid, Vec<[f64; 2]>)> {
    let mut grid = OccGrid::new(config, min, max)?;
    for s in scans {
        grid.integrate_scan(s);
    }
    let pts = grid.occupied_points();
    Ok((grid, pts))
}

/// Mean, median, 95th percentile and range of a sample; all `None` when empty.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub count: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub p95: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl Stats {
    pub fn from_samples(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let pick = |q: f64| v[((q * (v.len() - 1) as f64).round() as usize).min(v.len() - 1)];
        Self {
            count: v.len(),
            mean: Some(v.iter().sum::<f64>() / v.len() as f64),
            median: Some(pick(0.5)),
            p95: Some(pick(0.95)),
            min: v.first().copied(),
            max: v.last().copied(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub per_scan_update_ms: Stats,
    pub per_query_us: Stats,
    pub reconstruction_s: Option<f64>,
}

/// Builds the timing section from raw measurements.
pub fn timing_report(scan_update_ms: &[f64], query_us: &[f64], reconstruction_s: Option<f64>) -> TimingReport {
    TimingReport {
        per_scan_update_ms: Stats::from_samples(scan_update_ms),
        per_query_us: Stats::from_samples(query_us),
        reconstruction_s,
    }
}

/// How crossings split between walls and frontiers near and far from evidence.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscriminationReport {
    /// Crossings within `near_wall` of the true geometry.
    pub near_wall: usize,
    pub near_wall_as_wall: usize,
    /// Crossings farther than `far_from_points` from every measured point.
    pub far: usize,
    pub far_as_frontier: usize,
}

impl DiscriminationReport {
    pub fn wall_fraction(&self) -> Option<f64> {
        (self.near_wall > 0).then(|| self.near_wall_as_wall as f64 / self.near_wall as f64)
    }

    pub fn frontier_fraction(&self) -> Option<f64> {
        (self.far > 0).then(|| self.far_as_frontier as f64 / self.far as f64)
    }
}

/// Classifies every segment endpoint by its distance to the world and to the raw measurements.
pub fn discrimination<T: Scalar>(
    segments: &[ContourSegment<T>],
    world: &World<T>,
    measured: &[Point2<T>],
    near_wall: T,
    far_from_points: T,
) -> DiscriminationReport {
    let tree = RTree::bulk_load(measured.iter().map(|p| p.to_array()).collect());
    let crossings: Vec<(Point2<T>, CrossingKind)> =
        segments.iter().flat_map(|s| [(s.a, s.kind), (s.b, s.kind)]).collect();
    let tags: Vec<(bool, bool)> = crossings
        .par_iter()
        .map(|(p, _)| {
            let near = world.distance_to_surface(*p) <= near_wall;
            let far = tree
                .nearest_neighbor(p.to_array())
                .is_none_or(|q| Point2::from_array(*q).distance(*p) > far_from_points);
            (near, far)
        })
        .collect();
    let mut r = DiscriminationReport::default();
    for ((_, kind), (near, far)) in crossings.iter().zip(tags) {
        if near {
            r.near_wall += 1;
            r.near_wall_as_wall += (*kind == CrossingKind::Wall) as usize;
        }
        if far {
            r.far += 1;
            r.far_as_frontier += (*kind == CrossingKind::Frontier) as usize;
        }
    }
    r
}

/// One row of the accuracy table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    pub mean_mm: f64,
    pub rmse_mm: f64,
    pub n_samples: usize,
}

impl MethodRow {
    pub fn new(method: &str, e: ReconError) -> Self {
        Self { method: method.to_string(), mean_mm: e.mean_abs, rmse_mm: e.rmse, n_samples: e.n_samples }
    }
}

pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// Contents of the metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metrics {
    pub schema_version: u32,
    pub environment: String,
    pub rows: Vec<MethodRow>,
    pub wall_segments: usize,
    pub frontier_segments: usize,
    pub bubbles: usize,
    pub discrimination: DiscriminationReport,
    pub timing: TimingReport,
    /// Echo of the run configuration.
    pub params: serde_json::Value,
}

impl Metrics {
    pub fn row(&self, method: &str) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// JSON with the timing section removed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Result<serde_json::Value> {
        let mut v = serde_json::to_value(self)?;
        if let Some(obj) = v.as_object_mut() {
            obj.remove("timing");
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::SensorPose;

    fn wall_world() -> World<f64> {
        World::from_json(r#"{"bounds":{"min":[-5,-5],"max":[5,5]},"obstacles":[{"points":[[2,-5],[2,5]]}]}"#).unwrap()
    }

    #[test]
    fn single_offset_sample() {
        let w = wall_world();
        let e = point_to_surface_errors(&[Point2::new(2.005, 0.0)], &w).unwrap();
        assert!((e.mean_abs - 5.0).abs() < 1e-9 && (e.rmse - 5.0).abs() < 1e-9);
        let on = point_to_surface_errors(&[Point2::new(2.0, 1.0)], &w).unwrap();
        assert_eq!(on.mean_abs, 0.0);
        assert!(point_to_surface_errors::<f64>(&[], &w).is_err());
    }

    #[test]
    fn sampling_counts() {
        let seg = |len: f64| ContourSegment {
            a: Point2::new(0.0, 0.0),
            b: Point2::new(len, 0.0),
            var_a: 0.0,
            var_b: 0.0,
            kind: CrossingKind::Wall,
        };
        assert_eq!(sample_reconstruction(&[seg(1.0)], 0.5).unwrap().len(), 3);
        assert!(sample_reconstruction::<f64>(&[], 0.5).unwrap().is_empty());
        let segs = [seg(0.3), seg(1.01), seg(0.07)];
        let expect: usize = segs.iter().map(|s| (s.length() / 0.1f64).ceil() as usize + 1).sum();
        assert_eq!(sample_reconstruction(&segs, 0.1).unwrap().len(), expect);
        assert!(sample_reconstruction(&segs, 0.0).is_err());
    }

    fn beam(range: f64, r_max: f64) -> SensorScan<f64> {
        let pose = SensorPose::new(Point2::new(0.025, 0.025), 0.0, 0.1, r_max).unwrap();
        SensorScan::new(pose, vec![0.0], vec![range], 0.0).unwrap()
    }

    #[test]
    fn one_beam_marks_one_cell() {
        let mut g = OccGrid::new(OccGridConfig::default(), [0.0, -1.0], [3.0, 1.0]).unwrap();
        for _ in 0..5 {
            g.integrate_scan(&beam(1.0, 2.5));
        }
        let occ = g.occupied_points();
        assert_eq!(occ.len(), 1);
        assert!((occ[0][0] - 1.025).abs() < 1e-9);
    }

    #[test]
    fn free_ray_cells_go_below_free_threshold() {
        let mut g = OccGrid::new(OccGridConfig::default(), [0.0, -1.0], [3.0, 1.0]).unwrap();
        for _ in 0..6 {
            g.integrate_scan(&beam(2.0, 2.0));
        }
        let cells = g.traverse([0.025, 0.025], [2.025, 0.025]);
        assert_eq!(cells.len(), 41);
        for (i, j) in cells {
            assert!(g.get(i as usize, j as usize) < g.config.free_threshold);
        }
        assert!(g.occupied_points().is_empty());
    }

    #[test]
    fn traversal_is_connected() {
        let g = OccGrid::new(OccGridConfig::default(), [-2.0, -2.0], [2.0, 2.0]).unwrap();
        let cells = g.traverse([0.013, -0.31], [1.37, 0.92]);
        for w in cells.windows(2) {
            assert_eq!((w[0].0 - w[1].0).abs() + (w[0].1 - w[1].1).abs(), 1);
        }
        assert_eq!(*cells.last().unwrap(), g.cell_of([1.37, 0.92]));
    }

    #[test]
    fn stats_behaviour() {
        assert_eq!(Stats::from_samples(&[]), Stats::default());
        let s = Stats::from_samples(&[3.0, 1.0, 2.0, 10.0]);
        assert!(s.min.unwrap() <= s.mean.unwrap() && s.mean.unwrap() <= s.max.unwrap());
        assert_eq!(s.count, 4);
        assert_eq!(timing_report(&[], &[], None).per_scan_update_ms.count, 0);
    }

    #[test]
    fn discrimination_counts() {
        let w = wall_world();
        let seg = |x: f64, kind| ContourSegment {
            a: Point2::new(x, 0.0),
            b: Point2::new(x, 0.1),
            var_a: 0.0,
            var_b: 0.0,
            kind,
        };
        let segs = [seg(2.01, CrossingKind::Wall), seg(-3.0, CrossingKind::Frontier), seg(-3.0, CrossingKind::Wall)];
        let r = discrimination(&segs, &w, &[Point2::new(2.0, 0.0)], 0.1, 0.9);
        assert_eq!((r.near_wall, r.near_wall_as_wall), (2, 2));
        assert_eq!((r.far, r.far_as_frontier), (4, 2));
        assert_eq!(r.frontier_fraction(), Some(0.5));
    }
}
