//! Deterministic 2D lidar simulation over polygon worlds.

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point2, Segment};
use crate::sensor::{SensorPose, SensorScan};
use crate::Scalar;

/// One obstacle outline; `closed` adds the segment from the last vertex back to the first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub points: Vec<[f64; 2]>,
    #[serde(default)]
    pub closed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Bounds {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }
}

/// Polygon world as stored on disk (JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldFile {
    #[serde(default)]
    pub name: String,
    pub bounds: Bounds,
    pub obstacles: Vec<Obstacle>,
}

/// Obstacle geometry flattened into segments.
#[derive(Debug, Clone, PartialEq)]
pub struct World<T> {
    pub name: String,
    pub bounds: Bounds,
    pub obstacles: Vec<Obstacle>,
    segments: Vec<Segment<T>>,
}

impl<T: Scalar> World<T> {
    pub fn from_file(file: WorldFile) -> Result<Self> {
        let b = file.bounds;
        if !(b.max[0] > b.min[0] && b.max[1] > b.min[1]) {
            return Err(Error::Format("world bounds must have max > min".into()));
        }
        let mut segments = Vec::new();
        for (k, ob) in file.obstacles.iter().enumerate() {
            if ob.points.len() < 2 {
                return Err(Error::Format(format!("obstacle {k} needs at least two points")));
            }
            let pts: Vec<Point2<T>> = ob.points.iter().map(|p| Point2::new(T::lit(p[0]), T::lit(p[1]))).collect();
            let mut push = |a: Point2<T>, b: Point2<T>| {
                if !(a.is_finite() && b.is_finite()) || !(a.distance(b) > T::zero()) {
                    return Err(Error::Format(format!("obstacle {k} has a zero-length or non-finite segment")));
                }
                segments.push(Segment::new(a, b));
                Ok(())
            };
            for w in pts.windows(2) {
                push(w[0], w[1])?;
            }
            if ob.closed && pts.len() > 2 {
                push(pts[pts.len() - 1], pts[0])?;
            }
        }
        Ok(Self { name: file.name, bounds: file.bounds, obstacles: file.obstacles, segments })
    }

    pub fn to_file(&self) -> WorldFile {
        WorldFile { name: self.name.clone(), bounds: self.bounds, obstacles: self.obstacles.clone() }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn segments(&self) -> &[Segment<T>] {
        &self.segments
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Exact distance from `p` to the nearest obstacle segment.
    pub fn distance_to_surface(&self, p: Point2<T>) -> T {
        self.segments.iter().map(|s| s.distance_to(p)).fold(T::infinity(), T::min)
    }
}

/// Distance along the ray to the first obstacle, or `r_max` when nothing is hit within range.
pub fn raycast<T: Scalar>(world: &World<T>, origin: Point2<T>, world_angle: T, r_max: T) -> T {
    let dir = Point2::from_angle(world_angle);
    world.segments.iter().filter_map(|s| s.ray_hit(origin, dir)).filter(|t| *t > T::zero()).fold(r_max, T::min)
}

/// Sensor parameters shared by every pose of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorSpec {
    pub n_rays: usize,
    pub fov_half_angle: f64,
    pub r_max: f64,
    pub noise_sigma: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        Self { n_rays: 720, fov_half_angle: std::f64::consts::PI, r_max: 8.0, noise_sigma: 0.01 }
    }
}

/// First bearing and spacing of `n` beams covering the field of view.
///
/// Omnidirectional sensors get `n` beams over [-π, π); otherwise the beams span [-half, half] inclusive.
pub fn beam_layout(n: usize, fov_half_angle: f64) -> (f64, f64) {
    use std::f64::consts::PI;
    if fov_half_angle >= PI - 1e-9 {
        (-PI, 2.0 * PI / n as f64)
    } else if n <= 1 {
        (0.0, 0.0)
    } else {
        (-fov_half_angle, 2.0 * fov_half_angle / (n - 1) as f64)
    }
}

fn layout_angles<T: Scalar>(angle_min: f64, increment: f64, n: usize) -> Vec<T> {
    (0..n).map(|k| T::lit(angle_min + increment * k as f64)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation<T> {
    pub scans: Vec<SensorScan<T>>,
    /// Non-fatal problems, e.g. poses outside the world bounds.
    pub diagnostics: Vec<String>,
}

/// Scans every pose with `n_rays` beams; hit ranges get Gaussian noise from a seeded ChaCha8 stream.
///
/// Noisy ranges are clamped to `(0, r_max)` so a hit never turns into a miss; misses are exact.
pub fn simulate_trajectory<T: Scalar>(
    world: &World<T>,
    poses: &[SensorPose<T>],
    sensor: &SensorSpec,
    seed: u64,
) -> Result<Simulation<T>> {
    if sensor.n_rays < 8 {
        return Err(Error::contract(format!("need at least 8 rays, got {}", sensor.n_rays)));
    }
    if !(sensor.noise_sigma >= 0.0) || !sensor.noise_sigma.is_finite() {
        return Err(Error::contract("noise sigma must be >= 0"));
    }
    let noise = Normal::new(0.0, sensor.noise_sigma).map_err(|e| Error::contract(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (angle_min, inc) = beam_layout(sensor.n_rays, sensor.fov_half_angle);
    let mut out = Simulation { scans: Vec::with_capacity(poses.len()), diagnostics: Vec::new() };
    for (k, pose) in poses.iter().enumerate() {
        pose.validate()?;
        let p = [pose.position.x.to_f64_lossy(), pose.position.y.to_f64_lossy()];
        if !world.bounds.contains(p) {
            out.diagnostics.push(format!("pose {k} at ({:.3}, {:.3}) lies outside the world bounds", p[0], p[1]));
        }
        let angles: Vec<T> = layout_angles(angle_min, inc, sensor.n_rays);
        let r_max = pose.r_max.to_f64_lossy();
        let upper = r_max * (1.0 - 1e-12);
        let ranges = angles
            .iter()
            .map(|a| {
                let r = raycast(world, pose.position, pose.heading + *a, pose.r_max).to_f64_lossy();
                if r >= r_max || sensor.noise_sigma == 0.0 {
                    return T::lit(r.min(r_max));
                }
                let noisy = r + noise.sample(&mut rng);
                T::lit(noisy.clamp(1e-9, upper))
            })
            .collect();
        out.scans.push(SensorScan::new(*pose, angles, ranges, T::lit(sensor.noise_sigma))?);
    }
    Ok(out)
}

/// Poses spaced `step` apart along a waypoint polyline, heading along the direction of travel.
pub fn trajectory_poses<T: Scalar>(
    waypoints: &[[f64; 2]],
    step: f64,
    sensor: &SensorSpec,
) -> Result<Vec<SensorPose<T>>> {
    if !(step > 0.0) {
        return Err(Error::contract("trajectory step must be > 0"));
    }
    if waypoints.is_empty() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    let pose = |p: [f64; 2], heading: f64| {
        SensorPose::new(
            Point2::new(T::lit(p[0]), T::lit(p[1])),
            T::lit(heading),
            T::lit(sensor.fov_half_angle),
            T::lit(sensor.r_max),
        )
    };
    let mut heading = 0.0;
    for w in waypoints.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len = dx.hypot(dy);
        if len == 0.0 {
            continue;
        }
        heading = dy.atan2(dx);
        let n = (len / step).ceil() as usize;
        for k in 0..n {
            let t = k as f64 / n as f64;
            out.push(pose([a[0] + dx * t, a[1] + dy * t], heading)?);
        }
    }
    out.push(pose(waypoints[waypoints.len() - 1], heading)?);
    Ok(out)
}

/// Scan-log pose in meters and radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

/// One line of the scan log. Field order: pose, angle_min, angle_increment, r_max, fov_half_angle, ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanRecord {
    pub pose: LogPose,
    pub angle_min: f64,
    pub angle_increment: f64,
    pub r_max: f64,
    pub fov_half_angle: f64,
    pub ranges: Vec<f64>,
}

impl ScanRecord {
    /// Fails when the scan's bearings are not an evenly spaced layout.
    pub fn from_scan<T: Scalar>(scan: &SensorScan<T>) -> Result<Self> {
        let n = scan.len();
        let (angle_min, angle_increment) = match n {
            0 => (0.0, 0.0),
            1 => (scan.angles[0].to_f64_lossy(), 0.0),
            _ => {
                let a0 = scan.angles[0].to_f64_lossy();
                (a0, (scan.angles[n - 1].to_f64_lossy() - a0) / (n - 1) as f64)
            }
        };
        let expect: Vec<T> = layout_angles(angle_min, angle_increment, n);
        if expect != scan.angles {
            // Fall back to the canonical layout the simulator uses.
            let (m, i) = beam_layout(n, scan.pose.fov_half_angle.to_f64_lossy());
            if layout_angles::<T>(m, i, n) != scan.angles {
                return Err(Error::Format("scan bearings are not evenly spaced".into()));
            }
            return Self::build(scan, m, i);
        }
        Self::build(scan, angle_min, angle_increment)
    }

    fn build<T: Scalar>(scan: &SensorScan<T>, angle_min: f64, angle_increment: f64) -> Result<Self> {
        Ok(Self {
            pose: LogPose {
                x: scan.pose.position.x.to_f64_lossy(),
                y: scan.pose.position.y.to_f64_lossy(),
                theta: scan.pose.heading.to_f64_lossy(),
            },
            angle_min,
            angle_increment,
            r_max: scan.pose.r_max.to_f64_lossy(),
            fov_half_angle: scan.pose.fov_half_angle.to_f64_lossy(),
            ranges: scan.ranges.iter().map(|r| r.to_f64_lossy()).collect(),
        })
    }

    pub fn to_scan<T: Scalar>(&self, noise_sigma: T) -> Result<SensorScan<T>> {
        let pose = SensorPose::new(
            Point2::new(T::lit(self.pose.x), T::lit(self.pose.y)),
            T::lit(self.pose.theta),
            T::lit(self.fov_half_angle),
            T::lit(self.r_max),
        )
        .map_err(schema)?;
        let angles = layout_angles(self.angle_min, self.angle_increment, self.ranges.len());
        let ranges = self.ranges.iter().map(|r| T::lit(*r)).collect();
        SensorScan::new(pose, angles, ranges, noise_sigma).map_err(schema)
    }
}

fn schema(e: Error) -> Error {
    match e {
        Error::Contract(m) => Error::Format(format!("invalid scan record: {m}")),
        other => other,
    }
}

/// Writes one JSON record per line.
pub fn write_scan_log<T: Scalar>(mut w: impl Write, scans: &[SensorScan<T>]) -> Result<()> {
    for s in scans {
        serde_json::to_writer(&mut w, &ScanRecord::from_scan(s)?)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a scan log; blank lines are ignored and any malformed line is a format error.
pub fn read_scan_log<T: Scalar>(r: impl BufRead, noise_sigma: T) -> Result<Vec<SensorScan<T>>> {
    let mut out = Vec::new();
    for (k, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ScanRecord =
            serde_json::from_str(&line).map_err(|e| Error::Format(format!("scan log line {}: {e}", k + 1)))?;
        out.push(rec.to_scan(noise_sigma)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wall_world() -> World<f64> {
        World::from_json(r#"{"bounds":{"min":[-5,-5],"max":[5,5]},"obstacles":[{"points":[[2,-5],[2,5]]}]}"#).unwrap()
    }

    fn empty_world() -> World<f64> {
        World::from_json(r#"{"bounds":{"min":[-5,-5],"max":[5,5]},"obstacles":[]}"#).unwrap()
    }

    #[test]
    fn raycast_examples() {
        assert_eq!(raycast(&empty_world(), Point2::origin(), 0.3, 4.0), 4.0);
        assert_eq!(raycast(&wall_world(), Point2::origin(), 0.0, 8.0), 2.0);
        assert_eq!(raycast(&wall_world(), Point2::origin(), std::f64::consts::PI, 8.0), 8.0);
    }

    #[test]
    fn world_rejects_degenerate_segments() {
        let bad = r#"{"bounds":{"min":[0,0],"max":[1,1]},"obstacles":[{"points":[[0.5,0.5],[0.5,0.5]]}]}"#;
        assert!(World::<f64>::from_json(bad).is_err());
        assert!(World::<f64>::from_json("{not json").is_err());
    }

    #[test]
    fn world_json_round_trip() {
        let w = wall_world();
        let back = World::<f64>::from_json(&w.to_json().unwrap()).unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn noise_free_scan_matches_raycast() {
        let w = wall_world();
        let pose = SensorPose::omnidirectional(Point2::new(0.0, 0.5), 6.0).unwrap();
        let spec = SensorSpec { n_rays: 64, noise_sigma: 0.0, r_max: 6.0, ..SensorSpec::default() };
        let sim = simulate_trajectory(&w, &[pose], &spec, 1).unwrap();
        let scan = &sim.scans[0];
        for (a, r) in scan.angles.iter().zip(&scan.ranges) {
            assert_eq!(*r, raycast(&w, pose.position, *a, 6.0));
        }
    }

    #[test]
    fn seeded_runs_are_identical() {
        let w = wall_world();
        let pose = SensorPose::omnidirectional(Point2::new(0.0, 0.0), 6.0).unwrap();
        let spec = SensorSpec { n_rays: 90, r_max: 6.0, ..SensorSpec::default() };
        let a = simulate_trajectory(&w, &[pose, pose], &spec, 9).unwrap();
        let b = simulate_trajectory(&w, &[pose, pose], &spec, 9).unwrap();
        assert_eq!(a, b);
        let c = simulate_trajectory(&w, &[pose, pose], &spec, 10).unwrap();
        assert_ne!(a.scans, c.scans);
    }

    #[test]
    fn pose_outside_bounds_is_diagnosed() {
        let pose = SensorPose::omnidirectional(Point2::new(9.0, 0.0), 6.0).unwrap();
        let spec = SensorSpec { n_rays: 16, r_max: 6.0, ..SensorSpec::default() };
        let sim = simulate_trajectory(&wall_world(), &[pose], &spec, 0).unwrap();
        assert_eq!(sim.scans.len(), 1);
        assert_eq!(sim.diagnostics.len(), 1);
    }

    #[test]
    fn too_few_rays_rejected() {
        let spec = SensorSpec { n_rays: 4, ..SensorSpec::default() };
        assert!(simulate_trajectory(&wall_world(), &[], &spec, 0).is_err());
    }

    #[test]
    fn scan_log_round_trip_is_exact() {
        let w = wall_world();
        let poses = trajectory_poses::<f64>(&[[0.0, 0.0], [1.0, 1.0]], 0.3, &SensorSpec::default()).unwrap();
        let sim = simulate_trajectory(&w, &poses, &SensorSpec::default(), 3).unwrap();
        let mut buf = Vec::new();
        write_scan_log(&mut buf, &sim.scans).unwrap();
        let back = read_scan_log(buf.as_slice(), 0.01).unwrap();
        assert_eq!(back, sim.scans);
        let mut again = Vec::new();
        write_scan_log(&mut again, &back).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn narrow_fov_log_round_trip() {
        let spec = SensorSpec { n_rays: 31, fov_half_angle: 0.7, r_max: 5.0, noise_sigma: 0.0 };
        let poses = trajectory_poses::<f64>(&[[0.0, 0.0], [0.5, 0.0]], 0.25, &spec).unwrap();
        let sim = simulate_trajectory(&wall_world(), &poses, &spec, 3).unwrap();
        let mut buf = Vec::new();
        write_scan_log(&mut buf, &sim.scans).unwrap();
        assert_eq!(read_scan_log(buf.as_slice(), 0.0).unwrap(), sim.scans);
    }

    #[test]
    fn malformed_log_lines_fail() {
        assert!(read_scan_log::<f64>("{\"pose\":1}\n".as_bytes(), 0.0).is_err());
        let bad_range = r#"{"pose":{"x":0,"y":0,"theta":0},"angle_min":0,"angle_increment":0.1,"r_max":1,"fov_half_angle":1,"ranges":[2]}"#;
        assert!(matches!(read_scan_log::<f64>(bad_range.as_bytes(), 0.0), Err(Error::Format(_))));
        assert!(read_scan_log::<f64>("\n\n".as_bytes(), 0.0).unwrap().is_empty());
    }

    #[test]
    fn trajectory_spacing() {
        let poses =
            trajectory_poses::<f64>(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]], 0.25, &SensorSpec::default()).unwrap();
        assert_eq!(poses.len(), 9);
        assert_eq!(poses[4].position, Point2::new(1.0, 0.0));
        assert!((poses[5].heading - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }
}
