//! End-to-end stages: simulate, map, reconstruct, evaluate.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::contour::{extract_contour, filter_surface, write_contour_csv, ContourSegment, FieldAccess, GridSpec};
use crate::error::{Error, Result};
use crate::eval::{
    baseline_occupancy_grid, discrimination, point_to_surface_errors, sample_reconstruction, timing_report, MethodRow,
    Metrics, Stats, METRICS_SCHEMA_VERSION,
};
use crate::field::OccupancyClass;
use crate::geometry::Point2;
use crate::map::OccupancyMap;
use crate::raster::{write_matrix_csv, write_pgm};
use crate::sensor::{scan_to_points, SensorScan};
use crate::simulator::{read_scan_log, simulate_trajectory, trajectory_poses, write_scan_log, Simulation, World};

pub const SCAN_LOG: &str = "scans.jsonl";
pub const SNAPSHOT: &str = "map.bin";
pub const MAP_TIMING: &str = "map_timing.json";
pub const CONTOUR: &str = "contour.csv";
pub const METRICS: &str = "metrics.json";
pub const BUBBLES: &str = "bubbles.json";

/// Runs `f` on a rayon pool capped at `threads` workers (global pool when `None`).
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::contract(format!("cannot build thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

pub fn load_world(path: &Path) -> Result<World<f64>> {
    World::load(path).map_err(|e| match e {
        Error::Io(io) => Error::Format(format!("cannot read world {}: {io}", path.display())),
        Error::Json(j) => Error::Format(format!("malformed world {}: {j}", path.display())),
        other => other,
    })
}

pub fn simulate(cfg: &RunConfig, world: &World<f64>) -> Result<Simulation<f64>> {
    let poses = trajectory_poses(&cfg.trajectory.waypoints, cfg.trajectory.step, &cfg.sensor)?;
    simulate_trajectory(world, &poses, &cfg.sensor, cfg.seed)
}

pub fn read_scans(path: &Path, cfg: &RunConfig) -> Result<Vec<SensorScan<f64>>> {
    let file = File::open(path).map_err(|e| Error::Format(format!("cannot read scan log {}: {e}", path.display())))?;
    read_scan_log(BufReader::new(file), cfg.sensor.noise_sigma)
}

/// Map built from a scan stream, with per-scan wall-clock update times.
pub struct MapRun {
    pub map: OccupancyMap<f64>,
    pub scan_update_ms: Vec<f64>,
    pub diagnostics: Vec<String>,
}

pub fn new_map(cfg: &RunConfig) -> Result<OccupancyMap<f64>> {
    OccupancyMap::new(cfg.field, cfg.map.voxel_resolution)
}

/// Ingests `scans` into `map` (pass a fresh map for a batch run).
pub fn ingest_all(mut map: OccupancyMap<f64>, scans: &[SensorScan<f64>]) -> Result<MapRun> {
    let mut scan_update_ms = Vec::with_capacity(scans.len());
    let mut diagnostics = Vec::new();
    for s in scans {
        let t = Instant::now();
        let report = map.ingest(s)?;
        scan_update_ms.push(t.elapsed().as_secs_f64() * 1e3);
        if let Some(g) = report.growth {
            diagnostics.extend(g.diagnostics);
        }
    }
    Ok(MapRun { map, scan_update_ms, diagnostics })
}

/// Grid over the world bounds padded by the configured margin.
pub fn grid_for(cfg: &RunConfig, world: &World<f64>) -> Result<GridSpec<f64>> {
    let m = cfg.grid.margin;
    let b = world.bounds;
    GridSpec::new(Point2::new(b.min[0] - m, b.min[1] - m), Point2::new(b.max[0] + m, b.max[1] + m), cfg.grid.h)
}

pub struct Reconstruction {
    pub grid: GridSpec<f64>,
    pub segments: Vec<ContourSegment<f64>>,
    pub seconds: f64,
}

pub fn reconstruct(cfg: &RunConfig, map: &OccupancyMap<f64>, grid: &GridSpec<f64>) -> Result<Reconstruction> {
    let field = map.field();
    let t = Instant::now();
    let segments = extract_contour(grid, &field, &cfg.contour_options())?;
    Ok(Reconstruction { grid: *grid, segments, seconds: t.elapsed().as_secs_f64() })
}

/// Full-grid mean, variance and class samples plus the amortized per-query time of each row, in µs.
pub struct Rasters {
    pub nx: usize,
    pub ny: usize,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub class: Vec<f64>,
    pub row_query_us: Vec<f64>,
}

pub fn sample_rasters(field: &(impl FieldAccess<f64> + ?Sized), grid: &GridSpec<f64>) -> Result<Rasters> {
    use rayon::prelude::*;
    let (nx, ny) = grid.dims();
    let c = field.level_set_c();
    let mut r = Rasters { nx, ny, mean: Vec::new(), variance: Vec::new(), class: Vec::new(), row_query_us: Vec::new() };
    for j in 0..ny {
        let t = Instant::now();
        let row: Vec<Result<(f64, f64)>> = (0..nx).into_par_iter().map(|i| field.sample(grid.node(i, j))).collect();
        r.row_query_us.push(t.elapsed().as_secs_f64() * 1e6 / nx as f64);
        for s in row {
            let (m, v) = s?;
            r.mean.push(m);
            r.variance.push(v);
            let free = crate::field::FieldSample::new(m, v, c).class == OccupancyClass::Free;
            r.class.push(if free { 1.0 } else { 0.0 });
        }
    }
    Ok(r)
}

pub fn write_rasters(dir: &Path, r: &Rasters, level_set_c: f64) -> Result<()> {
    // Mean is shown on [0, 2c] so the level set sits at mid-grey.
    write_pgm(&dir.join("mean.pgm"), r.nx, r.ny, &r.mean, 0.0, 2.0 * level_set_c)?;
    write_pgm(&dir.join("variance.pgm"), r.nx, r.ny, &r.variance, 0.0, 1.0)?;
    write_pgm(&dir.join("class.pgm"), r.nx, r.ny, &r.class, 0.0, 1.0)?;
    write_matrix_csv(BufWriter::new(File::create(dir.join("mean.csv"))?), r.nx, r.ny, &r.mean)?;
    write_matrix_csv(BufWriter::new(File::create(dir.join("variance.csv"))?), r.nx, r.ny, &r.variance)?;
    Ok(())
}

/// Per-scan timing written next to the snapshot.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MapTiming {
    pub scans: usize,
    pub per_scan_update_ms: Stats,
    pub bubbles: usize,
    pub voxels: usize,
    pub diagnostics: Vec<String>,
}

/// Accuracy rows, discrimination and timing for a finished run.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    cfg: &RunConfig,
    world: &World<f64>,
    segments: &[ContourSegment<f64>],
    scans: &[SensorScan<f64>],
    bubbles: usize,
    scan_update_ms: &[f64],
    query_us: &[f64],
    reconstruction_s: Option<f64>,
) -> Result<Metrics> {
    let part = filter_surface(segments, &cfg.field);
    let mut rows = Vec::new();
    if !part.walls.is_empty() {
        let samples = sample_reconstruction(&part.walls, cfg.eval.sample_spacing)?;
        rows.push(MethodRow::new("ours", point_to_surface_errors(&samples, world)?));
    }
    let raw: Vec<Point2<f64>> = scans.iter().flat_map(scan_to_points).collect();
    if !raw.is_empty() {
        rows.push(MethodRow::new("raw_data", point_to_surface_errors(&raw, world)?));
    }
    let m = cfg.grid.margin;
    let b = world.bounds;
    let (_, occ) = baseline_occupancy_grid(
        scans,
        cfg.eval.occupancy_grid,
        [b.min[0] - m, b.min[1] - m],
        [b.max[0] + m, b.max[1] + m],
    )?;
    if !occ.is_empty() {
        let pts: Vec<Point2<f64>> = occ.iter().map(|p| Point2::from_array(*p)).collect();
        rows.push(MethodRow::new("occupancy_grid", point_to_surface_errors(&pts, world)?));
    }
    let disc = discrimination(
        segments,
        world,
        &raw,
        cfg.eval.near_wall_voxels * cfg.map.voxel_resolution,
        cfg.eval.far_lengthscales * cfg.field.lengthscale(),
    );
    Ok(Metrics {
        schema_version: METRICS_SCHEMA_VERSION,
        environment: cfg.environment.clone(),
        rows,
        wall_segments: part.walls.len(),
        frontier_segments: part.frontiers.len(),
        bubbles,
        discrimination: disc,
        timing: timing_report(scan_update_ms, query_us, reconstruction_s),
        params: cfg.echo()?,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Simulates the configured trajectory and writes the scan log.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<Simulation<f64>> {
    let world = load_world(&cfg.world)?;
    let sim = simulate(cfg, &world)?;
    write_scan_log(create(out)?, &sim.scans)?;
    Ok(sim)
}

/// Builds the map from a scan log, writing the snapshot, timing and bubble export into `out_dir`.
pub fn cmd_map(cfg: &RunConfig, scans_path: &Path, out_dir: &Path) -> Result<MapRun> {
    let scans = read_scans(scans_path, cfg)?;
    let run = with_threads(cfg.threads, || ingest_all(new_map(cfg)?, &scans))??;
    write_map_outputs(&run, out_dir)?;
    Ok(run)
}

pub fn write_map_outputs(run: &MapRun, out_dir: &Path) -> Result<()> {
    let mut w = create(&out_dir.join(SNAPSHOT))?;
    run.map.write_snapshot(&mut w)?;
    w.flush()?;
    let timing = MapTiming {
        scans: run.scan_update_ms.len(),
        per_scan_update_ms: Stats::from_samples(&run.scan_update_ms),
        bubbles: run.map.coverage().len(),
        voxels: run.map.store().len(),
        diagnostics: run.diagnostics.clone(),
    };
    write_json(&out_dir.join(MAP_TIMING), &timing)?;
    let mut b = create(&out_dir.join(BUBBLES))?;
    b.write_all(run.map.coverage().export_json()?.as_bytes())?;
    b.flush()?;
    Ok(())
}

pub fn load_snapshot(path: &Path, cfg: &RunConfig) -> Result<OccupancyMap<f64>> {
    let file = File::open(path).map_err(|e| Error::Format(format!("cannot read snapshot {}: {e}", path.display())))?;
    OccupancyMap::read_snapshot(&mut BufReader::new(file), cfg.field)
}

/// Outputs of the reconstruction stage.
pub struct ReconstructRun {
    pub reconstruction: Reconstruction,
    pub rasters: Rasters,
    /// Set when the snapshot held no measurements.
    pub notice: Option<String>,
}

/// Extracts the contour and renders rasters into `out_dir`.
pub fn cmd_reconstruct(
    cfg: &RunConfig,
    map: &OccupancyMap<f64>,
    world: &World<f64>,
    out_dir: &Path,
) -> Result<ReconstructRun> {
    std::fs::create_dir_all(out_dir)?;
    let grid = grid_for(cfg, world)?;
    let (reconstruction, rasters) = with_threads(cfg.threads, || -> Result<_> {
        let rec = reconstruct(cfg, map, &grid)?;
        let rasters = sample_rasters(&map.field(), &grid)?;
        Ok((rec, rasters))
    })??;
    write_rasters(out_dir, &rasters, cfg.field.level_set_c())?;
    let notice =
        map.store().is_empty().then(|| "snapshot has no measurements; rasters show the prior only".to_string());
    if notice.is_none() {
        let mut w = create(&out_dir.join(CONTOUR))?;
        write_contour_csv(&mut w, &reconstruction.segments)?;
        w.flush()?;
    }
    Ok(ReconstructRun { reconstruction, rasters, notice })
}

/// Paths produced by a full run.
#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub scans: PathBuf,
    pub snapshot: PathBuf,
    pub contour: PathBuf,
    pub metrics: PathBuf,
    pub metrics_value: Metrics,
}

/// simulate → map → reconstruct → evaluate, every artifact written into `cfg.out_dir`.
pub fn run_all(cfg: &RunConfig) -> Result<RunOutputs> {
    let out = cfg.out_dir.clone();
    let world = load_world(&cfg.world)?;
    let scans_path = out.join(SCAN_LOG);
    cmd_simulate(cfg, &scans_path)?;
    let run = cmd_map(cfg, &scans_path, &out)?;
    let rec = cmd_reconstruct(cfg, &run.map, &world, &out)?;
    let scans = read_scans(&scans_path, cfg)?;
    let metrics = evaluate(
        cfg,
        &world,
        &rec.reconstruction.segments,
        &scans,
        run.map.coverage().len(),
        &run.scan_update_ms,
        &rec.rasters.row_query_us,
        Some(rec.reconstruction.seconds),
    )?;
    let metrics_path = out.join(METRICS);
    write_json(&metrics_path, &metrics)?;
    Ok(RunOutputs {
        scans: scans_path,
        snapshot: out.join(SNAPSHOT),
        contour: out.join(CONTOUR),
        metrics: metrics_path,
        metrics_value: metrics,
    })
}
