//! End-to-end pipeline behaviour on the bundled environments.

use std::path::{Path, PathBuf};

use gplatent::eval::Metrics;
use gplatent::pipeline::{self, CONTOUR, METRICS, SCAN_LOG, SNAPSHOT};
use gplatent::sensor::fov_contains;
use gplatent::simulator::write_scan_log;
use gplatent::{filter_surface, OccupancyMap, RunConfig, SensorScan};

fn config(name: &str, out: &Path) -> RunConfig {
    let mut cfg = RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)).unwrap();
    cfg.out_dir = out.to_path_buf();
    cfg
}

fn snapshot_bytes(map: &OccupancyMap<f64>) -> Vec<u8> {
    let mut buf = Vec::new();
    map.write_snapshot(&mut buf).unwrap();
    buf
}

#[test]
fn resuming_from_a_snapshot_equals_a_batch_run() {
    let cfg = config("env_a.toml", Path::new("unused"));
    let world = pipeline::load_world(&cfg.world).unwrap();
    let scans = pipeline::simulate(&cfg, &world).unwrap().scans;
    let scans = &scans[..60];
    let batch = pipeline::ingest_all(pipeline::new_map(&cfg).unwrap(), scans).unwrap().map;

    let first = pipeline::ingest_all(pipeline::new_map(&cfg).unwrap(), &scans[..25]).unwrap().map;
    let bytes = snapshot_bytes(&first);
    let resumed = OccupancyMap::read_snapshot(&mut bytes.as_slice(), cfg.field).unwrap();
    let resumed = pipeline::ingest_all(resumed, &scans[25..]).unwrap().map;
    assert_eq!(snapshot_bytes(&resumed), snapshot_bytes(&batch));
}

#[test]
fn empty_scan_log_gives_an_empty_map_and_prior_rasters() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("env_a.toml", dir.path());
    let log = dir.path().join(SCAN_LOG);
    write_scan_log(std::fs::File::create(&log).unwrap(), &Vec::<SensorScan<f64>>::new()).unwrap();
    let run = pipeline::cmd_map(&cfg, &log, dir.path()).unwrap();
    assert!(run.map.store().is_empty() && run.map.coverage().is_empty());
    let map = pipeline::load_snapshot(&dir.path().join(SNAPSHOT), &cfg).unwrap();
    assert!(map.store().is_empty());
    let world = pipeline::load_world(&cfg.world).unwrap();
    let rec = pipeline::cmd_reconstruct(&cfg, &map, &world, dir.path()).unwrap();
    assert!(rec.notice.is_some());
    assert!(!dir.path().join(CONTOUR).exists());
    assert!(rec.rasters.class.iter().all(|c| *c == 0.0));
}

#[test]
fn full_run_outputs_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("env_a.toml", dir.path());
    let out = pipeline::run_all(&cfg).unwrap();
    let text = std::fs::read_to_string(dir.path().join(METRICS)).unwrap();
    let parsed: Metrics = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed, out.metrics_value);
    assert_eq!(parsed.schema_version, 1);
    assert!(parsed.wall_segments > 0);
    for name in ["ours", "raw_data", "occupancy_grid"] {
        assert!(parsed.row(name).is_some(), "missing row {name}");
    }
    assert_eq!(parsed.params["world"], "env_a.world.json");
    assert!(parsed.params.get("out_dir").is_none());

    // Raster size follows the padded bounds and h.
    let world = pipeline::load_world(&cfg.world).unwrap();
    let grid = pipeline::grid_for(&cfg, &world).unwrap();
    let b = world.bounds;
    let m = cfg.grid.margin;
    let expect = |lo: f64, hi: f64| (((hi - lo + 2.0 * m) / cfg.grid.h) + 1e-9).floor() as usize + 1;
    assert_eq!(grid.dims(), (expect(b.min[0], b.max[0]), expect(b.min[1], b.max[1])));
    for name in ["mean.pgm", "variance.pgm", "class.pgm"] {
        let img = image::open(dir.path().join(name)).unwrap();
        assert_eq!((img.width() as usize, img.height() as usize), grid.dims());
    }
}

#[test]
fn noise_free_reconstruction_is_sub_voxel() {
    let mut cfg = config("env_a.toml", Path::new("unused"));
    cfg.sensor.noise_sigma = 0.0;
    let world = pipeline::load_world(&cfg.world).unwrap();
    let scans = pipeline::simulate(&cfg, &world).unwrap().scans;
    let run = pipeline::ingest_all(pipeline::new_map(&cfg).unwrap(), &scans).unwrap();
    let grid = pipeline::grid_for(&cfg, &world).unwrap();
    let rec = pipeline::reconstruct(&cfg, &run.map, &grid).unwrap();
    let metrics = pipeline::evaluate(&cfg, &world, &rec.segments, &scans, 0, &[], &[], None).unwrap();
    let ours = metrics.row("ours").unwrap().mean_mm;
    assert!(ours < cfg.grid.h * 1e3, "noise-free mean error {ours} mm");

    // In the explored floor plan every frontier sits on the boundary of the scanned region.
    let tol = 2.0 * cfg.grid.h;
    let part = filter_surface(&rec.segments, &cfg.field);
    for s in &part.frontiers {
        for p in [s.a, s.b] {
            let outside_some = scans.iter().any(|sc| fov_contains(sc, p, -tol));
            let deep_inside = scans.iter().any(|sc| fov_contains(sc, p, tol));
            assert!(outside_some && !deep_inside, "frontier endpoint {p:?}");
        }
    }
}

#[test]
fn bundled_configs_load() {
    for name in ["env_a.toml", "env_b.toml"] {
        let cfg = config(name, &PathBuf::from("x"));
        assert!(cfg.world.exists());
        assert!(pipeline::load_world(&cfg.world).is_ok());
    }
}
