//! Latent-field properties on constructed maps.

use gplatent::bubbles::bubble_prior_mean;
use gplatent::simulator::{simulate_trajectory, Bounds, Obstacle, SensorSpec, WorldFile};
use gplatent::{
    Bubble, BubbleCoverage, BubbleState, CrossingKind, FieldConfig, LatentField, OccupancyClass, OccupancyMap, Point2,
    PriorMode, SensorPose, VoxelStore, World,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn room() -> World<f64> {
    let sq = |x0: f64, y0: f64, x1: f64, y1: f64| Obstacle {
        points: vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]],
        closed: true,
    };
    World::from_file(WorldFile {
        name: "room".into(),
        bounds: Bounds { min: [0.0, 0.0], max: [6.0, 4.0] },
        obstacles: vec![sq(0.0, 0.0, 6.0, 4.0), sq(2.5, 1.5, 3.2, 2.2)],
    })
    .unwrap()
}

fn room_map(mode: PriorMode) -> OccupancyMap<f64> {
    let world = room();
    let sensor = SensorSpec { n_rays: 360, r_max: 5.0, ..SensorSpec::default() };
    let poses: Vec<SensorPose<f64>> = [[1.0, 1.0], [1.0, 3.0], [4.5, 3.0], [4.5, 1.0]]
        .iter()
        .map(|p| SensorPose::omnidirectional(Point2::new(p[0], p[1]), 5.0).unwrap())
        .collect();
    let sim = simulate_trajectory(&world, &poses, &sensor, 5).unwrap();
    let cfg = FieldConfig { prior_mode: mode, ..FieldConfig::default() };
    let mut map = OccupancyMap::new(cfg, 0.05).unwrap();
    for s in &sim.scans {
        map.ingest(s).unwrap();
    }
    map
}

/// Three poses on a line; the wall at x = 3 is sensed from the two nearest ones only.
#[test]
fn one_dimensional_wall_and_frontier() {
    let cfg = FieldConfig::<f64> { prior_mode: PriorMode::PoseOnly, ..FieldConfig::default() };
    let r_max = 2.5;
    let poses: Vec<SensorPose<f64>> =
        [0.0, 1.0, 1.5].iter().map(|x| SensorPose::omnidirectional(Point2::new(*x, 0.0), r_max).unwrap()).collect();
    let (p1, p2) = (2.98, 3.02);
    let mut store = VoxelStore::new(0.05).unwrap();
    store.insert_points(&[Point2::new(p1, 0.0), Point2::new(p2, 0.0)]);
    let coverage = BubbleCoverage::new();
    let field = LatentField::new(&store, &coverage, &poses, &cfg);

    let xs: Vec<f64> = (0..=8000).map(|k| -4.0 + k as f64 * 0.001).collect();
    let samples: Vec<_> = xs.iter().map(|x| field.query(Point2::new(*x, 0.0)).unwrap()).collect();
    let mut crossings = Vec::new();
    for k in 1..xs.len() {
        let (a, b) = (&samples[k - 1], &samples[k]);
        if (a.class == OccupancyClass::Free) != (b.class == OccupancyClass::Free) {
            let kind = if a.variance.max(b.variance) < cfg.variance_wall_threshold {
                CrossingKind::Wall
            } else {
                CrossingKind::Frontier
            };
            crossings.push((xs[k], kind, a.variance.max(b.variance)));
        }
    }
    let frontier: Vec<_> = crossings.iter().filter(|c| c.1 == CrossingKind::Frontier).collect();
    let walls: Vec<_> = crossings.iter().filter(|c| c.1 == CrossingKind::Wall).collect();
    assert_eq!(frontier.len(), 1, "{crossings:?}");
    assert!((frontier[0].0 - (0.0 - r_max)).abs() <= 0.05, "{crossings:?}");
    assert!(frontier[0].2 > 0.9);
    assert!(!walls.is_empty());
    for w in &walls {
        assert!((w.0 - p1).abs() <= 0.05 || (w.0 - p2).abs() <= 0.05, "{crossings:?}");
        assert!(w.2 < 0.05);
    }
    // Beyond the wall the field stays below the level set although the pose prior still exceeds it.
    assert_eq!(field.query(Point2::new(3.5, 0.0)).unwrap().class, OccupancyClass::Unknown);
    assert!(field.prior_mean(Point2::new(3.5, 0.0)) > cfg.level_set_c());
}

#[test]
fn stored_centroids_are_pinned_and_variances_bounded() {
    let map = room_map(PriorMode::Bubbles);
    let field = map.field();
    let c = map.config().level_set_c();
    for (_, v) in map.store().cells_sorted() {
        let s = field.query(v.centroid).unwrap();
        assert!((s.mean - c).abs() <= 1e-2 * c, "centroid {:?}: mean {}", v.centroid, s.mean);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let upper = 1.0 + 10.0 * map.config().jitter;
    for _ in 0..5000 {
        let x = Point2::new(rng.random_range(-1.0..7.0), rng.random_range(-1.0..5.0));
        let v = field.query(x).unwrap().variance;
        assert!((0.0..=upper).contains(&v), "variance {v} at {x:?}");
    }
}

#[test]
fn batch_matches_sequential_across_thread_counts() {
    let map = room_map(PriorMode::Bubbles);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let pts: Vec<Point2<f64>> =
        (0..1000).map(|_| Point2::new(rng.random_range(0.0..6.0), rng.random_range(0.0..4.0))).collect();
    let field = map.field();
    let seq: Vec<f64> = pts.iter().map(|p| field.query(*p).unwrap().mean).collect();
    for threads in [1, 4] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let batch = pool.install(|| field.batch_query(&pts));
        for (r, s) in batch.iter().zip(&seq) {
            assert!((r.as_ref().unwrap().mean - s).abs() <= 1e-12);
        }
    }
    assert_eq!(field.batch_query(&pts[..1])[0].as_ref().unwrap(), &field.query(pts[0]).unwrap());
}

#[test]
fn empty_store_classifies_by_bubble_prior() {
    let cfg = FieldConfig::<f64>::default();
    let mut coverage = BubbleCoverage::new();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..40 {
        coverage.push(Bubble {
            center: Point2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)),
            radius: rng.random_range(0.15..2.0),
            state: BubbleState::Fixed,
            edf_at_creation: 10.0,
        });
    }
    let store = VoxelStore::new(0.05).unwrap();
    let field = LatentField::new(&store, &coverage, &[], &cfg);
    for i in 0..150 {
        for j in 0..150 {
            let x = Point2::new(-7.5 + i as f64 * 0.1, -7.5 + j as f64 * 0.1);
            let s = field.query(x).unwrap();
            let free = bubble_prior_mean(x, &coverage, &cfg.prior) > cfg.level_set_c();
            assert_eq!(s.class == OccupancyClass::Free, free);
            assert_eq!(s.variance, 1.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// A point beyond the neighbourhood and pruning radii leaves the query untouched.
    #[test]
    fn distant_points_do_not_change_queries(
        qx in -1.0f64..1.0,
        qy in -1.0f64..1.0,
        far in 6.0f64..20.0,
        ang in -3.2f64..3.2,
    ) {
        let cfg = FieldConfig::<f64> { prior_mode: PriorMode::PoseOnly, ..FieldConfig::default() };
        let poses = [SensorPose::omnidirectional(Point2::new(0.0, 0.0), 2.0).unwrap()];
        let coverage = BubbleCoverage::new();
        let mut store = VoxelStore::new(0.05).unwrap();
        store.insert_points(&[Point2::new(1.5, 0.3), Point2::new(-0.4, 1.2), Point2::new(0.2, -1.7)]);
        let x = Point2::new(qx, qy);
        let before = LatentField::new(&store, &coverage, &poses, &cfg).query(x).unwrap();
        let reach = cfg.neighborhood_radius + cfg.prior.prune_slack() + 2.0;
        store.insert_points(&[x + Point2::from_angle(ang) * (reach + far)]);
        let after = LatentField::new(&store, &coverage, &poses, &cfg).query(x).unwrap();
        prop_assert!((before.mean - after.mean).abs() < 1e-6);
        prop_assert!((before.variance - after.variance).abs() < 1e-6);
    }
}
