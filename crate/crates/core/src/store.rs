//! Voxel-centroid point storage.
//!
//! Measured points are bucketed into square cells; each cell keeps the
//! running mean of its points. Centroids are mirrored in an R-tree so that
//! nearest-neighbour, radius and distance-field queries are logarithmic.

use std::collections::HashMap;
use std::io::{Read, Write};

use rstar::primitives::GeomWithData;
use rstar::RTree;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::Scalar;

pub const DEFAULT_RESOLUTION: f64 = 0.05;

/// Integer cell coordinates: `floor(x / resolution), floor(y / resolution)`.
///
/// Ordering is lexicographic on `(ix, iy)` and is used to break distance ties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellIndex {
    pub ix: i64,
    pub iy: i64,
}

impl CellIndex {
    pub fn new(ix: i64, iy: i64) -> Self {
        Self { ix, iy }
    }

    pub fn of<T: Scalar>(p: Point2<T>, resolution: T) -> Self {
        let ix = (p.x / resolution).floor().to_i64().unwrap_or(i64::MIN);
        let iy = (p.y / resolution).floor().to_i64().unwrap_or(i64::MIN);
        Self { ix, iy }
    }

    /// Lower-left corner of the cell.
    pub fn origin<T: Scalar>(&self, resolution: T) -> Point2<T> {
        Point2::new(T::lit(self.ix as f64) * resolution, T::lit(self.iy as f64) * resolution)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Voxel<T> {
    pub centroid: Point2<T>,
    pub count: u64,
}

/// A stored centroid returned by a query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor<T> {
    pub cell: CellIndex,
    pub centroid: Point2<T>,
    pub distance: T,
}

/// Outcome of one insertion batch.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InsertReport {
    pub created: usize,
    pub updated: usize,
    /// Positions (in the input slice) of points rejected as non-finite.
    pub rejected: Vec<usize>,
}

impl InsertReport {
    pub fn touched(&self) -> usize {
        self.created + self.updated
    }
}

type Entry<T> = GeomWithData<[T; 2], CellIndex>;

#[derive(Debug, Clone)]
pub struct VoxelStore<T: Scalar> {
    resolution: T,
    cells: HashMap<CellIndex, Voxel<T>>,
    index: RTree<Entry<T>>,
}

impl<T: Scalar> VoxelStore<T> {
    pub fn new(resolution: T) -> Result<Self> {
        if !(resolution > T::zero()) || !resolution.is_finite() {
            return Err(Error::contract(format!("voxel resolution must be > 0, got {resolution}")));
        }
        Ok(Self { resolution, cells: HashMap::new(), index: RTree::new() })
    }

    pub fn resolution(&self) -> T {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, cell: &CellIndex) -> Option<&Voxel<T>> {
        self.cells.get(cell)
    }

    /// All cells, sorted by index.
    pub fn cells_sorted(&self) -> Vec<(CellIndex, Voxel<T>)> {
        let mut v: Vec<_> = self.cells.iter().map(|(k, v)| (*k, *v)).collect();
        v.sort_by_key(|(k, _)| *k);
        v
    }

    /// Adds a batch of points, updating running-mean centroids and the index.
    ///
    /// Takes `&mut self`, so no reader can observe a partially applied batch.
    pub fn insert_points(&mut self, points: &[Point2<T>]) -> InsertReport {
        let mut report = InsertReport::default();
        // Old centroid per touched cell, in first-touch order.
        let mut touched: Vec<(CellIndex, Option<Point2<T>>)> = Vec::new();
        let mut seen: HashMap<CellIndex, ()> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            if !p.is_finite() {
                report.rejected.push(i);
                continue;
            }
            let cell = CellIndex::of(*p, self.resolution);
            let entry = self.cells.entry(cell);
            let previous = match &entry {
                std::collections::hash_map::Entry::Occupied(o) => Some(o.get().centroid),
                std::collections::hash_map::Entry::Vacant(_) => None,
            };
            let voxel = entry.or_insert(Voxel { centroid: *p, count: 0 });
            voxel.count += 1;
            let n = T::lit(voxel.count as f64);
            voxel.centroid = voxel.centroid + (*p - voxel.centroid) * (T::one() / n);
            if seen.insert(cell, ()).is_none() {
                touched.push((cell, previous));
            }
        }
        for (cell, previous) in touched {
            match previous {
                Some(old) => {
                    let removed = self.index.remove(&GeomWithData::new(old.to_array(), cell));
                    debug_assert!(removed.is_some(), "index out of sync for {cell:?}");
                    report.updated += 1;
                }
                None => report.created += 1,
            }
            let c = self.cells[&cell].centroid;
            self.index.insert(GeomWithData::new(c.to_array(), cell));
        }
        report
    }

    /// Rebuilds the spatial index from the hash map.
    pub fn rebuild_index(&mut self) {
        let entries =
            self.cells_sorted().into_iter().map(|(k, v)| GeomWithData::new(v.centroid.to_array(), k)).collect();
        self.index = RTree::bulk_load(entries);
    }

    pub fn index_len(&self) -> usize {
        self.index.size()
    }

    /// Exact nearest centroid; ties go to the smallest cell index.
    pub fn nearest_centroid(&self, query: Point2<T>) -> Option<Neighbor<T>> {
        let q = query.to_array();
        let mut iter = self.index.nearest_neighbor_iter_with_distance_2(q);
        let (first, d2) = iter.next()?;
        let mut best = first.data;
        for (e, d) in iter {
            if d > d2 {
                break;
            }
            best = best.min(e.data);
        }
        let centroid = self.cells[&best].centroid;
        Some(Neighbor { cell: best, centroid, distance: centroid.distance(query) })
    }

    /// Every centroid within `radius` (inclusive), nearest first, ties by cell index.
    pub fn radius_search(&self, query: Point2<T>, radius: T) -> Vec<Neighbor<T>> {
        let mut out: Vec<(T, Neighbor<T>)> = self
            .index
            .locate_within_distance(query.to_array(), radius * radius)
            .map(|e| {
                let c = Point2::from_array(*e.geom());
                let d2 = c.distance_squared(query);
                (d2, Neighbor { cell: e.data, centroid: c, distance: d2.sqrt() })
            })
            .filter(|(_, n)| n.distance <= radius)
            .collect();
        out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cell.cmp(&b.1.cell)));
        out.into_iter().map(|(_, n)| n).collect()
    }

    /// Euclidean distance to the nearest centroid; `+inf` for an empty store.
    pub fn edf(&self, query: Point2<T>) -> T {
        self.nearest_centroid(query).map_or(T::infinity(), |n| n.distance)
    }

    /// Writes the little-endian snapshot (see [`VoxelStore::read_from`]).
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(STORE_MAGIC)?;
        w.write_all(&STORE_VERSION.to_le_bytes())?;
        w.write_all(&self.resolution.to_f64_lossy().to_le_bytes())?;
        let cells = self.cells_sorted();
        w.write_all(&(cells.len() as u64).to_le_bytes())?;
        for (k, v) in cells {
            w.write_all(&k.ix.to_le_bytes())?;
            w.write_all(&k.iy.to_le_bytes())?;
            w.write_all(&v.centroid.x.to_f64_lossy().to_le_bytes())?;
            w.write_all(&v.centroid.y.to_f64_lossy().to_le_bytes())?;
            w.write_all(&v.count.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a snapshot written by [`VoxelStore::write_to`].
    ///
    /// Layout, all little-endian:
    /// `b"GPLFVOX\0"`, `u32` version (1), `f64` resolution, `u64` cell count,
    /// then per cell sorted by `(ix, iy)`: `i64 ix, i64 iy, f64 cx, f64 cy, u64 count`.
    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != STORE_MAGIC {
            return Err(Error::Format("not a voxel store snapshot".into()));
        }
        let version = read_u32(r)?;
        if version != STORE_VERSION {
            return Err(Error::Format(format!("unsupported voxel snapshot version {version}")));
        }
        let mut store = Self::new(T::lit(read_f64(r)?))?;
        let n = read_u64(r)?;
        for _ in 0..n {
            let cell = CellIndex::new(read_i64(r)?, read_i64(r)?);
            let centroid = Point2::new(T::lit(read_f64(r)?), T::lit(read_f64(r)?));
            let count = read_u64(r)?;
            if count == 0 || !centroid.is_finite() {
                return Err(Error::Format(format!("invalid voxel record for {cell:?}")));
            }
            store.cells.insert(cell, Voxel { centroid, count });
        }
        store.rebuild_index();
        Ok(store)
    }
}

const STORE_MAGIC: &[u8; 8] = b"GPLFVOX\0";
const STORE_VERSION: u32 = 1;

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_i64(r: &mut impl Read) -> Result<i64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(i64::from_le_bytes(b))
}

pub(crate) fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(x: f64, y: f64) -> Point2<f64> {
        Point2::new(x, y)
    }

    fn linear_nearest(pts: &[(CellIndex, Point2<f64>)], q: Point2<f64>) -> (CellIndex, f64) {
        let mut best: Option<(f64, CellIndex)> = None;
        for (k, c) in pts {
            let d2 = (c.x - q.x).powi(2) + (c.y - q.y).powi(2);
            best = match best {
                Some((bd, bk)) if bd < d2 || (bd == d2 && bk < *k) => Some((bd, bk)),
                _ => Some((d2, *k)),
            };
        }
        let (d2, k) = best.unwrap();
        (k, d2.sqrt())
    }

    fn random_store(n: usize, seed: u64) -> VoxelStore<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = VoxelStore::new(0.1).unwrap();
        let pts: Vec<_> = (0..n).map(|_| p(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0))).collect();
        s.insert_points(&pts);
        s
    }

    #[test]
    fn single_point_cell() {
        let mut s = VoxelStore::new(1.0).unwrap();
        let r = s.insert_points(&[p(0.51, 0.52)]);
        assert_eq!(r.created, 1);
        assert_eq!(s.get(&CellIndex::new(0, 0)).unwrap().centroid, p(0.51, 0.52));
    }

    #[test]
    fn two_points_average() {
        let mut s = VoxelStore::new(1.0).unwrap();
        s.insert_points(&[p(0.4, 0.4), p(0.6, 0.6)]);
        assert_eq!(s.len(), 1);
        let v = s.get(&CellIndex::new(0, 0)).unwrap();
        assert!((v.centroid.x - 0.5).abs() < 1e-15 && (v.centroid.y - 0.5).abs() < 1e-15);
        assert_eq!(v.count, 2);
    }

    #[test]
    fn non_finite_points_rejected() {
        let mut s = VoxelStore::new(1.0).unwrap();
        let r = s.insert_points(&[p(f64::NAN, 0.0), p(1.5, 1.5), p(0.0, f64::INFINITY)]);
        assert_eq!(r.rejected, vec![0, 2]);
        assert_eq!(s.len(), 1);
        assert!(VoxelStore::<f64>::new(0.0).is_err());
    }

    #[test]
    fn cell_count_matches_brute_bucketing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<_> = (0..10_000).map(|_| p(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0))).collect();
        let mut s = VoxelStore::new(0.1).unwrap();
        let r = s.insert_points(&pts);
        let mut cells: Vec<(i64, i64)> =
            pts.iter().map(|q| ((q.x / 0.1).floor() as i64, (q.y / 0.1).floor() as i64)).collect();
        cells.sort_unstable();
        cells.dedup();
        assert_eq!(s.len(), cells.len());
        assert_eq!(r.created, cells.len());
        assert_eq!(s.index_len(), s.len());
        for (k, v) in s.cells_sorted() {
            let o = k.origin(0.1);
            assert!(v.count >= 1);
            assert!(v.centroid.x >= o.x - 1e-12 && v.centroid.x <= o.x + 0.1 + 1e-12);
            assert!(v.centroid.y >= o.y - 1e-12 && v.centroid.y <= o.y + 0.1 + 1e-12);
        }
    }

    #[test]
    fn nearest_examples() {
        let mut s = VoxelStore::new(0.05).unwrap();
        assert!(s.nearest_centroid(p(0.0, 0.0)).is_none());
        assert_eq!(s.edf(p(0.0, 0.0)), f64::INFINITY);
        s.insert_points(&[p(1.0, 0.0)]);
        let n = s.nearest_centroid(p(0.0, 0.0)).unwrap();
        assert_eq!(n.centroid, p(1.0, 0.0));
        assert_eq!(n.distance, 1.0);
        assert_eq!(s.edf(p(1.0, 0.0)), 0.0);
    }

    #[test]
    fn edf_single_point() {
        let mut s = VoxelStore::new(0.05).unwrap();
        s.insert_points(&[p(2.0, 0.0)]);
        assert_eq!(s.edf(p(0.0, 0.0)), 2.0);
    }

    #[test]
    fn ties_prefer_smaller_cell() {
        let mut s = VoxelStore::new(0.5).unwrap();
        s.insert_points(&[p(1.0, 0.0), p(-1.0, 0.0), p(0.0, 1.0)]);
        let n = s.nearest_centroid(p(0.0, 0.0)).unwrap();
        assert_eq!(n.cell, CellIndex::new(-2, 0));
    }

    #[test]
    fn radius_examples() {
        let mut s = VoxelStore::new(0.05).unwrap();
        s.insert_points(&[p(3.0, 0.0), p(1.0, 0.0)]);
        let r2: Vec<_> = s.radius_search(p(0.0, 0.0), 2.0).iter().map(|n| n.centroid).collect();
        assert_eq!(r2, vec![p(1.0, 0.0)]);
        let r5: Vec<_> = s.radius_search(p(0.0, 0.0), 5.0).iter().map(|n| n.centroid).collect();
        assert_eq!(r5, vec![p(1.0, 0.0), p(3.0, 0.0)]);
    }

    #[test]
    fn queries_match_linear_scan() {
        let s = random_store(1000, 5);
        let pts: Vec<_> = s.cells_sorted().into_iter().map(|(k, v)| (k, v.centroid)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let q = p(rng.random_range(-1.0..11.0), rng.random_range(-1.0..11.0));
            let (k, d) = linear_nearest(&pts, q);
            let n = s.nearest_centroid(q).unwrap();
            assert_eq!(n.cell, k);
            assert_eq!(n.distance, d);
            assert!((s.edf(q) - d).abs() <= 1e-12);

            let r = rng.random_range(0.1..2.0);
            let mut oracle: Vec<CellIndex> = pts.iter().filter(|(_, c)| c.distance(q) <= r).map(|(k, _)| *k).collect();
            let mut got: Vec<CellIndex> = s.radius_search(q, r).iter().map(|n| n.cell).collect();
            let sorted = s.radius_search(q, r).windows(2).all(|w| w[0].distance <= w[1].distance);
            assert!(sorted);
            oracle.sort();
            got.sort();
            assert_eq!(got, oracle);
        }
    }

    #[test]
    fn rebuilt_index_answers_identically() {
        let mut s = random_store(2000, 8);
        let before = s.clone();
        s.rebuild_index();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let q = p(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0));
            assert_eq!(s.nearest_centroid(q), before.nearest_centroid(q));
            assert_eq!(s.radius_search(q, 0.7), before.radius_search(q, 0.7));
        }
    }

    #[test]
    fn snapshot_round_trip_is_exact() {
        let s = random_store(500, 2);
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        let r = VoxelStore::<f64>::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(r.cells_sorted(), s.cells_sorted());
        assert_eq!(r.resolution(), s.resolution());
        let mut again = Vec::new();
        r.write_to(&mut again).unwrap();
        assert_eq!(buf, again);
        assert!(VoxelStore::<f64>::read_from(&mut &b"garbage!"[..]).is_err());
    }

    proptest! {
        #[test]
        fn insertion_order_invariant(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<_> = (0..300).map(|_| p(rng.random_range(0.0..2.0), rng.random_range(0.0..2.0))).collect();
            let mut shuffled = pts.clone();
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut rng);
            let mut a = VoxelStore::new(0.25).unwrap();
            let mut b = VoxelStore::new(0.25).unwrap();
            a.insert_points(&pts);
            // Split into uneven batches as well.
            b.insert_points(&shuffled[..100]);
            b.insert_points(&shuffled[100..]);
            let (ca, cb) = (a.cells_sorted(), b.cells_sorted());
            prop_assert_eq!(ca.len(), cb.len());
            for ((ka, va), (kb, vb)) in ca.iter().zip(&cb) {
                prop_assert_eq!(ka, kb);
                prop_assert_eq!(va.count, vb.count);
                prop_assert!(va.centroid.distance(vb.centroid) <= 1e-12);
            }
        }

        #[test]
        fn edf_is_one_lipschitz(seed in 0u64..200, ax in -2.0f64..12.0, ay in -2.0f64..12.0, bx in -2.0f64..12.0, by in -2.0f64..12.0) {
            let s = random_store(200, seed);
            let (a, b) = (p(ax, ay), p(bx, by));
            prop_assert!((s.edf(a) - s.edf(b)).abs() <= a.distance(b) + 1e-12);
        }
    }
}
