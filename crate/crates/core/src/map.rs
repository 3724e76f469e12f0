//! Incremental occupancy map: voxel store, bubble coverage and pose history.

use std::io::{Read, Write};

use crate::bubbles::{BubbleCoverage, GrowthReport};
use crate::error::{Error, Result};
use crate::field::{FieldConfig, GpCache, LatentField, PriorMode};
use crate::sensor::{scan_to_points, SensorPose, SensorScan};
use crate::store::{read_f64, read_u32, read_u64, InsertReport, VoxelStore};
use crate::Scalar;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestReport {
    pub points: usize,
    pub insert: InsertReport,
    pub growth: Option<GrowthReport>,
}

#[derive(Debug)]
pub struct OccupancyMap<T: Scalar> {
    config: FieldConfig<T>,
    store: VoxelStore<T>,
    coverage: BubbleCoverage<T>,
    poses: Vec<SensorPose<T>>,
    version: u64,
    cache: GpCache<T>,
}

impl<T: Scalar> OccupancyMap<T> {
    pub fn new(config: FieldConfig<T>, voxel_resolution: T) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            store: VoxelStore::new(voxel_resolution)?,
            coverage: BubbleCoverage::new(),
            poses: Vec::new(),
            version: 0,
            cache: GpCache::new(),
        })
    }

    pub fn config(&self) -> &FieldConfig<T> {
        &self.config
    }

    pub fn store(&self) -> &VoxelStore<T> {
        &self.store
    }

    pub fn coverage(&self) -> &BubbleCoverage<T> {
        &self.coverage
    }

    pub fn poses(&self) -> &[SensorPose<T>] {
        &self.poses
    }

    /// Bumped by every ingested scan.
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Inserts the scan's points, then grows the bubble coverage against the updated store.
    pub fn ingest(&mut self, scan: &SensorScan<T>) -> Result<IngestReport> {
        scan.validate()?;
        let points = scan_to_points(scan);
        let insert = self.store.insert_points(&points);
        let growth = match self.config.prior_mode {
            PriorMode::Bubbles => Some(self.coverage.grow(scan, &self.store, &self.config.prior)),
            PriorMode::PoseOnly => None,
        };
        self.poses.push(scan.pose);
        self.version += 1;
        self.cache.clear();
        Ok(IngestReport { points: points.len(), insert, growth })
    }

    /// Field view sharing this map's factorization cache.
    pub fn field(&self) -> LatentField<'_, T> {
        LatentField::new(&self.store, &self.coverage, &self.poses, &self.config).with_cache(&self.cache, self.version)
    }

    /// Little-endian snapshot: `b"GPLFMAP\0"`, `u32` format version, `u64` map version,
    /// `u64` pose count with `f64 x, y, heading, fov_half_angle, r_max` each,
    /// then the voxel store and bubble coverage sections.
    pub fn write_snapshot(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAP_MAGIC)?;
        w.write_all(&MAP_VERSION.to_le_bytes())?;
        w.write_all(&self.version.to_le_bytes())?;
        w.write_all(&(self.poses.len() as u64).to_le_bytes())?;
        for p in &self.poses {
            for v in [p.position.x, p.position.y, p.heading, p.fov_half_angle, p.r_max] {
                w.write_all(&v.to_f64_lossy().to_le_bytes())?;
            }
        }
        self.store.write_to(w)?;
        self.coverage.write_to(w)
    }

    pub fn read_snapshot(r: &mut impl Read, config: FieldConfig<T>) -> Result<Self> {
        config.validate()?;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAP_MAGIC {
            return Err(Error::Format("not a map snapshot".into()));
        }
        let fmt = read_u32(r)?;
        if fmt != MAP_VERSION {
            return Err(Error::Format(format!("unsupported map snapshot version {fmt}")));
        }
        let version = read_u64(r)?;
        let n = read_u64(r)?;
        let mut poses = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let pos = crate::Point2::new(T::lit(read_f64(r)?), T::lit(read_f64(r)?));
            let (h, f, rm) = (T::lit(read_f64(r)?), T::lit(read_f64(r)?), T::lit(read_f64(r)?));
            poses.push(SensorPose::new(pos, h, f, rm)?);
        }
        let store = VoxelStore::read_from(r)?;
        let coverage = BubbleCoverage::read_from(r)?;
        Ok(Self { config, store, coverage, poses, version, cache: GpCache::new() })
    }
}

const MAP_MAGIC: &[u8; 8] = b"GPLFMAP\0";
const MAP_VERSION: u32 = 1;
