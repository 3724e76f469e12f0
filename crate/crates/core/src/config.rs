//! Run configuration loaded from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::contour::ContourOptions;
use crate::error::{Error, Result};
use crate::eval::OccGridConfig;
use crate::field::FieldConfig;
use crate::simulator::SensorSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub waypoints: Vec<[f64; 2]>,
    /// Pose spacing along the waypoint polyline, meters.
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapSpec {
    pub voxel_resolution: f64,
}

impl Default for MapSpec {
    fn default() -> Self {
        Self { voxel_resolution: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridOptions {
    pub h: f64,
    /// Padding added around the world bounds.
    pub margin: f64,
    pub refine_iterations: usize,
    pub skip_rule: bool,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self { h: 0.05, margin: 0.25, refine_iterations: 0, skip_rule: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSpec {
    /// Spacing of metric samples along wall segments, meters.
    pub sample_spacing: f64,
    pub occupancy_grid: OccGridConfig,
    /// Crossings this many voxels from true walls should be walls.
    pub near_wall_voxels: f64,
    /// Crossings this many lengthscales from every measurement should be frontiers.
    pub far_lengthscales: f64,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            sample_spacing: 0.01,
            occupancy_grid: OccGridConfig::default(),
            near_wall_voxels: 2.0,
            far_lengthscales: 3.0,
        }
    }
}

/// Everything a pipeline run needs; relative paths resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub environment: String,
    pub world: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Query parallelism cap; `None` uses every core.
    #[serde(default)]
    pub threads: Option<usize>,
    pub trajectory: TrajectorySpec,
    #[serde(default)]
    pub sensor: SensorSpec,
    #[serde(default)]
    pub map: MapSpec,
    #[serde(default)]
    pub field: FieldConfig<f64>,
    #[serde(default)]
    pub grid: GridOptions,
    #[serde(default)]
    pub eval: EvalSpec,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config and makes `world` and `out_dir` absolute relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.world = base.join(&cfg.world);
        cfg.out_dir = base.join(&cfg.out_dir);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.field.validate()?;
        if !(self.map.voxel_resolution > 0.0) {
            return Err(Error::contract("voxel resolution must be > 0"));
        }
        if !(self.grid.h > 0.0 && self.grid.h <= self.field.lengthscale()) {
            return Err(Error::contract("grid h must lie in (0, lengthscale]"));
        }
        if !(self.grid.margin >= 0.0) {
            return Err(Error::contract("grid margin must be >= 0"));
        }
        if !(self.trajectory.step > 0.0) {
            return Err(Error::contract("trajectory step must be > 0"));
        }
        if self.sensor.n_rays < 8 || !(self.sensor.r_max > 0.0) || !(self.sensor.noise_sigma >= 0.0) {
            return Err(Error::contract("invalid sensor parameters"));
        }
        if !(self.eval.sample_spacing > 0.0) {
            return Err(Error::contract("sample spacing must be > 0"));
        }
        if self.threads == Some(0) {
            return Err(Error::contract("threads must be >= 1"));
        }
        Ok(())
    }

    pub fn contour_options(&self) -> ContourOptions<f64> {
        ContourOptions {
            variance_wall_threshold: self.field.variance_wall_threshold,
            skip_rule: self.grid.skip_rule,
            refine_iterations: self.grid.refine_iterations,
        }
    }

    /// The config as echoed into outputs: output directory and thread count removed, world by file name.
    pub fn echo(&self) -> Result<serde_json::Value> {
        let mut v = serde_json::to_value(self)?;
        if let Some(obj) = v.as_object_mut() {
            obj.remove("out_dir");
            obj.remove("threads");
            let name = self.world.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            obj.insert("world".into(), serde_json::Value::String(name));
        }
        Ok(v)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }
}
