//! `gplatent`: simulate, map, reconstruct, evaluate and render.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gplatent::contour::read_contour_csv;
use gplatent::pipeline::{self, RunOutputs};
use gplatent::{Error, Result, RunConfig};

#[derive(Parser)]
#[command(name = "gplatent", version, about = "Continuous occupancy mapping with a GP latent field")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured trajectory and write a scan log.
    Simulate(Common),
    /// Build a map snapshot from a scan log.
    Map(Common),
    /// Extract the contour and render rasters from a snapshot.
    Reconstruct(Common),
    /// Compute accuracy and discrimination metrics.
    Eval(Common),
    /// Render mean, variance and class rasters without a contour.
    Render(Common),
    /// Run every stage in sequence.
    Run(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// World file, overriding the config.
    #[arg(long)]
    world: Option<PathBuf>,
    /// Scan log to read (map, eval) or write (simulate).
    #[arg(long)]
    scans: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Cap on query parallelism.
    #[arg(long)]
    threads: Option<usize>,
    /// Reconstruction grid spacing in meters.
    #[arg(long = "grid-h")]
    grid_h: Option<f64>,
    /// Range noise standard deviation in meters.
    #[arg(long = "noise-sigma")]
    noise_sigma: Option<f64>,
    /// Map snapshot to read (defaults to `<out>/map.bin`).
    #[arg(long)]
    snapshot: Option<PathBuf>,
    /// Contour file to read (defaults to `<out>/contour.csv`).
    #[arg(long)]
    contour: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(w) = &self.world {
            cfg.world = w.clone();
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.threads {
            cfg.threads = Some(t);
        }
        if let Some(h) = self.grid_h {
            cfg.grid.h = h;
        }
        if let Some(n) = self.noise_sigma {
            cfg.sensor.noise_sigma = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn scans(&self, cfg: &RunConfig) -> PathBuf {
        self.scans.clone().unwrap_or_else(|| cfg.out_dir.join(pipeline::SCAN_LOG))
    }

    fn snapshot(&self, cfg: &RunConfig) -> PathBuf {
        self.snapshot.clone().unwrap_or_else(|| cfg.out_dir.join(pipeline::SNAPSHOT))
    }

    fn contour(&self, cfg: &RunConfig) -> PathBuf {
        self.contour.clone().unwrap_or_else(|| cfg.out_dir.join(pipeline::CONTOUR))
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(c) => {
            let cfg = c.config()?;
            let out = c.scans(&cfg);
            let sim = pipeline::cmd_simulate(&cfg, &out)?;
            for d in &sim.diagnostics {
                eprintln!("warning: {d}");
            }
            println!("wrote {} scans to {}", sim.scans.len(), out.display());
        }
        Command::Map(c) => {
            let cfg = c.config()?;
            let run = pipeline::cmd_map(&cfg, &c.scans(&cfg), &cfg.out_dir)?;
            for d in &run.diagnostics {
                eprintln!("warning: {d}");
            }
            println!(
                "mapped {} scans: {} voxels, {} bubbles -> {}",
                run.scan_update_ms.len(),
                run.map.store().len(),
                run.map.coverage().len(),
                cfg.out_dir.join(pipeline::SNAPSHOT).display()
            );
        }
        Command::Render(c) => {
            let cfg = c.config()?;
            let world = pipeline::load_world(&cfg.world)?;
            let map = pipeline::load_snapshot(&c.snapshot(&cfg), &cfg)?;
            let grid = pipeline::grid_for(&cfg, &world)?;
            let rasters = pipeline::with_threads(cfg.threads, || pipeline::sample_rasters(&map.field(), &grid))??;
            std::fs::create_dir_all(&cfg.out_dir)?;
            pipeline::write_rasters(&cfg.out_dir, &rasters, cfg.field.level_set_c())?;
            println!("rendered {}x{} rasters -> {}", rasters.nx, rasters.ny, cfg.out_dir.display());
        }
        Command::Reconstruct(c) => {
            let cfg = c.config()?;
            let world = pipeline::load_world(&cfg.world)?;
            let map = pipeline::load_snapshot(&c.snapshot(&cfg), &cfg)?;
            let rec = pipeline::cmd_reconstruct(&cfg, &map, &world, &cfg.out_dir)?;
            if let Some(n) = &rec.notice {
                eprintln!("notice: {n}");
            }
            println!(
                "{} segments on a {}x{} grid in {:.3} s -> {}",
                rec.reconstruction.segments.len(),
                rec.rasters.nx,
                rec.rasters.ny,
                rec.reconstruction.seconds,
                cfg.out_dir.display()
            );
        }
        Command::Eval(c) => {
            let cfg = c.config()?;
            let world = pipeline::load_world(&cfg.world)?;
            let contour_path = c.contour(&cfg);
            let file = std::fs::File::open(&contour_path)
                .map_err(|e| Error::Format(format!("cannot read contour {}: {e}", contour_path.display())))?;
            let segments = read_contour_csv(file)?;
            let scans = pipeline::read_scans(&c.scans(&cfg), &cfg)?;
            let bubbles = pipeline::load_snapshot(&c.snapshot(&cfg), &cfg).map(|m| m.coverage().len()).unwrap_or(0);
            let metrics = pipeline::evaluate(&cfg, &world, &segments, &scans, bubbles, &[], &[], None)?;
            let path = cfg.out_dir.join(pipeline::METRICS);
            pipeline::write_json(&path, &metrics)?;
            print_rows(&metrics);
            println!("metrics -> {}", path.display());
        }
        Command::Run(c) => {
            let cfg = c.config()?;
            let RunOutputs { metrics, metrics_value, .. } = pipeline::run_all(&cfg)?;
            print_rows(&metrics_value);
            println!("metrics -> {}", metrics.display());
        }
    }
    Ok(())
}

fn print_rows(m: &gplatent::eval::Metrics) {
    for r in &m.rows {
        println!("{:<16} mean {:>8.3} mm  rmse {:>8.3} mm  ({} samples)", r.method, r.mean_mm, r.rmse_mm, r.n_samples);
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
