//! Marching-squares extraction of the level set `mean = c` and wall/frontier filtering.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{kind_from_variances, CrossingKind, FieldConfig, LatentField};
use crate::geometry::Point2;
use crate::Scalar;

/// Axis-aligned sampling lattice with nodes at `bbox_min + (i, j)·h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec<T> {
    pub bbox_min: Point2<T>,
    pub bbox_max: Point2<T>,
    pub cell_size_h: T,
}

impl<T: Scalar> GridSpec<T> {
    pub fn new(bbox_min: Point2<T>, bbox_max: Point2<T>, cell_size_h: T) -> Result<Self> {
        let g = Self { bbox_min, bbox_max, cell_size_h };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size_h > T::zero()) || !self.cell_size_h.is_finite() {
            return Err(Error::contract("grid cell size must be > 0"));
        }
        if !(self.bbox_max.x > self.bbox_min.x && self.bbox_max.y > self.bbox_min.y) {
            return Err(Error::contract("grid bbox_max must exceed bbox_min componentwise"));
        }
        if !self.bbox_min.is_finite() || !self.bbox_max.is_finite() {
            return Err(Error::contract("non-finite grid bbox"));
        }
        let (nx, ny) = self.dims();
        if nx < 2 || ny < 2 {
            return Err(Error::contract(format!("degenerate grid with {nx}x{ny} nodes")));
        }
        Ok(())
    }

    /// Node counts per axis: `floor(extent / h) + 1`.
    pub fn dims(&self) -> (usize, usize) {
        let n = |extent: T| {
            let k = (extent / self.cell_size_h + T::lit(1e-9)).floor();
            k.to_usize().map_or(0, |k| k + 1)
        };
        (n(self.bbox_max.x - self.bbox_min.x), n(self.bbox_max.y - self.bbox_min.y))
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> Point2<T> {
        Point2::new(
            self.bbox_min.x + self.cell_size_h * T::lit(i as f64),
            self.bbox_min.y + self.cell_size_h * T::lit(j as f64),
        )
    }

    pub fn node_count(&self) -> usize {
        let (nx, ny) = self.dims();
        nx * ny
    }
}

/// Something the contour extractor can sample.
pub trait FieldAccess<T: Scalar>: Sync {
    fn level_set_c(&self) -> T;

    /// Posterior `(mean, variance)` at `x`.
    fn sample(&self, x: Point2<T>) -> Result<(T, T)>;

    /// `Some(prior)` when the sample at `x` is known to equal the prior with unit variance.
    fn prior_only(&self, _x: Point2<T>) -> Option<T> {
        None
    }
}

impl<T: Scalar> FieldAccess<T> for LatentField<'_, T> {
    fn level_set_c(&self) -> T {
        LatentField::level_set_c(self)
    }

    fn sample(&self, x: Point2<T>) -> Result<(T, T)> {
        self.query(x).map(|s| (s.mean, s.variance))
    }

    fn prior_only(&self, x: Point2<T>) -> Option<T> {
        LatentField::prior_only(self, x)
    }
}

/// Closed-form field with zero variance everywhere.
pub struct AnalyticField<T, F> {
    pub level_set_c: T,
    pub f: F,
}

impl<T: Scalar, F: Fn(Point2<T>) -> T + Sync> FieldAccess<T> for AnalyticField<T, F> {
    fn level_set_c(&self) -> T {
        self.level_set_c
    }

    fn sample(&self, x: Point2<T>) -> Result<(T, T)> {
        Ok(((self.f)(x), T::zero()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourOptions<T> {
    pub variance_wall_threshold: T,
    /// Skip cells whose corners are all prior-only and far from the level set.
    pub skip_rule: bool,
    /// Extra bracketing iterations per crossing edge; 0 keeps plain linear interpolation.
    pub refine_iterations: usize,
}

impl<T: Scalar> Default for ContourOptions<T> {
    fn default() -> Self {
        Self { variance_wall_threshold: T::lit(0.4), skip_rule: true, refine_iterations: 0 }
    }
}

impl<T: Scalar> ContourOptions<T> {
    pub fn from_config(config: &FieldConfig<T>) -> Self {
        Self { variance_wall_threshold: config.variance_wall_threshold, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourSegment<T> {
    pub a: Point2<T>,
    pub b: Point2<T>,
    pub var_a: T,
    pub var_b: T,
    pub kind: CrossingKind,
}

impl<T: Scalar> ContourSegment<T> {
    pub fn length(&self) -> T {
        self.a.distance(self.b)
    }

    pub fn max_variance(&self) -> T {
        self.var_a.max(self.var_b)
    }
}

/// Mean and variance at every grid node, row-major (`j·nx + i`).
#[derive(Debug, Clone, PartialEq)]
pub struct GridSamples<T> {
    pub nx: usize,
    pub ny: usize,
    pub mean: Vec<T>,
    pub variance: Vec<T>,
    /// False for nodes the skip rule never queried.
    pub evaluated: Vec<bool>,
}

impl<T: Scalar> GridSamples<T> {
    /// Queries every node of `grid`.
    pub fn evaluate<F: FieldAccess<T> + ?Sized>(grid: &GridSpec<T>, field: &F) -> Result<Self> {
        grid.validate()?;
        let (nx, ny) = grid.dims();
        Self::evaluate_masked(grid, field, &vec![true; nx * ny])
    }

    fn evaluate_masked<F: FieldAccess<T> + ?Sized>(grid: &GridSpec<T>, field: &F, wanted: &[bool]) -> Result<Self> {
        let (nx, ny) = grid.dims();
        let rows: Vec<Result<Vec<(T, T)>>> = (0..ny)
            .into_par_iter()
            .map(|j| {
                (0..nx)
                    .map(|i| if wanted[j * nx + i] { field.sample(grid.node(i, j)) } else { Ok((T::nan(), T::nan())) })
                    .collect()
            })
            .collect();
        let mut mean = Vec::with_capacity(nx * ny);
        let mut variance = Vec::with_capacity(nx * ny);
        for row in rows {
            for (m, v) in row? {
                mean.push(m);
                variance.push(v);
            }
        }
        Ok(Self { nx, ny, mean, variance, evaluated: wanted.to_vec() })
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> (T, T) {
        let k = j * self.nx + i;
        (self.mean[k], self.variance[k])
    }
}

#[derive(Debug, Clone, Copy)]
struct Crossing<T> {
    point: Point2<T>,
    variance: T,
}

/// Segments as edge pairs for each of the 16 corner-inside masks; saddles are handled separately.
/// Corners: 0 = (i,j), 1 = (i+1,j), 2 = (i+1,j+1), 3 = (i,j+1). Edges: 0 bottom, 1 right, 2 top, 3 left.
const CASE_TABLE: [&[(usize, usize)]; 16] = [
    &[],
    &[(3, 0)],
    &[(0, 1)],
    &[(3, 1)],
    &[(1, 2)],
    &[],
    &[(0, 2)],
    &[(3, 2)],
    &[(2, 3)],
    &[(0, 2)],
    &[],
    &[(1, 2)],
    &[(1, 3)],
    &[(0, 1)],
    &[(3, 0)],
    &[],
];

/// Extracts the `mean = c` contour of `field` over `grid`.
pub fn extract_contour<T: Scalar, F: FieldAccess<T> + ?Sized>(
    grid: &GridSpec<T>,
    field: &F,
    options: &ContourOptions<T>,
) -> Result<Vec<ContourSegment<T>>> {
    grid.validate()?;
    let (nx, ny) = grid.dims();
    let c = field.level_set_c();
    let wanted = if options.skip_rule { needed_nodes(grid, field, c) } else { vec![true; nx * ny] };
    let samples = GridSamples::evaluate_masked(grid, field, &wanted)?;
    contour_from_samples(grid, &samples, field, options)
}

/// Nodes belonging to at least one cell the skip rule keeps.
fn needed_nodes<T: Scalar, F: FieldAccess<T> + ?Sized>(grid: &GridSpec<T>, field: &F, c: T) -> Vec<bool> {
    let (nx, ny) = grid.dims();
    let hi = T::lit(1.5) * c;
    let lo = T::lit(0.5) * c;
    // 1 = prior-only above 1.5c, -1 = prior-only below 0.5c, 0 = must evaluate.
    let tags: Vec<i8> = (0..ny)
        .into_par_iter()
        .flat_map_iter(|j| {
            (0..nx).map(move |i| match field.prior_only(grid.node(i, j)) {
                Some(p) if p > hi => 1,
                Some(p) if p < lo => -1,
                _ => 0,
            })
        })
        .collect();
    let mut wanted = vec![false; nx * ny];
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let ids = [j * nx + i, j * nx + i + 1, (j + 1) * nx + i + 1, (j + 1) * nx + i];
            let t0 = tags[ids[0]];
            if t0 != 0 && ids.iter().all(|k| tags[*k] == t0) {
                continue;
            }
            for k in ids {
                wanted[k] = true;
            }
        }
    }
    wanted
}

/// Marching squares over precomputed node samples; `field` is used for saddle centres and refinement.
pub fn contour_from_samples<T: Scalar, F: FieldAccess<T> + ?Sized>(
    grid: &GridSpec<T>,
    samples: &GridSamples<T>,
    field: &F,
    options: &ContourOptions<T>,
) -> Result<Vec<ContourSegment<T>>> {
    let (nx, ny) = (samples.nx, samples.ny);
    if (nx, ny) != grid.dims() {
        return Err(Error::contract("samples do not match grid"));
    }
    let c = field.level_set_c();
    let inside = |i: usize, j: usize| samples.at(i, j).0 > c;
    let usable = |i: usize, j: usize| samples.evaluated[j * nx + i];

    // Crossings on horizontal edges (i,j)-(i+1,j) and vertical edges (i,j)-(i,j+1), shared by neighbouring cells.
    let h_edges: Vec<Result<Option<Crossing<T>>>> = (0..ny * (nx - 1))
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k % (nx - 1), k / (nx - 1));
            if !(usable(i, j) && usable(i + 1, j)) || inside(i, j) == inside(i + 1, j) {
                return Ok(None);
            }
            edge_crossing(grid, samples, field, (i, j), (i + 1, j), options).map(Some)
        })
        .collect();
    let v_edges: Vec<Result<Option<Crossing<T>>>> = (0..(ny - 1) * nx)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k % nx, k / nx);
            if !(usable(i, j) && usable(i, j + 1)) || inside(i, j) == inside(i, j + 1) {
                return Ok(None);
            }
            edge_crossing(grid, samples, field, (i, j), (i, j + 1), options).map(Some)
        })
        .collect();
    let h_edges = h_edges.into_iter().collect::<Result<Vec<_>>>()?;
    let v_edges = v_edges.into_iter().collect::<Result<Vec<_>>>()?;

    let mut segments = Vec::new();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            if !(usable(i, j) && usable(i + 1, j) && usable(i + 1, j + 1) && usable(i, j + 1)) {
                continue;
            }
            let mask = inside(i, j) as usize
                | (inside(i + 1, j) as usize) << 1
                | (inside(i + 1, j + 1) as usize) << 2
                | (inside(i, j + 1) as usize) << 3;
            if mask == 0 || mask == 15 {
                continue;
            }
            let edge = |e: usize| -> Crossing<T> {
                let found = match e {
                    0 => h_edges[j * (nx - 1) + i],
                    1 => v_edges[j * nx + i + 1],
                    2 => h_edges[(j + 1) * (nx - 1) + i],
                    _ => v_edges[j * nx + i],
                };
                found.expect("straddling edge has a crossing")
            };
            let pairs: &[(usize, usize)] = match mask {
                5 | 10 => {
                    let h = grid.cell_size_h * T::lit(0.5);
                    let centre = grid.node(i, j) + Point2::new(h, h);
                    let centre_inside = field.sample(centre)?.0 > c;
                    // Free centre joins the free diagonal.
                    match (mask, centre_inside) {
                        (5, true) | (10, false) => &[(0, 1), (2, 3)],
                        _ => &[(3, 0), (1, 2)],
                    }
                }
                m => CASE_TABLE[m],
            };
            for (ea, eb) in pairs {
                let (a, b) = (edge(*ea), edge(*eb));
                segments.push(ContourSegment {
                    a: a.point,
                    b: b.point,
                    var_a: a.variance,
                    var_b: b.variance,
                    kind: kind_from_variances(a.variance, b.variance, options.variance_wall_threshold),
                });
            }
        }
    }
    Ok(segments)
}

/// Linear crossing on the edge between two straddling nodes, optionally sharpened by Illinois iterations.
fn edge_crossing<T: Scalar, F: FieldAccess<T> + ?Sized>(
    grid: &GridSpec<T>,
    samples: &GridSamples<T>,
    field: &F,
    na: (usize, usize),
    nb: (usize, usize),
    options: &ContourOptions<T>,
) -> Result<Crossing<T>> {
    let c = field.level_set_c();
    let (pa, pb) = (grid.node(na.0, na.1), grid.node(nb.0, nb.1));
    let (ma, va) = samples.at(na.0, na.1);
    let (mb, vb) = samples.at(nb.0, nb.1);
    let interp = |t0: T, f0: T, t1: T, f1: T| t0 + (t1 - t0) * (c - f0) / (f1 - f0);
    let mut t = interp(T::zero(), ma, T::one(), mb);
    if options.refine_iterations > 0 {
        // Bracket [lo, hi] with g = mean - c of opposite signs at the ends.
        let (mut lo, mut glo) = (T::zero(), ma - c);
        let (mut hi, mut ghi) = (T::one(), mb - c);
        let mut side = 0i8;
        for _ in 0..options.refine_iterations {
            let g = field.sample(pa.lerp(pb, t))?.0 - c;
            if g == T::zero() {
                break;
            }
            if (g > T::zero()) == (glo > T::zero()) {
                lo = t;
                glo = g;
                if side == -1 {
                    ghi = ghi * T::lit(0.5);
                }
                side = -1;
            } else {
                hi = t;
                ghi = g;
                if side == 1 {
                    glo = glo * T::lit(0.5);
                }
                side = 1;
            }
            t = lo + (hi - lo) * glo / (glo - ghi);
        }
    }
    let eps = T::lit(1e-6);
    let t = t.max(eps).min(T::one() - eps);
    Ok(Crossing { point: pa.lerp(pb, t), variance: va + (vb - va) * t })
}

/// Segments split by the variance rule.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurfacePartition<T> {
    pub walls: Vec<ContourSegment<T>>,
    pub frontiers: Vec<ContourSegment<T>>,
}

/// Partitions `segments` into walls and frontiers using the configured threshold; nothing is dropped.
pub fn filter_surface<T: Scalar>(segments: &[ContourSegment<T>], config: &FieldConfig<T>) -> SurfacePartition<T> {
    let mut out = SurfacePartition { walls: Vec::new(), frontiers: Vec::new() };
    for s in segments {
        let mut s = *s;
        s.kind = kind_from_variances(s.var_a, s.var_b, config.variance_wall_threshold);
        match s.kind {
            CrossingKind::Wall => out.walls.push(s),
            _ => out.frontiers.push(s),
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
struct SegmentRecord {
    ax: f64,
    ay: f64,
    bx: f64,
    by: f64,
    var_a: f64,
    var_b: f64,
    kind: CrossingKind,
}

/// CSV with header `ax,ay,bx,by,var_a,var_b,kind`, one segment per row.
pub fn write_contour_csv<T: Scalar>(w: impl Write, segments: &[ContourSegment<T>]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for s in segments {
        out.serialize(SegmentRecord {
            ax: s.a.x.to_f64_lossy(),
            ay: s.a.y.to_f64_lossy(),
            bx: s.b.x.to_f64_lossy(),
            by: s.b.y.to_f64_lossy(),
            var_a: s.var_a.to_f64_lossy(),
            var_b: s.var_b.to_f64_lossy(),
            kind: s.kind,
        })?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_contour_csv<T: Scalar>(r: impl Read) -> Result<Vec<ContourSegment<T>>> {
    let mut input = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in input.deserialize() {
        let s: SegmentRecord = rec?;
        if s.kind == CrossingKind::None {
            return Err(Error::Format("contour segment kind must be wall or frontier".into()));
        }
        out.push(ContourSegment {
            a: Point2::new(T::lit(s.ax), T::lit(s.ay)),
            b: Point2::new(T::lit(s.bx), T::lit(s.by)),
            var_a: T::lit(s.var_a),
            var_b: T::lit(s.var_b),
            kind: s.kind,
        });
    }
    Ok(out)
}
