//! Grayscale PGM and CSV renders of grid samples.

use std::io::Write;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, GrayImage, ImageEncoder, Luma};

use crate::error::{Error, Result};

/// Writes `values` (row-major, row 0 at the bottom) as an 8-bit PGM with north up.
///
/// Values are mapped linearly from `[lo, hi]` to `[0, 255]` and clamped; NaN renders black.
pub fn write_pgm(path: &Path, nx: usize, ny: usize, values: &[f64], lo: f64, hi: f64) -> Result<()> {
    if values.len() != nx * ny || nx == 0 || ny == 0 {
        return Err(Error::contract(format!("raster of {} values cannot be {nx}x{ny}", values.len())));
    }
    if !(hi > lo) {
        return Err(Error::contract("raster range needs hi > lo"));
    }
    let img = GrayImage::from_fn(nx as u32, ny as u32, |x, y| {
        let v = values[(ny - 1 - y as usize) * nx + x as usize];
        let g = if v.is_nan() { 0.0 } else { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) * 255.0 };
        Luma([g.round() as u8])
    });
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    PnmEncoder::new(file).with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary)).write_image(
        img.as_raw(),
        nx as u32,
        ny as u32,
        ExtendedColorType::L8,
    )?;
    Ok(())
}

/// Writes `values` as CSV, one grid row per line, row 0 (smallest y) first.
pub fn write_matrix_csv(mut w: impl Write, nx: usize, ny: usize, values: &[f64]) -> Result<()> {
    if values.len() != nx * ny {
        return Err(Error::contract(format!("matrix of {} values cannot be {nx}x{ny}", values.len())));
    }
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(&mut w);
    for row in values.chunks(nx.max(1)) {
        out.write_record(row.iter().map(|v| format!("{v:e}")))?;
    }
    out.flush()?;
    Ok(())
}
