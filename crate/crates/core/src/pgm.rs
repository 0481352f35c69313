//! Binary PGM (P5) images: 16-bit grayscale pictures and 8-bit masks.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::DynamicImage;

use crate::crowd::Mask;
use crate::error::{invalid, Error, Result};

fn format_err(path: &Path, e: image::ImageError) -> Error {
    Error::Format(format!("{}: {e}", path.display()))
}

/// Writes a binary PGM; samples above 255 are stored as big-endian 16-bit words.
fn encode(path: &Path, rows: usize, cols: usize, maxval: u16, samples: &[u16]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P5\n{cols} {rows}\n{maxval}\n")?;
    if maxval > 255 {
        for v in samples {
            out.write_all(&v.to_be_bytes())?;
        }
    } else {
        let bytes: Vec<u8> = samples.iter().map(|&v| v as u8).collect();
        out.write_all(&bytes)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `values` (row-major, expected in `[0, 1]`) as a 16-bit PGM.
pub fn write_gray16(path: &Path, rows: usize, cols: usize, values: &[f64]) -> Result<()> {
    if values.len() != rows * cols {
        return Err(invalid!("{} values for a {rows}x{cols} image", values.len()));
    }
    if rows == 0 || cols == 0 {
        return Err(invalid!("bad image dimensions {rows}x{cols}"));
    }
    let data: Vec<u16> = values
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    encode(path, rows, cols, u16::MAX, &data)
}

/// Writes non-negative `values` as a 16-bit PGM scaled so the maximum maps to 65535.
pub fn write_gray16_scaled(path: &Path, rows: usize, cols: usize, values: &[f64]) -> Result<()> {
    let max = values.iter().copied().fold(0.0, f64::max);
    let scale = if max > 0.0 { 1.0 / max } else { 1.0 };
    let scaled: Vec<f64> = values.iter().map(|v| v * scale).collect();
    write_gray16(path, rows, cols, &scaled)
}

/// Writes a mask as an 8-bit PGM with 255 for set pixels.
pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let data: Vec<u16> = mask.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
    encode(path, mask.rows, mask.cols, 255, &data)
}

fn decode(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    image::ImageReader::open(path)?
        .with_guessed_format()?
        .decode()
        .map_err(|e| format_err(path, e))
}

/// Reads a grayscale image as `(rows, cols, values in [0, 1])`.
pub fn read_gray(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let img = decode(path)?;
    let (cols, rows) = (img.width() as usize, img.height() as usize);
    let values = match img {
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        other => other
            .into_luma16()
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 65535.0)
            .collect(),
    };
    Ok((rows, cols, values))
}

/// Reads a mask; any non-zero pixel is set.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = decode(path)?.into_luma8();
    let (cols, rows) = (img.width() as usize, img.height() as usize);
    Ok(Mask {
        rows,
        cols,
        data: img.into_raw().into_iter().map(|v| v > 0).collect(),
    })
}
