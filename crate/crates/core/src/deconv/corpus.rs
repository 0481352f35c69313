//! Procedural grayscale image corpus and its on-disk layout
//! (`<dir>/{train,val,test}/NNNN.pgm`).

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::pgm;
use crate::rng::{rng_for, Rng};
use crate::tensor::Tensor;

/// Pixel values are mapped into `[LOW, HIGH]` so a sigmoid output can reach them.
pub const LOW: f64 = 0.02;
pub const HIGH: f64 = 0.98;

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub train: Vec<Tensor<f64>>,
    pub val: Vec<Tensor<f64>>,
    pub test: Vec<Tensor<f64>>,
}

impl Corpus {
    pub fn split(&self, name: &str) -> Result<&[Tensor<f64>]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(invalid!("unknown split {other:?}")),
        }
    }
}

fn add_shape(rng: &mut Rng, img: &mut [f64], size: usize) {
    let s = size as f64;
    let level = rng.gen_range(-1.0..1.0);
    match rng.gen_range(0..4) {
        0 => {
            let (r0, c0) = (rng.gen_range(0.0..s), rng.gen_range(0.0..s));
            let (h, w) = (rng.gen_range(3.0..s / 2.0), rng.gen_range(3.0..s / 2.0));
            for i in 0..size {
                for j in 0..size {
                    let (y, x) = (i as f64, j as f64);
                    if y >= r0 && y < r0 + h && x >= c0 && x < c0 + w {
                        img[i * size + j] = level;
                    }
                }
            }
        }
        1 => {
            let (cy, cx, rad) = (rng.gen_range(0.0..s), rng.gen_range(0.0..s), rng.gen_range(2.0..s / 4.0));
            for i in 0..size {
                for j in 0..size {
                    let (dy, dx) = (i as f64 + 0.5 - cy, j as f64 + 0.5 - cx);
                    if dy * dy + dx * dx <= rad * rad {
                        img[i * size + j] = level;
                    }
                }
            }
        }
        2 => {
            // stripes inside a band
            let angle = rng.gen_range(0.0..PI);
            let period = rng.gen_range(3.0..12.0);
            let (ny, nx) = (angle.sin(), angle.cos());
            let (c0, half) = (rng.gen_range(0.0..s), rng.gen_range(4.0..s / 3.0));
            for i in 0..size {
                for j in 0..size {
                    let along = i as f64 * nx - j as f64 * ny;
                    if (along - c0 + s / 2.0).abs() < half {
                        let t = (i as f64 * ny + j as f64 * nx) / period;
                        img[i * size + j] += level * (2.0 * PI * t).sin();
                    }
                }
            }
        }
        _ => {
            // straight line a few pixels wide
            let (y0, x0) = (rng.gen_range(0.0..s), rng.gen_range(0.0..s));
            let angle = rng.gen_range(0.0..PI);
            let width = rng.gen_range(0.7..2.5);
            let (ny, nx) = (angle.cos(), -angle.sin());
            for i in 0..size {
                for j in 0..size {
                    let d = (i as f64 - y0) * ny + (j as f64 - x0) * nx;
                    if d.abs() < width {
                        img[i * size + j] = level;
                    }
                }
            }
        }
    }
}

/// One `size x size` image: smooth shading plus random rectangles, disks, stripe bands
/// and lines, min-max scaled into `[LOW, HIGH]`.
pub fn procedural_image(size: usize, seed: u64, index: u64) -> Tensor<f64> {
    let mut rng = rng_for(seed, "deconv-image", index);
    let (gy, gx) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let s = size as f64;
    let mut img: Vec<f64> = (0..size * size)
        .map(|k| 0.5 * (gy * (k / size) as f64 + gx * (k % size) as f64) / s)
        .collect();
    let shapes = rng.gen_range(6..14);
    for _ in 0..shapes {
        add_shape(&mut rng, &mut img, size);
    }
    let (lo, hi) = img.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let data = img.iter().map(|v| LOW + (HIGH - LOW) * (v - lo) / span).collect();
    Tensor::from_vec(&[size, size], data).expect("square image")
}

/// Deterministic train/val/test corpus; image `k` of every split has its own stream.
pub fn procedural_corpus(counts: [usize; 3], size: usize, seed: u64) -> Result<Corpus> {
    if size < 8 {
        return Err(invalid!("image size {size} is too small"));
    }
    let make = |split: usize| -> Vec<Tensor<f64>> {
        (0..counts[split])
            .into_par_iter()
            .map(|k| procedural_image(size, seed, ((split as u64) << 32) | k as u64))
            .collect()
    };
    Ok(Corpus {
        train: make(0),
        val: make(1),
        test: make(2),
    })
}

pub fn image_path(dir: &Path, split: &str, index: usize) -> PathBuf {
    dir.join(split).join(format!("{index:04}.pgm"))
}

pub fn write_images(dir: &Path, images: &[Tensor<f64>]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (k, img) in images.iter().enumerate() {
        let (rows, cols) = img.dims2()?;
        pgm::write_gray16(&dir.join(format!("{k:04}.pgm")), rows, cols, img.data())?;
    }
    Ok(())
}

pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    for split in SPLITS {
        write_images(&dir.join(split), corpus.split(split)?)?;
    }
    Ok(())
}

/// Every `.pgm` in `dir` (sorted by name) as a `size x size` center crop mapped from
/// `[0, 1]` into `[LOW, HIGH]`. Images smaller than `size` are rejected.
pub fn read_image_folder(dir: &Path, size: usize) -> Result<Vec<Tensor<f64>>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")));
    files.sort();
    files
        .iter()
        .map(|p| {
            let (rows, cols, v) = pgm::read_gray(p)?;
            if rows < size || cols < size {
                return Err(invalid!("{} is {rows}x{cols}, smaller than {size}", p.display()));
            }
            let (r0, c0) = ((rows - size) / 2, (cols - size) / 2);
            let data = (0..size * size)
                .map(|k| LOW + (HIGH - LOW) * v[(r0 + k / size) * cols + c0 + k % size])
                .collect();
            Tensor::from_vec(&[size, size], data)
        })
        .collect()
}

/// Reads a corpus written by [`write_corpus`]; images are stored already in `[LOW, HIGH]`.
pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let read = |split: &str| -> Result<Vec<Tensor<f64>>> {
        let sub = dir.join(split);
        if !sub.is_dir() {
            return Ok(Vec::new());
        }
        let mut files: Vec<PathBuf> = std::fs::read_dir(&sub)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        files.retain(|p| p.extension().is_some_and(|e| e == "pgm"));
        files.sort();
        files
            .iter()
            .map(|p| {
                let (rows, cols, v) = pgm::read_gray(p)?;
                Tensor::from_vec(&[rows, cols], v)
            })
            .collect()
    };
    let corpus = Corpus {
        train: read("train")?,
        val: read("val")?,
        test: read("test")?,
    };
    if corpus.train.is_empty() && corpus.val.is_empty() && corpus.test.is_empty() {
        return Err(invalid!("no images under {}", dir.display()));
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn images_are_in_range_and_deterministic() {
        let a = procedural_image(64, 3, 5);
        assert_eq!(a, procedural_image(64, 3, 5));
        assert_ne!(a, procedural_image(64, 3, 6));
        let (lo, hi) = a.data().iter().fold((1.0f64, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
        assert!((lo - LOW).abs() < 1e-12 && (hi - HIGH).abs() < 1e-12);
    }

    #[test]
    fn corpus_round_trips_through_pgm() {
        let c = procedural_corpus([3, 1, 2], 16, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &c).unwrap();
        assert!(image_path(dir.path(), "test", 1).is_file());
        let back = read_corpus(dir.path()).unwrap();
        assert_eq!((back.train.len(), back.val.len(), back.test.len()), (3, 1, 2));
        for (a, b) in c.train.iter().zip(&back.train) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-5);
            }
        }
        let crops = read_image_folder(&dir.path().join("train"), 8).unwrap();
        assert_eq!(crops[0].shape(), &[8, 8]);
        assert!(read_image_folder(&dir.path().join("train"), 32).is_err());
    }
}
