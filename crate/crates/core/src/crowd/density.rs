//! Ground-truth density maps built from point annotations.
//!
//! Pixel `(i, j)` covers `[i, i + 1) x [j, j + 1)`; annotation points use the same
//! continuous coordinates. Every person's kernel is renormalized to sum to one over the
//! image and stored on a 2^-40 grid, so map sums and regional sums are exact.

use crate::error::{invalid, Result};
use crate::geometry::PerspectiveMap;
use crate::tensor::Tensor;

/// Density quantum: per-pixel values are integer multiples of this.
pub const QUANTUM: f64 = 1.0 / (1u64 << 40) as f64;
const UNITS: i64 = 1 << 40;

/// Kernels are truncated this many standard deviations from the center.
pub const TRUNCATE_SIGMAS: f64 = 4.0;

/// Person locations `(row, col)` in one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub rows: usize,
    pub cols: usize,
    pub points: Vec<(f64, f64)>,
}

impl Annotation {
    pub fn new(rows: usize, cols: usize, points: Vec<(f64, f64)>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(invalid!("annotation for an empty image"));
        }
        for &(r, c) in &points {
            if !(r >= 0.0 && r < rows as f64 && c >= 0.0 && c < cols as f64) {
                return Err(invalid!("point ({r}, {c}) outside {rows}x{cols} image"));
            }
        }
        Ok(Annotation { rows, cols, points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points whose pixel lies inside the row/column ranges (inclusive).
    pub fn count_in_window(&self, rows: (isize, isize), cols: (isize, isize)) -> usize {
        self.points
            .iter()
            .filter(|&&(r, c)| {
                let (r, c) = (r.floor() as isize, c.floor() as isize);
                r >= rows.0 && r <= rows.1 && c >= cols.0 && c <= cols.1
            })
            .count()
    }
}

/// Binary region-of-interest mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn full(rows: usize, cols: usize) -> Self {
        Mask {
            rows,
            cols,
            data: vec![true; rows * cols],
        }
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        Mask {
            rows,
            cols,
            data: vec![false; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let data = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        Mask { rows, cols, data }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.cols + col]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        self.check_same(other.rows, other.cols)?;
        Ok(Mask {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect(),
        })
    }

    fn check_same(&self, rows: usize, cols: usize) -> Result<()> {
        if (self.rows, self.cols) != (rows, cols) {
            return Err(invalid!(
                "mask {}x{} does not match {rows}x{cols}",
                self.rows,
                self.cols
            ));
        }
        Ok(())
    }

    /// `n` horizontal bars of (nearly) equal height that partition the image.
    pub fn bars(rows: usize, cols: usize, n: usize) -> Result<Vec<Mask>> {
        if n == 0 || n > rows {
            return Err(invalid!("cannot split {rows} rows into {n} bars"));
        }
        Ok((0..n)
            .map(|b| {
                let (lo, hi) = (b * rows / n, (b + 1) * rows / n);
                Mask::from_fn(rows, cols, |r, _| r >= lo && r < hi)
            })
            .collect())
    }
}

/// Non-negative per-pixel density whose integral over a region is a count.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    pub values: Tensor<f64>,
}

impl DensityMap {
    pub fn rows(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values.data()[row * self.cols() + col]
    }

    pub fn total(&self) -> f64 {
        self.values.data().iter().sum()
    }
}

/// Gaussian weights at pixel centers of `[lo, hi]` around `mu`.
fn gaussian_axis(mu: f64, sigma: f64, lo: usize, hi: usize) -> Vec<f64> {
    (lo..=hi)
        .map(|i| {
            let d = (i as f64 + 0.5 - mu) / sigma;
            (-0.5 * d * d).exp()
        })
        .collect()
}

fn window(center: f64, sigma: f64, len: usize) -> (usize, usize) {
    let reach = (TRUNCATE_SIGMAS * sigma).ceil().max(1.0);
    let lo = (center - reach).floor().max(0.0) as usize;
    let hi = ((center + reach).floor() as usize).min(len - 1);
    (lo, hi)
}

/// Sums one elliptical Gaussian per person (horizontal std `M/5`, vertical std `M/2`,
/// `M` the perspective value at the person), each renormalized to unit mass.
pub fn make_density_map(ann: &Annotation, pmap: &PerspectiveMap) -> Result<DensityMap> {
    if (pmap.rows, pmap.cols) != (ann.rows, ann.cols) {
        return Err(invalid!(
            "perspective map {}x{} does not match annotation {}x{}",
            pmap.rows,
            pmap.cols,
            ann.rows,
            ann.cols
        ));
    }
    let (rows, cols) = (ann.rows, ann.cols);
    let mut units = vec![0i64; rows * cols];
    for &(r, c) in &ann.points {
        let m = pmap.at_point(r, c)?;
        if !(m > 0.0) || !m.is_finite() {
            return Err(invalid!("perspective value {m} at ({r}, {c}) must be positive"));
        }
        let (sigma_v, sigma_h) = (m / 2.0, m / 5.0);
        let (r0, r1) = window(r, sigma_v, rows);
        let (c0, c1) = window(c, sigma_h, cols);
        let gy = gaussian_axis(r, sigma_v, r0, r1);
        let gx = gaussian_axis(c, sigma_h, c0, c1);
        let mass = gy.iter().sum::<f64>() * gx.iter().sum::<f64>();
        let mut placed = 0i64;
        let (mut peak, mut peak_units) = (r.floor() as usize * cols + c.floor() as usize, -1i64);
        for (i, wy) in gy.iter().enumerate() {
            for (j, wx) in gx.iter().enumerate() {
                let q = (wy * wx / mass * UNITS as f64).round() as i64;
                let idx = (r0 + i) * cols + c0 + j;
                units[idx] += q;
                placed += q;
                if q > peak_units {
                    peak_units = q;
                    peak = idx;
                }
            }
        }
        // rounding residue goes to the strongest pixel so each person sums to exactly one
        units[peak] += UNITS - placed;
    }
    let data = units.iter().map(|&u| u as f64 * QUANTUM).collect();
    Ok(DensityMap {
        values: Tensor::from_vec(&[rows, cols], data)?,
    })
}

/// Sum of the density over the set pixels of `roi`.
pub fn count_in_roi(dmap: &DensityMap, roi: &Mask) -> Result<f64> {
    roi.check_same(dmap.rows(), dmap.cols())?;
    Ok(dmap
        .values
        .data()
        .iter()
        .zip(&roi.data)
        .filter(|(_, &m)| m)
        .map(|(v, _)| v)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{estimate_perspective_map, CameraExtrinsics};
    use proptest::prelude::*;

    fn flat_map(rows: usize, cols: usize, m: f64) -> PerspectiveMap {
        PerspectiveMap {
            rows,
            cols,
            row_values: vec![m; rows],
        }
    }

    #[test]
    fn empty_annotation_gives_zero_map() {
        let ann = Annotation::new(10, 12, vec![]).unwrap();
        let d = make_density_map(&ann, &flat_map(10, 12, 5.0)).unwrap();
        assert!(d.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_person_peak_matches_continuous_gaussian() {
        let ann = Annotation::new(80, 80, vec![(40.5, 40.5)]).unwrap();
        let d = make_density_map(&ann, &flat_map(80, 80, 10.0)).unwrap();
        let peak = 1.0 / (2.0 * std::f64::consts::PI * 2.0 * 5.0);
        assert!((peak - 0.01592).abs() < 1e-5);
        assert!((d.at(40, 40) - peak).abs() < 1e-4, "{}", d.at(40, 40));
        assert_eq!(d.total(), 1.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(Annotation::new(10, 10, vec![(10.0, 2.0)]).is_err());
        let ann = Annotation::new(10, 10, vec![(1.0, 2.0)]).unwrap();
        assert!(make_density_map(&ann, &flat_map(10, 10, 0.0)).is_err());
        assert!(make_density_map(&ann, &flat_map(9, 10, 1.0)).is_err());
    }

    #[test]
    fn roi_counts() {
        let ann = Annotation::new(30, 40, vec![(3.2, 4.1), (20.0, 30.0), (29.9, 0.0)]).unwrap();
        let d = make_density_map(&ann, &flat_map(30, 40, 6.0)).unwrap();
        assert_eq!(count_in_roi(&d, &Mask::full(30, 40)).unwrap(), 3.0);
        assert_eq!(count_in_roi(&d, &Mask::empty(30, 40)).unwrap(), 0.0);
        assert!(count_in_roi(&d, &Mask::full(30, 41)).is_err());
    }

    #[test]
    fn bars_partition_the_image() {
        let bars = Mask::bars(10, 3, 3).unwrap();
        let total: usize = bars.iter().map(|b| b.count()).sum();
        assert_eq!(total, 30);
        assert!(Mask::bars(2, 3, 3).is_err());
    }

    proptest! {
        #[test]
        fn mass_is_conserved_and_regions_add_exactly(
            points in prop::collection::vec((0.0f64..47.99, 0.0f64..63.99), 0..40),
            angle in -60.0f64..-15.0,
            split in 1usize..47,
        ) {
            let cam = CameraExtrinsics::new(angle, 5.0, 20.0, 48, 64);
            let pmap = estimate_perspective_map(&cam).unwrap();
            let ann = Annotation::new(48, 64, points.clone()).unwrap();
            let d = make_density_map(&ann, &pmap).unwrap();
            prop_assert!((d.total() - points.len() as f64).abs() < 1e-6);
            prop_assert!(d.values.data().iter().all(|&v| v >= 0.0));
            let top = Mask::from_fn(48, 64, |r, _| r < split);
            let bottom = Mask::from_fn(48, 64, |r, _| r >= split);
            let a = count_in_roi(&d, &top).unwrap();
            let b = count_in_roi(&d, &bottom).unwrap();
            let all = count_in_roi(&d, &Mask::full(48, 64)).unwrap();
            prop_assert_eq!(a + b, all);
        }
    }
}
