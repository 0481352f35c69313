//! Perspective maps (pixels per meter on the ground plane) from camera tilt, height and
//! vertical field of view, assuming an ideal pinhole with equi-angular rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Rays closer than this to the horizon or the nadir are rejected.
pub const MIN_RAY_DEG: f64 = 1.0;
pub const MAX_RAY_DEG: f64 = 89.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraExtrinsics {
    /// Tilt below the horizontal in degrees, negative downward.
    pub angle_deg: f64,
    pub height_m: f64,
    /// Vertical field of view in degrees.
    pub fov_deg: f64,
    pub rows: usize,
    pub cols: usize,
}

impl CameraExtrinsics {
    pub fn new(angle_deg: f64, height_m: f64, fov_deg: f64, rows: usize, cols: usize) -> Self {
        CameraExtrinsics {
            angle_deg,
            height_m,
            fov_deg,
            rows,
            cols,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let geo = |m: String| Err(Error::Geometry(m));
        if !(self.angle_deg > -90.0 && self.angle_deg < 0.0) {
            return geo(format!("tilt angle {}° outside (-90°, 0°)", self.angle_deg));
        }
        if !(self.height_m > 0.0) || !self.height_m.is_finite() {
            return geo(format!("camera height {} m must be positive", self.height_m));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return geo(format!("field of view {}° outside (0°, 180°)", self.fov_deg));
        }
        if self.rows == 0 || self.cols == 0 {
            return geo("image has no pixels".into());
        }
        if self.angle_deg + self.fov_deg / 2.0 >= 0.0 {
            return geo(format!(
                "top rows look at or above the horizon (tilt {}°, fov {}°)",
                self.angle_deg, self.fov_deg
            ));
        }
        Ok(())
    }

    /// Angle of the ray through the center of `row` below the horizontal, in degrees.
    pub fn ray_angle_deg(&self, row: usize) -> f64 {
        let n = self.rows as f64;
        let center = (n - 1.0) / 2.0;
        -self.angle_deg - self.fov_deg * (center - row as f64) / n
    }

    /// Angular height of one pixel row in radians.
    pub fn row_step_rad(&self) -> f64 {
        self.fov_deg.to_radians() / self.rows as f64
    }
}

/// Column-constant perspective map stored as one value per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerspectiveMap {
    pub rows: usize,
    pub cols: usize,
    pub row_values: Vec<f64>,
}

impl PerspectiveMap {
    /// Full `[rows, cols]` tensor of values.
    pub fn values(&self) -> Tensor<f64> {
        let data = self
            .row_values
            .iter()
            .flat_map(|&v| std::iter::repeat(v).take(self.cols))
            .collect();
        Tensor::from_vec(&[self.rows, self.cols], data).expect("non-empty map")
    }

    pub fn row(&self, row: usize) -> Result<f64> {
        self.row_values.get(row).copied().ok_or_else(|| {
            crate::error::invalid!("row {row} outside map of {} rows", self.rows)
        })
    }

    /// Perspective value at pixel `(row, col)`.
    pub fn at(&self, row: usize, col: usize) -> Result<f64> {
        if col >= self.cols {
            return Err(crate::error::invalid!(
                "column {col} outside map of {} columns",
                self.cols
            ));
        }
        self.row(row)
    }

    /// Value at a sub-pixel location, taken from the row containing it.
    pub fn at_point(&self, row: f64, col: f64) -> Result<f64> {
        if !(row >= 0.0 && col >= 0.0) {
            return Err(crate::error::invalid!("point ({row}, {col}) outside map"));
        }
        self.at(row as usize, col as usize)
    }

    /// Value at the middle row.
    pub fn center(&self) -> f64 {
        self.row_values[self.rows / 2]
    }
}

/// Projected footprint of one pixel row: `(depth d, height h)` in meters.
///
/// With ray angle `b`, slant range `p = H / sin b` and angular step `s`, the footprint
/// is `d = p s / sin b` along the ground and `h = p s / cos b` on a vertical object.
pub fn row_footprint(cam: &CameraExtrinsics, row: usize) -> (f64, f64) {
    let beta = cam.ray_angle_deg(row).to_radians();
    let step = cam.row_step_rad();
    let range = cam.height_m / beta.sin();
    (range * step / beta.sin(), range * step / beta.cos())
}

/// Per-row pixels-per-meter `1 / sqrt(d h)`.
pub fn estimate_perspective_map(cam: &CameraExtrinsics) -> Result<PerspectiveMap> {
    cam.validate()?;
    let mut row_values = Vec::with_capacity(cam.rows);
    for r in 0..cam.rows {
        let beta = cam.ray_angle_deg(r);
        if !(beta > MIN_RAY_DEG && beta < MAX_RAY_DEG) {
            return Err(Error::Geometry(format!(
                "row {r} ray at {beta:.3}° below horizontal is outside ({MIN_RAY_DEG}°, {MAX_RAY_DEG}°)"
            )));
        }
        let (d, h) = row_footprint(cam, r);
        row_values.push(1.0 / (d * h).sqrt());
    }
    Ok(PerspectiveMap {
        rows: cam.rows,
        cols: cam.cols,
        row_values,
    })
}

pub fn perspective_at(map: &PerspectiveMap, row: usize, col: usize) -> Result<f64> {
    map.at(row, col)
}
