//! Synthetic multi-viewpoint crowd scenes.
//!
//! People are bright anisotropic Gaussian blobs over a textured background. Blob height
//! follows the perspective value at the person's row and the blob aspect ratio goes from
//! 3:1 at a -10 degree tilt to 1:1 at -65 degrees.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::crowd::{Annotation, Mask, Scene};
use crate::error::{invalid, Result};
use crate::geometry::{estimate_perspective_map, CameraExtrinsics, PerspectiveMap};
use crate::rng::{rng_for, Rng};
use crate::tensor::Tensor;

pub const ANGLE_RANGE: (f64, f64) = (-65.0, -10.0);
pub const HEIGHT_RANGE: (f64, f64) = (2.2, 16.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub rows: usize,
    pub cols: usize,
    pub fov_deg: f64,
    /// Mean background level.
    pub background: f64,
    /// Amplitude of the smooth background texture.
    pub texture: f64,
    /// Per-pixel noise standard deviation.
    pub grain: f64,
    /// Peak brightness added by one person.
    pub intensity: f64,
    /// Vertical standard deviation of a person blob, in meters.
    pub body_sigma_m: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            rows: 96,
            cols: 128,
            fov_deg: 16.0,
            background: 0.3,
            texture: 0.08,
            grain: 0.01,
            intensity: 0.45,
            body_sigma_m: 0.4,
        }
    }
}

impl SynthConfig {
    pub fn camera(&self, angle_deg: f64, height_m: f64) -> CameraExtrinsics {
        CameraExtrinsics::new(angle_deg, height_m, self.fov_deg, self.rows, self.cols)
    }
}

/// Height-to-width ratio of person blobs seen at tilt `angle_deg`.
pub fn blob_aspect(angle_deg: f64) -> f64 {
    let t = (angle_deg.abs() - 10.0) / 55.0;
    3.0 - 2.0 * t.clamp(0.0, 1.0)
}

fn background(cfg: &SynthConfig, rng: &mut Rng) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let freq = rng.gen_range(0.02..0.15) * 2.0 * PI;
            let dir = rng.gen_range(0.0..PI);
            (freq * dir.cos(), freq * dir.sin(), rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.5..1.0))
        })
        .collect();
    let norm: f64 = waves.iter().map(|w| w.3).sum();
    let noise = Normal::new(0.0, cfg.grain.max(0.0)).expect("finite std");
    (0..cfg.rows * cfg.cols)
        .map(|i| {
            let (r, c) = ((i / cfg.cols) as f64, (i % cfg.cols) as f64);
            let tex: f64 = waves.iter().map(|&(fy, fx, ph, a)| a * (fy * r + fx * c + ph).sin()).sum();
            let grain = if cfg.grain > 0.0 { noise.sample(rng) } else { 0.0 };
            cfg.background + cfg.texture * tex / norm + grain
        })
        .collect()
}

/// Adds one blob per point onto `image` (no clamping).
pub fn render_people(
    cfg: &SynthConfig,
    pmap: &PerspectiveMap,
    angle_deg: f64,
    points: &[(f64, f64)],
    image: &mut [f64],
) -> Result<()> {
    let aspect = blob_aspect(angle_deg);
    let (rows, cols) = (cfg.rows, cfg.cols);
    for &(r, c) in points {
        let sv = cfg.body_sigma_m * pmap.at_point(r, c)?;
        let sh = sv / aspect;
        let (rv, rh) = ((4.0 * sv).ceil() as isize, (4.0 * sh).ceil() as isize);
        let (pr, pc) = (r.floor() as isize, c.floor() as isize);
        for i in (pr - rv).max(0)..=(pr + rv).min(rows as isize - 1) {
            let dy = (i as f64 + 0.5 - r) / sv;
            let gy = (-0.5 * dy * dy).exp();
            for j in (pc - rh).max(0)..=(pc + rh).min(cols as isize - 1) {
                let dx = (j as f64 + 0.5 - c) / sh;
                image[i as usize * cols + j as usize] += cfg.intensity * gy * (-0.5 * dx * dx).exp();
            }
        }
    }
    Ok(())
}

/// Renders a scene seen from tilt `angle_deg` and height `height_m` with `n_people`
/// uniformly placed people. Deterministic in `seed`.
pub fn synth_scene(
    cfg: &SynthConfig,
    name: &str,
    angle_deg: f64,
    height_m: f64,
    n_people: usize,
    seed: u64,
) -> Result<Scene> {
    if !(angle_deg >= ANGLE_RANGE.0 && angle_deg <= ANGLE_RANGE.1) {
        return Err(invalid!("tilt angle {angle_deg}° outside [-65°, -10°]"));
    }
    if !(height_m >= HEIGHT_RANGE.0 && height_m <= HEIGHT_RANGE.1) {
        return Err(invalid!("camera height {height_m} m outside [2.2, 16.0] m"));
    }
    let camera = cfg.camera(angle_deg, height_m);
    let pmap = estimate_perspective_map(&camera)?;
    let mut rng = rng_for(seed, "synth", 0);
    let mut image = background(cfg, &mut rng);
    let points: Vec<(f64, f64)> = (0..n_people)
        .map(|_| {
            (
                rng.gen_range(0.0..cfg.rows as f64),
                rng.gen_range(0.0..cfg.cols as f64),
            )
        })
        .collect();
    render_people(cfg, &pmap, angle_deg, &points, &mut image)?;
    for v in &mut image {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(Scene {
        name: name.to_string(),
        image: Tensor::from_vec(&[cfg.rows, cfg.cols], image)?,
        annotation: Annotation::new(cfg.rows, cfg.cols, points)?,
        roi: Mask::full(cfg.rows, cfg.cols),
        camera,
        pmap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain() -> SynthConfig {
        SynthConfig {
            texture: 0.0,
            grain: 0.0,
            ..SynthConfig::default()
        }
    }

    /// Vertical and horizontal standard deviations of the brightness above background.
    fn blob_extent(cfg: &SynthConfig, angle: f64, height: f64, point: (f64, f64)) -> (f64, f64) {
        let pmap = estimate_perspective_map(&cfg.camera(angle, height)).unwrap();
        let mut img = vec![0.0; cfg.rows * cfg.cols];
        render_people(cfg, &pmap, angle, &[point], &mut img).unwrap();
        let (mut m, mut sr, mut sc) = (0.0, 0.0, 0.0);
        for (i, v) in img.iter().enumerate() {
            let (r, c) = ((i / cfg.cols) as f64 + 0.5, (i % cfg.cols) as f64 + 0.5);
            m += v;
            sr += v * (r - point.0).powi(2);
            sc += v * (c - point.1).powi(2);
        }
        ((sr / m).sqrt(), (sc / m).sqrt())
    }

    #[test]
    fn empty_scene_is_background_only() {
        let s = synth_scene(&plain(), "a", -30.0, 5.0, 0, 1).unwrap();
        assert!(s.annotation.is_empty());
        assert!(s.image.data().iter().all(|&v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn deterministic_in_seed() {
        let cfg = SynthConfig::default();
        let a = synth_scene(&cfg, "a", -40.0, 6.0, 12, 7).unwrap();
        let b = synth_scene(&cfg, "a", -40.0, 6.0, 12, 7).unwrap();
        let c = synth_scene(&cfg, "a", -40.0, 6.0, 12, 8).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.annotation, b.annotation);
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn lower_rows_render_larger_in_proportion_to_perspective() {
        let cfg = SynthConfig {
            rows: 200,
            cols: 200,
            ..plain()
        };
        let (angle, height) = (-35.0, 16.0);
        let pmap = estimate_perspective_map(&cfg.camera(angle, height)).unwrap();
        let (top, bottom) = ((60.5, 100.5), (150.5, 100.5));
        let (h_top, _) = blob_extent(&cfg, angle, height, top);
        let (h_bottom, _) = blob_extent(&cfg, angle, height, bottom);
        let m_ratio = pmap.row(150).unwrap() / pmap.row(60).unwrap();
        assert!(h_bottom > h_top);
        assert!(((h_bottom / h_top) / m_ratio - 1.0).abs() < 0.1);
    }

    #[test]
    fn aspect_ratio_follows_tilt() {
        let cfg = SynthConfig {
            rows: 160,
            cols: 160,
            ..plain()
        };
        for (angle, height, want) in [(-65.0, 16.0, 1.0), (-10.0, 2.2, 3.0)] {
            let (h, w) = blob_extent(&cfg, angle, height, (80.5, 80.5));
            let ratio = h / w;
            assert!((ratio - want).abs() < 0.1 * want, "{angle}: {ratio}");
        }
        assert!(blob_aspect(-20.0) > blob_aspect(-40.0));
    }

    #[test]
    fn rejects_out_of_range_cameras() {
        assert!(synth_scene(&plain(), "x", -70.0, 5.0, 1, 0).is_err());
        assert!(synth_scene(&plain(), "x", -30.0, 20.0, 1, 0).is_err());
    }
}
