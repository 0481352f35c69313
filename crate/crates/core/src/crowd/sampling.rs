//! Patch extraction with density-regression and count-class targets.

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::crowd::{AuxKind, DensityMap, Mask, Scene, SceneContext};
use crate::error::{invalid, Result};
use crate::rng::rng_for;
use crate::tensor::Tensor;

/// Number of count classes: 0..=13 people plus "14 or more".
pub const COUNT_CLASSES: usize = 15;

/// Maps a reflected coordinate back into `0..n` (mirror without repeating the edge).
pub fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut k = i.rem_euclid(period);
    if k >= n {
        k = period - k;
    }
    k as usize
}

/// `size x size` window of `image[rows, cols]` centered on `(row, col)`, reflected at borders.
pub fn extract_patch(image: &Tensor<f64>, row: usize, col: usize, size: usize) -> Vec<f32> {
    let (rows, cols) = (image.shape()[0], image.shape()[1]);
    let half = (size / 2) as isize;
    let data = image.data();
    let mut out = Vec::with_capacity(size * size);
    for dr in -half..=half {
        let r = reflect_index(row as isize + dr, rows);
        for dc in -half..=half {
            let c = reflect_index(col as isize + dc, cols);
            out.push(data[r * cols + c] as f32);
        }
    }
    out
}

/// Count class for a number of people.
pub fn count_class(count: f64) -> usize {
    count.round().clamp(0.0, (COUNT_CLASSES - 1) as f64) as usize
}

/// Where patches are taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    /// Odd patch side length.
    pub patch: usize,
    /// Spacing between patch centers.
    pub stride: usize,
    /// Keep at most this many patches per scene (seeded subset); `None` keeps all.
    pub max_per_scene: Option<usize>,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.patch % 2 == 0 {
            return Err(invalid!("patch size {} must be odd", self.patch));
        }
        if self.stride == 0 {
            return Err(invalid!("grid stride must be positive"));
        }
        if self.max_per_scene == Some(0) {
            return Err(invalid!("max patches per scene must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSample {
    /// Grayscale pixels, `patch * patch`, row-major.
    pub pixels: Vec<f32>,
    pub context: SceneContext,
    /// Density at the patch's center pixel.
    pub density: f64,
    pub class: usize,
    pub row: usize,
    pub col: usize,
}

/// Raw side information of a patch centered on `row`.
pub fn patch_context(scene: &Scene, kind: AuxKind, row: usize) -> Result<SceneContext> {
    match kind {
        AuxKind::Perspective => SceneContext::perspective(scene.pmap.row(row)?),
        AuxKind::AngleHeight => {
            SceneContext::angle_height(scene.camera.angle_deg, scene.camera.height_m)
        }
        AuxKind::KernelRadius => Err(invalid!("crowd scenes carry no kernel radius")),
    }
}

/// Samples patches on a seeded grid inside the scene's ROI.
///
/// The grid origin is drawn from the seed; with `max_per_scene` a seeded subset is kept
/// in scan order.
pub fn sample_patches(
    scene: &Scene,
    dmap: &DensityMap,
    kind: AuxKind,
    grid: &GridSpec,
    seed: u64,
) -> Result<Vec<PatchSample>> {
    grid.validate()?;
    let (rows, cols) = (scene.rows(), scene.cols());
    if (dmap.rows(), dmap.cols()) != (rows, cols) {
        return Err(invalid!("density map does not match the scene image"));
    }
    let mut rng = rng_for(seed, &format!("patches/{}", scene.name), 0);
    let (r0, c0) = (
        rng.gen_range(0..grid.stride.min(rows)),
        rng.gen_range(0..grid.stride.min(cols)),
    );
    let mut centers: Vec<(usize, usize)> = (r0..rows)
        .step_by(grid.stride)
        .flat_map(|r| (c0..cols).step_by(grid.stride).map(move |c| (r, c)))
        .filter(|&(r, c)| scene.roi.get(r, c))
        .collect();
    if let Some(k) = grid.max_per_scene {
        if centers.len() > k {
            let mut chosen: Vec<usize> = (0..centers.len()).collect();
            chosen.shuffle(&mut rng);
            chosen.truncate(k);
            chosen.sort_unstable();
            centers = chosen.into_iter().map(|i| centers[i]).collect();
        }
    }
    let half = (grid.patch / 2) as isize;
    centers
        .into_iter()
        .map(|(r, c)| {
            let (ri, ci) = (r as isize, c as isize);
            let people = scene
                .annotation
                .count_in_window((ri - half, ri + half), (ci - half, ci + half));
            Ok(PatchSample {
                pixels: extract_patch(&scene.image, r, c, grid.patch),
                context: patch_context(scene, kind, r)?,
                density: dmap.at(r, c),
                class: count_class(people as f64),
                row: r,
                col: c,
            })
        })
        .collect()
}

/// Strided prediction grid: centers `s/2 + k s` inside the mask.
pub fn stride_centers(roi: &Mask, stride: usize) -> Result<Vec<(usize, usize)>> {
    if stride == 0 {
        return Err(invalid!("stride must be at least 1"));
    }
    let off = stride / 2;
    Ok((off..roi.rows)
        .step_by(stride)
        .flat_map(|r| (off..roi.cols).step_by(stride).map(move |c| (r, c)))
        .filter(|&(r, c)| roi.get(r, c))
        .collect())
}
