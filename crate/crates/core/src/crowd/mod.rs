//! Crowd scenes: side information, density maps, patch sampling, a synthetic scene
//! simulator, dataset files and count evaluation.

pub mod context;
pub mod density;
pub mod io;
pub mod metrics;
pub mod sampling;
pub mod synth;

pub use context::{AuxKind, AuxNormalizer, SceneContext};
pub use density::{count_in_roi, make_density_map, Annotation, DensityMap, Mask, QUANTUM};
pub use metrics::{
    evaluate_mae, predict_count, predict_region_counts, DensityOracle, DensityPredictor,
};
pub use sampling::{
    count_class, extract_patch, patch_context, sample_patches, stride_centers, GridSpec,
    PatchSample, COUNT_CLASSES,
};
pub use synth::{synth_scene, SynthConfig};

use crate::geometry::{estimate_perspective_map, CameraExtrinsics, PerspectiveMap};
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// One annotated image with its camera, perspective map and region of interest.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub name: String,
    /// Grayscale `[rows, cols]` in `[0, 1]`.
    pub image: Tensor<f64>,
    pub camera: CameraExtrinsics,
    pub pmap: PerspectiveMap,
    pub annotation: Annotation,
    pub roi: Mask,
}

impl Scene {
    pub fn new(
        name: &str,
        image: Tensor<f64>,
        camera: CameraExtrinsics,
        annotation: Annotation,
        roi: Mask,
    ) -> Result<Self> {
        let (rows, cols) = image.dims2()?;
        if (camera.rows, camera.cols) != (rows, cols)
            || (annotation.rows, annotation.cols) != (rows, cols)
            || (roi.rows, roi.cols) != (rows, cols)
        {
            return Err(invalid!("scene {name}: image, camera, annotation and ROI sizes differ"));
        }
        let pmap = estimate_perspective_map(&camera)?;
        Ok(Scene {
            name: name.to_string(),
            image,
            camera,
            pmap,
            annotation,
            roi,
        })
    }

    pub fn rows(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.image.shape()[1]
    }

    /// True count inside the ROI (annotated points whose pixel is in the mask).
    pub fn roi_count(&self) -> usize {
        self.count_in(&self.roi)
    }

    pub fn count_in(&self, mask: &Mask) -> usize {
        self.annotation
            .points
            .iter()
            .filter(|&&(r, c)| mask.get(r as usize, c as usize))
            .count()
    }
}
