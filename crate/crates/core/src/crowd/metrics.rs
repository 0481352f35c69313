//! Count estimation from center-pixel density predictions, and count errors.

use crate::crowd::{make_density_map, stride_centers, DensityMap, Mask, Scene, QUANTUM};
use crate::error::{invalid, Result};

/// Anything that predicts the density at given pixel centers of a scene.
pub trait DensityPredictor: Sync {
    fn predict_at(&self, scene: &Scene, centers: &[(usize, usize)]) -> Result<Vec<f64>>;
}

/// Returns ground-truth density values: the ideal predictor.
#[derive(Debug, Clone, Copy, Default)]
pub struct DensityOracle;

impl DensityPredictor for DensityOracle {
    fn predict_at(&self, scene: &Scene, centers: &[(usize, usize)]) -> Result<Vec<f64>> {
        let dmap: DensityMap = make_density_map(&scene.annotation, &scene.pmap)?;
        Ok(centers.iter().map(|&(r, c)| dmap.at(r, c)).collect())
    }
}

/// Mean absolute difference between predicted and true counts.
pub fn evaluate_mae(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    if predicted.is_empty() {
        return Err(invalid!("MAE of an empty list"));
    }
    if predicted.len() != truth.len() {
        return Err(invalid!("{} predictions for {} counts", predicted.len(), truth.len()));
    }
    Ok(predicted.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / predicted.len() as f64)
}

fn quantize(v: f64) -> f64 {
    (v / QUANTUM).round() * QUANTUM
}

/// Count estimate `s^2 * sum of predictions` over an `s`-strided grid inside `roi`.
pub fn predict_count(
    model: &dyn DensityPredictor,
    scene: &Scene,
    stride: usize,
    roi: &Mask,
) -> Result<f64> {
    Ok(predict_region_counts(model, scene, stride, roi, &[])?.0)
}

/// Full-ROI count plus one count per region (each region intersected with `roi`).
///
/// Predictions are summed on the density quantum grid, so counts of regions that
/// partition the ROI add up exactly to the full count.
pub fn predict_region_counts(
    model: &dyn DensityPredictor,
    scene: &Scene,
    stride: usize,
    roi: &Mask,
    regions: &[Mask],
) -> Result<(f64, Vec<f64>)> {
    let centers = stride_centers(roi, stride)?;
    for m in regions {
        if (m.rows, m.cols) != (roi.rows, roi.cols) {
            return Err(invalid!("region mask size does not match the ROI"));
        }
    }
    if (roi.rows, roi.cols) != (scene.rows(), scene.cols()) {
        return Err(invalid!("ROI size does not match the scene"));
    }
    if centers.is_empty() {
        return Ok((0.0, vec![0.0; regions.len()]));
    }
    let preds: Vec<f64> = model
        .predict_at(scene, &centers)?
        .into_iter()
        .map(quantize)
        .collect();
    let area = (stride * stride) as f64;
    let total = preds.iter().sum::<f64>() * area;
    let per_region = regions
        .iter()
        .map(|m| {
            centers
                .iter()
                .zip(&preds)
                .filter(|((r, c), _)| m.get(*r, *c))
                .map(|(_, p)| p)
                .sum::<f64>()
                * area
        })
        .collect();
    Ok((total, per_region))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crowd::{count_in_roi, synth_scene, SynthConfig};

    #[test]
    fn mae_basics() {
        assert_eq!(evaluate_mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(evaluate_mae(&[2.0, 3.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert!(evaluate_mae(&[], &[]).is_err());
        assert!(evaluate_mae(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn oracle_recovers_counts() {
        let cfg = SynthConfig::default();
        let scene = synth_scene(&cfg, "s", -40.0, 4.0, 20, 5).unwrap();
        let full = Mask::full(cfg.rows, cfg.cols);
        let exact = predict_count(&DensityOracle, &scene, 1, &full).unwrap();
        assert!((exact - 20.0).abs() < 1e-6);
        let coarse = predict_count(&DensityOracle, &scene, 4, &full).unwrap();
        assert!((coarse - 20.0).abs() / 20.0 < 0.05, "{coarse}");
        assert_eq!(
            predict_count(&DensityOracle, &scene, 4, &Mask::empty(cfg.rows, cfg.cols)).unwrap(),
            0.0
        );
    }

    #[test]
    fn region_counts_add_up_exactly() {
        let cfg = SynthConfig::default();
        let scene = synth_scene(&cfg, "s", -25.0, 3.0, 30, 6).unwrap();
        let full = Mask::full(cfg.rows, cfg.cols);
        let bars = Mask::bars(cfg.rows, cfg.cols, 3).unwrap();
        let (total, parts) = predict_region_counts(&DensityOracle, &scene, 2, &full, &bars).unwrap();
        assert_eq!(parts.iter().sum::<f64>(), total);
        let dmap = make_density_map(&scene.annotation, &scene.pmap).unwrap();
        assert_eq!(count_in_roi(&dmap, &full).unwrap(), 30.0);
    }
}
