//! Dataset directories: `scenes.csv` (`scene,angle_deg,height_m,fov_deg`),
//! `annotations.csv` (`image,row,col`), `<scene>.pgm` images and `<scene>_roi.pgm` masks.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::crowd::{Annotation, Scene};
use crate::error::{invalid, Error, Result};
use crate::geometry::CameraExtrinsics;
use crate::pgm;
use crate::tensor::Tensor;

pub const SCENES_FILE: &str = "scenes.csv";
pub const ANNOTATIONS_FILE: &str = "annotations.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene: String,
    pub angle_deg: f64,
    pub height_m: f64,
    pub fov_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub image: String,
    pub row: f64,
    pub col: f64,
}

fn check_name(name: &str) -> Result<()> {
    if name.is_empty() || name.contains(['/', '\\']) || name.starts_with('.') {
        return Err(invalid!("unusable scene name {name:?}"));
    }
    Ok(())
}

/// Writes every scene into `dir`, creating it if needed.
pub fn write_dataset(dir: &Path, scenes: &[Scene]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut meta = csv::Writer::from_path(dir.join(SCENES_FILE))?;
    let mut points = csv::Writer::from_path(dir.join(ANNOTATIONS_FILE))?;
    for s in scenes {
        check_name(&s.name)?;
        meta.serialize(SceneRecord {
            scene: s.name.clone(),
            angle_deg: s.camera.angle_deg,
            height_m: s.camera.height_m,
            fov_deg: s.camera.fov_deg,
        })?;
        for &(row, col) in &s.annotation.points {
            points.serialize(PointRecord {
                image: s.name.clone(),
                row,
                col,
            })?;
        }
        pgm::write_gray16(&dir.join(format!("{}.pgm", s.name)), s.rows(), s.cols(), s.image.data())?;
        pgm::write_mask(&dir.join(format!("{}_roi.pgm", s.name)), &s.roi)?;
    }
    meta.flush()?;
    points.flush()?;
    Ok(())
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(csv::Reader::from_path(path)?)
}

/// Loads a dataset directory; a missing ROI file means the whole image.
pub fn read_dataset(dir: &Path) -> Result<Vec<Scene>> {
    let mut meta = open_csv(&dir.join(SCENES_FILE))?;
    let records: Vec<SceneRecord> = meta.deserialize().collect::<std::result::Result<_, _>>()?;
    let mut by_scene: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut points = open_csv(&dir.join(ANNOTATIONS_FILE))?;
    for rec in points.deserialize::<PointRecord>() {
        let rec = rec?;
        by_scene.entry(rec.image).or_default().push((rec.row, rec.col));
    }
    if let Some(unknown) = by_scene.keys().find(|k| !records.iter().any(|r| &r.scene == *k)) {
        return Err(Error::Format(format!("annotations reference unknown scene {unknown:?}")));
    }
    records
        .iter()
        .map(|rec| {
            check_name(&rec.scene)?;
            let (rows, cols, values) = pgm::read_gray(&dir.join(format!("{}.pgm", rec.scene)))?;
            let roi_path = dir.join(format!("{}_roi.pgm", rec.scene));
            let roi = if roi_path.exists() {
                pgm::read_mask(&roi_path)?
            } else {
                crate::crowd::Mask::full(rows, cols)
            };
            let camera = CameraExtrinsics::new(rec.angle_deg, rec.height_m, rec.fov_deg, rows, cols);
            let pts = by_scene.remove(&rec.scene).unwrap_or_default();
            Scene::new(
                &rec.scene,
                Tensor::from_vec(&[rows, cols], values)?,
                camera,
                Annotation::new(rows, cols, pts)?,
                roi,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crowd::{synth_scene, Mask, SynthConfig};

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig::default();
        let mut a = synth_scene(&cfg, "a", -20.0, 3.0, 5, 1).unwrap();
        a.roi = Mask::from_fn(cfg.rows, cfg.cols, |r, _| r > 10);
        let b = synth_scene(&cfg, "b", -50.0, 9.0, 0, 2).unwrap();
        write_dataset(dir.path(), &[a.clone(), b.clone()]).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].annotation, a.annotation);
        assert_eq!(back[0].roi, a.roi);
        assert_eq!(back[0].camera, a.camera);
        assert!(back[1].annotation.is_empty());
        for (x, y) in back[0].image.data().iter().zip(a.image.data()) {
            assert!((x - y).abs() < 1e-4);
        }
    }

    #[test]
    fn missing_files_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::MissingFile(_))));
    }
}
