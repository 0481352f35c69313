//! Side information attached to scenes and its normalization.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxKind {
    /// Perspective value (pixels per meter) at the patch location.
    Perspective,
    /// Camera tilt angle in degrees and camera height in meters.
    AngleHeight,
    /// Blur kernel radius in pixels.
    KernelRadius,
}

impl AuxKind {
    pub fn dim(self) -> usize {
        match self {
            AuxKind::AngleHeight => 2,
            AuxKind::Perspective | AuxKind::KernelRadius => 1,
        }
    }
}

/// Raw side-information values of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneContext {
    pub kind: AuxKind,
    pub raw: Vec<f64>,
}

impl SceneContext {
    pub fn new(kind: AuxKind, raw: Vec<f64>) -> Result<Self> {
        if raw.len() != kind.dim() {
            return Err(invalid!("{kind:?} context needs {} values, got {}", kind.dim(), raw.len()));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("non-finite context value in {raw:?}"));
        }
        Ok(SceneContext { kind, raw })
    }

    pub fn perspective(m: f64) -> Result<Self> {
        Self::new(AuxKind::Perspective, vec![m])
    }

    pub fn angle_height(angle_deg: f64, height_m: f64) -> Result<Self> {
        Self::new(AuxKind::AngleHeight, vec![angle_deg, height_m])
    }

    pub fn kernel_radius(r: f64) -> Result<Self> {
        Self::new(AuxKind::KernelRadius, vec![r])
    }
}

/// Training values normalized by this map land inside `[-LIMIT, LIMIT]`.
pub const LIMIT: f64 = 1.5;

/// Per-component affine map `(raw - center) / scale`, fitted on training contexts.
///
/// The scale is the standard deviation, widened when needed so that no training value
/// falls outside `[-1.5, 1.5]`; nothing is ever clipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxNormalizer {
    pub kind: AuxKind,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl AuxNormalizer {
    pub fn fit<'a>(contexts: impl IntoIterator<Item = &'a SceneContext>) -> Result<Self> {
        let contexts: Vec<&SceneContext> = contexts.into_iter().collect();
        let first = contexts
            .first()
            .ok_or_else(|| invalid!("cannot fit a normalizer on zero contexts"))?;
        let kind = first.kind;
        if contexts.iter().any(|c| c.kind != kind) {
            return Err(invalid!("mixed context kinds"));
        }
        let n = contexts.len() as f64;
        let mut center = Vec::with_capacity(kind.dim());
        let mut scale = Vec::with_capacity(kind.dim());
        for k in 0..kind.dim() {
            let mean = contexts.iter().map(|c| c.raw[k]).sum::<f64>() / n;
            let var = contexts.iter().map(|c| (c.raw[k] - mean).powi(2)).sum::<f64>() / n;
            let spread = contexts
                .iter()
                .map(|c| (c.raw[k] - mean).abs())
                .fold(0.0, f64::max);
            let s = var.sqrt().max(spread / LIMIT);
            center.push(mean);
            scale.push(if s > 0.0 { s } else { 1.0 });
        }
        Ok(AuxNormalizer {
            kind,
            center,
            scale,
        })
    }

    pub fn normalize(&self, ctx: &SceneContext) -> Result<Vec<f64>> {
        if ctx.kind != self.kind {
            return Err(invalid!("{:?} context given to a {:?} normalizer", ctx.kind, self.kind));
        }
        Ok(ctx
            .raw
            .iter()
            .zip(&self.center)
            .zip(&self.scale)
            .map(|((v, c), s)| (v - c) / s)
            .collect())
    }
}
