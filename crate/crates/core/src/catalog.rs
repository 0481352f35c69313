//! Model specs by name.

use crate::counting::{preset_spec, PRESETS};
use crate::deconv::{deconv_spec, plain_deconv_spec, PLAIN_CHANNELS};
use crate::error::{invalid, Result};
use crate::experiments::CountingBench;
use crate::model::Task;
use crate::network::ModelSpec;

/// Every name accepted by [`named_spec`].
pub fn spec_names() -> Vec<&'static str> {
    let mut names = PRESETS.to_vec();
    names.extend(["bench-acnn", "bench-cnn", "deconv-acnn", "deconv-cnn"]);
    names
}

/// Options that only some specs use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecOptions {
    /// Separable filter length of the deconvolution models.
    pub filter_length: usize,
    /// Nominal image side of the deconvolution models.
    pub image_size: usize,
    /// Filters per layer of the plain deconvolution model.
    pub plain_channels: usize,
}

impl Default for SpecOptions {
    fn default() -> Self {
        SpecOptions {
            filter_length: crate::deconv::DEFAULT_FILTER_LENGTH,
            image_size: 64,
            plain_channels: PLAIN_CHANNELS,
        }
    }
}

pub fn named_spec(name: &str, opts: &SpecOptions) -> Result<(Task, ModelSpec)> {
    match name {
        n if PRESETS.contains(&n) => Ok((Task::Counting, preset_spec(n)?)),
        "bench-acnn" => Ok((Task::Counting, CountingBench::default().adaptive_spec()?)),
        "bench-cnn" => Ok((Task::Counting, CountingBench::default().matched_plain_spec()?)),
        "deconv-acnn" => Ok((Task::Deconvolution, deconv_spec(opts.filter_length, opts.image_size)?)),
        "deconv-cnn" => Ok((
            Task::Deconvolution,
            plain_deconv_spec(opts.filter_length, opts.plain_channels, opts.image_size)?,
        )),
        other => Err(invalid!(
            "unknown model spec {other:?}; expected one of {}",
            spec_names().join(", ")
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_name_resolves() {
        for name in spec_names() {
            let (_, spec) = named_spec(name, &SpecOptions { filter_length: 31, ..SpecOptions::default() }).unwrap();
            assert!(spec.param_table().unwrap().total() > 0, "{name}");
        }
        assert!(named_spec("resnet", &SpecOptions::default()).is_err());
    }
}
