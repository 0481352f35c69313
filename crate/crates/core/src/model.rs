//! A trainable network bundled with what inference needs: side-information
//! normalization, target scaling and training state.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::crowd::{AuxNormalizer, SceneContext};
use crate::error::{invalid, Error, Result};
use crate::network::{ModelSpec, Network, ParamTable};
use crate::nn::OptimizerConfig;
use crate::rng::rng_for;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Center-pixel density regression plus count classification.
    Counting,
    /// Image-to-image deblurring.
    Deconvolution,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub task: Task,
    pub network: Network<f32>,
    pub normalizer: Option<AuxNormalizer>,
    /// Regression targets are multiplied by this during training.
    pub target_scale: f64,
    pub trained: bool,
    pub optimizer: OptimizerConfig,
    /// Free-form training facts kept with the checkpoint (e.g. training radii).
    pub metadata: BTreeMap<String, String>,
}

impl Model {
    pub fn new(task: Task, spec: &ModelSpec, seed: u64) -> Result<Self> {
        let network = Network::build(spec, &mut rng_for(seed, "init", 0))?;
        Ok(Model {
            task,
            network,
            normalizer: None,
            target_scale: 1.0,
            trained: false,
            optimizer: OptimizerConfig::default(),
            metadata: BTreeMap::new(),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        self.network.spec()
    }

    pub fn param_table(&self) -> ParamTable {
        self.network.param_table()
    }

    pub fn ensure_trained(&self) -> Result<()> {
        if self.trained {
            Ok(())
        } else {
            Err(Error::Untrained)
        }
    }

    /// Normalized aux batch `[N, A]`, or `None` for models without side information.
    pub fn aux_batch<'a>(
        &self,
        contexts: impl ExactSizeIterator<Item = &'a SceneContext>,
    ) -> Result<Option<Tensor<f32>>> {
        let Some(kind) = self.spec().aux else {
            return Ok(None);
        };
        let norm = self
            .normalizer
            .as_ref()
            .ok_or_else(|| Error::Contract("side-information normalizer not fitted".into()))?;
        let n = contexts.len();
        let mut data = Vec::with_capacity(n * kind.dim());
        for ctx in contexts {
            data.extend(norm.normalize(ctx)?.into_iter().map(|v| v as f32));
        }
        if n == 0 {
            return Err(invalid!("empty aux batch"));
        }
        Ok(Some(Tensor::from_vec(&[n, kind.dim()], data)?))
    }
}
