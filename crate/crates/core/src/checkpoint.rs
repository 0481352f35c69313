//! Checkpoints: a directory holding `manifest.json` and `params.bin`.
//!
//! The blob is every tensor (parameters, then batch-norm running statistics) as
//! little-endian f32 in manifest order. Adam moments are not stored; a resumed run starts
//! them from zero but keeps the step counter.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::crowd::AuxNormalizer;
use crate::error::{Error, Result};
use crate::model::{Model, Task};
use crate::network::{Layer, ModelSpec, Network};
use crate::nn::OptimizerConfig;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: &str = "acnn-checkpoint/1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "params.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in f32 elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub task: Task,
    pub spec: ModelSpec,
    pub normalizer: Option<AuxNormalizer>,
    pub target_scale: f64,
    pub trained: bool,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    /// Per batch-norm layer (trunk order): whether running statistics have been set.
    pub batch_norm_initialized: Vec<bool>,
    pub tensors: Vec<TensorEntry>,
    pub blob_len: usize,
    pub blob_sha256: String,
}

fn layer_groups(net: &Network<f32>) -> Vec<(String, &Layer<f32>)> {
    let trunk = net.trunk.iter().enumerate().map(|(i, l)| (format!("trunk.{i}"), l));
    let heads = net.heads.iter().enumerate().flat_map(|(h, layers)| {
        layers.iter().enumerate().map(move |(i, l)| (format!("head{h}.{i}"), l))
    });
    trunk.chain(heads).collect()
}

/// Names and values of every stored tensor, in blob order.
fn named_tensors(net: &Network<f32>) -> Vec<(String, &Tensor<f32>)> {
    let mut out = Vec::new();
    for (prefix, layer) in layer_groups(net) {
        for (j, p) in layer.params().into_iter().enumerate() {
            out.push((format!("{prefix}.param{j}"), &p.value));
        }
    }
    for (prefix, layer) in layer_groups(net) {
        if let Layer::BatchNorm(bn) = layer {
            out.push((format!("{prefix}.running_mean"), &bn.running.mean));
            out.push((format!("{prefix}.running_var"), &bn.running.var));
        }
    }
    out
}

fn named_tensors_mut(net: &mut Network<f32>) -> Vec<&mut Tensor<f32>> {
    let mut params = Vec::new();
    let mut stats = Vec::new();
    for layer in net.trunk.iter_mut().chain(net.heads.iter_mut().flatten()) {
        if let Layer::BatchNorm(bn) = layer {
            params.push(&mut bn.gamma.value);
            params.push(&mut bn.beta.value);
            stats.push(&mut bn.running.mean);
            stats.push(&mut bn.running.var);
        } else {
            params.extend(layer.params_mut().into_iter().map(|p| &mut p.value));
        }
    }
    params.extend(stats);
    params
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn encode(model: &Model) -> Result<(Manifest, Vec<u8>)> {
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (name, t) in named_tensors(&model.network) {
        tensors.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.len();
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        version: FORMAT_VERSION.to_string(),
        task: model.task,
        spec: model.spec().clone(),
        normalizer: model.normalizer.clone(),
        target_scale: model.target_scale,
        trained: model.trained,
        optimizer: model.optimizer,
        metadata: model.metadata.clone(),
        batch_norm_initialized: model
            .network
            .batch_norms()
            .iter()
            .map(|bn| bn.running.initialized)
            .collect(),
        tensors,
        blob_len: blob.len(),
        blob_sha256: sha256_hex(&blob),
    };
    Ok((manifest, blob))
}

fn temp_sibling(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into());
    path.with_file_name(format!(".{name}.tmp-{}", std::process::id()))
}

/// Writes the checkpoint directory via a temporary sibling and a rename.
pub fn save_checkpoint(model: &Model, path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::PathExists(path.to_path_buf()));
    }
    let (manifest, blob) = encode(model)?;
    let tmp = temp_sibling(path);
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;
    fs::write(tmp.join(BLOB_FILE), &blob)?;
    fs::write(tmp.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    if path.exists() {
        if path.is_dir() {
            fs::remove_dir_all(path)?;
        } else {
            fs::remove_file(path)?;
        }
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let file = path.join(MANIFEST_FILE);
    if !file.is_file() {
        return Err(Error::MissingFile(file));
    }
    let value: serde_json::Value = serde_json::from_str(&fs::read_to_string(&file)?)?;
    let version = value.get("version").and_then(|v| v.as_str()).unwrap_or("<none>");
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version.to_string(),
            expected: FORMAT_VERSION.to_string(),
        });
    }
    Ok(serde_json::from_value(value)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let manifest = read_manifest(path)?;
    let file = path.join(BLOB_FILE);
    if !file.is_file() {
        return Err(Error::MissingFile(file));
    }
    let blob = fs::read(&file)?;
    if blob.len() != manifest.blob_len {
        return Err(Error::Format(format!(
            "blob holds {} bytes, manifest declares {}",
            blob.len(),
            manifest.blob_len
        )));
    }
    let found = sha256_hex(&blob);
    if found != manifest.blob_sha256 {
        return Err(Error::Checksum {
            what: BLOB_FILE.into(),
            expected: manifest.blob_sha256,
            found,
        });
    }
    let mut model = Model::new(manifest.task, &manifest.spec, 0)?;
    let expected: Vec<(String, Vec<usize>)> = named_tensors(&model.network)
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    if expected.len() != manifest.tensors.len() {
        return Err(Error::Format(format!(
            "manifest lists {} tensors, spec builds {}",
            manifest.tensors.len(),
            expected.len()
        )));
    }
    let floats: Vec<f32> = blob
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let targets = named_tensors_mut(&mut model.network);
    for ((entry, (name, shape)), target) in manifest.tensors.iter().zip(&expected).zip(targets) {
        if &entry.name != name || &entry.shape != shape {
            return Err(Error::Format(format!(
                "tensor {} {:?} does not match spec tensor {name} {shape:?}",
                entry.name, entry.shape
            )));
        }
        let end = entry.offset + target.len();
        let src = floats
            .get(entry.offset..end)
            .ok_or_else(|| Error::Format(format!("tensor {name} lies outside the blob")))?;
        target.data_mut().copy_from_slice(src);
    }
    let mut bns = model.network.batch_norms_mut();
    if bns.len() != manifest.batch_norm_initialized.len() {
        return Err(Error::Format("batch-norm layer count mismatch".into()));
    }
    for (bn, &init) in bns.iter_mut().zip(&manifest.batch_norm_initialized) {
        bn.running.initialized = init;
    }
    model.normalizer = manifest.normalizer;
    model.target_scale = manifest.target_scale;
    model.trained = manifest.trained;
    model.optimizer = manifest.optimizer;
    model.metadata = manifest.metadata;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counting::{counting_spec, Stage};
    use crate::crowd::{AuxKind, SceneContext};
    use crate::network::LayerSpec;
    use crate::nn::{Activation, Mode};

    fn small_model() -> Model {
        let spec = counting_spec(
            "tiny",
            9,
            &[Stage::adaptive(3), Stage::fixed(2)],
            Some(AuxKind::Perspective),
            &[6, 1],
            &[4, 15],
        )
        .unwrap();
        let mut m = Model::new(Task::Counting, &spec, 5).unwrap();
        m.normalizer = Some(AuxNormalizer::fit(&[SceneContext::perspective(3.0).unwrap(), SceneContext::perspective(9.0).unwrap()]).unwrap());
        m.trained = true;
        m
    }

    fn run(m: &Model) -> Vec<Tensor<f32>> {
        let x = Tensor::from_vec(&[2, 1, 9, 9], (0..162).map(|i| (i as f32 * 0.37).sin()).collect()).unwrap();
        let ctx = [SceneContext::perspective(4.0).unwrap(), SceneContext::perspective(8.0).unwrap()];
        let aux = m.aux_batch(ctx.iter()).unwrap();
        m.network.infer(&x, aux.as_ref()).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck");
        let m = small_model();
        save_checkpoint(&m, &path, false).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(run(&m), run(&loaded));
        assert_eq!(m.param_table(), loaded.param_table());
        let first = fs::read(path.join(BLOB_FILE)).unwrap();
        save_checkpoint(&loaded, &path, true).unwrap();
        assert_eq!(first, fs::read(path.join(BLOB_FILE)).unwrap());
    }

    #[test]
    fn refuses_to_overwrite_without_force() {
        let dir = tempfile::tempdir().unwrap();
        let m = small_model();
        assert!(matches!(save_checkpoint(&m, dir.path(), false), Err(Error::PathExists(_))));
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck");
        save_checkpoint(&small_model(), &path, false).unwrap();
        let blob_path = path.join(BLOB_FILE);
        let mut blob = fs::read(&blob_path).unwrap();
        blob[7] ^= 0x10;
        fs::write(&blob_path, &blob).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checksum { .. })));
        blob.truncate(blob.len() - 4);
        fs::write(&blob_path, &blob).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
        fs::remove_file(&blob_path).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::MissingFile(_))));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck");
        save_checkpoint(&small_model(), &path, false).unwrap();
        let mpath = path.join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath).unwrap().replace(FORMAT_VERSION, "acnn-checkpoint/99");
        fs::write(&mpath, text).unwrap();
        match load_checkpoint(&path) {
            Err(Error::Version { found, .. }) => assert_eq!(found, "acnn-checkpoint/99"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_model_has_empty_blob() {
        let spec = ModelSpec {
            name: "empty".into(),
            input: [1, 4, 4],
            aux: None,
            trunk: vec![LayerSpec::Pool, LayerSpec::Activation { activation: Activation::Relu }],
            heads: vec![],
        };
        let m = Model::new(Task::Deconvolution, &spec, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck");
        save_checkpoint(&m, &path, false).unwrap();
        assert!(fs::read(path.join(BLOB_FILE)).unwrap().is_empty());
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.spec(), m.spec());
    }

    #[test]
    fn batch_norm_statistics_survive() {
        let spec = ModelSpec {
            name: "bn".into(),
            input: [1, 4, 4],
            aux: None,
            trunk: vec![LayerSpec::conv(2, 3, Activation::Identity), LayerSpec::BatchNorm],
            heads: vec![],
        };
        let mut m = Model::new(Task::Deconvolution, &spec, 0).unwrap();
        let x = Tensor::from_vec(&[3, 1, 4, 4], (0..48).map(|i| (i as f32).cos()).collect()).unwrap();
        m.network.forward(&x, None, Mode::Train).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck");
        save_checkpoint(&m, &path, false).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(m.network.infer(&x, None).unwrap(), back.network.infer(&x, None).unwrap());
    }
}
