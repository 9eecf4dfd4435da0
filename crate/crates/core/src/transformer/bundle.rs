//! On-disk model bundle: `config.json`, `vocab.txt` and `weights.bin`.
//!
//! `weights.bin` holds every learned tensor as little-endian `f32`, concatenated in the order
//! of the `manifest` array in `config.json`. The positional table is not stored.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::{manifest, ModelParams, ParamSet, TensorSpec};
use super::train::TrainConfig;
use super::TransformerError;
use crate::tokenizer::Vocabulary;

pub const CONFIG_FILE: &str = "config.json";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMeta {
    /// `None` for a freshly initialized, untrained model.
    pub train: Option<TrainConfig>,
    pub init_seed: u64,
    pub corpus_size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ConfigFile {
    model: ModelConfig,
    training: TrainingMeta,
    weights_dtype: String,
    manifest: Vec<TensorSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub params: ModelParams<f32>,
    pub vocab: Vocabulary,
    pub meta: TrainingMeta,
}

pub fn save_bundle(dir: &Path, bundle: &ModelBundle) -> Result<(), TransformerError> {
    let cfg = &bundle.params.config;
    if cfg.vocab_size != bundle.vocab.len() {
        return Err(TransformerError::BundleMismatch(format!(
            "vocab_size {} but vocabulary has {} tokens",
            cfg.vocab_size,
            bundle.vocab.len()
        )));
    }
    fs::create_dir_all(dir)?;
    let file = ConfigFile {
        model: cfg.clone(),
        training: bundle.meta.clone(),
        weights_dtype: "f32-le".into(),
        manifest: manifest(cfg),
    };
    let mut json = serde_json::to_string_pretty(&file)?;
    json.push('\n');
    fs::write(dir.join(CONFIG_FILE), json)?;
    bundle.vocab.save(&dir.join(VOCAB_FILE))?;
    let mut bytes = Vec::with_capacity(bundle.params.weights.numel() * 4);
    for t in bundle.params.weights.tensors() {
        for x in t {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    fs::write(dir.join(WEIGHTS_FILE), bytes)?;
    Ok(())
}

pub fn load_bundle(dir: &Path) -> Result<ModelBundle, TransformerError> {
    let file: ConfigFile = serde_json::from_str(&fs::read_to_string(dir.join(CONFIG_FILE))?)?;
    let cfg = file.model;
    cfg.validate()?;
    if file.weights_dtype != "f32-le" {
        return Err(TransformerError::BundleMismatch(format!(
            "unsupported weights dtype {}",
            file.weights_dtype
        )));
    }
    let expected = manifest(&cfg);
    if file.manifest != expected {
        return Err(TransformerError::BundleMismatch(
            "manifest does not match the model configuration".into(),
        ));
    }
    let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
    if vocab.len() != cfg.vocab_size {
        return Err(TransformerError::BundleMismatch(format!(
            "vocab_size {} but vocab.txt has {} tokens",
            cfg.vocab_size,
            vocab.len()
        )));
    }
    let bytes = fs::read(dir.join(WEIGHTS_FILE))?;
    let total: usize = expected.iter().map(TensorSpec::numel).sum();
    if bytes.len() != total * 4 {
        return Err(TransformerError::BundleMismatch(format!(
            "weights.bin has {} bytes, manifest requires {}",
            bytes.len(),
            total * 4
        )));
    }
    let mut weights = ParamSet::<f32>::zeros(&cfg);
    let mut floats = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    for (t, _) in weights.tensors_mut() {
        for x in t.iter_mut() {
            *x = floats.next().expect("length checked above");
        }
    }
    if !weights.all_finite() {
        return Err(TransformerError::BundleMismatch(
            "weights contain non-finite values".into(),
        ));
    }
    Ok(ModelBundle {
        params: ModelParams::from_weights(cfg, weights),
        vocab,
        meta: file.training,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transformer::init_model;

    fn bundle() -> ModelBundle {
        let vocab = Vocabulary::build(&["[C][O][=C]".parse().unwrap()]).unwrap();
        let mut cfg = ModelConfig::toy(vocab.len());
        cfg.d_model = 8;
        cfg.n_heads = 2;
        cfg.d_ff = 16;
        ModelBundle {
            params: init_model(&cfg, 5).unwrap(),
            vocab,
            meta: TrainingMeta {
                train: None,
                init_seed: 5,
                corpus_size: 1,
            },
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let b = bundle();
        save_bundle(dir.path(), &b).unwrap();
        let back = load_bundle(dir.path()).unwrap();
        assert_eq!(back, b);
        let first = fs::read(dir.path().join(WEIGHTS_FILE)).unwrap();
        save_bundle(dir.path(), &back).unwrap();
        assert_eq!(fs::read(dir.path().join(WEIGHTS_FILE)).unwrap(), first);
    }

    #[test]
    fn truncated_weights_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_bundle(dir.path(), &bundle()).unwrap();
        let path = dir.path().join(WEIGHTS_FILE);
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_bundle(dir.path()),
            Err(TransformerError::BundleMismatch(_))
        ));
    }
}
