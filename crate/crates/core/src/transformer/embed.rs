//! Molecular representation vectors from encoder states.

use serde::{Deserialize, Serialize};

use super::config::Pooling;
use super::model::encode;
use super::ops::Matrix;
use super::params::ModelParams;
use super::TransformerError;
use crate::selfies::{encode_smiles, EncodeSmilesError};
use crate::tokenizer::{tokenize, TokenIds, Vocabulary, BOS, EOS, PAD};

/// Pooled encoder output for one molecule; length `d_model`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepVector(pub Vec<f32>);

impl RepVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }
}

/// Mean of the rows of `states` whose `include` flag is set.
pub fn pool(states: &Matrix<f32>, include: &[bool]) -> Result<RepVector, TransformerError> {
    assert_eq!(states.rows, include.len(), "one flag per row");
    let n = include.iter().filter(|&&b| b).count();
    if n == 0 {
        return Err(TransformerError::EmptySequence);
    }
    let mut sum = vec![0.0f64; states.cols];
    for (i, _) in include.iter().enumerate().filter(|(_, &b)| b) {
        for (s, &v) in sum.iter_mut().zip(states.row(i)) {
            *s += v as f64;
        }
    }
    Ok(RepVector(
        sum.into_iter().map(|s| (s / n as f64) as f32).collect(),
    ))
}

/// Representation of an already tokenized sequence under the model's pooling mode.
pub fn embed_tokens(m: &ModelParams<f32>, ids: &TokenIds) -> Result<RepVector, TransformerError> {
    let states = encode(m, ids)?;
    match m.config.pooling {
        Pooling::Mean => {
            let include: Vec<bool> = ids
                .0
                .iter()
                .map(|&id| id != PAD && id != BOS && id != EOS)
                .collect();
            pool(&states, &include)
        }
        Pooling::Bos => {
            if ids.0.first() != Some(&BOS) {
                return Err(TransformerError::EmptySequence);
            }
            Ok(RepVector(states.row(0).to_vec()))
        }
    }
}

/// SMILES → canonical SELFIES → token ids → encoder → pooled vector.
pub fn embed_molecule(
    m: &ModelParams<f32>,
    v: &Vocabulary,
    smiles: &str,
) -> Result<RepVector, TransformerError> {
    let selfies = encode_smiles(smiles).map_err(|e| match e {
        EncodeSmilesError::Smiles(e) => TransformerError::Smiles(e),
        EncodeSmilesError::Selfies(e) => TransformerError::Selfies(e),
    })?;
    embed_tokens(m, &tokenize(&selfies, v))
}
