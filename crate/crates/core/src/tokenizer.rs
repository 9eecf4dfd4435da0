//! Word-level tokenization of SELFIES strings, vocabulary construction and the masking
//! transform used for denoising pretraining.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::selfies::{SelfiesString, SelfiesToken};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const MASK: u32 = 3;
pub const UNK: u32 = 4;

pub const SPECIAL_TOKENS: [&str; 5] = ["<pad>", "<s>", "</s>", "<mask>", "<unk>"];

#[derive(Debug, thiserror::Error)]
pub enum TokenizerError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: u32, size: usize },
    #[error("sequence has no maskable tokens")]
    NothingToMask,
    #[error("mask ratio {0} must lie strictly between 0 and 1")]
    BadRatio(f64),
    #[error("malformed vocabulary file: {0}")]
    BadVocabFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense token-text <-> id bijection. Specials occupy ids 0..5; the remaining tokens follow
/// in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    id_of: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn build(corpus: &[SelfiesString]) -> Result<Self, TokenizerError> {
        if corpus.is_empty() {
            return Err(TokenizerError::EmptyCorpus);
        }
        let distinct: BTreeSet<&str> = corpus
            .iter()
            .flat_map(|s| s.tokens.iter().map(SelfiesToken::as_str))
            .collect();
        let tokens = SPECIAL_TOKENS
            .iter()
            .copied()
            .chain(distinct.into_iter().filter(|t| !SPECIAL_TOKENS.contains(t)))
            .map(str::to_string)
            .collect();
        Ok(Self::from_tokens(tokens))
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let id_of = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { tokens, id_of }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.id_of.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < SPECIAL_TOKENS.len()
    }

    /// One token per line, line number = id.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, TokenizerError> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < SPECIAL_TOKENS.len()
            || tokens[..SPECIAL_TOKENS.len()] != SPECIAL_TOKENS.map(str::to_string)
        {
            return Err(TokenizerError::BadVocabFile(
                "the first five lines must be the special tokens".into(),
            ));
        }
        let vocab = Self::from_tokens(tokens);
        if vocab.id_of.len() != vocab.tokens.len() {
            return Err(TokenizerError::BadVocabFile("duplicate token".into()));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

/// Integer-encoded sequence, normally `BOS .. EOS`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenIds(pub Vec<u32>);

impl TokenIds {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    /// Positions eligible for masking: everything except PAD, BOS and EOS.
    pub fn maskable_positions(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|&(_, &id)| id != PAD && id != BOS && id != EOS)
            .map(|(i, _)| i)
            .collect()
    }
}

pub fn tokenize(s: &SelfiesString, v: &Vocabulary) -> TokenIds {
    let mut ids = Vec::with_capacity(s.len() + 2);
    ids.push(BOS);
    ids.extend(s.tokens.iter().map(|t| v.id(t.as_str()).unwrap_or(UNK)));
    ids.push(EOS);
    TokenIds(ids)
}

/// Inverse of [`tokenize`]; special ids are dropped.
pub fn detokenize(t: &TokenIds, v: &Vocabulary) -> Result<SelfiesString, TokenizerError> {
    let mut tokens = Vec::with_capacity(t.len());
    for &id in &t.0 {
        let text = v
            .token(id)
            .ok_or(TokenizerError::IdOutOfRange { id, size: v.len() })?;
        if Vocabulary::is_special(id) {
            continue;
        }
        let token =
            SelfiesToken::new(text).map_err(|e| TokenizerError::BadVocabFile(e.to_string()))?;
        tokens.push(token);
    }
    Ok(SelfiesString::new(tokens))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedBatch {
    pub source: TokenIds,
    pub target: TokenIds,
    /// Sorted ascending.
    pub mask_positions: Vec<usize>,
}

/// `max(1, round_half_up(ratio * maskable_len))`.
pub fn mask_count(ratio: f64, maskable_len: usize) -> usize {
    // Snap away binary noise so that e.g. 0.15 * 10 rounds as the decimal 1.5 does.
    let x = ((ratio * maskable_len as f64) * 1e9).round() / 1e9;
    ((x + 0.5).floor() as usize).max(1)
}

pub fn apply_masking<R: Rng + ?Sized>(
    t: &TokenIds,
    ratio: f64,
    rng: &mut R,
) -> Result<MaskedBatch, TokenizerError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(TokenizerError::BadRatio(ratio));
    }
    let maskable = t.maskable_positions();
    if maskable.is_empty() {
        return Err(TokenizerError::NothingToMask);
    }
    let count = mask_count(ratio, maskable.len()).min(maskable.len());
    let mut positions: Vec<usize> = index::sample(rng, maskable.len(), count)
        .into_iter()
        .map(|i| maskable[i])
        .collect();
    positions.sort_unstable();
    let mut source = t.clone();
    for &p in &positions {
        source.0[p] = MASK;
    }
    Ok(MaskedBatch {
        source,
        target: t.clone(),
        mask_positions: positions,
    })
}
