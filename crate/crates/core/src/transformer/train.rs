//! Denoising pretraining loop with Adam.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::{backward, forward_with_cache, ForwardCache};
use super::params::{init_model, Gradients, ModelParams, ParamSet};
use super::TransformerError;
use crate::selfies::SelfiesString;
use crate::tokenizer::{
    apply_masking, tokenize, MaskedBatch, TokenIds, TokenizerError, Vocabulary,
};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Loss, correctly predicted masked positions, and gradients of one sample.
type SampleOutcome = (f64, usize, Gradients<f32>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub mask_ratio: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 8,
            learning_rate: 1e-3,
            mask_ratio: 0.15,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TransformerError> {
        let bad = |m: String| Err(TransformerError::TrainConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            ));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return bad(format!("mask_ratio {} outside (0, 1)", self.mask_ratio));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean denoising loss over each epoch's samples.
    pub epoch_losses: Vec<f64>,
    /// Fraction of masked positions predicted correctly during each epoch.
    pub epoch_masked_accuracy: Vec<f64>,
    /// Masked-token accuracy over the whole corpus after training, with fresh seeded masks.
    pub final_masked_accuracy: f64,
    pub steps: usize,
}

struct Adam {
    m: ParamSet<f32>,
    v: ParamSet<f32>,
    t: i32,
}

impl Adam {
    fn new(cfg: &ModelConfig) -> Self {
        Adam {
            m: ParamSet::zeros(cfg),
            v: ParamSet::zeros(cfg),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut ParamSet<f32>, grads: &Gradients<f32>, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t);
        let (b1, b2) = (ADAM_BETA1 as f32, ADAM_BETA2 as f32);
        let step = (lr / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let eps = ADAM_EPS as f32;
        for ((((p, _), g), (m, _)), (v, _)) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= step * m[i] / (v[i].sqrt() / bc2_sqrt + eps);
            }
        }
    }
}

fn mask_or_copy<R: Rng>(
    t: &TokenIds,
    ratio: f64,
    rng: &mut R,
) -> Result<MaskedBatch, TokenizerError> {
    match apply_masking(t, ratio, rng) {
        Err(TokenizerError::NothingToMask) => Ok(MaskedBatch {
            source: t.clone(),
            target: t.clone(),
            mask_positions: Vec::new(),
        }),
        other => other,
    }
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn count_correct(c: &ForwardCache<f32>, b: &MaskedBatch) -> usize {
    b.mask_positions
        .iter()
        .filter(|&&p| argmax(c.logits.row(p)) == b.target.0[p] as usize)
        .count()
}

/// Trains `params` in place on already tokenized sequences.
///
/// Sample order, masks and dropout seeds are drawn sequentially from one seeded stream;
/// per-sample gradients are computed in parallel and summed in batch order, so the result
/// does not depend on the thread count.
pub fn pretrain(
    mut params: ModelParams<f32>,
    data: &[TokenIds],
    tc: &TrainConfig,
) -> Result<(ModelParams<f32>, TrainReport), TransformerError> {
    tc.validate()?;
    if data.is_empty() {
        return Err(TransformerError::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut adam = Adam::new(&params.config);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport {
        epoch_losses: Vec::with_capacity(tc.epochs),
        epoch_masked_accuracy: Vec::with_capacity(tc.epochs),
        final_masked_accuracy: 0.0,
        steps: 0,
    };
    for epoch in 0..tc.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let (mut correct, mut masked) = (0usize, 0usize);
        for chunk in order.chunks(tc.batch_size) {
            let mut batch = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let b = mask_or_copy(&data[i], tc.mask_ratio, &mut rng)?;
                let dropout_seed: u64 = rng.random();
                batch.push((b, dropout_seed));
            }
            let results: Vec<Result<SampleOutcome, TransformerError>> = batch
                .par_iter()
                .map(|(b, seed)| {
                    let cache = forward_with_cache(&params, &b.source, &b.target, Some(*seed))?;
                    let hits = count_correct(&cache, b);
                    Ok((cache.loss as f64, hits, backward(&params, &cache)))
                })
                .collect();
            let mut total: Option<Gradients<f32>> = None;
            for (r, (b, _)) in results.into_iter().zip(&batch) {
                let (loss, hits, g) = r?;
                loss_sum += loss;
                correct += hits;
                masked += b.mask_positions.len();
                match total.as_mut() {
                    None => total = Some(g),
                    Some(t) => t.add_assign(&g),
                }
            }
            let mut grads = total.expect("non-empty batch");
            grads.scale(1.0 / chunk.len() as f32);
            adam.step(&mut params.weights, &grads, tc.learning_rate);
            report.steps += 1;
            if !params.weights.all_finite() {
                return Err(TransformerError::NonFinite(report.steps));
            }
        }
        let mean = loss_sum / data.len() as f64;
        let acc = if masked == 0 {
            0.0
        } else {
            correct as f64 / masked as f64
        };
        log::info!(
            "epoch {}: loss {:.4}, masked accuracy {:.3}",
            epoch + 1,
            mean,
            acc
        );
        report.epoch_losses.push(mean);
        report.epoch_masked_accuracy.push(acc);
    }
    report.final_masked_accuracy =
        masked_accuracy(&params, data, tc.mask_ratio, tc.seed.wrapping_add(1))?;
    Ok((params, report))
}

/// Fraction of masked positions whose teacher-forced prediction equals the original token.
pub fn masked_accuracy(
    params: &ModelParams<f32>,
    data: &[TokenIds],
    mask_ratio: f64,
    seed: u64,
) -> Result<f64, TransformerError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batches = data
        .iter()
        .map(|t| mask_or_copy(t, mask_ratio, &mut rng))
        .collect::<Result<Vec<_>, _>>()?;
    let counts: Vec<Result<(usize, usize), TransformerError>> = batches
        .par_iter()
        .map(|b| {
            let c = forward_with_cache(params, &b.source, &b.target, None)?;
            Ok((count_correct(&c, b), b.mask_positions.len()))
        })
        .collect();
    let (mut correct, mut total) = (0, 0);
    for c in counts {
        let (h, n) = c?;
        correct += h;
        total += n;
    }
    Ok(if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    })
}

/// Initializes a model from `tc.seed`, tokenizes `corpus` with `vocab` and trains it.
pub fn pretrain_corpus(
    corpus: &[SelfiesString],
    vocab: &Vocabulary,
    cfg: &ModelConfig,
    tc: &TrainConfig,
) -> Result<(ModelParams<f32>, TrainReport), TransformerError> {
    if corpus.is_empty() {
        return Err(TransformerError::EmptyCorpus);
    }
    if cfg.vocab_size != vocab.len() {
        return Err(TransformerError::Config(format!(
            "vocab_size {} does not match vocabulary of {} tokens",
            cfg.vocab_size,
            vocab.len()
        )));
    }
    let params = init_model(cfg, tc.seed)?;
    let data: Vec<TokenIds> = corpus.iter().map(|s| tokenize(s, vocab)).collect();
    if let Some(longest) = data.iter().map(TokenIds::len).max() {
        if longest > cfg.max_len {
            return Err(TransformerError::SequenceTooLong {
                len: longest,
                max: cfg.max_len,
            });
        }
    }
    pretrain(params, &data, tc)
}
