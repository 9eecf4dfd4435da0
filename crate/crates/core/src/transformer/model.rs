//! Forward and backward passes of the pre-norm encoder-decoder.
//!
//! Each sequence is processed on its own (no padding inside a pass). The decoder reads the
//! target shifted right behind a BOS token and its final states are projected onto the
//! tied embedding matrix.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::{
    attention_backward, attention_forward, gelu, gelu_grad, layernorm_backward, layernorm_forward,
    linear_backward, linear_forward, matmul, matmul_at_acc, matmul_bt, softmax_rows,
    AttentionCache, LayerNormCache, Matrix,
};
use super::params::{Gradients, Linear, ModelParams, ParamSet};
use super::scalar::Scalar;
use super::TransformerError;
use crate::tokenizer::{TokenIds, BOS};

struct Dropout<T> {
    rate: f64,
    scale: T,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Dropout<T> {
    fn new(rate: f64, seed: Option<u64>) -> Option<Self> {
        match seed {
            Some(seed) if rate > 0.0 => Some(Dropout {
                rate,
                scale: T::of(1.0 / (1.0 - rate)),
                rng: ChaCha8Rng::seed_from_u64(seed),
            }),
            _ => None,
        }
    }

    fn apply(ctx: &mut Option<Self>, x: &mut Matrix<T>) -> Option<Vec<T>> {
        let ctx = ctx.as_mut()?;
        let mask: Vec<T> = (0..x.data.len())
            .map(|_| {
                if ctx.rng.random::<f64>() < ctx.rate {
                    T::zero()
                } else {
                    ctx.scale
                }
            })
            .collect();
        for (v, &m) in x.data.iter_mut().zip(&mask) {
            *v *= m;
        }
        Some(mask)
    }
}

fn undo_dropout<T: Scalar>(mask: &Option<Vec<T>>, d: &Matrix<T>) -> Matrix<T> {
    match mask {
        None => d.clone(),
        Some(m) => {
            let mut out = d.clone();
            for (v, &k) in out.data.iter_mut().zip(m) {
                *v *= k;
            }
            out
        }
    }
}

#[derive(Debug, Clone)]
struct FeedForwardCache<T> {
    x: Matrix<T>,
    pre: Matrix<T>,
    act: Matrix<T>,
}

fn ff_forward<T: Scalar>(
    x: Matrix<T>,
    w_in: &Linear<T>,
    w_out: &Linear<T>,
) -> (Matrix<T>, FeedForwardCache<T>) {
    let pre = linear_forward(&x, w_in);
    let act = Matrix::from_vec(
        pre.rows,
        pre.cols,
        pre.data.iter().map(|&v| gelu(v)).collect(),
    );
    let out = linear_forward(&act, w_out);
    (out, FeedForwardCache { x, pre, act })
}

fn ff_backward<T: Scalar>(
    dout: &Matrix<T>,
    c: &FeedForwardCache<T>,
    w_in: &Linear<T>,
    w_out: &Linear<T>,
    g_in: &mut Linear<T>,
    g_out: &mut Linear<T>,
) -> Matrix<T> {
    let mut dact = linear_backward(&c.act, dout, w_out, g_out);
    for (d, &u) in dact.data.iter_mut().zip(&c.pre.data) {
        *d *= gelu_grad(u);
    }
    linear_backward(&c.x, &dact, w_in, g_in)
}

#[derive(Debug, Clone)]
struct EncoderLayerCache<T> {
    ln_attn: LayerNormCache<T>,
    attn: AttentionCache<T>,
    drop_attn: Option<Vec<T>>,
    ln_ff: LayerNormCache<T>,
    ff: FeedForwardCache<T>,
    drop_ff: Option<Vec<T>>,
}

#[derive(Debug, Clone)]
struct DecoderLayerCache<T> {
    ln_self: LayerNormCache<T>,
    self_attn: AttentionCache<T>,
    drop_self: Option<Vec<T>>,
    ln_cross: LayerNormCache<T>,
    cross_attn: AttentionCache<T>,
    drop_cross: Option<Vec<T>>,
    ln_ff: LayerNormCache<T>,
    ff: FeedForwardCache<T>,
    drop_ff: Option<Vec<T>>,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    source: Vec<u32>,
    decoder_input: Vec<u32>,
    target: Vec<u32>,
    encoder: Vec<EncoderLayerCache<T>>,
    enc_norm: LayerNormCache<T>,
    encoder_out: Matrix<T>,
    decoder: Vec<DecoderLayerCache<T>>,
    dec_norm: LayerNormCache<T>,
    decoder_out: Matrix<T>,
    /// Softmax of the output logits, `L_target x V`.
    probs: Matrix<T>,
    pub logits: Matrix<T>,
    pub loss: T,
}

fn check_ids<T: Scalar>(m: &ModelParams<T>, ids: &[u32]) -> Result<(), TransformerError> {
    if ids.len() > m.config.max_len {
        return Err(TransformerError::SequenceTooLong {
            len: ids.len(),
            max: m.config.max_len,
        });
    }
    if ids.is_empty() {
        return Err(TransformerError::EmptySequence);
    }
    if let Some(&id) = ids.iter().find(|&&id| id as usize >= m.config.vocab_size) {
        return Err(TransformerError::TokenOutOfRange {
            id,
            size: m.config.vocab_size,
        });
    }
    Ok(())
}

/// `E[ids] * sqrt(d) + PE[0..L]`.
fn embed_input<T: Scalar>(m: &ModelParams<T>, ids: &[u32]) -> Matrix<T> {
    let d = m.config.d_model;
    let scale = T::of((d as f64).sqrt());
    let mut x = Matrix::zeros(ids.len(), d);
    for (p, &id) in ids.iter().enumerate() {
        let e = &m.weights.embedding[id as usize * d..(id as usize + 1) * d];
        let pe = &m.positional[p * d..(p + 1) * d];
        for ((o, &ev), &pv) in x.row_mut(p).iter_mut().zip(e).zip(pe) {
            *o = ev * scale + pv;
        }
    }
    x
}

fn embed_backward<T: Scalar>(g: &mut ParamSet<T>, ids: &[u32], dx: &Matrix<T>, d: usize) {
    let scale = T::of((d as f64).sqrt());
    for (p, &id) in ids.iter().enumerate() {
        let ge = &mut g.embedding[id as usize * d..(id as usize + 1) * d];
        for (o, &v) in ge.iter_mut().zip(dx.row(p)) {
            *o += v * scale;
        }
    }
}

fn run_encoder<T: Scalar>(
    m: &ModelParams<T>,
    src: &[u32],
    dropout: &mut Option<Dropout<T>>,
) -> (Matrix<T>, Vec<EncoderLayerCache<T>>, LayerNormCache<T>) {
    let heads = m.config.n_heads;
    let mut x = embed_input(m, src);
    let mut caches = Vec::with_capacity(m.weights.encoder.len());
    for layer in &m.weights.encoder {
        let (h, ln_attn) = layernorm_forward(&x, &layer.ln_attn);
        let (mut a, attn) = attention_forward(&h, &h, &layer.attn, heads, false);
        let drop_attn = Dropout::apply(dropout, &mut a);
        x.add_assign(&a);
        let (h, ln_ff) = layernorm_forward(&x, &layer.ln_ff);
        let (mut f, ff) = ff_forward(h, &layer.ff_in, &layer.ff_out);
        let drop_ff = Dropout::apply(dropout, &mut f);
        x.add_assign(&f);
        caches.push(EncoderLayerCache {
            ln_attn,
            attn,
            drop_attn,
            ln_ff,
            ff,
            drop_ff,
        });
    }
    let (out, norm) = layernorm_forward(&x, &m.weights.enc_norm);
    (out, caches, norm)
}

/// Encoder states for `src`, one row of width `d_model` per position. Dropout is off.
pub fn encode<T: Scalar>(
    m: &ModelParams<T>,
    src: &TokenIds,
) -> Result<Matrix<T>, TransformerError> {
    check_ids(m, src.as_slice())?;
    let (out, _, _) = run_encoder(m, src.as_slice(), &mut None);
    Ok(out)
}

/// Teacher-forced denoising pass. `dropout_seed` enables dropout (if the configured rate is
/// positive) with masks drawn from that seed; `None` runs deterministically without it.
pub fn forward_with_cache<T: Scalar>(
    m: &ModelParams<T>,
    masked_src: &TokenIds,
    target: &TokenIds,
    dropout_seed: Option<u64>,
) -> Result<ForwardCache<T>, TransformerError> {
    check_ids(m, masked_src.as_slice())?;
    check_ids(m, target.as_slice())?;
    let cfg = &m.config;
    let (d, v, heads) = (cfg.d_model, cfg.vocab_size, cfg.n_heads);
    let mut dropout = Dropout::new(cfg.dropout_rate, dropout_seed);

    let (encoder_out, encoder, enc_norm) = run_encoder(m, masked_src.as_slice(), &mut dropout);

    let tgt = target.as_slice();
    let mut decoder_input = Vec::with_capacity(tgt.len());
    decoder_input.push(BOS);
    decoder_input.extend_from_slice(&tgt[..tgt.len() - 1]);
    let mut y = embed_input(m, &decoder_input);
    let mut decoder = Vec::with_capacity(m.weights.decoder.len());
    for layer in &m.weights.decoder {
        let (h, ln_self) = layernorm_forward(&y, &layer.ln_self);
        let (mut a, self_attn) = attention_forward(&h, &h, &layer.self_attn, heads, true);
        let drop_self = Dropout::apply(&mut dropout, &mut a);
        y.add_assign(&a);
        let (h, ln_cross) = layernorm_forward(&y, &layer.ln_cross);
        let (mut a, cross_attn) =
            attention_forward(&h, &encoder_out, &layer.cross_attn, heads, false);
        let drop_cross = Dropout::apply(&mut dropout, &mut a);
        y.add_assign(&a);
        let (h, ln_ff) = layernorm_forward(&y, &layer.ln_ff);
        let (mut f, ff) = ff_forward(h, &layer.ff_in, &layer.ff_out);
        let drop_ff = Dropout::apply(&mut dropout, &mut f);
        y.add_assign(&f);
        decoder.push(DecoderLayerCache {
            ln_self,
            self_attn,
            drop_self,
            ln_cross,
            cross_attn,
            drop_cross,
            ln_ff,
            ff,
            drop_ff,
        });
    }
    let (decoder_out, dec_norm) = layernorm_forward(&y, &m.weights.dec_norm);

    let l = tgt.len();
    let logits = Matrix::from_vec(
        l,
        v,
        matmul_bt(&decoder_out.data, &m.weights.embedding, l, d, v),
    );
    let mut probs = logits.clone();
    softmax_rows(&mut probs.data, v);
    let mut loss = T::zero();
    for (p, &t) in tgt.iter().enumerate() {
        // log-softmax from the logits directly avoids log(0) when a probability underflows.
        let row = logits.row(p);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
        loss += lse - row[t as usize];
    }
    loss /= T::of(l as f64);

    Ok(ForwardCache {
        source: masked_src.0.clone(),
        decoder_input,
        target: tgt.to_vec(),
        encoder,
        enc_norm,
        encoder_out,
        decoder,
        dec_norm,
        decoder_out,
        probs,
        logits,
        loss,
    })
}

/// Logits (`L x V`) and mean cross-entropy over all target positions; dropout off.
pub fn forward_denoise<T: Scalar>(
    m: &ModelParams<T>,
    masked_src: &TokenIds,
    target: &TokenIds,
) -> Result<(Matrix<T>, T), TransformerError> {
    let c = forward_with_cache(m, masked_src, target, None)?;
    Ok((c.logits, c.loss))
}

/// Gradients of `cache.loss` with respect to every learned tensor.
pub fn backward<T: Scalar>(m: &ModelParams<T>, c: &ForwardCache<T>) -> Gradients<T> {
    let cfg = &m.config;
    let (d, v, heads) = (cfg.d_model, cfg.vocab_size, cfg.n_heads);
    let w = &m.weights;
    let mut g = ParamSet::zeros(cfg);
    let l = c.target.len();

    let inv_l = T::one() / T::of(l as f64);
    let mut dlogits = c.probs.clone();
    for (p, &t) in c.target.iter().enumerate() {
        dlogits.row_mut(p)[t as usize] -= T::one();
    }
    dlogits.data.iter_mut().for_each(|x| *x *= inv_l);
    matmul_at_acc(
        &mut g.embedding,
        &dlogits.data,
        &c.decoder_out.data,
        l,
        v,
        d,
    );
    let dz = Matrix::from_vec(l, d, matmul(&dlogits.data, &w.embedding, l, v, d));

    let mut dy = layernorm_backward(&dz, &c.dec_norm, &w.dec_norm, &mut g.dec_norm);
    let mut denc = Matrix::zeros(c.encoder_out.rows, d);
    for ((layer, lc), gl) in w
        .decoder
        .iter()
        .zip(&c.decoder)
        .zip(g.decoder.iter_mut())
        .rev()
    {
        let df = undo_dropout(&lc.drop_ff, &dy);
        let dh = ff_backward(
            &df,
            &lc.ff,
            &layer.ff_in,
            &layer.ff_out,
            &mut gl.ff_in,
            &mut gl.ff_out,
        );
        dy.add_assign(&layernorm_backward(
            &dh,
            &lc.ln_ff,
            &layer.ln_ff,
            &mut gl.ln_ff,
        ));

        let da = undo_dropout(&lc.drop_cross, &dy);
        let (dh, dkv) = attention_backward(
            &da,
            &lc.cross_attn,
            &layer.cross_attn,
            &mut gl.cross_attn,
            heads,
        );
        denc.add_assign(&dkv);
        dy.add_assign(&layernorm_backward(
            &dh,
            &lc.ln_cross,
            &layer.ln_cross,
            &mut gl.ln_cross,
        ));

        let da = undo_dropout(&lc.drop_self, &dy);
        let (mut dh, dkv) = attention_backward(
            &da,
            &lc.self_attn,
            &layer.self_attn,
            &mut gl.self_attn,
            heads,
        );
        dh.add_assign(&dkv);
        dy.add_assign(&layernorm_backward(
            &dh,
            &lc.ln_self,
            &layer.ln_self,
            &mut gl.ln_self,
        ));
    }
    embed_backward(&mut g, &c.decoder_input, &dy, d);

    let mut dx = layernorm_backward(&denc, &c.enc_norm, &w.enc_norm, &mut g.enc_norm);
    for ((layer, lc), gl) in w
        .encoder
        .iter()
        .zip(&c.encoder)
        .zip(g.encoder.iter_mut())
        .rev()
    {
        let df = undo_dropout(&lc.drop_ff, &dx);
        let dh = ff_backward(
            &df,
            &lc.ff,
            &layer.ff_in,
            &layer.ff_out,
            &mut gl.ff_in,
            &mut gl.ff_out,
        );
        dx.add_assign(&layernorm_backward(
            &dh,
            &lc.ln_ff,
            &layer.ln_ff,
            &mut gl.ln_ff,
        ));

        let da = undo_dropout(&lc.drop_attn, &dx);
        let (mut dh, dkv) = attention_backward(&da, &lc.attn, &layer.attn, &mut gl.attn, heads);
        dh.add_assign(&dkv);
        dx.add_assign(&layernorm_backward(
            &dh,
            &lc.ln_attn,
            &layer.ln_attn,
            &mut gl.ln_attn,
        ));
    }
    embed_backward(&mut g, &c.source, &dx, d);
    g
}

pub fn loss_and_gradients<T: Scalar>(
    m: &ModelParams<T>,
    masked_src: &TokenIds,
    target: &TokenIds,
    dropout_seed: Option<u64>,
) -> Result<(T, Gradients<T>), TransformerError> {
    let cache = forward_with_cache(m, masked_src, target, dropout_seed)?;
    let g = backward(m, &cache);
    Ok((cache.loss, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transformer::{init_model, ModelConfig};

    fn small(vocab: usize) -> ModelParams<f64> {
        let cfg = ModelConfig {
            d_model: 16,
            n_heads: 2,
            n_layers_enc: 1,
            n_layers_dec: 1,
            d_ff: 32,
            max_len: 32,
            vocab_size: vocab,
            dropout_rate: 0.0,
            pooling: Default::default(),
        };
        init_model(&cfg, 11).unwrap().cast()
    }

    #[test]
    fn encode_shape_and_determinism() {
        let m = small(12);
        let src = TokenIds(vec![1, 5, 6, 7, 2]);
        let a = encode(&m, &src).unwrap();
        assert_eq!((a.rows, a.cols), (5, 16));
        assert!(a.is_finite());
        assert_eq!(a, encode(&m, &src).unwrap());
    }

    #[test]
    fn positions_matter() {
        let m = small(12);
        let a = encode(&m, &TokenIds(vec![1, 5, 6, 7, 8, 2])).unwrap();
        // Swap the two non-adjacent interior tokens 5 and 8.
        let b = encode(&m, &TokenIds(vec![1, 8, 6, 7, 5, 2])).unwrap();
        assert_ne!(a.row(1), b.row(4));
    }

    #[test]
    fn rejects_long_and_unknown_sequences() {
        let m = small(12);
        let long = TokenIds(vec![5; 33]);
        assert!(matches!(
            encode(&m, &long),
            Err(TransformerError::SequenceTooLong { len: 33, max: 32 })
        ));
        assert!(matches!(
            encode(&m, &TokenIds(vec![1, 12, 2])),
            Err(TransformerError::TokenOutOfRange { id: 12, size: 12 })
        ));
    }

    #[test]
    fn uniform_logits_give_log_vocab() {
        let mut m = small(12);
        // Zero output norm => zero decoder states => all logits equal.
        m.weights.dec_norm.gamma.iter_mut().for_each(|x| *x = 0.0);
        let t = TokenIds(vec![1, 5, 6, 2]);
        let (logits, loss) = forward_denoise(&m, &t, &t).unwrap();
        assert_eq!((logits.rows, logits.cols), (4, 12));
        assert!((loss - (12f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn initial_loss_is_near_log_vocab() {
        let m = small(40);
        let t = TokenIds(vec![1, 5, 9, 17, 30, 22, 6, 2]);
        let (_, loss) = forward_denoise(&m, &t, &t).unwrap();
        let ln_v = (40f64).ln();
        assert!((loss - ln_v).abs() <= 0.1 * ln_v, "loss {loss} vs {ln_v}");
    }

    #[test]
    fn dropout_is_seeded() {
        let mut m = small(12);
        m.config.dropout_rate = 0.3;
        let t = TokenIds(vec![1, 5, 6, 7, 2]);
        let a = forward_with_cache(&m, &t, &t, Some(4)).unwrap().loss;
        let b = forward_with_cache(&m, &t, &t, Some(4)).unwrap().loss;
        let off = forward_with_cache(&m, &t, &t, None).unwrap().loss;
        assert_eq!(a, b);
        assert_ne!(a, off);
    }
}
