use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::scalar::Scalar;
use super::TransformerError;

/// Dense layer `y = x W + b` with `W` stored row-major as `d_in x d_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub d_in: usize,
    pub d_out: usize,
    pub w: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    fn zeros(d_in: usize, d_out: usize) -> Self {
        Linear {
            d_in,
            d_out,
            w: vec![T::zero(); d_in * d_out],
            b: vec![T::zero(); d_out],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Scalar> LayerNorm<T> {
    fn new(d: usize, gamma: T) -> Self {
        LayerNorm {
            gamma: vec![gamma; d],
            beta: vec![T::zero(); d],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attention<T> {
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub o: Linear<T>,
}

impl<T: Scalar> Attention<T> {
    fn zeros(d: usize) -> Self {
        Attention {
            q: Linear::zeros(d, d),
            k: Linear::zeros(d, d),
            v: Linear::zeros(d, d),
            o: Linear::zeros(d, d),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer<T> {
    pub ln_attn: LayerNorm<T>,
    pub attn: Attention<T>,
    pub ln_ff: LayerNorm<T>,
    pub ff_in: Linear<T>,
    pub ff_out: Linear<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer<T> {
    pub ln_self: LayerNorm<T>,
    pub self_attn: Attention<T>,
    pub ln_cross: LayerNorm<T>,
    pub cross_attn: Attention<T>,
    pub ln_ff: LayerNorm<T>,
    pub ff_in: Linear<T>,
    pub ff_out: Linear<T>,
}

/// Every learned tensor of the model. Also used for gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    /// `vocab_size x d_model`, shared by encoder input, decoder input and output projection.
    pub embedding: Vec<T>,
    pub encoder: Vec<EncoderLayer<T>>,
    pub enc_norm: LayerNorm<T>,
    pub decoder: Vec<DecoderLayer<T>>,
    pub dec_norm: LayerNorm<T>,
}

/// Gradients have exactly the shapes of the learned parameters.
pub type Gradients<T> = ParamSet<T>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// What a tensor is, for initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Weight { fan_in: usize },
    Bias,
    NormScale,
    NormShift,
}

impl<T: Scalar> ParamSet<T> {
    /// All-zero tensors with the shapes implied by `cfg`; layer-norm scales are zero too.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self::filled(cfg, T::zero())
    }

    fn filled(cfg: &ModelConfig, gamma: T) -> Self {
        let d = cfg.d_model;
        ParamSet {
            embedding: vec![T::zero(); cfg.vocab_size * d],
            encoder: (0..cfg.n_layers_enc)
                .map(|_| EncoderLayer {
                    ln_attn: LayerNorm::new(d, gamma),
                    attn: Attention::zeros(d),
                    ln_ff: LayerNorm::new(d, gamma),
                    ff_in: Linear::zeros(d, cfg.d_ff),
                    ff_out: Linear::zeros(cfg.d_ff, d),
                })
                .collect(),
            enc_norm: LayerNorm::new(d, gamma),
            decoder: (0..cfg.n_layers_dec)
                .map(|_| DecoderLayer {
                    ln_self: LayerNorm::new(d, gamma),
                    self_attn: Attention::zeros(d),
                    ln_cross: LayerNorm::new(d, gamma),
                    cross_attn: Attention::zeros(d),
                    ln_ff: LayerNorm::new(d, gamma),
                    ff_in: Linear::zeros(d, cfg.d_ff),
                    ff_out: Linear::zeros(cfg.d_ff, d),
                })
                .collect(),
            dec_norm: LayerNorm::new(d, gamma),
        }
    }

    /// Mutable views of every tensor in manifest order.
    pub fn tensors_mut(&mut self) -> Vec<(&mut Vec<T>, TensorKind)> {
        let mut out: Vec<(&mut Vec<T>, TensorKind)> = Vec::new();
        let d = self.enc_norm.gamma.len();
        out.push((&mut self.embedding, TensorKind::Weight { fan_in: d }));
        fn lin<'a, T>(out: &mut Vec<(&'a mut Vec<T>, TensorKind)>, l: &'a mut Linear<T>) {
            out.push((&mut l.w, TensorKind::Weight { fan_in: l.d_in }));
            out.push((&mut l.b, TensorKind::Bias));
        }
        fn norm<'a, T>(out: &mut Vec<(&'a mut Vec<T>, TensorKind)>, n: &'a mut LayerNorm<T>) {
            out.push((&mut n.gamma, TensorKind::NormScale));
            out.push((&mut n.beta, TensorKind::NormShift));
        }
        fn attn<'a, T>(out: &mut Vec<(&'a mut Vec<T>, TensorKind)>, a: &'a mut Attention<T>) {
            lin(out, &mut a.q);
            lin(out, &mut a.k);
            lin(out, &mut a.v);
            lin(out, &mut a.o);
        }
        for layer in &mut self.encoder {
            norm(&mut out, &mut layer.ln_attn);
            attn(&mut out, &mut layer.attn);
            norm(&mut out, &mut layer.ln_ff);
            lin(&mut out, &mut layer.ff_in);
            lin(&mut out, &mut layer.ff_out);
        }
        norm(&mut out, &mut self.enc_norm);
        for layer in &mut self.decoder {
            norm(&mut out, &mut layer.ln_self);
            attn(&mut out, &mut layer.self_attn);
            norm(&mut out, &mut layer.ln_cross);
            attn(&mut out, &mut layer.cross_attn);
            norm(&mut out, &mut layer.ln_ff);
            lin(&mut out, &mut layer.ff_in);
            lin(&mut out, &mut layer.ff_out);
        }
        norm(&mut out, &mut self.dec_norm);
        out
    }

    /// Read-only views in manifest order.
    pub fn tensors(&self) -> Vec<&[T]> {
        fn lin<'a, T>(out: &mut Vec<&'a [T]>, l: &'a Linear<T>) {
            out.push(&l.w);
            out.push(&l.b);
        }
        fn norm<'a, T>(out: &mut Vec<&'a [T]>, n: &'a LayerNorm<T>) {
            out.push(&n.gamma);
            out.push(&n.beta);
        }
        let mut out: Vec<&[T]> = vec![&self.embedding];
        for layer in &self.encoder {
            norm(&mut out, &layer.ln_attn);
            for l in [&layer.attn.q, &layer.attn.k, &layer.attn.v, &layer.attn.o] {
                lin(&mut out, l);
            }
            norm(&mut out, &layer.ln_ff);
            lin(&mut out, &layer.ff_in);
            lin(&mut out, &layer.ff_out);
        }
        norm(&mut out, &self.enc_norm);
        for layer in &self.decoder {
            norm(&mut out, &layer.ln_self);
            for l in [
                &layer.self_attn.q,
                &layer.self_attn.k,
                &layer.self_attn.v,
                &layer.self_attn.o,
            ] {
                lin(&mut out, l);
            }
            norm(&mut out, &layer.ln_cross);
            for l in [
                &layer.cross_attn.q,
                &layer.cross_attn.k,
                &layer.cross_attn.v,
                &layer.cross_attn.o,
            ] {
                lin(&mut out, l);
            }
            norm(&mut out, &layer.ln_ff);
            lin(&mut out, &layer.ff_in);
            lin(&mut out, &layer.ff_out);
        }
        norm(&mut out, &self.dec_norm);
        out
    }

    pub fn numel(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &ParamSet<T>) {
        for ((dst, _), src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (a, &b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for (t, _) in self.tensors_mut() {
            for x in t.iter_mut() {
                *x *= factor;
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::of(x.as_f64())).collect::<Vec<U>>();
        let lin = |l: &Linear<T>| Linear {
            d_in: l.d_in,
            d_out: l.d_out,
            w: conv(&l.w),
            b: conv(&l.b),
        };
        let norm = |n: &LayerNorm<T>| LayerNorm {
            gamma: conv(&n.gamma),
            beta: conv(&n.beta),
        };
        let attn = |a: &Attention<T>| Attention {
            q: lin(&a.q),
            k: lin(&a.k),
            v: lin(&a.v),
            o: lin(&a.o),
        };
        ParamSet {
            embedding: conv(&self.embedding),
            encoder: self
                .encoder
                .iter()
                .map(|l| EncoderLayer {
                    ln_attn: norm(&l.ln_attn),
                    attn: attn(&l.attn),
                    ln_ff: norm(&l.ln_ff),
                    ff_in: lin(&l.ff_in),
                    ff_out: lin(&l.ff_out),
                })
                .collect(),
            enc_norm: norm(&self.enc_norm),
            decoder: self
                .decoder
                .iter()
                .map(|l| DecoderLayer {
                    ln_self: norm(&l.ln_self),
                    self_attn: attn(&l.self_attn),
                    ln_cross: norm(&l.ln_cross),
                    cross_attn: attn(&l.cross_attn),
                    ln_ff: norm(&l.ln_ff),
                    ff_in: lin(&l.ff_in),
                    ff_out: lin(&l.ff_out),
                })
                .collect(),
            dec_norm: norm(&self.dec_norm),
        }
    }
}

/// Names and shapes of the learned tensors, in the order they are stored in `weights.bin`.
pub fn manifest(cfg: &ModelConfig) -> Vec<TensorSpec> {
    let d = cfg.d_model;
    let f = cfg.d_ff;
    let mut out = vec![TensorSpec {
        name: "embedding".into(),
        shape: vec![cfg.vocab_size, d],
    }];
    let mut push = |name: String, shape: Vec<usize>| out.push(TensorSpec { name, shape });
    let lin = |push: &mut dyn FnMut(String, Vec<usize>), p: &str, i: usize, o: usize| {
        push(format!("{p}.weight"), vec![i, o]);
        push(format!("{p}.bias"), vec![o]);
    };
    let norm = |push: &mut dyn FnMut(String, Vec<usize>), p: &str| {
        push(format!("{p}.gamma"), vec![d]);
        push(format!("{p}.beta"), vec![d]);
    };
    let attn = |push: &mut dyn FnMut(String, Vec<usize>), p: &str| {
        for m in ["q", "k", "v", "o"] {
            lin(push, &format!("{p}.{m}"), d, d);
        }
    };
    for l in 0..cfg.n_layers_enc {
        let p = format!("encoder.{l}");
        norm(&mut push, &format!("{p}.ln_attn"));
        attn(&mut push, &format!("{p}.attn"));
        norm(&mut push, &format!("{p}.ln_ff"));
        lin(&mut push, &format!("{p}.ff_in"), d, f);
        lin(&mut push, &format!("{p}.ff_out"), f, d);
    }
    norm(&mut push, "encoder.norm");
    for l in 0..cfg.n_layers_dec {
        let p = format!("decoder.{l}");
        norm(&mut push, &format!("{p}.ln_self"));
        attn(&mut push, &format!("{p}.self_attn"));
        norm(&mut push, &format!("{p}.ln_cross"));
        attn(&mut push, &format!("{p}.cross_attn"));
        norm(&mut push, &format!("{p}.ln_ff"));
        lin(&mut push, &format!("{p}.ff_in"), d, f);
        lin(&mut push, &format!("{p}.ff_out"), f, d);
    }
    norm(&mut push, "decoder.norm");
    out
}

/// Learned weights plus the fixed sinusoidal position table.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub weights: ParamSet<T>,
    /// `max_len x d_model`; not learned.
    pub positional: Vec<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn from_weights(config: ModelConfig, weights: ParamSet<T>) -> Self {
        let positional = sinusoidal_table(config.max_len, config.d_model);
        ModelParams {
            config,
            weights,
            positional,
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams::from_weights(self.config.clone(), self.weights.cast())
    }
}

/// `PE[p, 2i] = sin(p / 10000^(2i/d))`, `PE[p, 2i+1] = cos(...)`.
pub fn sinusoidal_table<T: Scalar>(max_len: usize, d: usize) -> Vec<T> {
    let mut out = vec![T::zero(); max_len * d];
    for p in 0..max_len {
        for i in 0..d {
            let exponent = (2 * (i / 2)) as f64 / d as f64;
            let angle = p as f64 / 10000f64.powf(exponent);
            out[p * d + i] = T::of(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    out
}

/// Seeded initialization: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases and
/// layer-norm shifts 0, layer-norm scales 1.
pub fn init_model(cfg: &ModelConfig, seed: u64) -> Result<ModelParams<f32>, TransformerError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = ParamSet::<f32>::zeros(cfg);
    for (tensor, kind) in weights.tensors_mut() {
        match kind {
            TensorKind::Weight { fan_in } => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                for x in tensor.iter_mut() {
                    *x = rng.random_range(-bound..bound) as f32;
                }
            }
            TensorKind::NormScale => tensor.iter_mut().for_each(|x| *x = 1.0),
            TensorKind::Bias | TensorKind::NormShift => {}
        }
    }
    Ok(ModelParams::from_weights(cfg.clone(), weights))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_matches_tensor_order_and_sizes() {
        let cfg = ModelConfig::toy(40);
        let p = ParamSet::<f32>::zeros(&cfg);
        let specs = manifest(&cfg);
        let tensors = p.tensors();
        assert_eq!(specs.len(), tensors.len());
        for (s, t) in specs.iter().zip(&tensors) {
            assert_eq!(s.numel(), t.len(), "{}", s.name);
        }
        let mut pm = p.clone();
        assert_eq!(pm.tensors_mut().len(), specs.len());
    }

    #[test]
    fn toy_shape_audit() {
        let cfg = ModelConfig::toy(40);
        let p = init_model(&cfg, 0).unwrap();
        let (v, d, f) = (40, 64, 128);
        let attn = 4 * (d * d + d);
        let norm = 2 * d;
        let ff = d * f + f + f * d + d;
        let enc_layer = 2 * norm + attn + ff;
        let dec_layer = 3 * norm + 2 * attn + ff;
        let expected = v * d + 2 * enc_layer + norm + 2 * dec_layer + norm;
        assert_eq!(p.weights.numel(), expected);
        assert_eq!(p.positional.len(), 128 * 64);
        assert_eq!(p.weights.encoder[0].ff_in.w.len(), d * f);
        assert_eq!(p.weights.decoder[1].cross_attn.o.b.len(), d);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = ModelConfig::toy(30);
        let a = init_model(&cfg, 7).unwrap();
        let b = init_model(&cfg, 7).unwrap();
        let c = init_model(&cfg, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = 1.0 / (64f32).sqrt();
        assert!(a.weights.encoder[0]
            .attn
            .q
            .w
            .iter()
            .all(|x| x.abs() <= bound));
        assert!(a.weights.enc_norm.gamma.iter().all(|&g| g == 1.0));
        assert!(a.weights.enc_norm.beta.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn heads_must_divide_width() {
        let mut cfg = ModelConfig::toy(30);
        cfg.d_model = 8;
        cfg.n_heads = 3;
        assert!(matches!(
            init_model(&cfg, 0),
            Err(TransformerError::Config(_))
        ));
    }
}
