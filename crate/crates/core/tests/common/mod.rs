#![allow(dead_code)]

use elyte_core::tokenizer::{TokenIds, BOS, EOS, MASK};
use elyte_core::transformer::{
    forward_denoise, init_model, loss_and_gradients, manifest, ModelConfig, ModelParams, Pooling,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
/// Below this magnitude the relative comparison switches to an absolute one.
pub const MAG_FLOOR: f64 = 1e-4;
pub const PROBES_PER_TENSOR: usize = 64;

pub fn gradcheck_config() -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_heads: 2,
        n_layers_enc: 1,
        n_layers_dec: 1,
        d_ff: 32,
        max_len: 32,
        vocab_size: 14,
        dropout_rate: 0.0,
        pooling: Pooling::Mean,
    }
}

/// Double-precision model with every tensor (including layer-norm scales and biases)
/// perturbed away from its initial value so no gradient is structurally trivial.
pub fn gradcheck_model(seed: u64) -> ModelParams<f64> {
    let cfg = gradcheck_config();
    let mut m: ModelParams<f64> = init_model(&cfg, seed).unwrap().cast();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    for (t, _) in m.weights.tensors_mut() {
        for x in t.iter_mut() {
            *x += rng.random_range(-0.1..0.1);
        }
    }
    m
}

#[derive(Debug)]
pub struct TensorCheck {
    pub name: String,
    pub probes: usize,
    pub worst_rel: f64,
    pub failures: usize,
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(MAG_FLOOR)
}

/// Central finite differences against the analytic gradient at up to
/// [`PROBES_PER_TENSOR`] random coordinates of every tensor (all coordinates of smaller ones).
pub fn gradient_check(seed: u64) -> Vec<TensorCheck> {
    let m = gradcheck_model(seed);
    let target = TokenIds(vec![BOS, 5, 6, 7, 8, 9, 10, 11, 12, 13, 5, EOS]);
    let mut src = target.clone();
    src.0[3] = MASK;
    src.0[8] = MASK;
    let (_, grads) = loss_and_gradients(&m, &src, &target, None).unwrap();
    let specs = manifest(&m.config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let analytic = grads.tensors();
    for (ti, spec) in specs.iter().enumerate() {
        let n = spec.numel();
        let coords: Vec<usize> = if n <= PROBES_PER_TENSOR {
            (0..n).collect()
        } else {
            rand::seq::index::sample(&mut rng, n, PROBES_PER_TENSOR).into_vec()
        };
        let mut check = TensorCheck {
            name: spec.name.clone(),
            probes: coords.len(),
            worst_rel: 0.0,
            failures: 0,
        };
        for &c in &coords {
            let mut plus = m.clone();
            plus.weights.tensors_mut()[ti].0[c] += FD_STEP;
            let mut minus = m.clone();
            minus.weights.tensors_mut()[ti].0[c] -= FD_STEP;
            let lp = forward_denoise(&plus, &src, &target).unwrap().1;
            let lm = forward_denoise(&minus, &src, &target).unwrap().1;
            let numeric = (lp - lm) / (2.0 * FD_STEP);
            let e = rel_err(analytic[ti][c], numeric);
            check.worst_rel = check.worst_rel.max(e);
            if e > REL_TOL {
                check.failures += 1;
            }
        }
        out.push(check);
    }
    out
}

/// Twenty common electrolyte solvents and salts.
pub const POOL: [&str; 20] = [
    "C1COC(=O)O1",
    "CC1COC(=O)O1",
    "COC(=O)OC",
    "CCOC(=O)OCC",
    "CCOC(=O)OC",
    "O=C1OCC(F)O1",
    "O=C1OC=CO1",
    "COCCOC",
    "C1COCO1",
    "C1CCOC1",
    "CS(C)=O",
    "O=S1(=O)CCCC1",
    "CC#N",
    "FC(F)C(F)(F)COC(F)(F)C(F)F",
    "[Li+].F[P-](F)(F)(F)(F)F",
    "[Li+].F[B-](F)(F)F",
    "[Li+].O=S(=O)([N-]S(=O)(=O)C(F)(F)F)C(F)(F)F",
    "[Li+].O=S(=O)(F)[N-]S(=O)(=O)F",
    "[Li+].O=C1O[B-]2(OC1=O)OC(=O)C(=O)O2",
    "[Li+].[O-][N+](=O)[O-]",
];

pub const TOY_CORPUS: &str = include_str!("../../data/pretrain_toy.smi");

pub fn toy_vocab() -> elyte_core::tokenizer::Vocabulary {
    let corpus = elyte_core::pipeline::read_corpus(TOY_CORPUS).unwrap();
    elyte_core::tokenizer::Vocabulary::build(&corpus).unwrap()
}

/// Untrained toy-size model, used as a fixed random feature map.
pub fn frozen_bundle(seed: u64) -> elyte_core::transformer::ModelBundle {
    let vocab = toy_vocab();
    let cfg = ModelConfig::toy(vocab.len());
    elyte_core::transformer::ModelBundle {
        params: init_model(&cfg, seed).unwrap(),
        vocab,
        meta: elyte_core::transformer::TrainingMeta {
            train: None,
            init_seed: seed,
            corpus_size: 0,
        },
    }
}

/// `count` formulations of 2..=6 distinct pool molecules with Dirichlet(1) mole fractions.
pub fn synthetic_formulations(count: usize, seed: u64) -> Vec<elyte_core::featurizer::Formulation> {
    use elyte_core::featurizer::{Component, Formulation};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| {
            let n = rng.random_range(2..=6);
            let picks = rand::seq::index::sample(&mut rng, POOL.len(), n).into_vec();
            let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let total: f64 = raw.iter().sum();
            Formulation {
                id: format!("F{k:03}"),
                components: picks
                    .iter()
                    .zip(&raw)
                    .map(|(&p, &w)| Component::new(POOL[p], w / total))
                    .collect(),
                target: None,
            }
        })
        .collect()
}

/// Long-format CSV; the target column is written only when every formulation has one.
pub fn dataset_csv(ds: &[elyte_core::featurizer::Formulation]) -> String {
    let labeled = ds.iter().all(|f| f.target.is_some());
    let mut s = String::from("formulation_id,component_smiles,mole_fraction");
    s.push_str(if labeled { ",target\n" } else { "\n" });
    for f in ds {
        for c in &f.components {
            s.push_str(&format!("{},{},{}", f.id, c.smiles, c.fraction));
            if let Some(t) = f.target {
                s.push_str(&format!(",{t}"));
            }
            s.push('\n');
        }
    }
    s
}

/// Labels `ds` with `w·SA + N(0, σ²)`, `w ~ N(0, I)`, `σ = noise_ratio · std(w·SA)`.
/// Returns σ.
pub fn label_linear(
    ds: &mut [elyte_core::featurizer::Formulation],
    bundle: &elyte_core::transformer::ModelBundle,
    seed: u64,
    noise_ratio: f64,
) -> f64 {
    use elyte_core::featurizer::{featurize_unlabeled, EmbeddingCache};
    use rand_distr::{Distribution, Normal, StandardNormal};
    let cache = EmbeddingCache::new(&bundle.params, &bundle.vocab);
    let rows = featurize_unlabeled(ds, &cache, true).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = bundle.params.config.d_model;
    let w: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let signal: Vec<f64> = rows
        .iter()
        .map(|r| r.0.iter().zip(&w).map(|(a, b)| a * b).sum())
        .collect();
    let mean = signal.iter().sum::<f64>() / signal.len() as f64;
    let var = signal.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / signal.len() as f64;
    let sigma = noise_ratio * var.sqrt();
    let noise = Normal::new(0.0, sigma).unwrap();
    for (f, s) in ds.iter_mut().zip(&signal) {
        f.target = Some(s + noise.sample(&mut rng));
    }
    sigma
}
