//! Formulation features: the mole-fraction-weighted sum of component representations.
//!
//! The output width equals the representation width whatever the number of components,
//! so formulations with 2 and 6 components share one feature layout without padding.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::tokenizer::Vocabulary;
use crate::transformer::{embed_molecule, ModelParams, RepVector, TransformerError};

/// Allowed deviation of the fraction sum from 1 in strict mode.
pub const FRACTION_EPS: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub smiles: String,
    pub fraction: f64,
}

impl Component {
    pub fn new(smiles: impl Into<String>, fraction: f64) -> Self {
        Component {
            smiles: smiles.into(),
            fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Formulation {
    pub id: String,
    pub components: Vec<Component>,
    pub target: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FeaturizerError {
    #[error("formulation {id} has no components")]
    NoComponents { id: String },
    #[error("formulation {id}: fraction {fraction} of {smiles} is outside [0, 1]")]
    FractionOutOfRange {
        id: String,
        smiles: String,
        fraction: f64,
    },
    #[error("formulation {id}: fractions sum to {sum}; they look like percentages, give mole fractions in [0, 1]")]
    Percentages { id: String, sum: f64 },
    #[error("formulation {id}: fractions sum to {sum}, expected 1 within {FRACTION_EPS}")]
    FractionSum { id: String, sum: f64 },
    #[error("formulation {id} has no target value")]
    MissingTarget { id: String },
    #[error("representation of {smiles} has length {got}, expected {expected}")]
    WidthMismatch {
        smiles: String,
        got: usize,
        expected: usize,
    },
    #[error("cannot embed {smiles}: {source}")]
    Embed {
        smiles: String,
        #[source]
        source: TransformerError,
    },
}

/// Checks fraction ranges, rejects percentages and, when `strict`, the sum-to-one rule.
pub fn validate_fractions(f: &Formulation, strict: bool) -> Result<(), FeaturizerError> {
    if f.components.is_empty() {
        return Err(FeaturizerError::NoComponents { id: f.id.clone() });
    }
    let sum: f64 = f.components.iter().map(|c| c.fraction).sum();
    if f.components.iter().any(|c| c.fraction > 1.0) && (sum - 100.0).abs() <= 1.0 {
        return Err(FeaturizerError::Percentages {
            id: f.id.clone(),
            sum,
        });
    }
    if let Some(c) = f
        .components
        .iter()
        .find(|c| !(0.0..=1.0).contains(&c.fraction))
    {
        return Err(FeaturizerError::FractionOutOfRange {
            id: f.id.clone(),
            smiles: c.smiles.clone(),
            fraction: c.fraction,
        });
    }
    if strict && (sum - 1.0).abs() > FRACTION_EPS {
        return Err(FeaturizerError::FractionSum {
            id: f.id.clone(),
            sum,
        });
    }
    Ok(())
}

/// `Σ c_i r_i` accumulated in `f64`.
///
/// Terms are sorted by (SMILES text, fraction) and summed with Kahan compensation, so the
/// result is bit-identical under any permutation of the input.
pub fn weighted_sum(terms: &[(&str, f64, &[f32])], width: usize) -> FeatureVector {
    let mut order: Vec<usize> = (0..terms.len()).collect();
    order.sort_by(|&a, &b| {
        terms[a]
            .0
            .cmp(terms[b].0)
            .then(terms[a].1.total_cmp(&terms[b].1))
    });
    let mut sum = vec![0.0f64; width];
    let mut comp = vec![0.0f64; width];
    for &i in &order {
        let (_, c, r) = terms[i];
        for j in 0..width {
            let y = c * r[j] as f64 - comp[j];
            let t = sum[j] + y;
            comp[j] = (t - sum[j]) - y;
            sum[j] = t;
        }
    }
    FeatureVector(sum)
}

/// Features of one formulation using `embed` for the component representations.
pub fn featurize<F>(
    f: &Formulation,
    mut embed: F,
    strict: bool,
) -> Result<FeatureVector, FeaturizerError>
where
    F: FnMut(&str) -> Result<RepVector, TransformerError>,
{
    validate_fractions(f, strict)?;
    let reps = f
        .components
        .iter()
        .map(|c| {
            embed(&c.smiles).map_err(|source| FeaturizerError::Embed {
                smiles: c.smiles.clone(),
                source,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let width = reps[0].len();
    let mut terms = Vec::with_capacity(reps.len());
    for (c, r) in f.components.iter().zip(&reps) {
        if r.len() != width {
            return Err(FeaturizerError::WidthMismatch {
                smiles: c.smiles.clone(),
                got: r.len(),
                expected: width,
            });
        }
        terms.push((c.smiles.as_str(), c.fraction, r.as_slice()));
    }
    Ok(weighted_sum(&terms, width))
}

/// Thread-safe memo of molecule representations for one frozen model.
pub struct EmbeddingCache<'a> {
    model: &'a ModelParams<f32>,
    vocab: &'a Vocabulary,
    map: Mutex<HashMap<String, RepVector>>,
    computed: AtomicUsize,
}

impl<'a> EmbeddingCache<'a> {
    pub fn new(model: &'a ModelParams<f32>, vocab: &'a Vocabulary) -> Self {
        EmbeddingCache {
            model,
            vocab,
            map: Mutex::new(HashMap::new()),
            computed: AtomicUsize::new(0),
        }
    }

    /// Number of times the model was actually run.
    pub fn embed_calls(&self) -> usize {
        self.computed.load(Ordering::SeqCst)
    }

    pub fn width(&self) -> usize {
        self.model.config.d_model
    }

    pub fn get(&self, smiles: &str) -> Result<RepVector, TransformerError> {
        if let Some(r) = self.map.lock().expect("cache lock").get(smiles) {
            return Ok(r.clone());
        }
        let r = embed_molecule(self.model, self.vocab, smiles)?;
        self.computed.fetch_add(1, Ordering::SeqCst);
        self.map
            .lock()
            .expect("cache lock")
            .insert(smiles.to_string(), r.clone());
        Ok(r)
    }

    /// Embeds every not-yet-cached SMILES once, in parallel.
    pub fn warm<'s, I: IntoIterator<Item = &'s str>>(
        &self,
        smiles: I,
    ) -> Result<(), FeaturizerError> {
        let missing: Vec<&str> = {
            let map = self.map.lock().expect("cache lock");
            smiles
                .into_iter()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .filter(|s| !map.contains_key(*s))
                .collect()
        };
        let reps: Vec<Result<RepVector, FeaturizerError>> = missing
            .par_iter()
            .map(|s| {
                embed_molecule(self.model, self.vocab, s).map_err(|source| FeaturizerError::Embed {
                    smiles: s.to_string(),
                    source,
                })
            })
            .collect();
        let mut map = self.map.lock().expect("cache lock");
        for (s, r) in missing.into_iter().zip(reps) {
            map.insert(s.to_string(), r?);
            self.computed.fetch_add(1, Ordering::SeqCst);
        }
        Ok(())
    }
}

/// Feature rows (in input order) plus targets. Each distinct SMILES is embedded once.
pub fn featurize_dataset(
    ds: &[Formulation],
    cache: &EmbeddingCache,
    strict: bool,
) -> Result<(Vec<FeatureVector>, Vec<f64>), FeaturizerError> {
    let targets = ds
        .iter()
        .map(|f| {
            f.target
                .ok_or_else(|| FeaturizerError::MissingTarget { id: f.id.clone() })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((featurize_unlabeled(ds, cache, strict)?, targets))
}

/// Feature rows for formulations whose targets may be absent.
pub fn featurize_unlabeled(
    ds: &[Formulation],
    cache: &EmbeddingCache,
    strict: bool,
) -> Result<Vec<FeatureVector>, FeaturizerError> {
    for f in ds {
        validate_fractions(f, strict)?;
    }
    cache.warm(
        ds.iter()
            .flat_map(|f| f.components.iter().map(|c| c.smiles.as_str())),
    )?;
    ds.iter()
        .map(|f| featurize(f, |s| cache.get(s), strict))
        .collect()
}

/// CSV with header `formulation_id,f0,..,f{d-1},target`; the target cell is empty when absent.
pub fn features_csv(ds: &[Formulation], rows: &[FeatureVector]) -> String {
    let width = rows.first().map_or(0, FeatureVector::len);
    let mut out = String::from("formulation_id");
    for j in 0..width {
        let _ = write!(out, ",f{j}");
    }
    out.push_str(",target\n");
    for (f, row) in ds.iter().zip(rows) {
        out.push_str(&csv_field(&f.id));
        for v in &row.0 {
            let _ = write!(out, ",{v}");
        }
        out.push(',');
        if let Some(t) = f.target {
            let _ = write!(out, "{t}");
        }
        out.push('\n');
    }
    out
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
