use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::{load_dataset, read_smiles_lines, split_indices, LoadOptions};
use super::PipelineError;
use crate::featurizer::{
    csv_field, featurize_dataset, featurize_unlabeled, EmbeddingCache, Formulation,
};
use crate::gbt::{
    fit, random_search, rmse, round3, GbtEnsemble, GbtHyperparams, SearchConfig, SearchResult,
};
use crate::selfies::{encode, SelfiesString};
use crate::smiles::parse_smiles;
use crate::tokenizer::Vocabulary;
use crate::transformer::{
    load_bundle, pretrain_corpus, save_bundle, ModelBundle, ModelConfig, ModelParams, Pooling,
    TrainConfig, TrainReport, TrainingMeta,
};

pub const TRAIN_LOG_FILE: &str = "train_log.json";
pub const REGRESSOR_FILE: &str = "regressor.json";
pub const REPORT_FILE: &str = "report.json";
pub const PARITY_FILE: &str = "parity.csv";
pub const SEARCH_LOG_FILE: &str = "search_log.json";

/// Model shape for pretraining; the vocabulary size comes from the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers_enc: usize,
    pub n_layers_dec: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout_rate: f64,
    pub pooling: Pooling,
}

impl Default for ArchConfig {
    fn default() -> Self {
        let t = ModelConfig::toy(0);
        ArchConfig {
            d_model: t.d_model,
            n_heads: t.n_heads,
            n_layers_enc: t.n_layers_enc,
            n_layers_dec: t.n_layers_dec,
            d_ff: t.d_ff,
            max_len: t.max_len,
            dropout_rate: t.dropout_rate,
            pooling: t.pooling,
        }
    }
}

impl ArchConfig {
    pub fn with_vocab(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_layers_enc: self.n_layers_enc,
            n_layers_dec: self.n_layers_dec,
            d_ff: self.d_ff,
            max_len: self.max_len,
            vocab_size,
            dropout_rate: self.dropout_rate,
            pooling: self.pooling,
        }
    }
}

/// Contents of the `--config` file of `pretrain`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PretrainConfig {
    #[serde(default)]
    pub model: ArchConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub split_seed: u64,
    pub search: SearchConfig,
    pub log10_target: bool,
    pub strict_fractions: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            split_seed: 0,
            search: SearchConfig::default(),
            log10_target: false,
            strict_fractions: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityPair {
    pub formulation_id: String,
    pub actual: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rmse: f64,
    /// `rmse` rounded to three decimals.
    pub rmse_display: f64,
    /// Sorted by formulation id.
    pub parity_pairs: Vec<ParityPair>,
}

impl EvalReport {
    pub fn from_pairs(mut pairs: Vec<ParityPair>) -> Result<Self, PipelineError> {
        pairs.sort_by(|a, b| a.formulation_id.cmp(&b.formulation_id));
        let plain: Vec<(f64, f64)> = pairs.iter().map(|p| (p.actual, p.predicted)).collect();
        let r = rmse(&plain).map_err(|_| PipelineError::EmptyReport)?;
        Ok(EvalReport {
            rmse: r,
            rmse_display: round3(r),
            parity_pairs: pairs,
        })
    }
}

/// SHA-256 digests (hex) of the inputs a run depended on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactHashes {
    pub model_config: String,
    pub vocab: String,
    pub weights: String,
    pub dataset: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    #[serde(flatten)]
    pub evaluation: EvalReport,
    pub best_hyperparams: GbtHyperparams,
    pub best_cv_rmse: f64,
    pub split_seed: u64,
    pub search_seed: u64,
    pub search_trials: usize,
    pub search_folds: usize,
    pub log10_target: bool,
    pub n_dataset_rows: usize,
    pub n_formulations: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub feature_width: usize,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub hashes: ArtifactHashes,
}

fn sha256_file(path: &Path) -> Result<String, PipelineError> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>, PipelineError> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s.into_bytes())
}

/// Fills a fresh sibling directory via `fill` and moves it to `out` only if that succeeds.
fn write_dir_atomic<F>(out: &Path, fill: F) -> Result<(), PipelineError>
where
    F: FnOnce(&Path) -> Result<(), PipelineError>,
{
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(parent)?;
    let tmp = tempfile::Builder::new()
        .prefix(".elyte-")
        .tempdir_in(parent)?;
    fill(tmp.path())?;
    if out.exists() {
        fs::remove_dir_all(out)?;
    }
    fs::rename(tmp.keep(), out)?;
    Ok(())
}

fn write_file_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(parent)?;
    let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| PipelineError::Io(e.error))?;
    Ok(())
}

/// Parses a one-SMILES-per-line corpus into canonical SELFIES.
pub fn read_corpus(text: &str) -> Result<Vec<SelfiesString>, PipelineError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = (i + 1) as u64;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let g = parse_smiles(s).map_err(|source| PipelineError::InvalidSmiles {
            line,
            smiles: s.to_string(),
            source,
        })?;
        let sf = encode(&g).map_err(|source| PipelineError::Unencodable {
            line,
            smiles: s.to_string(),
            source,
        })?;
        out.push(sf);
    }
    debug_assert_eq!(out.len(), read_smiles_lines(text).len());
    Ok(out)
}

/// Builds the vocabulary, pretrains, and writes the bundle plus `train_log.json` to `out`.
/// Nothing is written if any step fails.
pub fn run_pretrain(
    corpus_path: &Path,
    cfg: &PretrainConfig,
    out: &Path,
) -> Result<(ModelBundle, TrainReport), PipelineError> {
    let corpus = read_corpus(&fs::read_to_string(corpus_path)?)?;
    if corpus.is_empty() {
        return Err(PipelineError::EmptyCorpus);
    }
    let vocab = Vocabulary::build(&corpus)?;
    let model_cfg = cfg.model.with_vocab(vocab.len());
    let (params, report) = pretrain_corpus(&corpus, &vocab, &model_cfg, &cfg.train)?;
    let bundle = ModelBundle {
        params,
        vocab,
        meta: TrainingMeta {
            train: Some(cfg.train.clone()),
            init_seed: cfg.train.seed,
            corpus_size: corpus.len(),
        },
    };
    write_dir_atomic(out, |dir| {
        save_bundle(dir, &bundle)?;
        fs::write(dir.join(TRAIN_LOG_FILE), json_bytes(&report)?)?;
        Ok(())
    })?;
    Ok((bundle, report))
}

fn features(
    cache: &EmbeddingCache,
    ds: &[Formulation],
    strict: bool,
) -> Result<(Vec<Vec<f64>>, Vec<f64>), PipelineError> {
    let (rows, y) = featurize_dataset(ds, cache, strict)?;
    Ok((rows.into_iter().map(|r| r.0).collect(), y))
}

/// Random search on `train` only, then a refit of the best hyperparameters on all of it.
pub fn fit_regressor(
    model: &ModelParams<f32>,
    vocab: &Vocabulary,
    train: &[Formulation],
    search: &SearchConfig,
    strict_fractions: bool,
) -> Result<(GbtEnsemble, SearchResult), PipelineError> {
    let cache = EmbeddingCache::new(model, vocab);
    let (x, y) = features(&cache, train, strict_fractions)?;
    let result = random_search(&x, &y, search)?;
    let ensemble = fit(&x, &y, &result.best)?;
    Ok((ensemble, result))
}

fn check_width(model: &ModelParams<f32>, e: &GbtEnsemble) -> Result<(), PipelineError> {
    if e.n_features != model.config.d_model {
        return Err(PipelineError::RegressorMismatch {
            expected: e.n_features,
            got: model.config.d_model,
        });
    }
    Ok(())
}

pub fn predict(
    model: &ModelParams<f32>,
    vocab: &Vocabulary,
    e: &GbtEnsemble,
    ds: &[Formulation],
    strict_fractions: bool,
) -> Result<Vec<f64>, PipelineError> {
    check_width(model, e)?;
    let cache = EmbeddingCache::new(model, vocab);
    let rows = featurize_unlabeled(ds, &cache, strict_fractions)?;
    Ok(rows
        .iter()
        .map(|r| e.predict(&r.0))
        .collect::<Result<Vec<_>, _>>()?)
}

pub fn evaluate(
    model: &ModelParams<f32>,
    vocab: &Vocabulary,
    e: &GbtEnsemble,
    ds: &[Formulation],
    strict_fractions: bool,
) -> Result<EvalReport, PipelineError> {
    check_width(model, e)?;
    let cache = EmbeddingCache::new(model, vocab);
    let (x, y) = features(&cache, ds, strict_fractions)?;
    let mut pairs = Vec::with_capacity(ds.len());
    for ((f, xi), yi) in ds.iter().zip(&x).zip(y) {
        pairs.push(ParityPair {
            formulation_id: f.id.clone(),
            actual: yi,
            predicted: e.predict(xi)?,
        });
    }
    EvalReport::from_pairs(pairs)
}

/// `actual,predicted` CSV, one row per pair in report order, full precision.
pub fn emit_parity(report: &EvalReport) -> Result<String, PipelineError> {
    if report.parity_pairs.is_empty() {
        return Err(PipelineError::EmptyReport);
    }
    let mut s = String::from("actual,predicted\n");
    for p in &report.parity_pairs {
        let _ = writeln!(s, "{},{}", p.actual, p.predicted);
    }
    Ok(s)
}

/// Split, search, refit, evaluate; writes `regressor.json`, `report.json`, `parity.csv` and
/// `search_log.json` to `out`.
pub fn run_train(
    model_dir: &Path,
    dataset_path: &Path,
    opts: &TrainOptions,
    out: &Path,
) -> Result<RunReport, PipelineError> {
    let bundle = load_bundle(model_dir)?;
    let ds = load_dataset(
        dataset_path,
        LoadOptions {
            require_target: true,
            log10_target: opts.log10_target,
            strict_fractions: opts.strict_fractions,
        },
    )?;
    let (train_idx, test_idx) = split_indices(ds.len(), opts.split_seed)?;
    let train: Vec<Formulation> = train_idx.iter().map(|&i| ds[i].clone()).collect();
    let test: Vec<Formulation> = test_idx.iter().map(|&i| ds[i].clone()).collect();

    let (ensemble, search) = fit_regressor(
        &bundle.params,
        &bundle.vocab,
        &train,
        &opts.search,
        opts.strict_fractions,
    )?;
    let evaluation = evaluate(
        &bundle.params,
        &bundle.vocab,
        &ensemble,
        &test,
        opts.strict_fractions,
    )?;
    let report = RunReport {
        evaluation,
        best_hyperparams: search.best.clone(),
        best_cv_rmse: search.best_cv_rmse,
        split_seed: opts.split_seed,
        search_seed: opts.search.seed,
        search_trials: opts.search.trials,
        search_folds: opts.search.folds,
        log10_target: opts.log10_target,
        n_dataset_rows: ds.iter().map(|f| f.components.len()).sum(),
        n_formulations: ds.len(),
        n_train: train.len(),
        n_test: test.len(),
        feature_width: bundle.params.config.d_model,
        train_ids: train.iter().map(|f| f.id.clone()).collect(),
        test_ids: test.iter().map(|f| f.id.clone()).collect(),
        hashes: ArtifactHashes {
            model_config: sha256_file(&model_dir.join("config.json"))?,
            vocab: sha256_file(&model_dir.join("vocab.txt"))?,
            weights: sha256_file(&model_dir.join("weights.bin"))?,
            dataset: sha256_file(dataset_path)?,
        },
    };
    let parity = emit_parity(&report.evaluation)?;
    write_dir_atomic(out, |dir| {
        ensemble.save(&dir.join(REGRESSOR_FILE))?;
        fs::write(dir.join(REPORT_FILE), json_bytes(&report)?)?;
        fs::write(dir.join(PARITY_FILE), parity)?;
        fs::write(dir.join(SEARCH_LOG_FILE), json_bytes(&search)?)?;
        Ok(())
    })?;
    Ok(report)
}

/// Writes `formulation_id,prediction` rows in dataset order. Targets, if present, are ignored.
pub fn run_predict(
    model_dir: &Path,
    regressor_path: &Path,
    dataset_path: &Path,
    out: &Path,
) -> Result<Vec<(String, f64)>, PipelineError> {
    let bundle = load_bundle(model_dir)?;
    let ensemble = GbtEnsemble::load(regressor_path)?;
    let ds = load_dataset(
        dataset_path,
        LoadOptions {
            require_target: false,
            ..LoadOptions::default()
        },
    )?;
    let preds = predict(&bundle.params, &bundle.vocab, &ensemble, &ds, true)?;
    let mut csv = String::from("formulation_id,prediction\n");
    for (f, p) in ds.iter().zip(&preds) {
        let _ = writeln!(csv, "{},{}", csv_field(&f.id), p);
    }
    write_file_atomic(out, csv.as_bytes())?;
    Ok(ds.into_iter().map(|f| f.id).zip(preds).collect())
}

/// Scores a saved regressor on a labeled dataset and writes the report as JSON.
pub fn run_evaluate(
    model_dir: &Path,
    regressor_path: &Path,
    dataset_path: &Path,
    out: &Path,
) -> Result<EvalReport, PipelineError> {
    let bundle = load_bundle(model_dir)?;
    let ensemble = GbtEnsemble::load(regressor_path)?;
    let ds = load_dataset(dataset_path, LoadOptions::default())?;
    let report = evaluate(&bundle.params, &bundle.vocab, &ensemble, &ds, true)?;
    write_file_atomic(out, &json_bytes(&report)?)?;
    Ok(report)
}
