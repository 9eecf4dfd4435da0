//! Dataset ingestion, train/test split, and the end-to-end pretrain, train, predict and
//! evaluate runs behind the command-line tool.

mod dataset;
mod run;

pub use dataset::{
    load_dataset, parse_dataset, read_smiles_lines, split, split_indices, LoadOptions,
    LABELED_HEADER, MAX_COMPONENTS, MIN_SPLIT_SIZE, TRAIN_FRACTION,
};
pub use run::{
    emit_parity, evaluate, fit_regressor, predict, read_corpus, run_evaluate, run_predict,
    run_pretrain, run_train, ArchConfig, ArtifactHashes, EvalReport, ParityPair, PretrainConfig,
    RunReport, TrainOptions, PARITY_FILE, REGRESSOR_FILE, REPORT_FILE, SEARCH_LOG_FILE,
    TRAIN_LOG_FILE,
};

use crate::featurizer::FeaturizerError;
use crate::gbt::GbtError;
use crate::selfies::SelfiesError;
use crate::smiles::SmilesError;
use crate::tokenizer::TokenizerError;
use crate::transformer::TransformerError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("line {line}: {message}")]
    Schema { line: u64, message: String },
    #[error("line {line}: formulation {id} has rows with different targets")]
    InconsistentTarget { id: String, line: u64 },
    #[error("line {line}: formulation {id} has a non-positive target, cannot take log10")]
    NonPositiveTarget { id: String, line: u64 },
    #[error(
        "line {line}: formulation {id} has {count} components, at most {MAX_COMPONENTS} allowed"
    )]
    ComponentCount { id: String, count: usize, line: u64 },
    #[error("line {line}: invalid SMILES `{smiles}`: {source}")]
    InvalidSmiles {
        line: u64,
        smiles: String,
        #[source]
        source: SmilesError,
    },
    #[error("line {line}: cannot encode `{smiles}`: {source}")]
    Unencodable {
        line: u64,
        smiles: String,
        #[source]
        source: SelfiesError,
    },
    #[error("need at least {MIN_SPLIT_SIZE} formulations to split, got {n}")]
    TooFewSamples { n: usize },
    #[error("corpus contains no molecules")]
    EmptyCorpus,
    #[error("report has no parity pairs")]
    EmptyReport,
    #[error("regressor expects {expected} features but the model produces {got}")]
    RegressorMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Featurizer(#[from] FeaturizerError),
    #[error(transparent)]
    Transformer(#[from] TransformerError),
    #[error(transparent)]
    Gbt(#[from] GbtError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// Whether the error stems from bad input (as opposed to an internal failure).
    pub fn is_validation(&self) -> bool {
        match self {
            PipelineError::Io(e) => e.kind() == std::io::ErrorKind::NotFound,
            PipelineError::Transformer(TransformerError::NonFinite(_))
            | PipelineError::Transformer(TransformerError::Io(_))
            | PipelineError::Gbt(GbtError::AllTrialsFailed)
            | PipelineError::Gbt(GbtError::Io(_)) => false,
            _ => true,
        }
    }
}
