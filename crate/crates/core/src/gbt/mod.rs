//! First-order gradient-boosted regression trees on squared error, with exact greedy splits,
//! L2 leaf shrinkage and a seeded random hyperparameter search.

mod search;
mod tree;

pub use search::{
    kfold_indices, random_search, SearchConfig, SearchResult, SearchSpace, TrialRecord,
};
pub use tree::{best_split, fit, fit_monitored, SplitChoice, GAIN_TIE_REL_TOL};

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum GbtError {
    #[error("invalid hyperparameters: {0}")]
    Hyperparams(String),
    #[error("feature vector has length {got}, model expects {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("{0} rows of features but {1} targets")]
    LengthMismatch(usize, usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("no training rows")]
    NoData,
    #[error("cannot compute RMSE of an empty set")]
    EmptyInput,
    #[error("invalid search configuration: {0}")]
    Search(String),
    #[error("every search trial failed")]
    AllTrialsFailed,
    #[error("malformed ensemble: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtHyperparams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    pub l2_leaf_penalty: f64,
    pub subsample_fraction: f64,
    pub seed: u64,
}

impl Default for GbtHyperparams {
    fn default() -> Self {
        GbtHyperparams {
            n_trees: 100,
            max_depth: 3,
            learning_rate: 0.1,
            min_samples_leaf: 1,
            l2_leaf_penalty: 1.0,
            subsample_fraction: 1.0,
            seed: 0,
        }
    }
}

impl GbtHyperparams {
    pub fn validate(&self) -> Result<(), GbtError> {
        let bad = |m: String| Err(GbtError::Hyperparams(m));
        if self.n_trees == 0 || self.max_depth == 0 || self.min_samples_leaf == 0 {
            return bad("n_trees, max_depth and min_samples_leaf must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!(
                "learning_rate {} outside (0, 1]",
                self.learning_rate
            ));
        }
        if !(self.l2_leaf_penalty >= 0.0 && self.l2_leaf_penalty.is_finite()) {
            return bad(format!(
                "l2_leaf_penalty {} must be >= 0",
                self.l2_leaf_penalty
            ));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return bad(format!(
                "subsample_fraction {} outside (0, 1]",
                self.subsample_fraction
            ));
        }
        Ok(())
    }
}

/// One node of a flat tree; children are indices into the same array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Binary regression tree rooted at `nodes[0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] < threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtEnsemble {
    pub n_features: usize,
    pub base_prediction: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
}

impl GbtEnsemble {
    /// `base + η Σ_t tree_t(x)`; `x[f] < threshold` goes left.
    pub fn predict(&self, x: &[f64]) -> Result<f64, GbtError> {
        if x.len() != self.n_features {
            return Err(GbtError::DimensionMismatch {
                got: x.len(),
                expected: self.n_features,
            });
        }
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        self.base_prediction + self.learning_rate * sum
    }

    pub fn predict_many(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>, GbtError> {
        xs.iter().map(|x| self.predict(x)).collect()
    }

    /// Structural checks: child indices in range and acyclic (children after parents),
    /// feature indices below `n_features`, finite values.
    pub fn validate(&self) -> Result<(), GbtError> {
        if !self.base_prediction.is_finite() || !self.learning_rate.is_finite() {
            return Err(GbtError::Malformed(
                "non-finite base or learning rate".into(),
            ));
        }
        for (ti, t) in self.trees.iter().enumerate() {
            if t.nodes.is_empty() {
                return Err(GbtError::Malformed(format!("tree {ti} is empty")));
            }
            for (ni, n) in t.nodes.iter().enumerate() {
                let ok = match *n {
                    Node::Leaf { value } => value.is_finite(),
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        feature < self.n_features
                            && threshold.is_finite()
                            && left > ni
                            && right > ni
                            && left < t.nodes.len()
                            && right < t.nodes.len()
                    }
                };
                if !ok {
                    return Err(GbtError::Malformed(format!("tree {ti}, node {ni}")));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, GbtError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self, GbtError> {
        let e: GbtEnsemble = serde_json::from_str(s)?;
        e.validate()?;
        Ok(e)
    }

    pub fn save(&self, path: &Path) -> Result<(), GbtError> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GbtError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Root mean squared error over `(actual, predicted)` pairs.
pub fn rmse(pairs: &[(f64, f64)]) -> Result<f64, GbtError> {
    if pairs.is_empty() {
        return Err(GbtError::EmptyInput);
    }
    let sse: f64 = pairs.iter().map(|(a, p)| (a - p) * (a - p)).sum();
    Ok((sse / pairs.len() as f64).sqrt())
}

/// Rounds to three decimals for display.
pub fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}
