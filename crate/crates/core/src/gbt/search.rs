use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::fit;
use super::{rmse, GbtError, GbtHyperparams};

/// Inclusive sampling ranges. The learning rate is sampled log-uniformly, everything else
/// uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub n_trees: (usize, usize),
    pub max_depth: (usize, usize),
    pub learning_rate: (f64, f64),
    pub l2_leaf_penalty: (f64, f64),
    pub subsample_fraction: (f64, f64),
    pub min_samples_leaf: (usize, usize),
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            n_trees: (50, 500),
            max_depth: (2, 6),
            learning_rate: (0.01, 0.3),
            l2_leaf_penalty: (0.0, 10.0),
            subsample_fraction: (0.6, 1.0),
            min_samples_leaf: (1, 5),
        }
    }
}

impl SearchSpace {
    fn validate(&self) -> Result<(), GbtError> {
        let bad = |m: &str| Err(GbtError::Search(m.to_string()));
        let (lo, hi) = self.learning_rate;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad("learning_rate range must satisfy 0 < lo <= hi <= 1");
        }
        if self.n_trees.0 == 0 || self.n_trees.0 > self.n_trees.1 {
            return bad("n_trees range must satisfy 1 <= lo <= hi");
        }
        if self.max_depth.0 == 0 || self.max_depth.0 > self.max_depth.1 {
            return bad("max_depth range must satisfy 1 <= lo <= hi");
        }
        if self.min_samples_leaf.0 == 0 || self.min_samples_leaf.0 > self.min_samples_leaf.1 {
            return bad("min_samples_leaf range must satisfy 1 <= lo <= hi");
        }
        let (lo, hi) = self.l2_leaf_penalty;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return bad("l2_leaf_penalty range must satisfy 0 <= lo <= hi");
        }
        let (lo, hi) = self.subsample_fraction;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad("subsample_fraction range must satisfy 0 < lo <= hi <= 1");
        }
        Ok(())
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> GbtHyperparams {
        let (lr_lo, lr_hi) = self.learning_rate;
        let log_lr = rng.random_range(lr_lo.ln()..=lr_hi.ln());
        GbtHyperparams {
            n_trees: rng.random_range(self.n_trees.0..=self.n_trees.1),
            max_depth: rng.random_range(self.max_depth.0..=self.max_depth.1),
            learning_rate: log_lr.exp().clamp(lr_lo, lr_hi),
            l2_leaf_penalty: rng.random_range(self.l2_leaf_penalty.0..=self.l2_leaf_penalty.1),
            subsample_fraction: rng
                .random_range(self.subsample_fraction.0..=self.subsample_fraction.1),
            min_samples_leaf: rng.random_range(self.min_samples_leaf.0..=self.min_samples_leaf.1),
            seed: rng.random(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub trials: usize,
    pub folds: usize,
    pub seed: u64,
    #[serde(default)]
    pub space: SearchSpace,
    /// Also score [`GbtHyperparams::default`] as one extra trial after the sampled ones.
    #[serde(default)]
    pub include_defaults: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            trials: 50,
            folds: 5,
            seed: 0,
            space: SearchSpace::default(),
            include_defaults: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub hyperparams: GbtHyperparams,
    pub fold_rmse: Vec<f64>,
    /// Mean of the fold RMSEs; `None` when the trial failed.
    pub cv_rmse: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: GbtHyperparams,
    pub best_index: usize,
    pub best_cv_rmse: f64,
    pub trials: Vec<TrialRecord>,
}

/// Seeded partition of `0..n` into `k` validation folds whose sizes differ by at most one.
/// Each fold is sorted.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    for (pos, i) in order.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    folds
}

fn cross_validate(
    x: &[Vec<f64>],
    y: &[f64],
    folds: &[Vec<usize>],
    hp: &GbtHyperparams,
) -> Result<Vec<f64>, GbtError> {
    let n = y.len();
    let mut out = Vec::with_capacity(folds.len());
    for fold in folds {
        let mut held = vec![false; n];
        fold.iter().for_each(|&i| held[i] = true);
        let (mut xt, mut yt) = (Vec::new(), Vec::new());
        for i in (0..n).filter(|&i| !held[i]) {
            xt.push(x[i].clone());
            yt.push(y[i]);
        }
        let model = fit(&xt, &yt, hp)?;
        let pairs: Vec<(f64, f64)> = fold
            .iter()
            .map(|&i| (y[i], model.predict_unchecked(&x[i])))
            .collect();
        out.push(rmse(&pairs)?);
    }
    Ok(out)
}

/// Uniform random search scored by k-fold cross-validated RMSE.
///
/// Only the rows passed in are ever read, so callers hand over training rows alone.
/// Trials run in parallel; the log is in trial order and ties in CV RMSE go to the
/// earliest trial. A failing trial is logged and skipped.
pub fn random_search(
    x: &[Vec<f64>],
    y: &[f64],
    cfg: &SearchConfig,
) -> Result<SearchResult, GbtError> {
    cfg.space.validate()?;
    if cfg.trials == 0 {
        return Err(GbtError::Search("trials must be at least 1".into()));
    }
    if cfg.folds < 2 {
        return Err(GbtError::Search("folds must be at least 2".into()));
    }
    if x.len() != y.len() {
        return Err(GbtError::LengthMismatch(x.len(), y.len()));
    }
    if y.len() < cfg.folds {
        return Err(GbtError::Search(format!(
            "{} rows cannot be split into {} folds",
            y.len(),
            cfg.folds
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let folds = kfold_indices(y.len(), cfg.folds, rng.random());
    let mut candidates: Vec<GbtHyperparams> = (0..cfg.trials)
        .map(|_| cfg.space.sample(&mut rng))
        .collect();
    if cfg.include_defaults {
        candidates.push(GbtHyperparams {
            seed: rng.random(),
            ..GbtHyperparams::default()
        });
    }
    let trials: Vec<TrialRecord> = candidates
        .into_par_iter()
        .enumerate()
        .map(|(index, hp)| match cross_validate(x, y, &folds, &hp) {
            Ok(fold_rmse) => {
                let mean = fold_rmse.iter().sum::<f64>() / fold_rmse.len() as f64;
                TrialRecord {
                    index,
                    hyperparams: hp,
                    fold_rmse,
                    cv_rmse: Some(mean),
                    error: None,
                }
            }
            Err(e) => {
                log::warn!("search trial {index} failed: {e}");
                TrialRecord {
                    index,
                    hyperparams: hp,
                    fold_rmse: Vec::new(),
                    cv_rmse: None,
                    error: Some(e.to_string()),
                }
            }
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for t in &trials {
        if let Some(s) = t.cv_rmse {
            if best.is_none_or(|(_, b)| s < b) {
                best = Some((t.index, s));
            }
        }
    }
    let (best_index, best_cv_rmse) = best.ok_or(GbtError::AllTrialsFailed)?;
    Ok(SearchResult {
        best: trials[best_index].hyperparams.clone(),
        best_index,
        best_cv_rmse,
        trials,
    })
}
