use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{GbtEnsemble, GbtError, GbtHyperparams, Node, Tree};

/// Candidates whose gain is within this fraction of the best gain count as tied; among tied
/// candidates the lowest feature index, then the lowest threshold, wins.
pub const GAIN_TIE_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
    pub n_left: usize,
}

/// Threshold strictly above `a` and at most `b`, so that `x < t` selects exactly `x <= a`.
pub(crate) fn midpoint(a: f64, b: f64) -> f64 {
    let t = a + (b - a) / 2.0;
    if a < t {
        t
    } else {
        b
    }
}

fn score(g: f64, n: usize, lambda: f64) -> f64 {
    g * g / (n as f64 + lambda)
}

/// Appends every admissible threshold of one feature, in ascending order, to `out`.
fn scan_feature(
    sorted: &[usize],
    x: &[Vec<f64>],
    r: &[f64],
    feature: usize,
    min_leaf: usize,
    lambda: f64,
    out: &mut Vec<SplitChoice>,
) {
    let n = sorted.len();
    let g_total: f64 = sorted.iter().map(|&i| r[i]).sum();
    let parent = score(g_total, n, lambda);
    let mut g_left = 0.0;
    for k in 0..n.saturating_sub(1) {
        g_left += r[sorted[k]];
        let n_left = k + 1;
        let (a, b) = (x[sorted[k]][feature], x[sorted[k + 1]][feature]);
        if a == b || n_left < min_leaf || n - n_left < min_leaf {
            continue;
        }
        let gain =
            score(g_left, n_left, lambda) + score(g_total - g_left, n - n_left, lambda) - parent;
        out.push(SplitChoice {
            feature,
            threshold: midpoint(a, b),
            gain,
            n_left,
        });
    }
}

/// Applies the tie-break rule to candidates listed in (feature, threshold) order.
fn select(cands: &[SplitChoice]) -> Option<SplitChoice> {
    let best = cands
        .iter()
        .map(|c| c.gain)
        .fold(f64::NEG_INFINITY, f64::max);
    if best.is_nan() || best <= 0.0 {
        return None;
    }
    let floor = best - GAIN_TIE_REL_TOL * best;
    cands.iter().copied().find(|c| c.gain >= floor)
}

/// Best split of the node holding `rows`, or `None` when no admissible split has positive
/// gain.
pub fn best_split(
    x: &[Vec<f64>],
    residuals: &[f64],
    rows: &[usize],
    min_samples_leaf: usize,
    l2_leaf_penalty: f64,
) -> Option<SplitChoice> {
    let d = x.first().map_or(0, Vec::len);
    let mut cands = Vec::new();
    for f in 0..d {
        let mut sorted = rows.to_vec();
        sorted.sort_by(|&i, &j| x[i][f].total_cmp(&x[j][f]).then(i.cmp(&j)));
        scan_feature(
            &sorted,
            x,
            residuals,
            f,
            min_samples_leaf,
            l2_leaf_penalty,
            &mut cands,
        );
    }
    select(&cands)
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    r: &'a [f64],
    hp: &'a GbtHyperparams,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    /// `lists[f]` holds the node's rows sorted by feature `f`.
    fn build(&mut self, lists: Vec<Vec<usize>>, depth: usize) -> usize {
        let rows = &lists[0];
        let n = rows.len();
        let g: f64 = rows.iter().map(|&i| self.r[i]).sum();
        let me = self.nodes.len();
        let leaf = Node::Leaf {
            value: g / (n as f64 + self.hp.l2_leaf_penalty),
        };
        if depth >= self.hp.max_depth || n < 2 * self.hp.min_samples_leaf {
            self.nodes.push(leaf);
            return me;
        }
        let mut cands = Vec::new();
        for (f, sorted) in lists.iter().enumerate() {
            scan_feature(
                sorted,
                self.x,
                self.r,
                f,
                self.hp.min_samples_leaf,
                self.hp.l2_leaf_penalty,
                &mut cands,
            );
        }
        let Some(split) = select(&cands) else {
            self.nodes.push(leaf);
            return me;
        };
        self.nodes.push(leaf);
        let (mut left_lists, mut right_lists) = (Vec::new(), Vec::new());
        for sorted in &lists {
            let (l, r): (Vec<usize>, Vec<usize>) = sorted
                .iter()
                .partition(|&&i| self.x[i][split.feature] < split.threshold);
            left_lists.push(l);
            right_lists.push(r);
        }
        drop(lists);
        let left = self.build(left_lists, depth + 1);
        let right = self.build(right_lists, depth + 1);
        self.nodes[me] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        me
    }
}

fn check_inputs(x: &[Vec<f64>], y: &[f64]) -> Result<usize, GbtError> {
    if x.len() != y.len() {
        return Err(GbtError::LengthMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(GbtError::NoData);
    }
    let d = x[0].len();
    if let Some(row) = x.iter().find(|r| r.len() != d) {
        return Err(GbtError::DimensionMismatch {
            got: row.len(),
            expected: d,
        });
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(GbtError::NonFinite("features"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(GbtError::NonFinite("targets"));
    }
    Ok(d)
}

fn train_rmse(y: &[f64], pred: &[f64]) -> f64 {
    let sse: f64 = y.iter().zip(pred).map(|(a, p)| (a - p) * (a - p)).sum();
    (sse / y.len() as f64).sqrt()
}

pub fn fit(x: &[Vec<f64>], y: &[f64], hp: &GbtHyperparams) -> Result<GbtEnsemble, GbtError> {
    fit_monitored(x, y, hp).map(|(e, _)| e)
}

/// Fits the ensemble and also returns the training RMSE before any tree and after each one.
///
/// Fewer than two rows or a constant target give a base-only ensemble.
pub fn fit_monitored(
    x: &[Vec<f64>],
    y: &[f64],
    hp: &GbtHyperparams,
) -> Result<(GbtEnsemble, Vec<f64>), GbtError> {
    hp.validate()?;
    let d = check_inputs(x, y)?;
    let n = y.len();
    let constant = y.iter().all(|&v| v == y[0]);
    let base = if constant {
        y[0]
    } else {
        y.iter().sum::<f64>() / n as f64
    };
    let mut ensemble = GbtEnsemble {
        n_features: d,
        base_prediction: base,
        learning_rate: hp.learning_rate,
        trees: Vec::new(),
    };
    let mut pred = vec![base; n];
    let mut history = vec![train_rmse(y, &pred)];
    if n < 2 || constant || d == 0 {
        return Ok((ensemble, history));
    }

    let presorted: Vec<Vec<usize>> = (0..d)
        .map(|f| {
            let mut o: Vec<usize> = (0..n).collect();
            o.sort_by(|&i, &j| x[i][f].total_cmp(&x[j][f]).then(i.cmp(&j)));
            o
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let sample_size = ((hp.subsample_fraction * n as f64).round() as usize).clamp(1, n);
    let mut in_sample = vec![true; n];
    let mut residuals = vec![0.0; n];
    for _ in 0..hp.n_trees {
        if sample_size < n {
            in_sample.iter_mut().for_each(|b| *b = false);
            for i in index::sample(&mut rng, n, sample_size) {
                in_sample[i] = true;
            }
        }
        for i in 0..n {
            residuals[i] = y[i] - pred[i];
        }
        let lists: Vec<Vec<usize>> = presorted
            .iter()
            .map(|o| o.iter().copied().filter(|&i| in_sample[i]).collect())
            .collect();
        let mut b = Builder {
            x,
            r: &residuals,
            hp,
            nodes: Vec::new(),
        };
        b.build(lists, 0);
        let tree = Tree { nodes: b.nodes };
        for i in 0..n {
            pred[i] += hp.learning_rate * tree.predict(&x[i]);
        }
        history.push(train_rmse(y, &pred));
        ensemble.trees.push(tree);
    }
    Ok((ensemble, history))
}
