use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use elyte_core::gbt::{
    fit, fit_monitored, kfold_indices, random_search, GbtHyperparams, SearchConfig,
};

fn random_data(n: usize, d: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let y = x
        .iter()
        .map(|r| r[0] * r[0] - r[1] + 0.3 * (3.0 * r[2]).sin())
        .collect();
    (x, y)
}

#[test]
fn deep_unregularized_ensemble_interpolates() {
    let (x, y) = random_data(60, 3, 1);
    let hp = GbtHyperparams {
        n_trees: 200,
        max_depth: 8,
        learning_rate: 0.5,
        min_samples_leaf: 1,
        l2_leaf_penalty: 0.0,
        ..GbtHyperparams::default()
    };
    let (e, history) = fit_monitored(&x, &y, &hp).unwrap();
    assert!(*history.last().unwrap() < 1e-6, "{:?}", history.last());
    assert!(history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    for (row, t) in x.iter().zip(&y) {
        assert!((e.predict(row).unwrap() - t).abs() < 1e-5);
    }
}

#[test]
fn search_is_seeded_and_picks_the_lowest_cv_error() {
    let (x, y) = random_data(50, 4, 2);
    let cfg = SearchConfig {
        trials: 6,
        folds: 4,
        seed: 11,
        ..SearchConfig::default()
    };
    let a = random_search(&x, &y, &cfg).unwrap();
    let b = random_search(&x, &y, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.trials.len(), 6);
    let best = a
        .trials
        .iter()
        .filter_map(|t| t.cv_rmse)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(a.best_cv_rmse, best);
    assert_eq!(a.trials[a.best_index].hyperparams, a.best);
    let other = random_search(&x, &y, &SearchConfig { seed: 12, ..cfg }).unwrap();
    assert_ne!(a.trials[0].hyperparams, other.trials[0].hyperparams);
}

#[test]
fn folds_partition_the_rows() {
    for (n, k) in [(10, 5), (11, 3), (120, 5), (7, 7)] {
        let folds = kfold_indices(n, k, 4);
        assert_eq!(folds.len(), k);
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>());
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}

#[test]
fn subsampled_fit_is_reproducible() {
    let (x, y) = random_data(40, 3, 3);
    let hp = GbtHyperparams {
        subsample_fraction: 0.7,
        seed: 8,
        ..GbtHyperparams::default()
    };
    assert_eq!(fit(&x, &y, &hp).unwrap(), fit(&x, &y, &hp).unwrap());
    let other = fit(&x, &y, &GbtHyperparams { seed: 9, ..hp }).unwrap();
    assert_ne!(fit(&x, &y, &hp).unwrap(), other);
}
