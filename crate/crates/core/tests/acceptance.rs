//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero if any fails.

mod common;

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use proptest::collection::vec as pvec;
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use elyte_core::featurizer::{featurize, Component, EmbeddingCache, FeatureVector, Formulation};
use elyte_core::gbt::{fit, GbtEnsemble, GbtHyperparams, Node, SearchConfig};
use elyte_core::graph::graph_isomorphic;
use elyte_core::pipeline::{
    read_smiles_lines, run_pretrain, run_train, split_indices, ArchConfig, PretrainConfig,
    TrainOptions,
};
use elyte_core::selfies::{alphabet, decode, encode, SelfiesString};
use elyte_core::smiles::parse_smiles;
use elyte_core::transformer::{save_bundle, Pooling, RepVector, TrainConfig};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn manifest_dir() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

// 1. SELFIES round trip over the bundled molecule corpus.
fn selfies_round_trip() -> Outcome {
    let text = fs::read_to_string(manifest_dir().join("data/electrolyte_molecules.smi")).unwrap();
    let lines = read_smiles_lines(&text);
    let mut failures = Vec::new();
    for s in &lines {
        let ok = match parse_smiles(s) {
            Ok(g) if (2..=60).contains(&g.atom_count()) => match encode(&g) {
                Ok(enc) => graph_isomorphic(&decode(&enc), &g),
                Err(_) => false,
            },
            _ => false,
        };
        if !ok {
            failures.push(s.to_string());
        }
    }
    let passed = lines.len() >= 200 && failures.is_empty();
    outcome(
        passed,
        format!(
            "{}/{} molecules isomorphic after round trip{}",
            lines.len() - failures.len(),
            lines.len(),
            if failures.is_empty() {
                String::new()
            } else {
                format!("; failed: {}", failures.join(" "))
            }
        ),
    )
}

// 2. Random token sequences always decode to valid graphs.
fn selfies_robustness() -> Outcome {
    let tokens = alphabet();
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let mut failures = 0;
    let mut atoms = 0usize;
    const SEQUENCES: usize = 10_000;
    for _ in 0..SEQUENCES {
        let len = rng.random_range(1..=30);
        let seq: Vec<_> = (0..len)
            .map(|_| tokens[rng.random_range(0..tokens.len())].clone())
            .collect();
        let g = decode(&SelfiesString::new(seq));
        atoms += g.atom_count();
        if g.validate().is_err() {
            failures += 1;
        }
    }
    outcome(
        failures == 0,
        format!(
            "{SEQUENCES} sequences over {} tokens, {failures} invalid graphs, mean {:.1} atoms",
            tokens.len(),
            atoms as f64 / SEQUENCES as f64
        ),
    )
}

// 3. Analytic gradients against central finite differences.
fn gradient_check() -> Outcome {
    let checks = common::gradient_check(7);
    let failures: usize = checks.iter().map(|c| c.failures).sum();
    let probes: usize = checks.iter().map(|c| c.probes).sum();
    let worst = checks.iter().map(|c| c.worst_rel).fold(0.0, f64::max);
    let full = checks
        .iter()
        .filter(|c| c.probes < common::PROBES_PER_TENSOR)
        .count();
    outcome(
        failures == 0,
        format!(
            "{} tensors, {probes} probes, {failures} above {:e}, worst relative error {worst:.2e} \
             ({full} tensors smaller than {} probed at every coordinate)",
            checks.len(),
            common::REL_TOL,
            common::PROBES_PER_TENSOR
        ),
    )
}

// 4. Toy pretraining reduces the loss and reconstructs masked tokens.
fn pretraining_sanity() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg: PretrainConfig = serde_json::from_str(
        &fs::read_to_string(manifest_dir().join("../../configs/toy_pretrain.json")).unwrap(),
    )
    .unwrap();
    cfg.train.seed = 42;
    let (bundle, report) = run_pretrain(
        &manifest_dir().join("data/pretrain_toy.smi"),
        &cfg,
        &dir.path().join("model"),
    )
    .unwrap();
    let first = report.epoch_losses[0];
    let last = *report.epoch_losses.last().unwrap();
    let c = &bundle.params.config;
    let shape_ok = bundle.meta.corpus_size == 500
        && c.d_model == 64
        && c.n_layers_enc == 2
        && c.n_layers_dec == 2
        && report.epoch_losses.len() == 30;
    let ratio = last / first;
    let acc = report.final_masked_accuracy;
    outcome(
        shape_ok && ratio <= 0.5 && acc >= 0.8,
        format!(
            "{} molecules, loss {first:.4} -> {last:.4} ({:.1}% of first epoch), masked accuracy {acc:.3}",
            bundle.meta.corpus_size,
            100.0 * ratio
        ),
    )
}

// 5. Weighted-sum featurizer algebra on random vectors.
fn featurizer_algebra() -> Outcome {
    fn mixture(names: &[String], fractions: &[f64]) -> Formulation {
        Formulation {
            id: "x".into(),
            components: names
                .iter()
                .zip(fractions)
                .map(|(s, &c)| Component::new(s.clone(), c))
                .collect(),
            target: None,
        }
    }
    fn close(a: &FeatureVector, b: &[f64], scale: f64) -> bool {
        a.0.len() == b.len()
            && a.0
                .iter()
                .zip(b)
                .all(|(x, y)| (x - y).abs() <= 1e-12 * scale)
    }

    let strategy = (1usize..=6, 1usize..=64).prop_flat_map(|(n, width)| {
        (
            Just(n),
            pvec(pvec(-10.0f32..10.0, width), 2 * n),
            pvec(0.0f64..=1.0, 2 * n),
            0.0f64..=1.0,
            any::<u64>(),
        )
    });
    let mut runner = TestRunner::new_with_rng(
        PropConfig {
            cases: 1000,
            failure_persistence: None,
            ..PropConfig::default()
        },
        proptest::test_runner::TestRng::deterministic_rng(
            proptest::test_runner::RngAlgorithm::ChaCha,
        ),
    );
    let cases = std::cell::Cell::new(0usize);
    let result = runner.run(&strategy, |(n, reps, fracs, lambda, perm_seed)| {
        cases.set(cases.get() + 1);
        let width = reps[0].len();
        let names: Vec<String> = (0..2 * n).map(|i| format!("m{i}")).collect();
        let table: HashMap<&str, &Vec<f32>> =
            names.iter().map(String::as_str).zip(reps.iter()).collect();
        let embed = |s: &str| Ok(RepVector(table[s].clone()));
        let sa = |f: &Formulation| featurize(f, embed, false).unwrap();
        let scale: f64 = 1.0
            + (0..2 * n)
                .map(|i| reps[i].iter().map(|v| v.abs() as f64).sum::<f64>())
                .sum::<f64>();

        // identity
        let single = sa(&mixture(&names[..1], &[1.0]));
        let r0: Vec<f64> = reps[0].iter().map(|&v| v as f64).collect();
        prop_assert_eq!(&single.0, &r0);

        // width
        let a = sa(&mixture(&names[..n], &fracs[..n]));
        prop_assert_eq!(a.0.len(), width);

        // homogeneity
        let scaled: Vec<f64> = fracs[..n].iter().map(|c| lambda * c).collect();
        let lhs = sa(&mixture(&names[..n], &scaled));
        let rhs: Vec<f64> = a.0.iter().map(|v| lambda * v).collect();
        prop_assert!(close(&lhs, &rhs, scale), "homogeneity");

        // additivity over disjoint component sets
        let b = sa(&mixture(&names[n..], &fracs[n..]));
        let joint = sa(&mixture(&names, &fracs));
        let sum: Vec<f64> = a.0.iter().zip(&b.0).map(|(x, y)| x + y).collect();
        prop_assert!(close(&joint, &sum, scale), "additivity");

        // permutation, bit-exact
        let mut order: Vec<usize> = (0..2 * n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
        let pn: Vec<String> = order.iter().map(|&i| names[i].clone()).collect();
        let pf: Vec<f64> = order.iter().map(|&i| fracs[i]).collect();
        let permuted = sa(&mixture(&pn, &pf));
        let bits = |v: &FeatureVector| v.0.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&permuted), bits(&joint));
        Ok(())
    });
    match result {
        Ok(()) => outcome(
            cases.get() >= 1000,
            format!(
                "{} random cases (n 1..=6, width 1..=64), 0 failures",
                cases.get()
            ),
        ),
        Err(e) => outcome(false, format!("{e}")),
    }
}

// 6. Every split of fitted trees equals brute-force enumeration; JSON round trip is exact.
const ORACLE_TIE_TOL: f64 = 1e-9;

struct OracleSplit {
    feature: usize,
    below: f64,
    above: f64,
}

/// Direct enumeration: every feature, every pair of adjacent distinct values, sums recomputed
/// from scratch for both sides.
fn oracle_split(
    x: &[Vec<f64>],
    r: &[f64],
    rows: &[usize],
    min_leaf: usize,
    lambda: f64,
) -> Option<OracleSplit> {
    let score = |set: &[usize]| {
        let g: f64 = set.iter().map(|&i| r[i]).sum();
        g * g / (set.len() as f64 + lambda)
    };
    let parent = score(rows);
    let mut cands = Vec::new();
    let d = x[0].len();
    #[allow(clippy::needless_range_loop)]
    for f in 0..d {
        let mut vals: Vec<f64> = rows.iter().map(|&i| x[i][f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let (left, right): (Vec<usize>, Vec<usize>) =
                rows.iter().partition(|&&i| x[i][f] <= w[0]);
            if left.len() < min_leaf || right.len() < min_leaf {
                continue;
            }
            let gain = score(&left) + score(&right) - parent;
            cands.push((f, w[0], w[1], gain));
        }
    }
    let best = cands.iter().map(|c| c.3).fold(f64::NEG_INFINITY, f64::max);
    if best.is_nan() || best <= 0.0 {
        return None;
    }
    cands
        .into_iter()
        .find(|c| c.3 >= best - ORACLE_TIE_TOL * best)
        .map(|(feature, below, above, _)| OracleSplit {
            feature,
            below,
            above,
        })
}

struct TreeAudit<'a> {
    x: &'a [Vec<f64>],
    r: &'a [f64],
    hp: &'a GbtHyperparams,
    splits: usize,
    leaves: usize,
    mismatches: Vec<String>,
}

impl TreeAudit<'_> {
    fn walk(&mut self, nodes: &[Node], at: usize, rows: Vec<usize>, depth: usize) {
        let hp = self.hp;
        let expected = if depth >= hp.max_depth || rows.len() < 2 * hp.min_samples_leaf {
            None
        } else {
            oracle_split(
                self.x,
                self.r,
                &rows,
                hp.min_samples_leaf,
                hp.l2_leaf_penalty,
            )
        };
        match (&nodes[at], expected) {
            (Node::Leaf { value }, None) => {
                self.leaves += 1;
                let g: f64 = rows.iter().map(|&i| self.r[i]).sum();
                let want = g / (rows.len() as f64 + hp.l2_leaf_penalty);
                if (value - want).abs() > 1e-9 * (1.0 + want.abs()) {
                    self.mismatches
                        .push(format!("leaf value {value} but oracle {want}"));
                }
            }
            (
                &Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                },
                Some(o),
            ) => {
                self.splits += 1;
                if feature != o.feature || !(o.below < threshold && threshold <= o.above) {
                    self.mismatches.push(format!(
                        "split on feature {feature} at {threshold}, oracle feature {} between {} and {}",
                        o.feature, o.below, o.above
                    ));
                    return;
                }
                let (l, r): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&i| self.x[i][feature] <= o.below);
                self.walk(nodes, left, l, depth + 1);
                self.walk(nodes, right, r, depth + 1);
            }
            (Node::Leaf { .. }, Some(o)) => self.mismatches.push(format!(
                "leaf where oracle splits feature {} between {} and {}",
                o.feature, o.below, o.above
            )),
            (Node::Split { feature, .. }, None) => self.mismatches.push(format!(
                "split on feature {feature} where oracle makes a leaf"
            )),
        }
    }
}

fn gbt_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut splits, mut leaves, mut trees) = (0, 0, 0);
    let mut mismatches = Vec::new();
    let mut roundtrip_failures = 0;
    for ds in 0..100 {
        let n = rng.random_range(2..=50);
        let d = rng.random_range(1..=4);
        let grid = ds % 2 == 0;
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..d)
                    .map(|_| {
                        if grid {
                            rng.random_range(0..4) as f64
                        } else {
                            rng.random_range(-5.0..5.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|row| row[0].sin() * 3.0 + row.iter().sum::<f64>() + rng.random_range(-0.5..0.5))
            .collect();
        let hp = GbtHyperparams {
            n_trees: rng.random_range(1..=8),
            max_depth: rng.random_range(1..=4),
            learning_rate: rng.random_range(0.05..0.5),
            min_samples_leaf: rng.random_range(1..=4),
            l2_leaf_penalty: if rng.random_bool(0.3) {
                0.0
            } else {
                rng.random_range(0.0..3.0)
            },
            subsample_fraction: 1.0,
            seed: ds,
        };
        let e = fit(&x, &y, &hp).unwrap();

        let mean = y.iter().sum::<f64>() / n as f64;
        if (e.base_prediction - mean).abs() > 1e-12 * (1.0 + mean.abs()) {
            mismatches.push(format!(
                "dataset {ds}: base {} vs mean {mean}",
                e.base_prediction
            ));
        }
        let mut pred = vec![e.base_prediction; n];
        for tree in &e.trees {
            trees += 1;
            let r: Vec<f64> = (0..n).map(|i| y[i] - pred[i]).collect();
            let mut audit = TreeAudit {
                x: &x,
                r: &r,
                hp: &hp,
                splits: 0,
                leaves: 0,
                mismatches: Vec::new(),
            };
            audit.walk(&tree.nodes, 0, (0..n).collect(), 0);
            splits += audit.splits;
            leaves += audit.leaves;
            mismatches.extend(
                audit
                    .mismatches
                    .into_iter()
                    .map(|m| format!("dataset {ds}: {m}")),
            );
            for i in 0..n {
                pred[i] += e.learning_rate * tree.predict(&x[i]);
            }
        }

        let back = GbtEnsemble::from_json(&e.to_json().unwrap()).unwrap();
        let probes: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..d).map(|_| rng.random_range(-6.0..6.0)).collect())
            .collect();
        let same = back == e
            && probes
                .iter()
                .chain(&x)
                .all(|p| e.predict(p).unwrap().to_bits() == back.predict(p).unwrap().to_bits());
        if !same {
            roundtrip_failures += 1;
        }
    }
    let shown: Vec<&str> = mismatches.iter().take(3).map(String::as_str).collect();
    outcome(
        mismatches.is_empty() && roundtrip_failures == 0,
        format!(
            "100 datasets, {trees} trees, {splits} splits and {leaves} leaves audited, {} mismatches, \
             {roundtrip_failures} round-trip failures{}",
            mismatches.len(),
            if shown.is_empty() { String::new() } else { format!(": {}", shown.join("; ")) }
        ),
    )
}

// 7. Full pipeline recovers a noisy linear target on frozen-model features.
fn synthetic_recovery() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let bundle = common::frozen_bundle(42);
    let model_dir = dir.path().join("model");
    fs::create_dir(&model_dir).unwrap();
    save_bundle(&model_dir, &bundle).unwrap();

    let mut ds = common::synthetic_formulations(150, 7);
    let sigma = common::label_linear(&mut ds, &bundle, 11, 0.5);
    let data_path = dir.path().join("data.csv");
    fs::write(&data_path, common::dataset_csv(&ds)).unwrap();

    let opts = TrainOptions {
        split_seed: 0,
        search: SearchConfig {
            trials: 50,
            seed: 0,
            ..SearchConfig::default()
        },
        ..TrainOptions::default()
    };
    let report = run_train(&model_dir, &data_path, &opts, &dir.path().join("run")).unwrap();

    // Width does not depend on the component count.
    let cache = EmbeddingCache::new(&bundle.params, &bundle.vocab);
    let mut widths_ok = true;
    for n in 1..=6 {
        let f = Formulation {
            id: format!("n{n}"),
            components: common::POOL[..n]
                .iter()
                .map(|s| Component::new(*s, 1.0 / n as f64))
                .collect(),
            target: None,
        };
        widths_ok &= featurize(&f, |s| cache.get(s), true).unwrap().0.len() == 64;
    }
    let counts: Vec<usize> = (2..=6)
        .map(|k| ds.iter().filter(|f| f.components.len() == k).count())
        .collect();
    let rmse = report.evaluation.rmse;
    outcome(
        report.n_train == 120
            && report.n_test == 30
            && report.feature_width == 64
            && widths_ok
            && counts.iter().all(|&c| c > 0)
            && rmse <= 2.0 * sigma,
        format!(
            "split {}/{}, test RMSE {rmse:.4} vs 2σ = {:.4}, width {} for every n in 1..=6 \
             (formulations per n=2..6: {counts:?})",
            report.n_train,
            report.n_test,
            2.0 * sigma,
            report.feature_width
        ),
    )
}

// 8. Identical seeds give byte-identical artifacts, independent of the thread count.
fn pipeline_run(root: &Path) -> Vec<(String, Vec<u8>)> {
    let corpus: Vec<&str> = common::TOY_CORPUS
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .take(60)
        .collect();
    let corpus_path = root.join("corpus.smi");
    fs::write(&corpus_path, corpus.join("\n")).unwrap();
    let cfg = PretrainConfig {
        model: ArchConfig {
            d_model: 16,
            n_heads: 2,
            n_layers_enc: 1,
            n_layers_dec: 1,
            d_ff: 32,
            max_len: 64,
            dropout_rate: 0.1,
            pooling: Pooling::Mean,
        },
        train: TrainConfig {
            epochs: 2,
            batch_size: 8,
            learning_rate: 1e-3,
            mask_ratio: 0.15,
            seed: 5,
        },
    };
    let model_dir = root.join("model");
    let (bundle, _) = run_pretrain(&corpus_path, &cfg, &model_dir).unwrap();

    let mut ds = common::synthetic_formulations(40, 3);
    common::label_linear(&mut ds, &bundle, 4, 0.5);
    let data_path = root.join("data.csv");
    fs::write(&data_path, common::dataset_csv(&ds)).unwrap();
    let opts = TrainOptions {
        split_seed: 1,
        search: SearchConfig {
            trials: 8,
            folds: 3,
            seed: 2,
            ..SearchConfig::default()
        },
        ..TrainOptions::default()
    };
    let run_dir = root.join("run");
    run_train(&model_dir, &data_path, &opts, &run_dir).unwrap();

    let mut files = Vec::new();
    for sub in [&model_dir, &run_dir] {
        let mut names: Vec<_> = fs::read_dir(sub)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        names.sort();
        for p in names {
            let label = p.strip_prefix(root).unwrap().display().to_string();
            files.push((label, fs::read(&p).unwrap()));
        }
    }
    files
}

fn determinism() -> Outcome {
    let a_dir = tempfile::tempdir().unwrap();
    let b_dir = tempfile::tempdir().unwrap();
    let a = pipeline_run(a_dir.path());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap();
    let b = pool.install(|| pipeline_run(b_dir.path()));
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    let differing: Vec<&str> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    outcome(
        a.len() == b.len() && a.len() >= 8 && differing.is_empty(),
        format!(
            "{} files compared across two runs (default pool vs 3 threads): {}; {} differ{}",
            a.len(),
            names.join(", "),
            differing.len(),
            if differing.is_empty() {
                String::new()
            } else {
                format!(": {}", differing.join(", "))
            }
        ),
    )
}

// 9. Split sizes, disjointness and coverage.
fn split_arithmetic() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (n, train, test) in [(147usize, 117usize, 30usize), (125, 100, 25)] {
        for seed in 0..5 {
            let (tr, te) = split_indices(n, seed).unwrap();
            let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
            all.sort_unstable();
            all.dedup();
            ok &= tr.len() == train
                && te.len() == test
                && all.len() == n
                && all == (0..n).collect::<Vec<_>>();
        }
        lines.push(format!("N={n} -> {train}/{test}"));
    }
    outcome(
        ok,
        format!(
            "{} over 5 seeds each, disjoint and covering",
            lines.join(", ")
        ),
    )
}

type Criterion = (u8, &'static str, Duration, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        (
            1,
            "SELFIES round trip",
            Duration::from_secs(10),
            selfies_round_trip,
        ),
        (
            2,
            "SELFIES robustness",
            Duration::from_secs(30),
            selfies_robustness,
        ),
        (3, "gradient check", Duration::from_secs(60), gradient_check),
        (
            4,
            "pretraining sanity",
            Duration::from_secs(15 * 60),
            pretraining_sanity,
        ),
        (
            5,
            "featurizer algebra",
            Duration::from_secs(60),
            featurizer_algebra,
        ),
        (
            6,
            "GBT oracle equivalence",
            Duration::from_secs(60),
            gbt_oracle,
        ),
        (
            7,
            "synthetic recovery",
            Duration::from_secs(10 * 60),
            synthetic_recovery,
        ),
        (8, "determinism", Duration::from_secs(10 * 60), determinism),
        (
            9,
            "split arithmetic",
            Duration::from_secs(1),
            split_arithmetic,
        ),
    ];
    let only: Vec<u8> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (id, name, limit, check) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| outcome(false, "panicked"));
        let took = start.elapsed();
        let passed = result.passed && took <= limit;
        if !passed {
            failed += 1;
        }
        println!(
            "{} [{id}] {name}: {} ({:.1}s, limit {}s)",
            if passed { "PASS" } else { "FAIL" },
            result.detail,
            took.as_secs_f64(),
            limit.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
