use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::PipelineError;
use crate::featurizer::{validate_fractions, Component, Formulation};
use crate::smiles::parse_smiles;

pub const LABELED_HEADER: [&str; 4] = [
    "formulation_id",
    "component_smiles",
    "mole_fraction",
    "target",
];
pub const TRAIN_FRACTION: f64 = 0.8;
pub const MIN_SPLIT_SIZE: usize = 5;
pub const MAX_COMPONENTS: usize = 10;

/// Non-empty, non-comment lines of a one-SMILES-per-line file, trimmed.
pub fn read_smiles_lines(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    /// Require the four-column header with targets; otherwise the three-column header
    /// without targets is expected (the four-column one is accepted too).
    pub require_target: bool,
    /// Replace every target `t` by `log10(t)`; targets must be positive.
    pub log10_target: bool,
    pub strict_fractions: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            require_target: true,
            log10_target: false,
            strict_fractions: true,
        }
    }
}

/// Long-format dataset: one row per component, rows grouped into formulations by id in
/// first-appearance order.
pub fn parse_dataset(text: &str, opts: LoadOptions) -> Result<Vec<Formulation>, PipelineError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let has_target = if header == LABELED_HEADER {
        true
    } else if !opts.require_target && header == LABELED_HEADER[..3] {
        false
    } else {
        let expected = if opts.require_target {
            LABELED_HEADER.join(",")
        } else {
            LABELED_HEADER[..3].join(",")
        };
        return Err(PipelineError::Schema {
            line: 1,
            message: format!("expected header `{expected}`, found `{}`", header.join(",")),
        });
    };
    let arity = if has_target { 4 } else { 3 };

    let mut out: Vec<Formulation> = Vec::new();
    let mut first_line: Vec<u64> = Vec::new();
    let mut index_of: HashMap<String, usize> = HashMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != arity {
            return Err(PipelineError::Schema {
                line,
                message: format!("expected {arity} fields, found {}", record.len()),
            });
        }
        let id = record[0].trim().to_string();
        let smiles = record[1].trim().to_string();
        if id.is_empty() || smiles.is_empty() {
            return Err(PipelineError::Schema {
                line,
                message: "empty formulation_id or component_smiles".into(),
            });
        }
        parse_smiles(&smiles).map_err(|source| PipelineError::InvalidSmiles {
            line,
            smiles: smiles.clone(),
            source,
        })?;
        let fraction = parse_number(&record[2], line, "mole_fraction")?;
        let target = if has_target {
            let mut t = parse_number(&record[3], line, "target")?;
            if opts.log10_target {
                if t <= 0.0 {
                    return Err(PipelineError::NonPositiveTarget { id, line });
                }
                t = t.log10();
            }
            Some(t)
        } else {
            None
        };
        let k = *index_of.entry(id.clone()).or_insert_with(|| {
            out.push(Formulation {
                id: id.clone(),
                components: Vec::new(),
                target,
            });
            first_line.push(line);
            out.len() - 1
        });
        if out[k].target != target {
            return Err(PipelineError::InconsistentTarget { id, line });
        }
        out[k].components.push(Component { smiles, fraction });
    }
    for (f, &line) in out.iter().zip(&first_line) {
        if f.components.len() > MAX_COMPONENTS {
            return Err(PipelineError::ComponentCount {
                id: f.id.clone(),
                count: f.components.len(),
                line,
            });
        }
        validate_fractions(f, opts.strict_fractions)?;
    }
    Ok(out)
}

fn parse_number(field: &str, line: u64, name: &str) -> Result<f64, PipelineError> {
    let v: f64 = field.trim().parse().map_err(|_| PipelineError::Schema {
        line,
        message: format!("{name} `{field}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(PipelineError::Schema {
            line,
            message: format!("{name} `{field}` is not finite"),
        });
    }
    Ok(v)
}

pub fn load_dataset(path: &Path, opts: LoadOptions) -> Result<Vec<Formulation>, PipelineError> {
    parse_dataset(&std::fs::read_to_string(path)?, opts)
}

/// Seeded 80/20 split of `0..n`: `floor(0.8 n)` training indices, the rest for testing.
/// Both lists are returned in ascending order.
pub fn split_indices(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>), PipelineError> {
    if n < MIN_SPLIT_SIZE {
        return Err(PipelineError::TooFewSamples { n });
    }
    let n_train = (TRAIN_FRACTION * n as f64).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Splits whole formulations; each side keeps dataset order.
pub fn split(
    ds: &[Formulation],
    seed: u64,
) -> Result<(Vec<Formulation>, Vec<Formulation>), PipelineError> {
    let (train, test) = split_indices(ds.len(), seed)?;
    Ok((
        train.iter().map(|&i| ds[i].clone()).collect(),
        test.iter().map(|&i| ds[i].clone()).collect(),
    ))
}
