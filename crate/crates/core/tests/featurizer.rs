mod common;

use std::collections::BTreeSet;

use elyte_core::featurizer::{featurize, featurize_dataset, EmbeddingCache};
use elyte_core::transformer::embed_molecule;

#[test]
fn each_distinct_molecule_is_embedded_once() {
    let bundle = common::frozen_bundle(5);
    let mut ds = common::synthetic_formulations(30, 9);
    for f in &mut ds {
        f.target = Some(0.0);
    }
    let distinct: BTreeSet<&str> = ds
        .iter()
        .flat_map(|f| f.components.iter().map(|c| c.smiles.as_str()))
        .collect();
    let cache = EmbeddingCache::new(&bundle.params, &bundle.vocab);
    let (rows, y) = featurize_dataset(&ds, &cache, true).unwrap();
    assert_eq!(cache.embed_calls(), distinct.len());
    assert_eq!((rows.len(), y.len()), (30, 30));
    featurize_dataset(&ds, &cache, true).unwrap();
    assert_eq!(cache.embed_calls(), distinct.len());

    // Cached and uncached paths agree bit for bit.
    for (f, row) in ds.iter().zip(&rows) {
        let direct = featurize(
            f,
            |s| embed_molecule(&bundle.params, &bundle.vocab, s),
            true,
        )
        .unwrap();
        assert_eq!(&direct, row);
        assert_eq!(row.len(), 64);
    }
}

#[test]
fn spelling_of_a_component_does_not_matter() {
    let bundle = common::frozen_bundle(5);
    let a = embed_molecule(&bundle.params, &bundle.vocab, "C1COC(=O)O1").unwrap();
    let b = embed_molecule(&bundle.params, &bundle.vocab, "O=C1OCCO1").unwrap();
    assert_eq!(a, b);
}
