//! Electrolyte formulation property prediction from composition-weighted molecular
//! embeddings.
//!
//! The pipeline runs SMILES -> molecular graph -> SELFIES -> word-level token ids through a
//! small denoising encoder-decoder transformer, pools the encoder states into one vector per
//! molecule, sums those vectors weighted by mole fraction, and fits gradient-boosted trees
//! on the resulting formulation features.

pub mod featurizer;
pub mod gbt;
pub mod graph;
pub mod pipeline;
pub mod selfies;
pub mod smiles;
pub mod tokenizer;
pub mod transformer;

pub use graph::{graph_isomorphic, Atom, Bond, Element, MolGraph};
pub use smiles::{parse_smiles, write_smiles};
