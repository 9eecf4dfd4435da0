//! SELFIES encoding and decoding over a closed token alphabet.
//!
//! Decoding follows the SELFIES derivation rules: every atom token consumes
//! `min(requested order, state of the previous atom, capacity of the new atom)`, branch
//! tokens reserve part of the current state for a sub-derivation of `Q + 1` symbols, and ring
//! tokens queue a ring bond that is formed after the fragment is derived, capped by the free
//! valence of both ends. Any sequence of grammar-valid tokens therefore decodes to a
//! valence-valid graph.
//!
//! Encoding is canonical: isomorphic graphs produce identical token sequences. Only one
//! index token is emitted per branch or ring, so branch bodies are limited to 16 tokens and
//! ring spans to 16 atoms.
//!
//! Index table (token -> value), shared with the reference codec:
//!
//! | value | token | value | token |
//! |---|---|---|---|
//! | 0 | `[C]` | 8 | `[#Branch2]` |
//! | 1 | `[Ring1]` | 9 | `[O]` |
//! | 2 | `[Ring2]` | 10 | `[N]` |
//! | 3 | `[Branch1]` | 11 | `[=N]` |
//! | 4 | `[=Branch1]` | 12 | `[=C]` |
//! | 5 | `[#Branch1]` | 13 | `[#C]` |
//! | 6 | `[Branch2]` | 14 | `[S]` |
//! | 7 | `[=Branch2]` | 15 | `[P]` |
//!
//! Any other token read in index position counts as 0.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::graph::{Atom, Element, GraphError, MolGraph};

pub const INDEX_ALPHABET: [&str; 16] = [
    "[C]",
    "[Ring1]",
    "[Ring2]",
    "[Branch1]",
    "[=Branch1]",
    "[#Branch1]",
    "[Branch2]",
    "[=Branch2]",
    "[#Branch2]",
    "[O]",
    "[N]",
    "[=N]",
    "[=C]",
    "[#C]",
    "[S]",
    "[P]",
];

/// Largest value a single index token can carry.
pub const MAX_INDEX: usize = INDEX_ALPHABET.len() - 1;

pub const FRAGMENT_SEPARATOR: &str = ".";

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum SelfiesError {
    #[error("malformed SELFIES token '{0}'")]
    TokenGrammar(String),
    #[error("unsupported structure: {0}")]
    UnsupportedFeature(String),
    #[error("invalid input graph: {0}")]
    InvalidGraph(#[from] GraphError),
}

/// What a grammar-valid token means when read as a symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Symbol {
    Atom {
        bond: u8,
        element: Element,
        charge: i8,
    },
    Branch {
        bond: u8,
        n: u8,
    },
    Ring {
        bond: u8,
        n: u8,
    },
    Dot,
}

fn parse_symbol(text: &str) -> Option<Symbol> {
    if text == FRAGMENT_SEPARATOR {
        return Some(Symbol::Dot);
    }
    let body = text.strip_prefix('[')?.strip_suffix(']')?;
    let (bond, body) = match body.as_bytes().first()? {
        b'=' => (2, &body[1..]),
        b'#' => (3, &body[1..]),
        _ => (1, body),
    };
    match body {
        "Branch1" => return Some(Symbol::Branch { bond, n: 1 }),
        "Branch2" => return Some(Symbol::Branch { bond, n: 2 }),
        "Ring1" => return Some(Symbol::Ring { bond, n: 1 }),
        "Ring2" => return Some(Symbol::Ring { bond, n: 2 }),
        _ => {}
    }
    let split = body.find(['+', '-']).unwrap_or(body.len());
    let element = Element::from_symbol(&body[..split])?;
    let charge = match &body[split..] {
        "" => 0,
        "+1" => 1,
        "+2" => 2,
        "-1" => -1,
        "-2" => -2,
        _ => return None,
    };
    Some(Symbol::Atom {
        bond,
        element,
        charge,
    })
}

fn bond_prefix(order: u8) -> &'static str {
    match order {
        2 => "=",
        3 => "#",
        _ => "",
    }
}

fn charge_suffix(charge: i8) -> String {
    match charge {
        0 => String::new(),
        c if c > 0 => format!("+{c}"),
        c => format!("-{}", -c),
    }
}

fn atom_token_text(bond: u8, element: Element, charge: i8) -> String {
    format!(
        "[{}{}{}]",
        bond_prefix(bond),
        element.symbol(),
        charge_suffix(charge)
    )
}

/// One grammar-valid SELFIES token, e.g. `[C]`, `[=O]`, `[Branch1]`, `[Li+1]`, or `.`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SelfiesToken(String);

impl SelfiesToken {
    pub fn new(text: impl Into<String>) -> Result<Self, SelfiesError> {
        let text = text.into();
        if parse_symbol(&text).is_none() {
            return Err(SelfiesError::TokenGrammar(text));
        }
        Ok(SelfiesToken(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn symbol(&self) -> Symbol {
        parse_symbol(&self.0).expect("validated at construction")
    }

    /// Value of this token when read in index position.
    pub fn index_value(&self) -> usize {
        INDEX_ALPHABET
            .iter()
            .position(|t| *t == self.0)
            .unwrap_or(0)
    }

    /// The same token with any leading bond prefix removed.
    pub fn without_bond_prefix(&self) -> SelfiesToken {
        match self
            .0
            .strip_prefix("[=")
            .or_else(|| self.0.strip_prefix("[#"))
        {
            Some(rest) => SelfiesToken(format!("[{rest}")),
            None => self.clone(),
        }
    }
}

impl TryFrom<String> for SelfiesToken {
    type Error = SelfiesError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        SelfiesToken::new(value)
    }
}

impl From<SelfiesToken> for String {
    fn from(t: SelfiesToken) -> Self {
        t.0
    }
}

impl fmt::Display for SelfiesToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Ordered SELFIES tokens. Only per-token validity is enforced.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SelfiesString {
    pub tokens: Vec<SelfiesToken>,
}

impl SelfiesString {
    pub fn new(tokens: Vec<SelfiesToken>) -> Self {
        SelfiesString { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl FromStr for SelfiesString {
    type Err = SelfiesError;

    /// Splits concatenated text such as `[C][C][O]` or `[Li+1].[F]`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut tokens = Vec::new();
        let mut rest = s.trim();
        while !rest.is_empty() {
            if let Some(r) = rest.strip_prefix('.') {
                tokens.push(SelfiesToken(FRAGMENT_SEPARATOR.to_string()));
                rest = r;
                continue;
            }
            if !rest.starts_with('[') {
                let bad: String = rest.chars().take_while(|&c| c != '[').collect();
                return Err(SelfiesError::TokenGrammar(bad));
            }
            let end = rest
                .find(']')
                .ok_or_else(|| SelfiesError::TokenGrammar(rest.to_string()))?;
            tokens.push(SelfiesToken::new(&rest[..=end])?);
            rest = &rest[end + 1..];
        }
        Ok(SelfiesString { tokens })
    }
}

impl fmt::Display for SelfiesString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.tokens {
            f.write_str(t.as_str())?;
        }
        Ok(())
    }
}

/// Every token the codec understands, in a fixed order.
pub fn alphabet() -> Vec<SelfiesToken> {
    let mut out = Vec::new();
    for bond in 1..=3u8 {
        for element in Element::ALL {
            for charge in [0i8, 1, -1, 2, -2] {
                out.push(SelfiesToken(atom_token_text(bond, element, charge)));
            }
        }
    }
    for name in ["Branch1", "Branch2", "Ring1", "Ring2"] {
        for bond in 1..=3u8 {
            out.push(SelfiesToken(format!("[{}{}]", bond_prefix(bond), name)));
        }
    }
    out.push(SelfiesToken(FRAGMENT_SEPARATOR.to_string()));
    out
}

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

/// Decodes any token sequence into a valence-valid graph.
pub fn decode(s: &SelfiesString) -> MolGraph {
    let mut graph = MolGraph::new();
    for fragment in s.tokens.split(|t| t.as_str() == FRAGMENT_SEPARATOR) {
        let mut d = Deriver {
            tokens: fragment,
            pos: 0,
            frag_start: graph.atom_count(),
            graph: &mut graph,
            rings: Vec::new(),
        };
        d.derive(usize::MAX, None, None);
        let rings = std::mem::take(&mut d.rings);
        form_rings(&mut graph, &rings);
    }
    debug_assert!(graph.validate().is_ok());
    graph
}

/// Parses concatenated SELFIES text and decodes it.
pub fn decode_str(s: &str) -> Result<MolGraph, SelfiesError> {
    Ok(decode(&s.parse()?))
}

struct Deriver<'a> {
    tokens: &'a [SelfiesToken],
    pos: usize,
    frag_start: usize,
    graph: &'a mut MolGraph,
    rings: Vec<(usize, usize, u8)>,
}

impl Deriver<'_> {
    fn next(&mut self) -> Option<&SelfiesToken> {
        let t = self.tokens.get(self.pos)?;
        self.pos += 1;
        Some(t)
    }

    fn read_index(&mut self, n: u8) -> usize {
        let mut q = 0;
        for _ in 0..n {
            match self.next() {
                Some(t) => q = q * 16 + t.index_value(),
                None => break,
            }
        }
        q
    }

    /// Derives at most `max_derive` symbols; returns how many were consumed.
    /// `state` is `None` before the first atom of a fragment.
    fn derive(&mut self, max_derive: usize, init_state: Option<u8>, root: Option<usize>) -> usize {
        let mut n_derived = 0;
        let mut state = init_state;
        let mut prev = root;
        while state.is_none_or(|s| s > 0) && n_derived < max_derive {
            let Some(token) = self.next() else { break };
            let symbol = token.symbol();
            n_derived += 1;
            match symbol {
                Symbol::Branch { bond, n } => {
                    if let Some(s) = state.filter(|&s| s > 1) {
                        let branch_state = (s - 1).min(bond);
                        let q = self.read_index(n);
                        n_derived += n as usize + self.derive(q + 1, Some(branch_state), prev);
                        state = Some(s - branch_state);
                    }
                }
                Symbol::Ring { bond, n } => {
                    if let (Some(_), Some(p)) = (state, prev) {
                        let q = self.read_index(n);
                        n_derived += n as usize;
                        let target = p.saturating_sub(q + 1).max(self.frag_start);
                        self.rings.push((target, p, bond));
                    }
                }
                Symbol::Atom {
                    bond,
                    element,
                    charge,
                } => {
                    let atom = Atom::charged(element, charge);
                    let cap = atom.max_valence();
                    let idx = self.graph.add_atom(atom);
                    state = match (state, prev) {
                        (Some(s), Some(p)) => {
                            let order = bond.min(s).min(cap);
                            self.graph
                                .add_bond(p, idx, order)
                                .expect("fresh atom cannot already be bonded");
                            Some(cap - order)
                        }
                        _ => Some(cap),
                    };
                    prev = Some(idx);
                }
                Symbol::Dot => unreachable!("fragments are split before derivation"),
            }
        }
        n_derived
    }
}

fn form_rings(graph: &mut MolGraph, rings: &[(usize, usize, u8)]) {
    for &(left, right, order) in rings {
        if left == right {
            continue;
        }
        let free = |g: &MolGraph, i: usize| g.atoms()[i].max_valence() - g.bond_order_sum(i);
        let lfree = free(graph, left);
        let rfree = free(graph, right);
        if lfree == 0 || rfree == 0 {
            continue;
        }
        let order = order.min(lfree).min(rfree);
        match graph.bond_between(left, right) {
            Some(b) => {
                let current = graph.bonds()[b].order;
                graph.set_bond_order(b, (current + order).min(3));
            }
            None => graph
                .add_bond(left, right, order)
                .expect("distinct in-range atoms"),
        }
    }
}

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

/// Whether an emitted token is read as a symbol or as an index digit by the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenRole {
    Symbol,
    Index,
}

/// Canonical SELFIES for a valence-valid graph.
pub fn encode(g: &MolGraph) -> Result<SelfiesString, SelfiesError> {
    Ok(SelfiesString::new(
        encode_annotated(g)?.into_iter().map(|(t, _)| t).collect(),
    ))
}

/// Like [`encode`] but reports the decoder role of each token.
pub fn encode_annotated(g: &MolGraph) -> Result<Vec<(SelfiesToken, TokenRole)>, SelfiesError> {
    g.validate()?;
    let ranks = canonical_ranks(g);
    let adj = g.adjacency();
    let mut fragments: Vec<Vec<(SelfiesToken, TokenRole)>> = Vec::new();
    for comp in g.components() {
        let root = *comp.iter().min_by_key(|&&a| ranks[a]).unwrap();
        fragments.push(encode_fragment(g, &adj, &ranks, root)?);
    }
    fragments.sort_by(|a, b| {
        let ka: Vec<&str> = a.iter().map(|(t, _)| t.as_str()).collect();
        let kb: Vec<&str> = b.iter().map(|(t, _)| t.as_str()).collect();
        ka.cmp(&kb)
    });
    let mut out = Vec::new();
    for (i, frag) in fragments.into_iter().enumerate() {
        if i > 0 {
            out.push((
                SelfiesToken(FRAGMENT_SEPARATOR.to_string()),
                TokenRole::Symbol,
            ));
        }
        out.extend(frag);
    }
    Ok(out)
}

/// Parses SMILES and returns its canonical SELFIES.
pub fn encode_smiles(smiles: &str) -> Result<SelfiesString, EncodeSmilesError> {
    let g = crate::smiles::parse_smiles(smiles)?;
    Ok(encode(&g)?)
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum EncodeSmilesError {
    #[error(transparent)]
    Smiles(#[from] crate::smiles::SmilesError),
    #[error(transparent)]
    Selfies(#[from] SelfiesError),
}

struct Tree {
    children: Vec<Vec<(usize, u8)>>,
    /// Ring bonds closed at an atom: (ancestor, order).
    ring_close: Vec<Vec<(usize, u8)>>,
}

fn encode_fragment(
    g: &MolGraph,
    adj: &[Vec<(usize, u8)>],
    ranks: &[usize],
    root: usize,
) -> Result<Vec<(SelfiesToken, TokenRole)>, SelfiesError> {
    let n = g.atom_count();
    let mut tree = Tree {
        children: vec![Vec::new(); n],
        ring_close: vec![Vec::new(); n],
    };
    let mut visited = vec![false; n];
    let mut on_path = vec![false; n];
    dfs(
        root,
        usize::MAX,
        adj,
        ranks,
        &mut visited,
        &mut on_path,
        &mut tree,
    );

    // Tokens needed for each subtree, with the largest child continuing the main chain.
    let mut size = vec![0usize; n];
    subtree_sizes(root, &mut tree, ranks, &mut size);

    let mut out = Vec::new();
    let mut pos = vec![usize::MAX; n];
    let mut counter = 0;
    emit(
        g,
        &tree,
        &size,
        root,
        None,
        &mut pos,
        &mut counter,
        &mut out,
    )?;
    Ok(out)
}

fn dfs(
    u: usize,
    parent: usize,
    adj: &[Vec<(usize, u8)>],
    ranks: &[usize],
    visited: &mut [bool],
    on_path: &mut [bool],
    tree: &mut Tree,
) {
    visited[u] = true;
    on_path[u] = true;
    let mut nbrs = adj[u].clone();
    nbrs.sort_by_key(|&(v, _)| ranks[v]);
    for (v, order) in nbrs {
        if v == parent {
            continue;
        }
        if !visited[v] {
            tree.children[u].push((v, order));
            dfs(v, u, adj, ranks, visited, on_path, tree);
        } else if on_path[v] {
            // Back edge to an ancestor: the ring is closed at u.
            tree.ring_close[u].push((v, order));
        }
    }
    on_path[u] = false;
}

fn subtree_sizes(u: usize, tree: &mut Tree, ranks: &[usize], size: &mut [usize]) {
    let kids: Vec<(usize, u8)> = tree.children[u].clone();
    for &(v, _) in &kids {
        subtree_sizes(v, tree, ranks, size);
    }
    // Branches first (small to large), the largest subtree last as the main chain.
    let mut ordered = kids;
    ordered.sort_by_key(|&(v, _)| (size[v], ranks[v]));
    let mut total = 1 + 2 * tree.ring_close[u].len();
    for (k, &(v, _)) in ordered.iter().enumerate() {
        total += size[v];
        if k + 1 < ordered.len() {
            total += 2;
        }
    }
    tree.children[u] = ordered;
    size[u] = total;
}

#[allow(clippy::too_many_arguments)]
fn emit(
    g: &MolGraph,
    tree: &Tree,
    size: &[usize],
    u: usize,
    bond_in: Option<u8>,
    pos: &mut [usize],
    counter: &mut usize,
    out: &mut Vec<(SelfiesToken, TokenRole)>,
) -> Result<(), SelfiesError> {
    let atom = g.atoms()[u];
    out.push((
        SelfiesToken(atom_token_text(
            bond_in.unwrap_or(1),
            atom.element,
            atom.formal_charge,
        )),
        TokenRole::Symbol,
    ));
    pos[u] = *counter;
    *counter += 1;

    let mut rings = tree.ring_close[u].clone();
    rings.sort_by_key(|&(a, _)| pos[a]);
    for (anc, order) in rings {
        let q = pos[u] - pos[anc] - 1;
        if q > MAX_INDEX {
            return Err(SelfiesError::UnsupportedFeature(format!(
                "ring closure spans {} atoms, at most {} supported",
                q + 1,
                MAX_INDEX + 1
            )));
        }
        out.push((
            SelfiesToken(format!("[{}Ring1]", bond_prefix(order))),
            TokenRole::Symbol,
        ));
        out.push((
            SelfiesToken(INDEX_ALPHABET[q].to_string()),
            TokenRole::Index,
        ));
    }

    let kids = &tree.children[u];
    for (k, &(v, order)) in kids.iter().enumerate() {
        if k + 1 < kids.len() {
            let q = size[v] - 1;
            if q > MAX_INDEX {
                return Err(SelfiesError::UnsupportedFeature(format!(
                    "branch of {} tokens, at most {} supported",
                    size[v],
                    MAX_INDEX + 1
                )));
            }
            out.push((
                SelfiesToken(format!("[{}Branch1]", bond_prefix(order))),
                TokenRole::Symbol,
            ));
            out.push((
                SelfiesToken(INDEX_ALPHABET[q].to_string()),
                TokenRole::Index,
            ));
        }
        emit(g, tree, size, v, Some(order), pos, counter, out)?;
    }
    Ok(())
}

/// Canonical atom ranks: iterative refinement of local invariants, ties broken at the
/// lowest tied rank by atom index and refined again. Terminal atoms rank first, then
/// lighter elements.
pub(crate) fn canonical_ranks(g: &MolGraph) -> Vec<usize> {
    let n = g.atom_count();
    let adj = g.adjacency();
    let initial: Vec<(usize, u8, i8, u8)> = (0..n)
        .map(|i| {
            let a = g.atoms()[i];
            (
                adj[i].len(),
                a.element.atomic_number(),
                a.formal_charge,
                g.bond_order_sum(i),
            )
        })
        .collect();
    let mut ranks = dense_ranks(&initial);
    loop {
        ranks = refine(&ranks, &adj);
        let distinct: BTreeSet<usize> = ranks.iter().copied().collect();
        if distinct.len() == n {
            return ranks;
        }
        // Break the lowest tie: its first member keeps the rank, the rest move up.
        let mut seen = vec![0usize; n];
        for &r in &ranks {
            seen[r] += 1;
        }
        let tied = (0..n).find(|&r| seen[r] > 1).unwrap();
        let chosen = (0..n).find(|&i| ranks[i] == tied).unwrap();
        let keys: Vec<(usize, bool)> = (0..n)
            .map(|i| (ranks[i], ranks[i] == tied && i != chosen))
            .collect();
        ranks = dense_ranks(&keys);
    }
}

fn refine(ranks: &[usize], adj: &[Vec<(usize, u8)>]) -> Vec<usize> {
    let mut current = ranks.to_vec();
    loop {
        let keys: Vec<(usize, Vec<(usize, u8)>)> = (0..current.len())
            .map(|i| {
                let mut nb: Vec<(usize, u8)> =
                    adj[i].iter().map(|&(v, o)| (current[v], o)).collect();
                nb.sort_unstable();
                (current[i], nb)
            })
            .collect();
        let next = dense_ranks(&keys);
        let classes = |r: &[usize]| r.iter().copied().collect::<BTreeSet<_>>().len();
        if classes(&next) == classes(&current) {
            return next;
        }
        current = next;
    }
}

fn dense_ranks<K: Ord + Clone>(keys: &[K]) -> Vec<usize> {
    let mut sorted: Vec<K> = keys.to_vec();
    sorted.sort();
    sorted.dedup();
    keys.iter()
        .map(|k| sorted.binary_search(k).unwrap())
        .collect()
}
