//! Molecular graphs: atoms, bonds, the valence table and an exact isomorphism check.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Elements the parser and the SELFIES codec understand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Element {
    B,
    C,
    N,
    O,
    S,
    P,
    F,
    Cl,
    Br,
    I,
    Li,
    Na,
    K,
}

impl Element {
    pub const ALL: [Element; 13] = [
        Element::B,
        Element::C,
        Element::N,
        Element::O,
        Element::S,
        Element::P,
        Element::F,
        Element::Cl,
        Element::Br,
        Element::I,
        Element::Li,
        Element::Na,
        Element::K,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Element::B => "B",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::S => "S",
            Element::P => "P",
            Element::F => "F",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
            Element::Li => "Li",
            Element::Na => "Na",
            Element::K => "K",
        }
    }

    pub fn atomic_number(self) -> u8 {
        match self {
            Element::Li => 3,
            Element::B => 5,
            Element::C => 6,
            Element::N => 7,
            Element::O => 8,
            Element::F => 9,
            Element::Na => 11,
            Element::P => 15,
            Element::S => 16,
            Element::Cl => 17,
            Element::K => 19,
            Element::Br => 35,
            Element::I => 53,
        }
    }

    /// Members of the SMILES organic subset may be written without brackets.
    pub fn is_organic_subset(self) -> bool {
        !matches!(self, Element::Li | Element::Na | Element::K)
    }

    pub fn from_symbol(s: &str) -> Option<Element> {
        Element::ALL.iter().copied().find(|e| e.symbol() == s)
    }

    /// Maximum total bond order for this element at the given formal charge.
    pub fn max_valence(self, charge: i8) -> u8 {
        match (self, charge) {
            (Element::N, 1) => 4,
            (Element::O, -1) => 1,
            (Element::B, -1) => 4,
            (Element::P, -1) => 6,
            (Element::B, _) => 3,
            (Element::C, _) => 4,
            (Element::N, _) => 3,
            (Element::O, _) => 2,
            (Element::S, _) => 6,
            (Element::P, _) => 5,
            (Element::F | Element::Cl | Element::Br | Element::I, _) => 1,
            (Element::Li | Element::Na | Element::K, _) => 1,
        }
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for Element {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Element::from_symbol(s).ok_or_else(|| format!("unsupported element '{s}'"))
    }
}

pub const MIN_CHARGE: i8 = -2;
pub const MAX_CHARGE: i8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Atom {
    pub element: Element,
    pub formal_charge: i8,
    /// `None` means implicit hydrogens (organic-subset atom written without brackets).
    pub explicit_h: Option<u8>,
}

impl Atom {
    pub fn new(element: Element) -> Self {
        Atom {
            element,
            formal_charge: 0,
            explicit_h: None,
        }
    }

    pub fn charged(element: Element, formal_charge: i8) -> Self {
        Atom {
            element,
            formal_charge,
            explicit_h: None,
        }
    }

    pub fn max_valence(&self) -> u8 {
        self.element.max_valence(self.formal_charge)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: u8,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.a == atom {
            self.b
        } else {
            self.a
        }
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("atom index {0} out of range")]
    AtomOutOfRange(usize),
    #[error("self-loop on atom {0}")]
    SelfLoop(usize),
    #[error("duplicate bond between atoms {0} and {1}")]
    DuplicateBond(usize, usize),
    #[error("bond order {0} not in 1..=3")]
    BadBondOrder(u8),
    #[error("formal charge {0} outside [-2, 2]")]
    BadCharge(i8),
    #[error("atom {index} ({element}) uses valence {used}, maximum is {max}")]
    Valence {
        index: usize,
        element: Element,
        used: u8,
        max: u8,
    },
}

/// Labeled multigraph of atoms and bonds. Hydrogens are never materialized as atoms.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MolGraph {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
}

impl MolGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn add_atom(&mut self, atom: Atom) -> usize {
        self.atoms.push(atom);
        self.atoms.len() - 1
    }

    /// Adds a bond without checking valence; structural invariants are checked.
    pub fn add_bond(&mut self, a: usize, b: usize, order: u8) -> Result<(), GraphError> {
        let n = self.atoms.len();
        if a >= n {
            return Err(GraphError::AtomOutOfRange(a));
        }
        if b >= n {
            return Err(GraphError::AtomOutOfRange(b));
        }
        if a == b {
            return Err(GraphError::SelfLoop(a));
        }
        if !(1..=3).contains(&order) {
            return Err(GraphError::BadBondOrder(order));
        }
        if self.bond_between(a, b).is_some() {
            return Err(GraphError::DuplicateBond(a.min(b), a.max(b)));
        }
        self.bonds.push(Bond { a, b, order });
        Ok(())
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<usize> {
        self.bonds
            .iter()
            .position(|bd| (bd.a == a && bd.b == b) || (bd.a == b && bd.b == a))
    }

    pub(crate) fn set_bond_order(&mut self, bond: usize, order: u8) {
        self.bonds[bond].order = order;
    }

    /// Sum of bond orders at an atom (explicit hydrogens excluded).
    pub fn bond_order_sum(&self, atom: usize) -> u8 {
        self.bonds
            .iter()
            .filter(|b| b.a == atom || b.b == atom)
            .map(|b| b.order)
            .sum()
    }

    /// Bond orders plus explicit hydrogen count.
    pub fn used_valence(&self, atom: usize) -> u8 {
        self.bond_order_sum(atom) + self.atoms[atom].explicit_h.unwrap_or(0)
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.bonds
            .iter()
            .filter(|b| b.a == atom || b.b == atom)
            .count()
    }

    /// Neighbor lists: `adj[i]` holds `(neighbor, bond order)` in bond insertion order.
    pub fn adjacency(&self) -> Vec<Vec<(usize, u8)>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for b in &self.bonds {
            adj[b.a].push((b.b, b.order));
            adj[b.b].push((b.a, b.order));
        }
        adj
    }

    /// Connected components as sorted atom index lists, ordered by their smallest atom.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let adj = self.adjacency();
        let mut seen = vec![false; self.atoms.len()];
        let mut out = Vec::new();
        for start in 0..self.atoms.len() {
            if seen[start] {
                continue;
            }
            let mut comp = vec![start];
            seen[start] = true;
            let mut stack = vec![start];
            while let Some(u) = stack.pop() {
                for &(v, _) in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        comp.push(v);
                        stack.push(v);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Checks every structural and valence invariant.
    pub fn validate(&self) -> Result<(), GraphError> {
        if let Some(atom) = self
            .atoms
            .iter()
            .find(|a| !(MIN_CHARGE..=MAX_CHARGE).contains(&a.formal_charge))
        {
            return Err(GraphError::BadCharge(atom.formal_charge));
        }
        for (k, b) in self.bonds.iter().enumerate() {
            if b.a >= self.atoms.len() {
                return Err(GraphError::AtomOutOfRange(b.a));
            }
            if b.b >= self.atoms.len() {
                return Err(GraphError::AtomOutOfRange(b.b));
            }
            if b.a == b.b {
                return Err(GraphError::SelfLoop(b.a));
            }
            if !(1..=3).contains(&b.order) {
                return Err(GraphError::BadBondOrder(b.order));
            }
            if self.bonds[..k]
                .iter()
                .any(|o| (o.a == b.a && o.b == b.b) || (o.a == b.b && o.b == b.a))
            {
                return Err(GraphError::DuplicateBond(b.a.min(b.b), b.a.max(b.b)));
            }
        }
        self.validate_valence()
    }

    pub fn validate_valence(&self) -> Result<(), GraphError> {
        let mut used = vec![0u32; self.atoms.len()];
        for b in &self.bonds {
            used[b.a] += b.order as u32;
            used[b.b] += b.order as u32;
        }
        for (i, atom) in self.atoms.iter().enumerate() {
            let total = used[i] + atom.explicit_h.unwrap_or(0) as u32;
            let max = atom.max_valence();
            if total > max as u32 {
                return Err(GraphError::Valence {
                    index: i,
                    element: atom.element,
                    used: total.min(255) as u8,
                    max,
                });
            }
        }
        Ok(())
    }

    /// Same graph with atoms relabeled: atom `i` of `self` becomes atom `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> MolGraph {
        assert_eq!(perm.len(), self.atoms.len());
        let mut atoms = vec![Atom::new(Element::C); self.atoms.len()];
        for (i, &p) in perm.iter().enumerate() {
            atoms[p] = self.atoms[i];
        }
        let bonds = self
            .bonds
            .iter()
            .map(|b| Bond {
                a: perm[b.a],
                b: perm[b.b],
                order: b.order,
            })
            .collect();
        MolGraph { atoms, bonds }
    }
}

/// True iff a bijection between atoms preserves element, formal charge and bond orders.
///
/// Exact backtracking search; candidates are pruned by element, charge, degree and
/// the multiset of incident bond orders.
pub fn graph_isomorphic(a: &MolGraph, b: &MolGraph) -> bool {
    if a.atoms.len() != b.atoms.len() || a.bonds.len() != b.bonds.len() {
        return false;
    }
    let n = a.atoms.len();
    let sig = |g: &MolGraph, adj: &[Vec<(usize, u8)>], i: usize| {
        let mut orders: Vec<u8> = adj[i].iter().map(|&(_, o)| o).collect();
        orders.sort_unstable();
        (g.atoms[i].element, g.atoms[i].formal_charge, orders)
    };
    let adj_a = a.adjacency();
    let adj_b = b.adjacency();
    let sig_a: Vec<_> = (0..n).map(|i| sig(a, &adj_a, i)).collect();
    let sig_b: Vec<_> = (0..n).map(|i| sig(b, &adj_b, i)).collect();

    let mut sa = sig_a.clone();
    let mut sb = sig_b.clone();
    sa.sort();
    sb.sort();
    if sa != sb {
        return false;
    }

    // Bond order lookup for b.
    let mut order_b = vec![vec![0u8; n]; n];
    for bd in &b.bonds {
        order_b[bd.a][bd.b] = bd.order;
        order_b[bd.b][bd.a] = bd.order;
    }

    // Visit atoms of `a` in BFS order so each new atom tends to have a mapped neighbor.
    let order = bfs_order(&adj_a, n);
    let mut map = vec![usize::MAX; n];
    let mut used = vec![false; n];
    extend_mapping(
        0, &order, &adj_a, &sig_a, &sig_b, &order_b, &mut map, &mut used,
    )
}

fn bfs_order(adj: &[Vec<(usize, u8)>], n: usize) -> Vec<usize> {
    let mut seen = vec![false; n];
    let mut out = Vec::with_capacity(n);
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut queue = std::collections::VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            out.push(u);
            for &(v, _) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn extend_mapping(
    depth: usize,
    order: &[usize],
    adj_a: &[Vec<(usize, u8)>],
    sig_a: &[(Element, i8, Vec<u8>)],
    sig_b: &[(Element, i8, Vec<u8>)],
    order_b: &[Vec<u8>],
    map: &mut [usize],
    used: &mut [bool],
) -> bool {
    if depth == order.len() {
        return true;
    }
    let u = order[depth];
    // Degree equality and per-bond order equality imply edge-set equality once complete.
    let mapped_neighbors: Vec<(usize, u8)> = adj_a[u]
        .iter()
        .filter(|(v, _)| map[*v] != usize::MAX)
        .map(|&(v, o)| (map[v], o))
        .collect();
    let candidates: Vec<usize> = match mapped_neighbors.first() {
        Some(&(anchor, _)) => (0..order_b.len())
            .filter(|&c| order_b[anchor][c] != 0)
            .collect(),
        None => (0..order_b.len()).collect(),
    };
    for c in candidates {
        if used[c] || sig_a[u] != sig_b[c] {
            continue;
        }
        if mapped_neighbors.iter().any(|&(w, o)| order_b[w][c] != o) {
            continue;
        }
        // Mapped atoms adjacent to c in b must be images of neighbors of u in a.
        let mapped_count_b = (0..order_b.len())
            .filter(|&w| used[w] && order_b[c][w] != 0)
            .count();
        if mapped_count_b != mapped_neighbors.len() {
            continue;
        }
        map[u] = c;
        used[c] = true;
        if extend_mapping(depth + 1, order, adj_a, sig_a, sig_b, order_b, map, used) {
            return true;
        }
        map[u] = usize::MAX;
        used[c] = false;
    }
    false
}
