//! A restricted SMILES dialect: organic-subset and bracket atoms with charges, explicit
//! bonds, branches, ring closures and `.` fragments. Lowercase aromatic input is accepted
//! only for isolated six-membered rings, which are kekulized at parse time.

use std::collections::BTreeMap;

use crate::graph::{Atom, Element, GraphError, MolGraph, MAX_CHARGE, MIN_CHARGE};

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum SmilesError {
    #[error("SMILES syntax error at byte {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("valence error: {0}")]
    Valence(GraphError),
}

impl SmilesError {
    fn syntax(pos: usize, message: impl Into<String>) -> Self {
        SmilesError::Syntax {
            pos,
            message: message.into(),
        }
    }
}

impl From<GraphError> for SmilesError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::Valence { .. } => SmilesError::Valence(e),
            other => SmilesError::Syntax {
                pos: 0,
                message: other.to_string(),
            },
        }
    }
}

/// Parses SMILES text into a valence-checked graph. Atom order follows first appearance.
pub fn parse_smiles(s: &str) -> Result<MolGraph, SmilesError> {
    let s = s.trim();
    if s.is_empty() {
        return Err(SmilesError::syntax(0, "empty SMILES"));
    }
    let mut p = Parser {
        input: s.as_bytes(),
        pos: 0,
        graph: MolGraph::new(),
        aromatic: Vec::new(),
        pending_aromatic: Vec::new(),
        open_rings: BTreeMap::new(),
        branch_stack: Vec::new(),
        prev: None,
        pending_bond: None,
    };
    p.run()?;
    let Parser {
        mut graph,
        aromatic,
        pending_aromatic,
        ..
    } = p;
    if !pending_aromatic.is_empty() || aromatic.iter().any(|&a| a) {
        kekulize(&mut graph, &aromatic, &pending_aromatic)?;
    }
    graph.validate()?;
    Ok(graph)
}

struct Parser<'a> {
    input: &'a [u8],
    pos: usize,
    graph: MolGraph,
    aromatic: Vec<bool>,
    /// Bonds between two aromatic atoms written without a bond symbol.
    pending_aromatic: Vec<usize>,
    /// ring number -> (atom, bond symbol given at the opening, position)
    open_rings: BTreeMap<u8, (usize, Option<u8>, usize)>,
    branch_stack: Vec<usize>,
    prev: Option<usize>,
    pending_bond: Option<(u8, usize)>,
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.input.get(self.pos).copied()
    }

    fn run(&mut self) -> Result<(), SmilesError> {
        while let Some(ch) = self.peek() {
            match ch {
                b'(' => {
                    let prev = self
                        .prev
                        .ok_or_else(|| SmilesError::syntax(self.pos, "branch without an atom"))?;
                    if self.pending_bond.is_some() {
                        return Err(SmilesError::syntax(self.pos, "bond symbol before '('"));
                    }
                    if self.input.get(self.pos + 1) == Some(&b')') {
                        return Err(SmilesError::syntax(self.pos, "empty branch"));
                    }
                    self.branch_stack.push(prev);
                    self.pos += 1;
                }
                b')' => {
                    if self.pending_bond.is_some() {
                        return Err(SmilesError::syntax(self.pos, "dangling bond before ')'"));
                    }
                    let top = self
                        .branch_stack
                        .pop()
                        .ok_or_else(|| SmilesError::syntax(self.pos, "unbalanced ')'"))?;
                    self.prev = Some(top);
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' => {
                    if self.prev.is_none() || self.pending_bond.is_some() {
                        return Err(SmilesError::syntax(self.pos, "misplaced bond symbol"));
                    }
                    let order = match ch {
                        b'-' => 1,
                        b'=' => 2,
                        _ => 3,
                    };
                    self.pending_bond = Some((order, self.pos));
                    self.pos += 1;
                }
                b'.' => {
                    if self.prev.is_none() || self.pending_bond.is_some() {
                        return Err(SmilesError::syntax(self.pos, "misplaced '.'"));
                    }
                    if !self.branch_stack.is_empty() {
                        return Err(SmilesError::syntax(self.pos, "'.' inside a branch"));
                    }
                    self.prev = None;
                    self.pos += 1;
                }
                b'1'..=b'9' => {
                    let start = self.pos;
                    self.pos += 1;
                    self.ring_bond(ch - b'0', start)?;
                }
                b'%' => {
                    let start = self.pos;
                    let digits = self.input.get(self.pos + 1..self.pos + 3);
                    let n = match digits {
                        Some(d) if d.iter().all(u8::is_ascii_digit) => {
                            (d[0] - b'0') * 10 + (d[1] - b'0')
                        }
                        _ => {
                            return Err(SmilesError::syntax(start, "expected two digits after '%'"))
                        }
                    };
                    self.pos += 3;
                    self.ring_bond(n, start)?;
                }
                b'[' => {
                    let (atom, aromatic) = self.bracket_atom()?;
                    self.push_atom(atom, aromatic)?;
                }
                b'@' | b'/' | b'\\' => {
                    return Err(SmilesError::syntax(
                        self.pos,
                        "stereochemistry is not supported",
                    ))
                }
                b'*' => {
                    return Err(SmilesError::syntax(
                        self.pos,
                        "wildcard atoms are not supported",
                    ))
                }
                _ => {
                    let (atom, aromatic) = self.organic_atom()?;
                    self.push_atom(atom, aromatic)?;
                }
            }
        }
        if let Some((_, pos)) = self.pending_bond {
            return Err(SmilesError::syntax(pos, "dangling bond at end of input"));
        }
        if !self.branch_stack.is_empty() {
            return Err(SmilesError::syntax(
                self.pos,
                "unbalanced '(' (unclosed branch)",
            ));
        }
        if let Some((n, (_, _, pos))) = self.open_rings.iter().next() {
            return Err(SmilesError::syntax(*pos, format!("unclosed ring bond {n}")));
        }
        Ok(())
    }

    fn organic_atom(&mut self) -> Result<(Atom, bool), SmilesError> {
        let start = self.pos;
        let rest = &self.input[self.pos..];
        let (element, aromatic, len) = match rest {
            [b'C', b'l', ..] => (Element::Cl, false, 2),
            [b'B', b'r', ..] => (Element::Br, false, 2),
            [b'B', ..] => (Element::B, false, 1),
            [b'C', ..] => (Element::C, false, 1),
            [b'N', ..] => (Element::N, false, 1),
            [b'O', ..] => (Element::O, false, 1),
            [b'S', ..] => (Element::S, false, 1),
            [b'P', ..] => (Element::P, false, 1),
            [b'F', ..] => (Element::F, false, 1),
            [b'I', ..] => (Element::I, false, 1),
            [b'c', ..] => (Element::C, true, 1),
            [b'n', ..] => (Element::N, true, 1),
            [b'o' | b's' | b'b' | b'p', ..] => {
                return Err(SmilesError::syntax(
                    start,
                    "aromatic atom only allowed in six-membered carbon/nitrogen rings",
                ))
            }
            _ => {
                let shown = String::from_utf8_lossy(&rest[..rest.len().min(2)]).into_owned();
                return Err(SmilesError::syntax(
                    start,
                    format!("unknown element token '{shown}'"),
                ));
            }
        };
        self.pos += len;
        Ok((Atom::new(element), aromatic))
    }

    fn bracket_atom(&mut self) -> Result<(Atom, bool), SmilesError> {
        let start = self.pos;
        let close = self.input[start..]
            .iter()
            .position(|&c| c == b']')
            .map(|i| start + i)
            .ok_or_else(|| SmilesError::syntax(start, "unterminated bracket atom"))?;
        let body = &self.input[start + 1..close];
        self.pos = close + 1;
        let err = |msg: &str| SmilesError::syntax(start, msg.to_string());

        let mut i;
        if body.first().is_some_and(u8::is_ascii_digit) {
            return Err(err("isotopes are not supported"));
        }
        let (element, aromatic) = match body {
            [b'c', ..] => {
                i = 1;
                (Element::C, true)
            }
            [b'n', ..] => {
                i = 1;
                (Element::N, true)
            }
            [first, ..] if first.is_ascii_uppercase() => {
                // Prefer the two-letter symbol when it names a supported element.
                let two = body
                    .get(..2)
                    .and_then(|s| std::str::from_utf8(s).ok())
                    .and_then(Element::from_symbol)
                    .filter(|_| body.get(1).is_some_and(u8::is_ascii_lowercase));
                match two {
                    Some(e) => {
                        i = 2;
                        (e, false)
                    }
                    None => {
                        let one = std::str::from_utf8(&body[..1]).unwrap();
                        let e = Element::from_symbol(one).ok_or_else(|| {
                            err(&format!(
                                "unknown element '{}'",
                                String::from_utf8_lossy(body)
                            ))
                        })?;
                        i = 1;
                        (e, false)
                    }
                }
            }
            _ => return Err(err("unknown element in bracket atom")),
        };
        if body.get(i) == Some(&b'@') {
            return Err(err("stereochemistry is not supported"));
        }
        let mut h = 0u8;
        if body.get(i) == Some(&b'H') {
            i += 1;
            h = 1;
            if let Some(d) = body.get(i).filter(|c| c.is_ascii_digit()) {
                h = d - b'0';
                i += 1;
            }
        }
        let mut charge: i32 = 0;
        if let Some(&sign) = body.get(i).filter(|c| **c == b'+' || **c == b'-') {
            let unit = if sign == b'+' { 1 } else { -1 };
            i += 1;
            if let Some(d) = body.get(i).filter(|c| c.is_ascii_digit()) {
                charge = unit * (d - b'0') as i32;
                i += 1;
            } else {
                charge = unit;
                while body.get(i) == Some(&sign) {
                    charge += unit;
                    i += 1;
                }
            }
        }
        if i != body.len() {
            return Err(err("unsupported bracket atom contents"));
        }
        if !(MIN_CHARGE as i32..=MAX_CHARGE as i32).contains(&charge) {
            return Err(err("formal charge outside [-2, 2]"));
        }
        Ok((
            Atom {
                element,
                formal_charge: charge as i8,
                explicit_h: Some(h),
            },
            aromatic,
        ))
    }

    fn push_atom(&mut self, atom: Atom, aromatic: bool) -> Result<(), SmilesError> {
        let idx = self.graph.add_atom(atom);
        self.aromatic.push(aromatic);
        if let Some(prev) = self.prev {
            let explicit = self.pending_bond.take().map(|(o, _)| o);
            self.connect(prev, idx, explicit)?;
        }
        self.prev = Some(idx);
        Ok(())
    }

    fn connect(&mut self, a: usize, b: usize, explicit: Option<u8>) -> Result<(), SmilesError> {
        let pos = self.pos;
        self.graph
            .add_bond(a, b, explicit.unwrap_or(1))
            .map_err(|e| SmilesError::syntax(pos, e.to_string()))?;
        if explicit.is_none() && self.aromatic[a] && self.aromatic[b] {
            self.pending_aromatic.push(self.graph.bonds().len() - 1);
        }
        Ok(())
    }

    fn ring_bond(&mut self, n: u8, start: usize) -> Result<(), SmilesError> {
        let here = self
            .prev
            .ok_or_else(|| SmilesError::syntax(start, "ring bond without an atom"))?;
        let bond = self.pending_bond.take().map(|(o, _)| o);
        match self.open_rings.remove(&n) {
            None => {
                self.open_rings.insert(n, (here, bond, start));
            }
            Some((other, open_bond, _)) => {
                let order = match (open_bond, bond) {
                    (Some(x), Some(y)) if x != y => {
                        return Err(SmilesError::syntax(start, "conflicting ring bond orders"))
                    }
                    (x, y) => x.or(y),
                };
                if other == here {
                    return Err(SmilesError::syntax(start, "ring bond to the same atom"));
                }
                self.connect(other, here, order)?;
            }
        }
        Ok(())
    }
}

/// Replaces aromatic bonds with alternating single/double bonds. Each aromatic system must
/// be an isolated six-membered ring.
fn kekulize(graph: &mut MolGraph, aromatic: &[bool], pending: &[usize]) -> Result<(), SmilesError> {
    let n = graph.atom_count();
    let mut ring_adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for &bi in pending {
        let b = graph.bonds()[bi];
        ring_adj[b.a].push((b.b, bi));
        ring_adj[b.b].push((b.a, bi));
    }
    let reject = || SmilesError::syntax(0, "aromatic atoms must form isolated six-membered rings");
    let mut done = vec![false; n];
    for start in 0..n {
        if !aromatic[start] || done[start] {
            continue;
        }
        // Walk the cycle from `start` towards its lower-indexed ring neighbor.
        if ring_adj[start].len() != 2 {
            return Err(reject());
        }
        let mut cycle_bonds = Vec::with_capacity(6);
        let mut cycle_atoms = vec![start];
        let mut prev = start;
        let (mut cur, mut via) = *ring_adj[start].iter().min().unwrap();
        cycle_bonds.push(via);
        while cur != start {
            if ring_adj[cur].len() != 2 || cycle_atoms.len() > 6 {
                return Err(reject());
            }
            cycle_atoms.push(cur);
            let &(next, bi) = ring_adj[cur]
                .iter()
                .find(|&&(v, b)| !(v == prev && b == via))
                .ok_or_else(reject)?;
            prev = cur;
            cur = next;
            via = bi;
            cycle_bonds.push(via);
        }
        if cycle_atoms.len() != 6 {
            return Err(reject());
        }
        for &a in &cycle_atoms {
            done[a] = true;
        }
        let mut last_err = None;
        for phase in 0..2 {
            let mut trial = graph.clone();
            for (k, &bi) in cycle_bonds.iter().enumerate() {
                trial.set_bond_order(bi, if k % 2 == phase { 2 } else { 1 });
            }
            match cycle_atoms
                .iter()
                .try_for_each(|&a| atom_valence_ok(&trial, a))
            {
                Ok(()) => {
                    *graph = trial;
                    last_err = None;
                    break;
                }
                Err(e) => last_err = Some(e),
            }
        }
        if let Some(e) = last_err {
            return Err(SmilesError::Valence(e));
        }
    }
    Ok(())
}

fn atom_valence_ok(g: &MolGraph, atom: usize) -> Result<(), GraphError> {
    let used = g.used_valence(atom);
    let a = g.atoms()[atom];
    if used > a.max_valence() {
        return Err(GraphError::Valence {
            index: atom,
            element: a.element,
            used,
            max: a.max_valence(),
        });
    }
    Ok(())
}

/// Serializes a graph to SMILES that re-parses to an isomorphic graph (not canonical).
pub fn write_smiles(g: &MolGraph) -> String {
    let adj = g.adjacency();
    let n = g.atom_count();
    let mut out = String::new();
    let mut visited = vec![false; n];
    let mut parent = vec![usize::MAX; n];
    let mut children: Vec<Vec<(usize, u8)>> = vec![Vec::new(); n];
    // ring_open[u] lists (descendant, order) for back edges where u is the ancestor.
    let mut ring_open: Vec<Vec<(usize, u8)>> = vec![Vec::new(); n];
    let mut ring_close: Vec<Vec<(usize, u8)>> = vec![Vec::new(); n];
    let mut preorder = vec![usize::MAX; n];
    let mut counter = 0;

    for comp in g.components() {
        let root = comp[0];
        // Iterative DFS with sorted neighbors.
        let mut stack = vec![(root, usize::MAX)];
        while let Some((u, p)) = stack.pop() {
            if visited[u] {
                continue;
            }
            visited[u] = true;
            preorder[u] = counter;
            counter += 1;
            parent[u] = p;
            if p != usize::MAX {
                let order = adj[u].iter().find(|&&(v, _)| v == p).unwrap().1;
                children[p].push((u, order));
            }
            let mut nbrs: Vec<(usize, u8)> = adj[u].clone();
            nbrs.sort_unstable();
            for &(v, _) in nbrs.iter().rev() {
                if !visited[v] {
                    stack.push((v, u));
                }
            }
        }
    }
    // Any bond not in the tree is a ring bond; the earlier atom in preorder opens it.
    for b in g.bonds() {
        let tree = parent[b.a] == b.b || parent[b.b] == b.a;
        if tree {
            continue;
        }
        let (first, second) = if preorder[b.a] < preorder[b.b] {
            (b.a, b.b)
        } else {
            (b.b, b.a)
        };
        ring_open[first].push((second, b.order));
        ring_close[second].push((first, b.order));
    }
    for v in ring_open.iter_mut() {
        v.sort_unstable_by_key(|&(d, _)| preorder[d]);
    }
    for v in ring_close.iter_mut() {
        v.sort_unstable_by_key(|&(d, _)| preorder[d]);
    }

    let mut digits: BTreeMap<(usize, usize), u8> = BTreeMap::new();
    let mut free: Vec<bool> = vec![true; 100];
    free[0] = false;
    let ctx = WriteCtx {
        g,
        children: &children,
        ring_open: &ring_open,
        ring_close: &ring_close,
    };
    for (ci, comp) in g.components().iter().enumerate() {
        if ci > 0 {
            out.push('.');
        }
        ctx.emit(comp[0], None, &mut out, &mut digits, &mut free);
    }
    out
}

struct WriteCtx<'a> {
    g: &'a MolGraph,
    children: &'a [Vec<(usize, u8)>],
    ring_open: &'a [Vec<(usize, u8)>],
    ring_close: &'a [Vec<(usize, u8)>],
}

impl WriteCtx<'_> {
    fn emit(
        &self,
        u: usize,
        bond: Option<u8>,
        out: &mut String,
        digits: &mut BTreeMap<(usize, usize), u8>,
        free: &mut [bool],
    ) {
        if let Some(order) = bond {
            out.push_str(bond_symbol(order));
        }
        out.push_str(&atom_text(&self.g.atoms()[u]));
        // Close before opening so digits can be reused on the same atom.
        for &(anc, order) in &self.ring_close[u] {
            let d = digits.remove(&(anc, u)).expect("ring opened before close");
            out.push_str(bond_symbol(order));
            push_ring_digit(out, d);
            free[d as usize] = true;
        }
        for &(desc, _) in &self.ring_open[u] {
            let d = free
                .iter()
                .position(|&f| f)
                .expect("more than 99 open rings") as u8;
            free[d as usize] = false;
            digits.insert((u, desc), d);
            push_ring_digit(out, d);
        }
        let kids = &self.children[u];
        for (k, &(v, order)) in kids.iter().enumerate() {
            let last = k + 1 == kids.len();
            if !last {
                out.push('(');
            }
            self.emit(v, Some(order), out, digits, free);
            if !last {
                out.push(')');
            }
        }
    }
}

fn bond_symbol(order: u8) -> &'static str {
    match order {
        2 => "=",
        3 => "#",
        _ => "",
    }
}

fn push_ring_digit(out: &mut String, d: u8) {
    if d < 10 {
        out.push((b'0' + d) as char);
    } else {
        out.push_str(&format!("%{d:02}"));
    }
}

fn atom_text(a: &Atom) -> String {
    let needs_bracket =
        !a.element.is_organic_subset() || a.formal_charge != 0 || a.explicit_h.is_some();
    if !needs_bracket {
        return a.element.symbol().to_string();
    }
    let mut s = String::from("[");
    s.push_str(a.element.symbol());
    match a.explicit_h.unwrap_or(0) {
        0 => {}
        1 => s.push('H'),
        h => s.push_str(&format!("H{h}")),
    }
    match a.formal_charge {
        0 => {}
        1 => s.push('+'),
        -1 => s.push('-'),
        c if c > 0 => s.push_str(&format!("+{c}")),
        c => s.push_str(&format!("-{}", -c)),
    }
    s.push(']');
    s
}
