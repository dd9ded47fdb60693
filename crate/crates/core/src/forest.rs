//! Chordal clique forests: cliques joined by separators.
//!
//! A forest is the junction structure behind a learned network. Cliques are
//! sorted vertex sets; each separator links a parent clique to a child clique
//! and must equal their intersection. The implied graph is the union of all
//! within-clique pairs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Separator {
    pub vertices: Vec<usize>,
    pub parent: usize,
    pub child: usize,
}

/// How many clique pairs may share the same separator vertex set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Multiplicity {
    #[default]
    One,
    Unbounded,
}

fn is_default_multiplicity(m: &Multiplicity) -> bool {
    *m == Multiplicity::One
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CliqueForest {
    p: usize,
    max_clique_size: usize,
    cliques: Vec<Vec<usize>>,
    separators: Vec<Separator>,
    #[serde(default, skip_serializing_if = "is_default_multiplicity")]
    multiplicity: Multiplicity,
}

/// Off-diagonal support implied by a forest, as pairs `(i, j)` with `i < j`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EdgeSet(BTreeSet<(usize, usize)>);

impl EdgeSet {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        let key = if i < j { (i, j) } else { (j, i) };
        self.0.contains(&key)
    }

    pub fn iter(&self) -> impl Iterator<Item = &(usize, usize)> {
        self.0.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyForest,
    EmptyClique(usize),
    VertexOutOfRange { clique: usize, vertex: usize },
    UnsortedClique(usize),
    CliqueTooLarge { clique: usize, size: usize, max: usize },
    UncoveredVertex(usize),
    SeparatorEndpoint { separator: usize },
    SeparatorNotIntersection { separator: usize },
    SeparatorNotStrictSubset { separator: usize },
    JunctionCycle { separator: usize },
    RunningIntersection { vertex: usize },
    NotChordal,
    RepeatedSeparator { separator: usize, first: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            EmptyForest => write!(f, "forest has no cliques"),
            EmptyClique(c) => write!(f, "clique {c} is empty"),
            VertexOutOfRange { clique, vertex } => {
                write!(f, "clique {clique} has out-of-range vertex {vertex}")
            }
            UnsortedClique(c) => write!(f, "clique {c} is not strictly ascending"),
            CliqueTooLarge { clique, size, max } => {
                write!(f, "clique {clique} has size {size} > max {max}")
            }
            UncoveredVertex(v) => write!(f, "vertex {v} is in no clique"),
            SeparatorEndpoint { separator } => {
                write!(f, "separator {separator} has an invalid parent/child")
            }
            SeparatorNotIntersection { separator } => write!(
                f,
                "separator {separator} is not the intersection of its cliques"
            ),
            SeparatorNotStrictSubset { separator } => write!(
                f,
                "separator {separator} is not a strict subset of both cliques"
            ),
            JunctionCycle { separator } => {
                write!(f, "separator {separator} closes a cycle in the junction graph")
            }
            RunningIntersection { vertex } => write!(
                f,
                "cliques containing vertex {vertex} do not form a connected subtree"
            ),
            NotChordal => write!(f, "implied graph is not chordal"),
            RepeatedSeparator { separator, first } => write!(
                f,
                "separator {separator} repeats the vertex set of separator {first}"
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        let msgs: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
        write!(f, "{}", msgs.join("; "))
    }
}

impl CliqueForest {
    /// Builds and validates a forest. Cliques and separator vertex sets are
    /// sorted first.
    pub fn new(
        p: usize,
        max_clique_size: usize,
        cliques: Vec<Vec<usize>>,
        separators: Vec<Separator>,
    ) -> Result<Self> {
        let forest = Self::new_unchecked(p, max_clique_size, cliques, separators);
        let report = forest.validate();
        if report.is_valid() {
            Ok(forest)
        } else {
            Err(Error::InvalidForest(report.to_string()))
        }
    }

    /// Builds a forest without validating it.
    pub fn new_unchecked(
        p: usize,
        max_clique_size: usize,
        mut cliques: Vec<Vec<usize>>,
        mut separators: Vec<Separator>,
    ) -> Self {
        cliques.iter_mut().for_each(|c| c.sort_unstable());
        separators.iter_mut().for_each(|s| s.vertices.sort_unstable());
        Self {
            p,
            max_clique_size,
            cliques,
            separators,
            multiplicity: Multiplicity::One,
        }
    }

    pub fn with_multiplicity(mut self, multiplicity: Multiplicity) -> Self {
        self.multiplicity = multiplicity;
        self
    }

    /// One clique holding every vertex.
    pub fn complete(p: usize) -> Self {
        Self::new_unchecked(p, p, vec![(0..p).collect()], Vec::new())
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn max_clique_size(&self) -> usize {
        self.max_clique_size
    }

    pub fn cliques(&self) -> &[Vec<usize>] {
        &self.cliques
    }

    pub fn separators(&self) -> &[Separator] {
        &self.separators
    }

    pub fn multiplicity(&self) -> Multiplicity {
        self.multiplicity
    }

    pub fn edge_set(&self) -> EdgeSet {
        let mut edges = BTreeSet::new();
        for clique in &self.cliques {
            for (a, &i) in clique.iter().enumerate() {
                for &j in &clique[a + 1..] {
                    edges.insert((i.min(j), i.max(j)));
                }
            }
        }
        EdgeSet(edges)
    }

    /// Number of connected components of the junction forest.
    pub fn junction_components(&self) -> usize {
        let mut uf = UnionFind::new(self.cliques.len());
        for s in &self.separators {
            if s.parent < self.cliques.len() && s.child < self.cliques.len() {
                uf.union(s.parent, s.child);
            }
        }
        (0..self.cliques.len()).filter(|&c| uf.find(c) == c).count()
    }

    /// Lists every violated structural invariant.
    pub fn validate(&self) -> ValidationReport {
        let mut v = Vec::new();
        let n_cliques = self.cliques.len();
        if n_cliques == 0 {
            v.push(Violation::EmptyForest);
            return ValidationReport { violations: v };
        }

        let mut covered = vec![false; self.p];
        let mut cliques_ok = true;
        for (c, clique) in self.cliques.iter().enumerate() {
            if clique.is_empty() {
                v.push(Violation::EmptyClique(c));
                cliques_ok = false;
            }
            if clique.windows(2).any(|w| w[0] >= w[1]) {
                v.push(Violation::UnsortedClique(c));
                cliques_ok = false;
            }
            if clique.len() > self.max_clique_size {
                v.push(Violation::CliqueTooLarge {
                    clique: c,
                    size: clique.len(),
                    max: self.max_clique_size,
                });
            }
            for &x in clique {
                if x >= self.p {
                    v.push(Violation::VertexOutOfRange {
                        clique: c,
                        vertex: x,
                    });
                    cliques_ok = false;
                } else {
                    covered[x] = true;
                }
            }
        }
        for (x, ok) in covered.iter().enumerate() {
            if !ok {
                v.push(Violation::UncoveredVertex(x));
            }
        }

        let mut uf = UnionFind::new(n_cliques);
        let mut junction: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_cliques];
        let mut seen_sets: BTreeMap<&[usize], usize> = BTreeMap::new();
        for (k, sep) in self.separators.iter().enumerate() {
            if sep.parent >= n_cliques || sep.child >= n_cliques || sep.parent == sep.child {
                v.push(Violation::SeparatorEndpoint { separator: k });
                continue;
            }
            let a = &self.cliques[sep.parent];
            let b = &self.cliques[sep.child];
            let inter: Vec<usize> = a.iter().copied().filter(|x| b.contains(x)).collect();
            if inter != sep.vertices {
                v.push(Violation::SeparatorNotIntersection { separator: k });
            } else if sep.vertices.len() >= a.len() || sep.vertices.len() >= b.len() {
                v.push(Violation::SeparatorNotStrictSubset { separator: k });
            }
            if !uf.union(sep.parent, sep.child) {
                v.push(Violation::JunctionCycle { separator: k });
            }
            junction[sep.parent].push((sep.child, k));
            junction[sep.child].push((sep.parent, k));
            if self.multiplicity == Multiplicity::One {
                if let Some(&first) = seen_sets.get(sep.vertices.as_slice()) {
                    v.push(Violation::RepeatedSeparator {
                        separator: k,
                        first,
                    });
                } else {
                    seen_sets.insert(&sep.vertices, k);
                }
            }
        }

        // Running intersection: cliques holding a vertex must be connected
        // through junction links whose separator also holds it.
        for x in 0..self.p {
            let holders: Vec<usize> = (0..n_cliques)
                .filter(|&c| self.cliques[c].contains(&x))
                .collect();
            if holders.len() <= 1 {
                continue;
            }
            let mut reached = BTreeSet::from([holders[0]]);
            let mut stack = vec![holders[0]];
            while let Some(c) = stack.pop() {
                for &(d, k) in &junction[c] {
                    if self.separators[k].vertices.contains(&x) && reached.insert(d) {
                        stack.push(d);
                    }
                }
            }
            if holders.iter().any(|c| !reached.contains(c)) {
                v.push(Violation::RunningIntersection { vertex: x });
            }
        }

        if cliques_ok && !is_chordal(self.p, &self.edge_set()) {
            v.push(Violation::NotChordal);
        }

        ValidationReport { violations: v }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("forest serialization cannot fail")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("forest serialization cannot fail")
    }

    /// Parses and validates a network document.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: CliqueForest =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("network document: {e}")))?;
        let multiplicity = raw.multiplicity;
        Ok(Self::new(raw.p, raw.max_clique_size, raw.cliques, raw.separators)?
            .with_multiplicity(multiplicity))
    }
}

/// Maximum cardinality search followed by a perfect-elimination check.
pub fn is_chordal(p: usize, edges: &EdgeSet) -> bool {
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); p];
    for &(i, j) in edges.iter() {
        adj[i].insert(j);
        adj[j].insert(i);
    }

    // MCS visit order; its reverse is a perfect elimination ordering iff the
    // graph is chordal.
    let mut weight = vec![0usize; p];
    let mut visited = vec![false; p];
    let mut visit_order = Vec::with_capacity(p);
    for _ in 0..p {
        let v = (0..p)
            .filter(|&v| !visited[v])
            .max_by(|&a, &b| weight[a].cmp(&weight[b]).then(b.cmp(&a)))
            .expect("unvisited vertex exists");
        visited[v] = true;
        visit_order.push(v);
        for &u in &adj[v] {
            if !visited[u] {
                weight[u] += 1;
            }
        }
    }

    let mut position = vec![0usize; p];
    for (k, &v) in visit_order.iter().rev().enumerate() {
        position[v] = k;
    }
    for &v in visit_order.iter().rev() {
        let later: Vec<usize> = adj[v]
            .iter()
            .copied()
            .filter(|&u| position[u] > position[v])
            .collect();
        let Some(&first) = later.iter().min_by_key(|&&u| position[u]) else {
            continue;
        };
        if later.iter().any(|&u| u != first && !adj[first].contains(&u)) {
            return false;
        }
    }
    true
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false when `a` and `b` were already connected.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra.max(rb)] = ra.min(rb);
        true
    }
}
