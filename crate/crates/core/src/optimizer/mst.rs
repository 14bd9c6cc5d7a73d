use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::WeightedGraph;
use crate::model::{LinkKey, ReflectorId};

/// A spanning forest of a [`WeightedGraph`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TreeResult {
    pub edges: BTreeSet<LinkKey>,
    pub total_weight: f64,
    pub covers: BTreeSet<ReflectorId>,
    /// Connected components of the input, each spanned by its own subtree.
    pub components: Vec<BTreeSet<ReflectorId>>,
}

impl TreeResult {
    pub fn adjacency(&self) -> BTreeMap<ReflectorId, BTreeSet<ReflectorId>> {
        let mut adj: BTreeMap<ReflectorId, BTreeSet<ReflectorId>> =
            self.covers.iter().map(|&v| (v, BTreeSet::new())).collect();
        for e in &self.edges {
            adj.entry(e.low()).or_default().insert(e.high());
            adj.entry(e.high()).or_default().insert(e.low());
        }
        adj
    }

    pub fn is_spanning(&self) -> bool {
        self.components.len() <= 1
    }

    /// Re-evaluates this tree against a newer graph. Returns the tree with
    /// updated weight and the edges that no longer exist in `g`.
    pub fn reweigh(&self, g: &WeightedGraph) -> (TreeResult, BTreeSet<LinkKey>) {
        let mut dead = BTreeSet::new();
        let mut total = 0.0;
        for e in &self.edges {
            match g.edge(*e) {
                Some(attr) => total += attr.weight,
                None => {
                    dead.insert(*e);
                }
            }
        }
        (
            TreeResult {
                total_weight: total,
                ..self.clone()
            },
            dead,
        )
    }
}

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Kruskal's algorithm. Equal weights are broken by the smaller link key, so
/// the result is a deterministic function of the graph.
pub fn min_spanning_tree(g: &WeightedGraph) -> TreeResult {
    let index: BTreeMap<ReflectorId, usize> = g.vertices.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut order: Vec<(&LinkKey, f64)> = g.edges.iter().map(|(k, a)| (k, a.weight)).collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));

    let mut sets = DisjointSet::new(index.len());
    let mut edges = BTreeSet::new();
    let mut total = 0.0;
    for (key, w) in order {
        let (Some(&a), Some(&b)) = (index.get(&key.low()), index.get(&key.high())) else {
            continue;
        };
        if sets.union(a, b) {
            edges.insert(*key);
            total += w;
        }
    }

    let mut groups: BTreeMap<usize, BTreeSet<ReflectorId>> = BTreeMap::new();
    for (&v, &i) in &index {
        groups.entry(sets.find(i)).or_default().insert(v);
    }
    let mut components: Vec<BTreeSet<ReflectorId>> = groups.into_values().collect();
    components.sort();
    TreeResult {
        edges,
        total_weight: total,
        covers: g.vertices.clone(),
        components,
    }
}
