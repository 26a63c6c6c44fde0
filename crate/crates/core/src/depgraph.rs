//! Dependency graph over half-nodes.
//!
//! Two half-nodes are adjacent when they denote the same feature map
//! (producer output and consumer input) or when they belong to one component
//! whose input and output share a pruning scheme.

use std::path::Path;

use crate::error::{Error, Result};
use crate::ir::{scheme_of, HalfId, NetworkIR, Side};
use crate::report;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DepKind {
    Inter,
    Intra,
}

/// One dependency. `a` is always the half a feature flows out of
/// (producer output, or a component's own input for intra edges).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepEdge {
    pub a: HalfId,
    pub b: HalfId,
    pub kind: DepKind,
    /// Index into [`NetworkIR::edges`] for inter edges.
    pub source_edge: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepGraph {
    components: Vec<String>,
    edges: Vec<DepEdge>,
    /// Per half: `(neighbour, edge index)`, sorted by neighbour.
    adjacency: Vec<Vec<(HalfId, usize)>>,
}

/// Builds the dependency graph of a validated network in `O(L + E)`.
pub fn build_depgraph<T: Scalar>(ir: &NetworkIR<T>) -> DepGraph {
    let mut edges = Vec::with_capacity(ir.edges.len() + ir.len());
    for (i, e) in ir.edges.iter().enumerate() {
        edges.push(DepEdge {
            a: HalfId::new(e.from, Side::Output),
            b: HalfId::new(e.to, Side::Input),
            kind: DepKind::Inter,
            source_edge: Some(i),
        });
    }
    for c in 0..ir.len() {
        let (i, o) = (HalfId::new(c, Side::Input), HalfId::new(c, Side::Output));
        if scheme_of(ir, i) == scheme_of(ir, o) {
            edges.push(DepEdge { a: i, b: o, kind: DepKind::Intra, source_edge: None });
        }
    }
    DepGraph::from_edges(ir.components.iter().map(|c| c.id.clone()).collect(), edges)
}

impl DepGraph {
    pub fn from_edges(components: Vec<String>, edges: Vec<DepEdge>) -> Self {
        let mut adjacency = vec![Vec::new(); 2 * components.len()];
        for (i, e) in edges.iter().enumerate() {
            adjacency[e.a.index()].push((e.b, i));
            adjacency[e.b.index()].push((e.a, i));
        }
        for list in &mut adjacency {
            list.sort();
        }
        Self { components, edges, adjacency }
    }

    /// Number of half-nodes, `2L`.
    pub fn order(&self) -> usize {
        self.adjacency.len()
    }

    pub fn component_ids(&self) -> &[String] {
        &self.components
    }

    pub fn edges(&self) -> &[DepEdge] {
        &self.edges
    }

    pub fn neighbors(&self, h: HalfId) -> &[(HalfId, usize)] {
        &self.adjacency[h.index()]
    }

    pub fn contains(&self, a: HalfId, b: HalfId) -> bool {
        self.adjacency[a.index()].iter().any(|(n, _)| *n == b)
    }

    pub fn count(&self, kind: DepKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }

    pub fn half_label(&self, h: HalfId) -> String {
        let side = if h.side() == Side::Input { "in" } else { "out" };
        format!("{}.{}", self.components[h.component()], side)
    }

    pub fn labels(&self) -> Vec<String> {
        (0..self.order()).map(|i| self.half_label(HalfId(i))).collect()
    }

    /// Dense boolean adjacency, indexed by half id.
    pub fn to_dense(&self) -> Vec<Vec<bool>> {
        let n = self.order();
        let mut m = vec![vec![false; n]; n];
        for e in &self.edges {
            m[e.a.index()][e.b.index()] = true;
            m[e.b.index()][e.a.index()] = true;
        }
        m
    }

    pub fn is_symmetric(&self) -> bool {
        let m = self.to_dense();
        (0..m.len()).all(|i| (0..m.len()).all(|j| m[i][j] == m[j][i]))
    }
}

/// Writes the adjacency matrix as 0/1 CSV with half-node labels as legend.
pub fn export_depgraph(d: &DepGraph, path: impl AsRef<Path>) -> Result<()> {
    if d.order() == 0 {
        return Err(Error::Empty("no components".into()));
    }
    report::write_matrix_csv(path, &d.labels(), &d.to_dense())
}
