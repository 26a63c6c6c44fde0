//! Oracles and helpers shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use structprune::depgraph::DepGraph;
use structprune::grouping::Group;
use structprune::ir::owned_slices;
use structprune::{ComponentKind, HalfId, NetworkIR, Scalar, Side, Tensor};

/// Reflexive-transitive closure of the dependency graph by repeated boolean
/// matrix squaring.
pub fn transitive_closure(d: &DepGraph) -> Vec<Vec<bool>> {
    let n = d.order();
    let mut r = d.to_dense();
    for (i, row) in r.iter_mut().enumerate() {
        row[i] = true;
    }
    loop {
        let mut next = vec![vec![false; n]; n];
        for i in 0..n {
            for k in 0..n {
                if r[i][k] {
                    for j in 0..n {
                        next[i][j] |= r[k][j];
                    }
                }
            }
        }
        if next == r {
            return r;
        }
        r = next;
    }
}

/// Connected components read off the closure rows.
pub fn closure_components(d: &DepGraph) -> BTreeSet<BTreeSet<usize>> {
    transitive_closure(d)
        .into_iter()
        .map(|row| row.iter().enumerate().filter(|(_, &b)| b).map(|(j, _)| j).collect())
        .collect()
}

pub fn group_sets(groups: &[Group]) -> BTreeSet<BTreeSet<usize>> {
    groups.iter().map(|g| g.members.iter().map(|m| m.half.index()).collect()).collect()
}

/// Whether a component kind ties its input and output channels together.
pub fn expect_intra(kind: &ComponentKind) -> bool {
    match kind {
        ComponentKind::Linear { .. } => false,
        ComponentKind::Conv2d { groups, .. } => *groups > 1,
        ComponentKind::BatchNorm
        | ComponentKind::ElementwiseBinary { .. }
        | ComponentKind::Concat { .. }
        | ComponentKind::Split { .. }
        | ComponentKind::Flatten { .. }
        | ComponentKind::Activation
        | ComponentKind::Pool { .. } => true,
    }
}

/// Expected undirected edge set `{(min, max)}` of the dependency graph.
pub fn expected_edges<T: Scalar>(ir: &NetworkIR<T>) -> BTreeSet<(usize, usize)> {
    let mut e = BTreeSet::new();
    for edge in &ir.edges {
        let a = HalfId::new(edge.from, Side::Output).index();
        let b = HalfId::new(edge.to, Side::Input).index();
        e.insert((a.min(b), a.max(b)));
    }
    for (c, comp) in ir.components.iter().enumerate() {
        if expect_intra(&comp.kind) {
            e.insert((2 * c, 2 * c + 1));
        }
    }
    e
}

pub fn actual_edges(d: &DepGraph) -> BTreeSet<(usize, usize)> {
    let m = d.to_dense();
    let mut e = BTreeSet::new();
    for (i, row) in m.iter().enumerate() {
        for (j, &b) in row.iter().enumerate() {
            if b {
                e.insert((i.min(j), i.max(j)));
            }
        }
    }
    e
}

pub fn random_tensor<T: Scalar>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| T::lit(rng.gen_range(-1.0..1.0))).collect()).unwrap()
}

/// Zeroes every owned slice of `indices` in `group`. Running variances are
/// set to one so batch norm maps the zeroed channel to exactly zero.
pub fn zeroize<T: Scalar>(ir: &mut NetworkIR<T>, group: &Group, indices: &[usize]) {
    for m in &group.members {
        for s in owned_slices(ir, m.half) {
            let value = if s.param.ends_with("running_var") { T::lit(1.0) } else { T::lit(0.0) };
            let w = ir.weights.get_mut(&s.param).unwrap();
            for &k in indices {
                for &i in m.local(k) {
                    w.slice_for_each(s.axis, i, |v| *v = value);
                }
            }
        }
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub fn batch_norm_ids<T: Scalar>(ir: &NetworkIR<T>) -> Vec<String> {
    ir.components.iter().filter(|c| c.kind == ComponentKind::BatchNorm).map(|c| c.id.clone()).collect()
}
