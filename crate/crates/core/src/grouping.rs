//! Pruning groups extracted from the dependency graph.
//!
//! Half-nodes connected by a path in the dependency graph form one group.
//! Inside a group, individual channels are coupled through the index
//! transform carried by each dependency (concat offsets, flatten expansion,
//! grouped-convolution blocks). Channels that end up coupled together form
//! one canonical index of the group: pruning canonical index `k` removes every
//! member's local channels mapped from `k`.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::depgraph::{DepEdge, DepGraph, DepKind};
use crate::error::{Error, Result};
use crate::ir::{ComponentKind, HalfId, NetworkIR, Side};
use crate::report;
use crate::scalar::Scalar;

/// Maps a channel index on one side of a dependency to the channel indices
/// it is tied to on the other side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IndexTransform {
    Identity,
    /// `i -> i + delta`; arises across concat and split.
    Offset(i64),
    /// `i -> [i * factor, (i + 1) * factor)`; arises across flatten.
    Expand(usize),
    /// Channel `i` belongs to block `i / in_block`, which owns output channels
    /// `[b * out_block, (b + 1) * out_block)`; arises inside grouped convolution.
    GroupBlock { in_block: usize, out_block: usize },
}

impl IndexTransform {
    pub fn image(&self, i: usize) -> Range<i64> {
        let i = i as i64;
        match *self {
            IndexTransform::Identity => i..i + 1,
            IndexTransform::Offset(d) => i + d..i + d + 1,
            IndexTransform::Expand(f) => {
                let f = f as i64;
                i * f..(i + 1) * f
            }
            IndexTransform::GroupBlock { in_block, out_block } => {
                let b = i / in_block as i64;
                let o = out_block as i64;
                b * o..(b + 1) * o
            }
        }
    }

    /// The transform as an explicit relation from `domain` to `codomain`
    /// indices, clipped to the codomain.
    pub fn relation(&self, domain: usize, codomain: usize) -> Relation {
        Relation(
            (0..domain)
                .map(|i| {
                    let r = self.image(i);
                    (r.start.max(0)..r.end.min(codomain as i64)).map(|j| j as usize).collect()
                })
                .collect(),
        )
    }
}

impl std::fmt::Display for IndexTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            IndexTransform::Identity => write!(f, "Identity"),
            IndexTransform::Offset(d) => write!(f, "Offset({d})"),
            IndexTransform::Expand(x) => write!(f, "Expand({x})"),
            IndexTransform::GroupBlock { in_block, out_block } => write!(f, "GroupBlock({in_block}->{out_block})"),
        }
    }
}

/// Finite relation between index sets: `self.0[i]` lists the targets of `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relation(pub Vec<Vec<usize>>);

impl Relation {
    pub fn identity(n: usize) -> Self {
        Relation((0..n).map(|i| vec![i]).collect())
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &Relation) -> Relation {
        Relation(
            self.0
                .iter()
                .map(|targets| {
                    let set: BTreeSet<usize> =
                        targets.iter().filter_map(|&j| next.0.get(j)).flatten().copied().collect();
                    set.into_iter().collect()
                })
                .collect(),
        )
    }
}

/// How a member was reached during group expansion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemberLink {
    pub peer: HalfId,
    pub kind: DepKind,
    pub transform: IndexTransform,
    /// True when `transform` maps the peer's channels onto this member's;
    /// false when it maps this member's channels into the peer.
    pub from_peer: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupMember {
    pub half: HalfId,
    pub channels: usize,
    pub link: Option<MemberLink>,
    /// Local channels of this member for each canonical index.
    pub index_map: Vec<Vec<usize>>,
}

impl GroupMember {
    pub fn local(&self, k: usize) -> &[usize] {
        &self.index_map[k]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Group {
    pub id: usize,
    pub members: Vec<GroupMember>,
    /// Number of canonical indices.
    pub width: usize,
    /// False when the group touches the network input or output.
    pub prunable: bool,
    /// True when the group contains the input of the output component.
    pub feeds_output: bool,
}

impl Group {
    pub fn member(&self, h: HalfId) -> Option<&GroupMember> {
        self.members.iter().find(|m| m.half == h)
    }

    pub fn halves(&self) -> Vec<HalfId> {
        self.members.iter().map(|m| m.half).collect()
    }

    pub fn components(&self) -> BTreeSet<usize> {
        self.members.iter().map(|m| m.half.component()).collect()
    }

    pub fn contains_component(&self, c: usize) -> bool {
        self.members.iter().any(|m| m.half.component() == c)
    }
}

/// Index relation carried by one dependency edge.
struct EdgeLink {
    a_range: Range<usize>,
    b_range: Range<usize>,
    transform: IndexTransform,
}

fn edge_link<T: Scalar>(ir: &NetworkIR<T>, d: &DepGraph, e: &DepEdge) -> Result<EdgeLink> {
    let ca = ir.channels(e.a);
    let cb = ir.channels(e.b);
    let link = match (e.kind, e.source_edge) {
        (DepKind::Inter, Some(idx)) => {
            let a_range = ir.edge_source_range(&ir.edges[idx]);
            let b_range = ir.edge_target_range(idx);
            let transform = if a_range == (0..ca) && b_range == (0..cb) {
                IndexTransform::Identity
            } else {
                IndexTransform::Offset(b_range.start as i64 - a_range.start as i64)
            };
            EdgeLink { a_range, b_range, transform }
        }
        _ => {
            let c = &ir.components[e.a.component()];
            let transform = match c.kind {
                ComponentKind::Flatten { spatial_size } => IndexTransform::Expand(spatial_size),
                ComponentKind::Conv2d { groups, .. } if groups > 1 => IndexTransform::GroupBlock {
                    in_block: c.in_channels / groups,
                    out_block: c.out_channels / groups,
                },
                _ => IndexTransform::Identity,
            };
            EdgeLink { a_range: 0..ca, b_range: 0..cb, transform }
        }
    };
    let mismatch = |why: String| {
        Error::Grouping(format!("`{}` and `{}`: {why}", d.half_label(e.a), d.half_label(e.b)))
    };
    if link.a_range.is_empty() || link.a_range.end > ca || link.b_range.end > cb {
        return Err(mismatch(format!(
            "windows {:?} / {:?} do not fit {ca} / {cb} channels",
            link.a_range, link.b_range
        )));
    }
    if let IndexTransform::GroupBlock { in_block, .. } | IndexTransform::Expand(in_block) = link.transform {
        if in_block == 0 {
            return Err(mismatch("zero block size".into()));
        }
    }
    let first = link.transform.image(link.a_range.start);
    let last = link.transform.image(link.a_range.end - 1);
    if first.start != link.b_range.start as i64 || last.end != link.b_range.end as i64 {
        return Err(mismatch(format!(
            "{} maps {:?} onto {}..{}, expected {:?}",
            link.transform, link.a_range, first.start, last.end, link.b_range
        )));
    }
    Ok(link)
}

struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), size: vec![1; n] }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        let (big, small) = if self.size[ra] >= self.size[rb] { (ra, rb) } else { (rb, ra) };
        self.parent[small] = big;
        self.size[big] += self.size[small];
    }
}

/// Connected components of the dependency graph, each sorted, ordered by
/// smallest half id. Single pass with a visited set.
pub fn half_partition(d: &DepGraph) -> Vec<Vec<HalfId>> {
    let mut seen = vec![false; d.order()];
    let mut parts = Vec::new();
    for start in 0..d.order() {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut part = vec![HalfId(start)];
        let mut queue = VecDeque::from([HalfId(start)]);
        while let Some(u) = queue.pop_front() {
            for &(v, _) in d.neighbors(u) {
                if !seen[v.index()] {
                    seen[v.index()] = true;
                    part.push(v);
                    queue.push_back(v);
                }
            }
        }
        part.sort();
        parts.push(part);
    }
    parts
}

/// Group expansion exactly as the textbook procedure states it: start a
/// group at every half-node and absorb unseen neighbours until nothing new
/// is found, then drop duplicate groups. Quadratic; kept as a reference for
/// [`half_partition`].
pub fn literal_partition(d: &DepGraph) -> Vec<Vec<HalfId>> {
    let n = d.order();
    let adj = d.to_dense();
    let mut groups: Vec<Vec<HalfId>> = Vec::new();
    for i in 0..n {
        let mut g: BTreeSet<usize> = BTreeSet::from([i]);
        loop {
            let frontier: Vec<usize> =
                (0..n).filter(|j| !g.contains(j) && g.iter().any(|&k| adj[k][*j])).collect();
            if frontier.is_empty() {
                break;
            }
            g.extend(frontier);
        }
        let g: Vec<HalfId> = g.into_iter().map(HalfId).collect();
        if !groups.contains(&g) {
            groups.push(g);
        }
    }
    groups.sort_by_key(|g| g[0]);
    groups
}

/// Extracts every maximal group with per-member index maps.
///
/// Groups come out ordered by their smallest half id, members by half id,
/// and canonical indices by first appearance in (half id, local channel)
/// order, so the result is a deterministic function of the network.
pub fn extract_groups<T: Scalar>(d: &DepGraph, ir: &NetworkIR<T>) -> Result<Vec<Group>> {
    let n = d.order();
    if n != ir.half_count() {
        return Err(Error::Grouping(format!(
            "dependency graph has {n} half-nodes, network has {}",
            ir.half_count()
        )));
    }
    let mut base = Vec::with_capacity(n + 1);
    base.push(0usize);
    for h in 0..n {
        base.push(base[h] + ir.channels(HalfId(h)));
    }
    let mut uf = UnionFind::new(base[n]);
    let mut seen = vec![false; n];
    let mut edge_done = vec![false; d.edges().len()];
    let mut links: Vec<Option<MemberLink>> = vec![None; n];
    let mut parts = Vec::new();

    let entry = ir.entry().map(|c| HalfId::new(c, Side::Input));
    let exit_out = ir.exit().map(|c| HalfId::new(c, Side::Output));
    let exit_in = ir.exit().map(|c| HalfId::new(c, Side::Input));

    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut part = vec![HalfId(start)];
        let mut queue = VecDeque::from([HalfId(start)]);
        while let Some(u) = queue.pop_front() {
            for &(v, ei) in d.neighbors(u) {
                let e = &d.edges()[ei];
                if !edge_done[ei] {
                    edge_done[ei] = true;
                    let link = edge_link(ir, d, e)?;
                    for i in link.a_range.clone() {
                        for j in link.transform.image(i) {
                            uf.union(base[e.a.index()] + i, base[e.b.index()] + j as usize);
                        }
                    }
                    if !seen[v.index()] {
                        links[v.index()] = Some(MemberLink {
                            peer: u,
                            kind: e.kind,
                            transform: link.transform,
                            from_peer: e.a == u,
                        });
                    }
                }
                if !seen[v.index()] {
                    seen[v.index()] = true;
                    part.push(v);
                    queue.push_back(v);
                }
            }
        }
        part.sort();
        parts.push(part);
    }

    let mut groups = Vec::with_capacity(parts.len());
    for (gid, part) in parts.into_iter().enumerate() {
        let mut canon: HashMap<usize, usize> = HashMap::new();
        for &h in &part {
            for i in 0..ir.channels(h) {
                let root = uf.find(base[h.index()] + i);
                let next = canon.len();
                canon.entry(root).or_insert(next);
            }
        }
        let width = canon.len();
        let members = part
            .iter()
            .map(|&h| {
                let channels = ir.channels(h);
                let mut index_map = vec![Vec::new(); width];
                for i in 0..channels {
                    let k = canon[&uf.find(base[h.index()] + i)];
                    index_map[k].push(i);
                }
                GroupMember { half: h, channels, link: links[h.index()].take(), index_map }
            })
            .collect();
        let touches = |x: Option<HalfId>| x.is_some_and(|x| part.contains(&x));
        groups.push(Group {
            id: gid,
            members,
            width,
            prunable: !touches(entry) && !touches(exit_out),
            feeds_output: touches(exit_in),
        });
    }
    Ok(groups)
}

/// Component-level grouping matrix: `G[i][j]` is set when some half of `i`
/// and some half of `j` are connected in the dependency graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupingMatrix {
    pub components: Vec<String>,
    pub matrix: Vec<Vec<bool>>,
}

pub fn derive_grouping_matrix(d: &DepGraph) -> GroupingMatrix {
    let l = d.component_ids().len();
    let mut label = vec![0usize; d.order()];
    for (p, part) in half_partition(d).iter().enumerate() {
        for h in part {
            label[h.index()] = p;
        }
    }
    let halves = |c: usize| [label[2 * c], label[2 * c + 1]];
    let matrix = (0..l)
        .map(|i| {
            (0..l)
                .map(|j| i == j || halves(i).iter().any(|a| halves(j).contains(a)))
                .collect()
        })
        .collect();
    GroupingMatrix { components: d.component_ids().to_vec(), matrix }
}

pub fn export_grouping(g: &GroupingMatrix, path: impl AsRef<Path>) -> Result<()> {
    if g.components.is_empty() {
        return Err(Error::Empty("no components".into()));
    }
    report::write_matrix_csv(path, &g.components, &g.matrix)
}

/// Human readable listing of groups, members, transforms and widths.
pub fn group_report<T: Scalar>(ir: &NetworkIR<T>, groups: &[Group]) -> String {
    let mut out = String::new();
    for g in groups {
        let comps: Vec<&str> = g.components().iter().map(|&c| ir.components[c].id.as_str()).collect();
        let _ = writeln!(
            out,
            "group {} width {}{}{} components [{}]",
            g.id,
            g.width,
            if g.prunable { "" } else { " fixed" },
            if g.feeds_output { " feeds-output" } else { "" },
            comps.join(", ")
        );
        for m in &g.members {
            let via = match &m.link {
                None => "root".to_string(),
                Some(l) => format!(
                    "{} {} {} ({})",
                    if l.from_peer { "from" } else { "into" },
                    ir.half_label(l.peer),
                    l.transform,
                    match l.kind {
                        DepKind::Inter => "inter",
                        DepKind::Intra => "intra",
                    }
                ),
            };
            let _ = writeln!(out, "  {:<24} channels {:<5} {}", ir.half_label(m.half), m.channels, via);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depgraph::build_depgraph;
    use crate::ir::NetworkBuilder;

    fn groups_of(b: &NetworkBuilder) -> (NetworkIR<f32>, Vec<Group>) {
        let ir = b.build(1).unwrap();
        let d = build_depgraph(&ir);
        let g = extract_groups(&d, &ir).unwrap();
        (ir, g)
    }

    #[test]
    fn two_layer_mlp_groups() {
        let mut b = NetworkBuilder::new(&[3]);
        b.linear("l1", &["input"], 5, true).linear("l2", &["l1"], 2, true);
        let (_, g) = groups_of(&b);
        let parts: Vec<Vec<usize>> = g.iter().map(|g| g.halves().iter().map(|h| h.0).collect()).collect();
        assert_eq!(parts, vec![vec![0], vec![1, 2], vec![3]]);
        assert!(!g[0].prunable && g[1].prunable && !g[2].prunable);
        assert_eq!(g[1].width, 5);
        for m in &g[1].members {
            assert!(m.index_map.iter().enumerate().all(|(k, l)| l == &vec![k]));
        }
        assert_eq!(g[1].members[1].link.as_ref().unwrap().transform, IndexTransform::Identity);
    }

    #[test]
    fn concat_producers_get_offsets() {
        let mut b = NetworkBuilder::new(&[2, 4, 4]);
        b.conv2d("stem", &["input"], 4, 3, 1, 1, 1, false);
        b.conv2d("a", &["stem"], 3, 3, 1, 1, 1, false);
        b.conv2d("b", &["stem"], 5, 3, 1, 1, 1, false);
        b.concat("cat", &["a", "b"]);
        b.conv2d("head", &["cat"], 2, 1, 1, 0, 1, false);
        let (ir, g) = groups_of(&b);
        let cat_in = HalfId::new(ir.component_index("cat").unwrap(), Side::Input);
        let grp = g.iter().find(|g| g.member(cat_in).is_some()).unwrap();
        assert_eq!(grp.width, 8);
        let a_out = grp.member(HalfId::new(1, Side::Output)).unwrap();
        let b_out = grp.member(HalfId::new(2, Side::Output)).unwrap();
        // a.out is the group root; the concat input is reached from it
        assert!(a_out.link.is_none());
        let cat_link = grp.member(cat_in).unwrap().link.as_ref().unwrap();
        assert_eq!((cat_link.peer, cat_link.transform, cat_link.from_peer), (a_out.half, IndexTransform::Offset(0), true));
        let b_link = b_out.link.as_ref().unwrap();
        assert_eq!((b_link.peer, b_link.transform, b_link.from_peer), (cat_in, IndexTransform::Offset(3), false));
        // canonical order follows a.out first, then b.out
        assert_eq!(a_out.index_map[2], vec![2]);
        assert!(a_out.index_map[3].is_empty());
        assert_eq!(b_out.index_map[3], vec![0]);
    }

    #[test]
    fn flatten_expands_into_linear_columns() {
        let mut b = NetworkBuilder::new(&[1, 4, 4]);
        b.conv2d("c", &["input"], 3, 3, 1, 1, 1, true);
        b.pool("p", &["c"], 2);
        b.flatten("f", &["p"]);
        b.linear("fc", &["f"], 2, true);
        let (ir, g) = groups_of(&b);
        let fc_in = HalfId::new(ir.component_index("fc").unwrap(), Side::Input);
        let grp = g.iter().find(|g| g.member(fc_in).is_some()).unwrap();
        assert_eq!(grp.width, 3);
        assert_eq!(grp.member(fc_in).unwrap().index_map[1], vec![4, 5, 6, 7]);
        assert!(grp.feeds_output && grp.prunable);
    }

    #[test]
    fn grouped_conv_prunes_whole_blocks() {
        let mut b = NetworkBuilder::new(&[1, 4, 4]);
        b.conv2d("c1", &["input"], 8, 3, 1, 1, 1, false);
        b.conv2d("g", &["c1"], 4, 3, 1, 1, 2, false);
        b.conv2d("c2", &["g"], 2, 1, 1, 0, 1, false);
        let (_, g) = groups_of(&b);
        let grp = g.iter().find(|g| g.member(HalfId(1)).is_some()).unwrap();
        assert_eq!(grp.width, 2);
        assert_eq!(grp.member(HalfId(1)).unwrap().index_map, vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7]]);
        assert_eq!(grp.member(HalfId(3)).unwrap().index_map, vec![vec![0, 1], vec![2, 3]]);
        assert_eq!(grp.member(HalfId(4)).unwrap().index_map, vec![vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn split_sizes_mismatch_is_a_grouping_error() {
        let mut b = NetworkBuilder::new(&[1, 4, 4]);
        b.conv2d("c1", &["input"], 12, 3, 1, 1, 1, false);
        b.split("s", &["c1"], &[6, 6]);
        b.conv2d("x", &["s:0"], 2, 1, 1, 0, 1, false);
        b.conv2d("y", &["s:1"], 2, 1, 1, 0, 1, false);
        b.add("sum", &["x", "y"]);
        let mut ir: NetworkIR<f32> = b.build(0).unwrap();
        // corrupt the split so that its pieces no longer cover the producer
        ir.components[1].kind = ComponentKind::Split { sizes: vec![8, 8] };
        let d = build_depgraph(&ir);
        let err = extract_groups(&d, &ir).unwrap_err();
        assert!(err.to_string().contains("`s.out` and `x.in`"), "{err}");
    }

    #[test]
    fn relation_composition() {
        let a = IndexTransform::Offset(2).relation(3, 8);
        let b = IndexTransform::Expand(2).relation(8, 16);
        let c = a.then(&b);
        assert_eq!(c.0[0], vec![4, 5]);
        assert_eq!(c.0[2], vec![8, 9]);
        assert_eq!(Relation::identity(3).then(&a), a);
    }
}
