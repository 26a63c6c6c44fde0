//! Group importance: summed squared norms of every coupled parameter slice
//! at each canonical index, plus the relative TopN score used for pruning.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::Group;
use crate::ir::{owned_slices, ComponentKind, NetworkIR, ParamSlice, Side};
use crate::report::{self, fmt_f64, Histogram};
use crate::scalar::Scalar;

/// Which members of a group are considered when scoring and regularizing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Prune indices drawn uniformly at random.
    Random,
    /// A single layer in isolation: the first conv or linear output in the group.
    NoGrouping,
    /// Every convolution in the group.
    ConvOnly,
    /// Every parameterized member of the group.
    FullGrouping,
}

impl Strategy {
    pub const ALL: [Strategy; 4] =
        [Strategy::Random, Strategy::NoGrouping, Strategy::ConvOnly, Strategy::FullGrouping];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::NoGrouping => "no-grouping",
            Strategy::ConvOnly => "conv-only",
            Strategy::FullGrouping => "full-grouping",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy `{s}` (expected random, no-grouping, conv-only or full-grouping)")))
    }
}

/// A parameter slice owned by group member `member`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemberSlice {
    pub member: usize,
    pub slice: ParamSlice,
}

/// Trainable slices of `group` that `strategy` takes into account.
///
/// Conv-only falls back to linear members for groups without convolutions.
pub fn scoped_slices<T: Scalar>(ir: &NetworkIR<T>, group: &Group, strategy: Strategy) -> Vec<MemberSlice> {
    let kind = |m: usize| &ir.components[group.members[m].half.component()].kind;
    let chosen: Vec<usize> = match strategy {
        Strategy::Random | Strategy::FullGrouping => (0..group.members.len()).collect(),
        Strategy::ConvOnly => {
            let convs: Vec<usize> = (0..group.members.len()).filter(|&m| kind(m).is_conv()).collect();
            if convs.is_empty() {
                (0..group.members.len()).filter(|&m| matches!(kind(m), ComponentKind::Linear { .. })).collect()
            } else {
                convs
            }
        }
        Strategy::NoGrouping => {
            let weight_layer = |m: usize| kind(m).is_conv() || matches!(kind(m), ComponentKind::Linear { .. });
            let out = (0..group.members.len())
                .find(|&m| weight_layer(m) && group.members[m].half.side() == Side::Output);
            out.or_else(|| (0..group.members.len()).find(|&m| weight_layer(m))).into_iter().collect()
        }
    };
    chosen
        .into_iter()
        .flat_map(|m| {
            owned_slices(ir, group.members[m].half)
                .into_iter()
                .filter(|s| s.trainable)
                .map(move |slice| MemberSlice { member: m, slice })
        })
        .collect()
}

/// Squared-norm importance of one group over its canonical indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupImportance {
    pub group: usize,
    pub scores: Vec<f64>,
}

impl GroupImportance {
    pub fn width(&self) -> usize {
        self.scores.len()
    }

    pub fn total(&self) -> f64 {
        self.scores.iter().sum()
    }
}

/// `I_k` summed over `slices`: each slice contributes the squared norm of
/// every local channel mapped from `k`.
pub fn slice_importance<T: Scalar>(ir: &NetworkIR<T>, group: &Group, slices: &[MemberSlice]) -> GroupImportance {
    let mut scores = vec![0.0; group.width];
    for ms in slices {
        let Some(w) = ir.weights.get(&ms.slice.param) else { continue };
        let member = &group.members[ms.member];
        for (k, locals) in member.index_map.iter().enumerate() {
            for &i in locals {
                scores[k] += w.slice_sum_sq(ms.slice.axis, i).to_f64_lossy();
            }
        }
    }
    GroupImportance { group: group.id, scores }
}

/// Full-group importance: every parameterized member contributes.
pub fn group_l2_importance<T: Scalar>(ir: &NetworkIR<T>, group: &Group) -> GroupImportance {
    slice_importance(ir, group, &scoped_slices(ir, group, Strategy::FullGrouping))
}

/// Importance as seen by `strategy`.
pub fn strategy_importance<T: Scalar>(ir: &NetworkIR<T>, group: &Group, strategy: Strategy) -> GroupImportance {
    slice_importance(ir, group, &scoped_slices(ir, group, strategy))
}

/// Default TopN size: half the group width, rounded up.
pub fn default_topn(width: usize) -> usize {
    width.div_ceil(2).max(1)
}

/// `n * I_k / (sum of the n largest I)`. An all-zero `I` maps to all zeros.
pub fn relative_score(scores: &[f64], n: usize) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::Config("relative score of an empty group".into()));
    }
    if n == 0 || n > scores.len() {
        return Err(Error::Config(format!("topn {n} outside 1..={}", scores.len())));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let top: f64 = sorted[..n].iter().sum();
    if top <= 0.0 {
        return Ok(vec![0.0; scores.len()]);
    }
    Ok(scores.iter().map(|&s| n as f64 * s / top).collect())
}

/// How many (or which) indices to prune.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selection {
    /// Prune `floor(ratio * K)` lowest-scoring indices.
    Ratio(f64),
    /// Prune every index scoring strictly below the threshold.
    Threshold(f64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selected {
    /// Indices to prune, ascending.
    pub indices: Vec<usize>,
    pub requested: usize,
    /// Set when `min_keep` cut the request short.
    pub clamped: bool,
}

/// Lowest-scoring indices, ties resolved toward the lower index.
pub fn select_prune_indices(scores: &[f64], selection: Selection, min_keep: usize) -> Result<Selected> {
    let k = scores.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let requested = match selection {
        Selection::Ratio(r) => {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Config(format!("prune ratio {r} outside [0, 1)")));
            }
            ((r * k as f64) + 1e-9).floor() as usize
        }
        Selection::Threshold(t) => scores.iter().filter(|&&s| s < t).count(),
    };
    let allowed = k.saturating_sub(min_keep.max(1));
    let take = requested.min(allowed);
    let mut indices = order[..take].to_vec();
    indices.sort_unstable();
    Ok(Selected { indices, requested, clamped: take < requested })
}

/// Per-group CSV of `I` and the relative score: `group,k,importance,relative`.
pub fn write_importance_csv(path: impl AsRef<Path>, imps: &[GroupImportance], topn: Option<usize>) -> Result<()> {
    let header = ["group", "k", "importance", "relative"].map(String::from).to_vec();
    let mut rows = Vec::new();
    for imp in imps {
        let n = topn.unwrap_or_else(|| default_topn(imp.width())).min(imp.width());
        let rel = relative_score(&imp.scores, n)?;
        for (k, (&i, &r)) in imp.scores.iter().zip(&rel).enumerate() {
            rows.push(vec![imp.group.to_string(), k.to_string(), fmt_f64(i), fmt_f64(r)]);
        }
    }
    report::write_csv(path, &header, &rows)
}

pub fn importance_histogram(imps: &[GroupImportance]) -> Histogram {
    Histogram::of_groups(imps.iter().map(|g| g.scores.as_slice()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depgraph::build_depgraph;
    use crate::grouping::extract_groups;
    use crate::ir::NetworkBuilder;
    use super::Strategy;
    use proptest::prelude::*;
    use proptest::strategy::Strategy as _;

    fn groups_of(ir: &NetworkIR<f64>) -> Vec<Group> {
        extract_groups(&build_depgraph(ir), ir).unwrap()
    }

    fn group_with(ir: &NetworkIR<f64>, groups: &[Group], id: &str) -> Group {
        let c = ir.component_index(id).unwrap();
        groups.iter().find(|g| g.contains_component(c) && g.width > 0).unwrap().clone()
    }

    #[test]
    fn lone_linear_rows() {
        let mut ir: NetworkIR<f64> =
            NetworkBuilder::new(&[1]).linear("fc", &["input"], 3, false).relu("r", &["fc"]).build(0).unwrap();
        let w = ir.weights.get_mut("fc.weight").unwrap();
        w.data_mut().copy_from_slice(&[1.0, 2.0, 3.0]);
        let groups = groups_of(&ir);
        let g = groups.iter().find(|g| g.member(crate::HalfId(1)).is_some()).unwrap();
        assert_eq!(group_l2_importance(&ir, g).scores, vec![1.0, 4.0, 9.0]);
    }

    #[test]
    fn two_identical_layers_double() {
        let mut b = NetworkBuilder::new(&[2]);
        b.relu("x", &["input"]).linear("a", &["x"], 3, false).linear("b", &["x"], 3, false).add("s", &["a", "b"]).relu("r", &["s"]);
        let mut ir: NetworkIR<f64> = b.build(1).unwrap();
        let wa = ir.param("a.weight").unwrap().clone();
        ir.weights.insert("b.weight".into(), wa);
        let groups = groups_of(&ir);
        let g = group_with(&ir, &groups, "a");
        let single = slice_importance(&ir, &g, &scoped_slices(&ir, &g, Strategy::FullGrouping)[..1]);
        let both = group_l2_importance(&ir, &g);
        for (s, b) in single.scores.iter().zip(&both.scores) {
            assert!((2.0 * s - b).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_group_matches_naive_slice_sums() {
        let mut b = NetworkBuilder::new(&[3, 4, 4]);
        b.conv2d("c1", &["input"], 4, 3, 1, 1, 1, true)
            .batch_norm("bn1", &["c1"])
            .conv2d("c2", &["bn1"], 4, 3, 1, 1, 1, true)
            .batch_norm("bn2", &["c2"])
            .add("sum", &["bn1", "bn2"])
            .relu("r", &["sum"]);
        let mut ir: NetworkIR<f64> = b.build(5).unwrap();
        for (i, v) in ir.weights.get_mut("bn2.weight").unwrap().data_mut().iter_mut().enumerate() {
            *v = 0.3 * (i as f64 + 1.0);
        }
        let groups = groups_of(&ir);
        let g = group_with(&ir, &groups, "c2");
        let imp = group_l2_importance(&ir, &g);
        let sq = |name: &str, pick: &dyn Fn(&[usize]) -> bool| -> f64 {
            let t = ir.param(name).unwrap();
            let shape = t.shape().to_vec();
            let mut s = 0.0;
            for (flat, v) in t.data().iter().enumerate() {
                let mut idx = vec![0; shape.len()];
                let mut r = flat;
                for d in (0..shape.len()).rev() {
                    idx[d] = r % shape[d];
                    r /= shape[d];
                }
                if pick(&idx) {
                    s += v * v;
                }
            }
            s
        };
        for k in 0..4 {
            let rows = |i: &[usize]| i[0] == k;
            let cols = |i: &[usize]| i[1] == k;
            let naive = sq("c1.weight", &rows)
                + sq("c1.bias", &rows)
                + sq("bn1.weight", &rows)
                + sq("bn1.bias", &rows)
                + sq("c2.weight", &cols)
                + sq("c2.weight", &rows)
                + sq("c2.bias", &rows)
                + sq("bn2.weight", &rows)
                + sq("bn2.bias", &rows);
            assert!((imp.scores[k] - naive).abs() < 1e-10, "k={k}: {} vs {naive}", imp.scores[k]);
        }
    }

    #[test]
    fn conv_only_and_single_layer_scopes() {
        let mut b = NetworkBuilder::new(&[2, 4, 4]);
        b.conv2d("c1", &["input"], 4, 3, 1, 1, 1, true)
            .batch_norm("bn", &["c1"])
            .relu("r", &["bn"])
            .conv2d("c2", &["r"], 2, 3, 1, 1, 1, false);
        let ir: NetworkIR<f64> = b.build(2).unwrap();
        let groups = groups_of(&ir);
        let g = group_with(&ir, &groups, "bn");
        let params = |s: Strategy| -> Vec<String> { scoped_slices(&ir, &g, s).into_iter().map(|m| m.slice.param).collect() };
        assert_eq!(params(Strategy::NoGrouping), ["c1.weight", "c1.bias"]);
        assert_eq!(params(Strategy::ConvOnly), ["c1.weight", "c1.bias", "c2.weight"]);
        assert_eq!(params(Strategy::FullGrouping), ["c1.weight", "c1.bias", "bn.weight", "bn.bias", "c2.weight"]);
    }

    #[test]
    fn relative_score_examples() {
        assert_eq!(relative_score(&[4.0; 4], 2).unwrap(), vec![1.0; 4]);
        assert_eq!(relative_score(&[0.0; 4], 2).unwrap(), vec![0.0; 4]);
        let r = relative_score(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        for (a, b) in r.iter().zip([2.0 / 7.0, 4.0 / 7.0, 6.0 / 7.0, 8.0 / 7.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(relative_score(&[1.0], 2).is_err());
    }

    #[test]
    fn selection_examples() {
        let s = select_prune_indices(&[9.0, 1.0, 4.0], Selection::Ratio(1.0 / 3.0), 1).unwrap();
        assert_eq!(s.indices, vec![1]);
        assert!(select_prune_indices(&[9.0, 1.0, 4.0], Selection::Ratio(0.0), 1).unwrap().indices.is_empty());
        let s = select_prune_indices(&[1.0, 2.0, 3.0, 4.0], Selection::Ratio(0.99), 2).unwrap();
        assert_eq!((s.indices.len(), s.clamped, s.requested), (2, true, 3));
        let s = select_prune_indices(&[2.0, 1.0, 1.0, 1.0], Selection::Ratio(0.5), 1).unwrap();
        assert_eq!(s.indices, vec![1, 2]);
        let s = select_prune_indices(&[0.1, 0.5, 0.01], Selection::Threshold(0.2), 1).unwrap();
        assert_eq!(s.indices, vec![0, 2]);
        assert!(select_prune_indices(&[1.0], Selection::Ratio(1.0), 1).is_err());
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!(matches!("greedy".parse::<Strategy>(), Err(Error::Config(_))));
    }

    fn mlp() -> NetworkIR<f64> {
        let mut b = NetworkBuilder::new(&[3]);
        b.linear("a", &["input"], 6, true).relu("r", &["a"]).linear("b", &["r"], 2, true);
        b.build(3).unwrap()
    }

    proptest! {
        #[test]
        fn scale_covariance(c in 0.1f64..10.0, seed in 0u64..1000) {
            let mut ir: NetworkIR<f64> = NetworkBuilder::new(&[3])
                .linear("a", &["input"], 6, true).relu("r", &["a"]).linear("b", &["r"], 2, true)
                .build(seed).unwrap();
            for v in ir.weights.get_mut("a.bias").unwrap().data_mut() { *v = 0.5; }
            let groups = groups_of(&ir);
            let g = group_with(&ir, &groups, "r");
            let before = group_l2_importance(&ir, &g);
            for name in ["a.weight", "a.bias", "b.weight"] {
                for v in ir.weights.get_mut(name).unwrap().data_mut() { *v *= c; }
            }
            let after = group_l2_importance(&ir, &g);
            for (x, y) in before.scores.iter().zip(&after.scores) {
                prop_assert!((x * c * c - y).abs() <= 1e-9 * y.max(1.0));
            }
            let argsort = |v: &[f64]| { let mut o: Vec<usize> = (0..v.len()).collect(); o.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b))); o };
            let n = default_topn(g.width);
            prop_assert_eq!(argsort(&relative_score(&before.scores, n).unwrap()), argsort(&relative_score(&after.scores, n).unwrap()));
        }

        #[test]
        fn permutation_equivariance(perm in Just((0..6usize).collect::<Vec<_>>()).prop_shuffle()) {
            let ir = mlp();
            let groups = groups_of(&ir);
            let g = group_with(&ir, &groups, "r");
            let base = group_l2_importance(&ir, &g);
            // Permute hidden neurons: rows of a, bias of a, columns of b.
            let mut p = ir.clone();
            let aw = ir.param("a.weight").unwrap();
            let ab = ir.param("a.bias").unwrap();
            let bw = ir.param("b.weight").unwrap();
            for (new, &old) in perm.iter().enumerate() {
                for i in 0..3 { p.weights.get_mut("a.weight").unwrap()[new * 3 + i] = aw[old * 3 + i]; }
                p.weights.get_mut("a.bias").unwrap()[new] = ab[old];
                for o in 0..2 { p.weights.get_mut("b.weight").unwrap()[o * 6 + new] = bw[o * 6 + old]; }
            }
            let permuted = group_l2_importance(&p, &g);
            let rb = relative_score(&base.scores, 3).unwrap();
            let rp = relative_score(&permuted.scores, 3).unwrap();
            for (new, &old) in perm.iter().enumerate() {
                prop_assert!((permuted.scores[new] - base.scores[old]).abs() < 1e-12);
                prop_assert!((rp[new] - rb[old]).abs() < 1e-12);
            }
        }

        #[test]
        fn topn_relative_scores_sum_to_n(scores in proptest::collection::vec(0.0f64..100.0, 1..20), frac in 0.0f64..1.0) {
            let n = 1 + ((scores.len() - 1) as f64 * frac) as usize;
            let rel = relative_score(&scores, n).unwrap();
            if scores.iter().any(|&s| s > 0.0) {
                let mut order: Vec<usize> = (0..scores.len()).collect();
                order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
                let s: f64 = order[..n].iter().map(|&i| rel[i]).sum();
                prop_assert!((s - n as f64).abs() < 1e-9);
            }
        }

        #[test]
        fn selection_respects_min_keep(scores in proptest::collection::vec(0.0f64..1.0, 1..30), r in 0.0f64..0.999, keep in 1usize..4) {
            let s = select_prune_indices(&scores, Selection::Ratio(r), keep).unwrap();
            prop_assert!(scores.len() - s.indices.len() >= keep.min(scores.len()));
            let worst_kept = (0..scores.len()).filter(|i| !s.indices.contains(i)).map(|i| scores[i]).fold(f64::INFINITY, f64::min);
            for &i in &s.indices { prop_assert!(scores[i] <= worst_kept); }
        }
    }
}
