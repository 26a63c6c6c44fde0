mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use structprune::depgraph::{build_depgraph, DepKind};
use structprune::gen::random_network;
use structprune::grouping::{derive_grouping_matrix, extract_groups, half_partition, literal_partition};
use structprune::ir::scheme_of;
use structprune::{HalfId, Network, Side};

use common::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn groups_are_closure_components(seed in any::<u64>()) {
        let ir: Network = random_network(seed, 30);
        let d = build_depgraph(&ir);
        let groups = extract_groups(&d, &ir).unwrap();
        prop_assert_eq!(group_sets(&groups), closure_components(&d));
    }

    #[test]
    fn bfs_matches_literal_expansion(seed in any::<u64>()) {
        let ir: Network = random_network(seed, 30);
        let d = build_depgraph(&ir);
        prop_assert_eq!(half_partition(&d), literal_partition(&d));
    }

    #[test]
    fn depgraph_is_symmetric_with_expected_edges(seed in any::<u64>()) {
        let ir: Network = random_network(seed, 30);
        let d = build_depgraph(&ir);
        prop_assert!(d.is_symmetric());
        prop_assert_eq!(actual_edges(&d), expected_edges(&ir));
        for e in d.edges() {
            if e.kind == DepKind::Intra {
                prop_assert_eq!(scheme_of(&ir, e.a), scheme_of(&ir, e.b));
            }
        }
        for c in 0..ir.len() {
            let (i, o) = (HalfId::new(c, Side::Input), HalfId::new(c, Side::Output));
            prop_assert_eq!(d.contains(i, o), scheme_of(&ir, i) == scheme_of(&ir, o));
        }
    }

    #[test]
    fn groups_partition_halves_and_channels(seed in any::<u64>()) {
        let ir: Network = random_network(seed, 30);
        let d = build_depgraph(&ir);
        let groups = extract_groups(&d, &ir).unwrap();
        let mut seen = BTreeSet::new();
        for g in &groups {
            for m in &g.members {
                prop_assert!(seen.insert(m.half));
                prop_assert_eq!(m.channels, ir.channels(m.half));
                prop_assert_eq!(m.index_map.len(), g.width);
                let mut locals: Vec<usize> = m.index_map.iter().flatten().copied().collect();
                locals.sort_unstable();
                prop_assert_eq!(locals, (0..m.channels).collect::<Vec<_>>());
            }
        }
        prop_assert_eq!(seen.len(), ir.half_count());
    }

    #[test]
    fn grouping_is_deterministic(seed in any::<u64>()) {
        let ir: Network = random_network(seed, 30);
        let a = extract_groups(&build_depgraph(&ir), &ir).unwrap();
        let b = extract_groups(&build_depgraph(&ir.clone()), &ir).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn grouping_matrix_is_an_equivalence(seed in any::<u64>()) {
        let ir: Network = random_network(seed, 20);
        let g = derive_grouping_matrix(&build_depgraph(&ir)).matrix;
        let n = g.len();
        for i in 0..n {
            prop_assert!(g[i][i]);
            for j in 0..n {
                prop_assert_eq!(g[i][j], g[j][i]);
            }
        }
    }
}

#[test]
fn boundary_groups_are_fixed() {
    for seed in 0..50 {
        let ir: Network = random_network(seed, 30);
        let groups = extract_groups(&build_depgraph(&ir), &ir).unwrap();
        let entry = HalfId::new(ir.entry().unwrap(), Side::Input);
        let exit = HalfId::new(ir.exit().unwrap(), Side::Output);
        for g in &groups {
            if g.member(entry).is_some() || g.member(exit).is_some() {
                assert!(!g.prunable, "seed {seed} group {}", g.id);
            }
        }
    }
}
