mod common;

use proptest::prelude::*;
use structprune::depgraph::build_depgraph;
use structprune::engine::{count_macs, predict};
use structprune::gen::random_network;
use structprune::grouping::extract_groups;
use structprune::pruner::{end_to_end_prune, make_plan, prune, PruneConfig, PruneMode, PrunePlan};
use structprune::Network64;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]

    /// Zeroing the slices a plan removes, then removing them, leaves the
    /// function unchanged and never increases MACs.
    #[test]
    fn zeroize_then_prune_preserves_output(seed in any::<u64>(), ratio in 0.05f64..0.9, learned in any::<bool>()) {
        let ir: Network64 = random_network(seed, 30);
        let groups = extract_groups(&build_depgraph(&ir), &ir).unwrap();
        let mode = if learned { PruneMode::Learned } else { PruneMode::Uniform };
        let cfg = PruneConfig { ratio, mode, seed, ..PruneConfig::default() };
        let (plan, _) = make_plan(&ir, &groups, &cfg).unwrap();
        let mut z = ir.clone();
        for e in &plan.groups {
            common::zeroize(&mut z, &groups[e.group], &e.indices);
        }
        let pruned = prune(&z, &groups, &plan).unwrap();
        let mut shape = vec![4];
        shape.extend_from_slice(&ir.input_shape);
        let x = common::random_tensor::<f64>(&shape, seed);
        let d = predict(&z, &x).unwrap().max_abs_diff(&predict(&pruned, &x).unwrap());
        prop_assert!(d < 1e-9, "max diff {}", d);
        prop_assert!(count_macs(&pruned, &pruned.input_shape).unwrap() <= count_macs(&ir, &ir.input_shape).unwrap());
    }

    #[test]
    fn uniform_plans_respect_min_keep(seed in any::<u64>(), ratio in 0.0f64..0.99, min_keep in 1usize..4) {
        let ir: Network64 = random_network(seed, 30);
        let groups = extract_groups(&build_depgraph(&ir), &ir).unwrap();
        let out = end_to_end_prune(&ir, &groups, &PruneConfig { ratio, min_keep, ..PruneConfig::default() }).unwrap();
        for e in &out.plan.groups {
            let g = &groups[e.group];
            prop_assert!(g.prunable);
            prop_assert!(g.width - e.indices.len() >= min_keep.min(g.width));
            prop_assert!(e.indices.len() as f64 <= (ratio * g.width as f64).floor() + 1e-9);
        }
    }

    #[test]
    fn empty_plan_changes_nothing(seed in any::<u64>()) {
        let ir: Network64 = random_network(seed, 30);
        let groups = extract_groups(&build_depgraph(&ir), &ir).unwrap();
        prop_assert_eq!(prune(&ir, &groups, &PrunePlan::empty(&groups)).unwrap(), ir);
    }
}
