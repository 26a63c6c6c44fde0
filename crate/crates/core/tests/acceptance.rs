//! Acceptance suite. Prints one `PASS`/`FAIL criterion N` line per criterion
//! and exits non-zero if any criterion fails.
mod common;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use structprune::cli::{cmd_inspect, cmd_prune, cmd_train, InspectArgs, PruneArgs, TrainArgs};
use structprune::depgraph::build_depgraph;
use structprune::engine::{cross_entropy, forward, predict, squared_error, Gradients, Mode};
use structprune::experiment::{median, run_ablation, sparsity_emergence, AblationConfig, ExperimentConfig};
use structprune::gen::random_network;
use structprune::grouping::extract_groups;
use structprune::importance::Strategy;
use structprune::ir::{decompose, serialize, serialize_to_bytes};
use structprune::pruner::{make_plan, prune, PlanEntry, PruneConfig, PruneMode, PrunePlan};
use structprune::report::read_matrix_csv;
use structprune::sparse::{compute_gamma, refresh_gammas, reg_groups, regularizer_grad, regularizer_value};
use structprune::{zoo, Network, Network64, Tensor};

fn models() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("models")
}

fn verdict(n: usize, ok: bool, detail: &str) {
    println!("{} criterion {n}: {detail}", if ok { "PASS" } else { "FAIL" });
}

fn criterion_01_groups_equal_transitive_closure_components() -> bool {
    let start = Instant::now();
    let mut kinds = BTreeSet::new();
    let mut mismatches = Vec::new();
    let count = 1000u64;
    for seed in 0..count {
        let ir: Network = random_network(seed, 30);
        assert!(ir.len() <= 30);
        kinds.extend(ir.components.iter().map(|c| c.kind.name()));
        let d = build_depgraph(&ir);
        let groups = extract_groups(&d, &ir).unwrap();
        if common::group_sets(&groups) != common::closure_components(&d) {
            mismatches.push(seed);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = mismatches.is_empty() && kinds.len() == 9 && secs < 60.0;
    verdict(
        1,
        ok,
        &format!("{count} random networks, {} component kinds, {} mismatches, {secs:.2} s (limit 60 s)", kinds.len(), mismatches.len()),
    );
    if !ok {
        println!("  details: mismatching seeds {mismatches:?}");
    }
    ok
}

fn criterion_02_depgraph_symmetric_inter_union_intra() -> bool {
    let mut bad = Vec::new();
    for seed in 0..1000u64 {
        let ir: Network = random_network(seed, 30);
        let d = build_depgraph(&ir);
        if !d.is_symmetric() || common::actual_edges(&d) != common::expected_edges(&ir) {
            bad.push(seed);
        }
    }
    let ok = bad.is_empty();
    verdict(2, ok, &format!("1000 random networks, {} with asymmetric or unexpected edges", bad.len()));
    if !ok {
        println!("  details: seeds {bad:?}");
    }
    ok
}

fn criterion_03_residual_block_group() -> bool {
    let dir = tempfile::tempdir().unwrap();
    let report = cmd_inspect(&InspectArgs { model: models().join("resblock.json"), out: dir.path().to_path_buf() }).unwrap();
    let (labels, m) = read_matrix_csv(dir.path().join("grouping.csv")).unwrap();
    let row = labels.iter().position(|l| l == "conv2").unwrap();
    let with: BTreeSet<&str> = labels.iter().zip(&m[row]).filter(|(_, &b)| b).map(|(l, _)| l.as_str()).collect();
    // The listing must show one group holding conv2.out with the same layers.
    let listed = report
        .split("\ngroup ")
        .find(|g| g.contains("conv2.out"))
        .map(|g| ["conv1", "bn1", "bn2"].iter().all(|c| g.contains(&format!("{c}.out"))))
        .unwrap_or(false);
    let ok = ["conv1", "bn1", "bn2"].iter().all(|c| with.contains(c)) && listed;
    verdict(3, ok, &format!("group of conv2 = {with:?}"));
    ok
}

/// Deterministic non-trivial biases and batch-norm statistics.
fn perturb(ir: &mut Network, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bn = common::batch_norm_ids(ir);
    for (name, t) in ir.weights.iter_mut() {
        let is_bn = bn.iter().any(|id| name.starts_with(&format!("{id}.")));
        for v in t.data_mut() {
            if name.ends_with("running_var") {
                *v = rng.gen_range(0.5..2.0);
            } else if name.ends_with("running_mean") || name.ends_with("bias") {
                *v = rng.gen_range(-0.5..0.5);
            } else if is_bn {
                *v = rng.gen_range(0.5..1.5);
            }
        }
    }
}

fn criterion_04_zeroized_groups_prune_without_output_change() -> bool {
    let start = Instant::now();
    let mut worst = 0.0f32;
    let mut checked = 0;
    let mut refused = 0;
    let mut failures = Vec::new();
    for name in zoo::MODEL_NAMES {
        let mut ir = decompose(models().join(format!("{name}.json"))).unwrap();
        perturb(&mut ir, 7);
        let groups = extract_groups(&build_depgraph(&ir), &ir).unwrap();
        let mut shape = vec![100];
        shape.extend_from_slice(&ir.input_shape);
        let x: Tensor<f32> = common::random_tensor(&shape, 11);
        let (full, _) = make_plan(&ir, &groups, &PruneConfig { ratio: 0.5, ..PruneConfig::default() }).unwrap();
        for g in groups.iter().filter(|g| g.width > 0) {
            if !g.prunable {
                let plan = PrunePlan { groups: vec![PlanEntry { group: g.id, indices: vec![0] }], ..PrunePlan::empty(&groups) };
                if prune(&ir, &groups, &plan).is_err() {
                    refused += 1;
                } else {
                    failures.push(format!("{name} group {} is fixed but was pruned", g.id));
                }
                continue;
            }
            // Half the group when the budget allows it, otherwise its first index.
            let indices = full.groups.iter().find(|e| e.group == g.id).map(|e| e.indices.clone()).unwrap_or_else(|| vec![0]);
            let plan = PrunePlan { groups: vec![PlanEntry { group: g.id, indices: indices.clone() }], ..PrunePlan::empty(&groups) };
            let mut z = ir.clone();
            common::zeroize(&mut z, g, &indices);
            match prune(&z, &groups, &plan) {
                Ok(p) => {
                    let d = predict(&z, &x).unwrap().max_abs_diff(&predict(&p, &x).unwrap());
                    worst = worst.max(d);
                    checked += 1;
                    if !(d < 1e-5) {
                        failures.push(format!("{name} group {}: {d}", g.id));
                    }
                }
                Err(e) => failures.push(format!("{name} group {}: {e}", g.id)),
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = failures.is_empty() && checked > 0 && secs < 120.0;
    verdict(
        4,
        ok,
        &format!(
            "{checked} prunable groups over {} models, max |diff| {worst:.2e} (limit 1e-5), {refused} fixed groups refused, {secs:.2} s",
            zoo::MODEL_NAMES.len()
        ),
    );
    if !ok {
        println!("  details: {failures:?}");
    }
    ok
}

fn task_loss(ir: &Network64, x: &Tensor<f64>, target: &Target) -> (f64, Tensor<f64>) {
    let y = forward(ir, x, Mode::Train).unwrap().output;
    match target {
        Target::Labels(l) => cross_entropy(&y, l).unwrap(),
        Target::Values(t) => squared_error(&y, t).unwrap(),
    }
}

enum Target {
    Labels(Vec<usize>),
    Values(Tensor<f64>),
}

/// Worst relative error between `grads` and central differences of `f` on
/// three entries of every gradient tensor.
fn worst_fd(ir: &Network64, grads: &Gradients<f64>, f: impl Fn(&Network64) -> f64) -> (f64, String) {
    let h = 1e-6;
    let mut worst = (0.0, String::new());
    for (name, g) in grads {
        let n = g.len();
        for idx in [0, n / 2, n - 1] {
            let mut p = ir.clone();
            p.weights.get_mut(name).unwrap().data_mut()[idx] += h;
            let mut m = ir.clone();
            m.weights.get_mut(name).unwrap().data_mut()[idx] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            let e = common::rel_err(g.data()[idx], fd, 1e-6);
            if e > worst.0 {
                worst = (e, format!("{name}[{idx}]: analytic {} numeric {fd}", g.data()[idx]));
            }
        }
    }
    worst
}

fn criterion_05_gradients_match_finite_differences() -> bool {
    let mut task_worst = (0.0, String::new());
    let mut reg_worst = (0.0, String::new());
    let mut reg_networks = 0;
    for seed in 0..100u64 {
        let mut ir: Network64 = random_network(seed, 16);
        for id in common::batch_norm_ids(&ir) {
            let t = ir.weights.get_mut(&format!("{id}.weight")).unwrap();
            t.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = 0.6 + 0.2 * (i % 4) as f64);
        }
        let mut shape = vec![4];
        shape.extend_from_slice(&ir.input_shape);
        let x = common::random_tensor::<f64>(&shape, seed + 1000);
        let fwd = forward(&ir, &x, Mode::Train).unwrap();
        let out_shape = fwd.output.shape().to_vec();
        let target = if out_shape.len() == 2 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Target::Labels((0..out_shape[0]).map(|_| rng.gen_range(0..out_shape[1])).collect())
        } else {
            Target::Values(common::random_tensor(&out_shape, seed + 2000))
        };
        let (_, dl) = match &target {
            Target::Labels(l) => cross_entropy(&fwd.output, l).unwrap(),
            Target::Values(t) => squared_error(&fwd.output, t).unwrap(),
        };
        let grads = fwd.tape.unwrap().backward(&ir, &dl).unwrap();
        let w = worst_fd(&ir, &grads, |n| task_loss(n, &x, &target).0);
        if w.0 > task_worst.0 {
            task_worst = (w.0, format!("seed {seed} {}", w.1));
        }

        let groups = extract_groups(&build_depgraph(&ir), &ir).unwrap();
        for strategy in [Strategy::FullGrouping, Strategy::ConvOnly, Strategy::NoGrouping] {
            let rgs = reg_groups(&ir, &groups, strategy);
            if rgs.is_empty() {
                continue;
            }
            reg_networks += 1;
            let gam = refresh_gammas(&ir, &rgs, 4.0);
            let mut rg = Gradients::new();
            regularizer_grad(&ir, &rgs, &gam, 0.3, &mut rg);
            let w = worst_fd(&ir, &rg, |n| regularizer_value(n, &rgs, &gam, 0.3));
            if w.0 > reg_worst.0 {
                reg_worst = (w.0, format!("seed {seed} {strategy} {}", w.1));
            }
        }
    }
    let ok = task_worst.0 <= 1e-3 && reg_worst.0 <= 1e-3 && reg_networks > 0;
    verdict(
        5,
        ok,
        &format!(
            "100 random networks, worst relative error task {:.2e}, regularizer {:.2e} over {reg_networks} cases (limit 1e-3)",
            task_worst.0, reg_worst.0
        ),
    );
    if !ok {
        println!("  details: task: {} / regularizer: {}", task_worst.1, reg_worst.1);
    }
    ok
}

fn criterion_06_gamma_bounds_and_extremes() -> bool {
    let mut runner = TestRunner::new(Config { cases: 2000, failure_persistence: None, ..Config::default() });
    let bounds = runner.run(
        &(proptest::collection::vec(0.0f64..1e3, 1..40), 0.0f64..8.0),
        |(scores, alpha)| {
            for g in compute_gamma(&scores, alpha) {
                prop_assert!((1.0..=2f64.powf(alpha)).contains(&g), "gamma {} alpha {}", g, alpha);
            }
            Ok(())
        },
    );
    let g = compute_gamma(&[0.3, 2.0, 5.0, 1.1], 4.0);
    let extremes = g[2] == 1.0 && g[0] == 16.0;
    let flat = compute_gamma(&[0.7; 5], 4.0).iter().all(|&v| v == 1.0);
    let ok = bounds.is_ok() && extremes && flat;
    verdict(
        6,
        ok,
        &format!("2000 cases in [1, 2^alpha]: {}, alpha=4 extremes {:?}, flat importance -> 1: {flat}", bounds.is_ok(), (g[2], g[0])),
    );
    if !ok {
        println!("  details: {bounds:?} {g:?}");
    }
    ok
}

fn criterion_07_grouped_sparsity_emerges() -> bool {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    let mut full = Vec::new();
    let mut none = Vec::new();
    for seed in 0..5 {
        let runs = sparsity_emergence(&cfg, seed, &[Strategy::FullGrouping, Strategy::NoGrouping]).unwrap();
        full.push(*runs[0].near_zero.last().unwrap() as f64);
        none.push(*runs[1].near_zero.last().unwrap() as f64);
        println!(
            "  seed {seed}: near-zero indices per epoch, full grouping {:?}, no grouping {:?} (of {})",
            runs[0].near_zero, runs[1].near_zero, runs[0].total
        );
    }
    let (mf, mn) = (median(&full), median(&none));
    let secs = start.elapsed().as_secs_f64();
    let ok = mf > 0.0 && mf >= 3.0 * mn && secs < 600.0;
    verdict(
        7,
        ok,
        &format!("median near-zero indices: full grouping {mf}, no grouping {mn} (need >= 3x), {secs:.1} s (limit 600 s)"),
    );
    ok
}

fn criterion_08_ablation_ordering() -> bool {
    let start = Instant::now();
    let cfg = AblationConfig {
        experiment: ExperimentConfig { finetune_epochs: 0, ..ExperimentConfig::default() },
        ..AblationConfig::default()
    };
    let result = run_ablation(&cfg).unwrap();
    println!("{}", result.table().to_text());
    let med = |s: Strategy| result.cell(s, PruneMode::Learned, 2.0).unwrap().median_accuracy();
    let sp = |s: Strategy| median(&result.cell(s, PruneMode::Learned, 2.0).unwrap().speedups);
    let (full, conv, none) = (med(Strategy::FullGrouping), med(Strategy::ConvOnly), med(Strategy::NoGrouping));
    let slack = 0.005;
    let matched = [Strategy::FullGrouping, Strategy::ConvOnly, Strategy::NoGrouping].iter().all(|&s| (1.9..2.6).contains(&sp(s)));
    let secs = start.elapsed().as_secs_f64();
    let ok = full >= conv - slack && conv >= none - slack && matched && secs < 1200.0;
    verdict(
        8,
        ok,
        &format!(
            "learned 2x, median accuracy full {:.2}% >= conv-only {:.2}% >= no-grouping {:.2}% (0.5 pp slack), speedups {:.2}/{:.2}/{:.2}, {secs:.1} s",
            100.0 * full,
            100.0 * conv,
            100.0 * none,
            sp(Strategy::FullGrouping),
            sp(Strategy::ConvOnly),
            sp(Strategy::NoGrouping)
        ),
    );
    ok
}

fn criterion_09_half_width_mlp_doubles_speed() -> bool {
    let ir = decompose(models().join("mlp2.json")).unwrap();
    let groups = extract_groups(&build_depgraph(&ir), &ir).unwrap();
    let (plan, _) = make_plan(&ir, &groups, &PruneConfig { ratio: 0.5, ..PruneConfig::default() }).unwrap();
    let pruned = prune(&ir, &groups, &plan).unwrap();
    let report = structprune::pruner::prune_report(&ir, &pruned, &groups, &plan, &[]).unwrap();
    let halved = report.groups.iter().all(|g| g.after * 2 == g.before) && !report.groups.is_empty();
    let ok = halved && (1.9..=2.1).contains(&report.speedup);
    verdict(9, ok, &format!("{} (range 1.9..2.1)", report.summary()));
    ok
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn criterion_10_determinism_and_round_trip() -> bool {
    let mut runs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        cmd_inspect(&InspectArgs { model: models().join("densenet.json"), out: root.join("inspect") }).unwrap();
        let trained = root.join("train").join("m.json");
        cmd_train(&TrainArgs {
            model: models().join("resnet.json"),
            out: trained.clone(),
            config: None,
            data: None,
            samples: Some(128),
            strategy: None,
            alpha: Some(4.0),
            reg_weight: Some(1e-3),
            epochs: Some(2),
            lr: None,
            seed: Some(5),
        })
        .unwrap();
        for (mode, strategy) in [("learned", "full-grouping"), ("uniform", "random")] {
            cmd_prune(&PruneArgs {
                model: trained.clone(),
                out: root.join("prune").join(format!("{mode}.json")),
                ratio: 0.4,
                mode: mode.into(),
                strategy: strategy.into(),
                topn: None,
                min_keep: 1,
                target_speedup: None,
                plan: None,
                seed: 9,
            })
            .unwrap();
        }
        runs.push(["inspect", "train", "prune"].map(|d| dir_bytes(&root.join(d))));
    }
    let reports_identical = runs[0] == runs[1];

    let dir = tempfile::tempdir().unwrap();
    let mut lossless = true;
    for seed in 0..200u64 {
        let ir: Network = random_network(seed, 30);
        let path = dir.path().join("m.json");
        serialize(&ir, &path).unwrap();
        let back = decompose(&path).unwrap();
        lossless &= back == ir && serialize_to_bytes(&back, "m.bin") == serialize_to_bytes(&ir, "m.bin");
        let groups = extract_groups(&build_depgraph(&ir), &ir).unwrap();
        let (plan, _) = make_plan(&ir, &groups, &PruneConfig { ratio: 0.3, mode: PruneMode::Learned, ..PruneConfig::default() }).unwrap();
        plan.save(dir.path().join("p.json")).unwrap();
        let loaded = PrunePlan::load(dir.path().join("p.json")).unwrap();
        lossless &= loaded == plan && prune(&ir, &groups, &loaded).unwrap() == prune(&ir, &groups, &plan).unwrap();
    }
    let ok = reports_identical && lossless;
    verdict(
        10,
        ok,
        &format!("repeated inspect/train/prune byte-identical: {reports_identical}, model and plan round trips lossless: {lossless}"),
    );
    ok
}

fn main() {
    let criteria: [fn() -> bool; 10] = [
        criterion_01_groups_equal_transitive_closure_components,
        criterion_02_depgraph_symmetric_inter_union_intra,
        criterion_03_residual_block_group,
        criterion_04_zeroized_groups_prune_without_output_change,
        criterion_05_gradients_match_finite_differences,
        criterion_06_gamma_bounds_and_extremes,
        criterion_07_grouped_sparsity_emerges,
        criterion_08_ablation_ordering,
        criterion_09_half_width_mlp_doubles_speed,
        criterion_10_determinism_and_round_trip,
    ];
    let failed = criteria.iter().filter(|c| !c()).count();
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
