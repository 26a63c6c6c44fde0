//! Toy-scale experiments: sparsity emergence under sparse training and the
//! grouping-strategy ablation.

use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset};
use crate::depgraph::build_depgraph;
use crate::error::{Error, Result};
use crate::grouping::{extract_groups, Group};
use crate::importance::Strategy;
use crate::ir::NetworkIR;
use crate::pruner::{end_to_end_prune, make_plan, prune, speedup, PruneConfig, PruneMode};
use crate::report::{fmt_f64, Table};
use crate::sparse::{accuracy, near_zero_count, prunable_importance, train_sparse, SparseConfig, SparsityTrace};
use crate::zoo;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub train_samples: usize,
    pub test_samples: usize,
    pub noise: f64,
    /// Dense epochs before sparse training starts.
    pub pretrain_epochs: usize,
    /// Sparse training settings; `strategy` and `seed` are set per run.
    pub sparse: SparseConfig,
    /// Dense epochs after pruning.
    pub finetune_epochs: usize,
    pub topn: Option<usize>,
    pub min_keep: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train_samples: 1024,
            test_samples: 512,
            noise: 0.3,
            pretrain_epochs: 8,
            sparse: SparseConfig { epochs: 12, reg_weight: 2e-3, lr: 0.05, ..SparseConfig::default() },
            finetune_epochs: 5,
            topn: None,
            min_keep: 1,
        }
    }
}

/// Network, groups and data of one seed, after dense pre-training.
pub struct Prepared {
    pub ir: NetworkIR<f32>,
    pub groups: Vec<Group>,
    pub train: Dataset<f32>,
    pub test: Dataset<f32>,
}

fn dense(cfg: &ExperimentConfig, epochs: usize, seed: u64) -> SparseConfig {
    SparseConfig { epochs, reg_weight: 0.0, strategy: Strategy::Random, seed, ..cfg.sparse.clone() }
}

pub fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    let all = data::shapes::<f32>(cfg.train_samples + cfg.test_samples, cfg.noise, seed);
    let (train, test) = all.split_at(cfg.train_samples);
    let mut ir: NetworkIR<f32> = zoo::resnet(seed)?;
    let groups = extract_groups(&build_depgraph(&ir), &ir)?;
    train_sparse(&mut ir, &groups, &train, &dense(cfg, cfg.pretrain_epochs, seed))?;
    Ok(Prepared { ir, groups, train, test })
}

/// Sparse training of a prepared network under `strategy`.
pub fn sparse_phase(p: &Prepared, cfg: &ExperimentConfig, strategy: Strategy, seed: u64) -> Result<(NetworkIR<f32>, SparsityTrace)> {
    let mut ir = p.ir.clone();
    let sc = SparseConfig { strategy, seed: seed.wrapping_add(1), ..cfg.sparse.clone() };
    let trace = train_sparse(&mut ir, &p.groups, &p.train, &sc)?;
    Ok((ir, trace))
}

/// Result of one sparsity-emergence run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmergenceRun {
    pub seed: u64,
    pub strategy: Strategy,
    /// Canonical indices below 1% of their group maximum, per epoch.
    pub near_zero: Vec<usize>,
    pub total: usize,
    pub trace: SparsityTrace,
}

pub const NEAR_ZERO: f64 = 0.01;

pub fn sparsity_emergence(cfg: &ExperimentConfig, seed: u64, strategies: &[Strategy]) -> Result<Vec<EmergenceRun>> {
    let p = prepare(cfg, seed)?;
    let total: usize = prunable_importance(&p.ir, &p.groups).iter().map(|g| g.width()).sum();
    strategies
        .iter()
        .map(|&s| {
            let (_, trace) = sparse_phase(&p, cfg, s, seed)?;
            let near_zero = trace.epochs.iter().map(|e| near_zero_count(&e.groups, NEAR_ZERO)).collect();
            Ok(EmergenceRun { seed, strategy: s, near_zero, total, trace })
        })
        .collect()
}

/// Smallest uniform ratio whose speedup reaches `target` (or the closest).
pub fn uniform_ratio_for(ir: &NetworkIR<f32>, groups: &[Group], target: f64, min_keep: usize) -> Result<f64> {
    let mut best = (f64::INFINITY, 0.0);
    for step in 0..100 {
        let ratio = step as f64 / 100.0;
        let cfg = PruneConfig { ratio, min_keep, ..PruneConfig::default() };
        let (plan, _) = make_plan(ir, groups, &cfg)?;
        let s = speedup(ir, &prune(ir, groups, &plan)?, &ir.input_shape)?;
        if s >= target {
            return Ok(ratio);
        }
        if (target - s).abs() < best.0 {
            best = ((target - s).abs(), ratio);
        }
    }
    Ok(best.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub strategies: Vec<Strategy>,
    pub speedups: Vec<f64>,
    pub modes: Vec<PruneMode>,
    pub seeds: Vec<u64>,
    pub experiment: ExperimentConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            strategies: Strategy::ALL.to_vec(),
            speedups: vec![2.0],
            modes: vec![PruneMode::Uniform, PruneMode::Learned],
            seeds: (0..5).collect(),
            experiment: ExperimentConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub strategy: Strategy,
    pub mode: PruneMode,
    pub target_speedup: f64,
    pub speedups: Vec<f64>,
    pub accuracies: Vec<f64>,
}

impl AblationCell {
    pub fn median_accuracy(&self) -> f64 {
        median(&self.accuracies)
    }
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    pub config: AblationConfig,
    /// Unpruned test accuracy after dense pre-training, per seed.
    pub base_accuracies: Vec<f64>,
    pub cells: Vec<AblationCell>,
}

impl Ablation {
    pub fn cell(&self, strategy: Strategy, mode: PruneMode, target: f64) -> Option<&AblationCell> {
        self.cells.iter().find(|c| c.strategy == strategy && c.mode == mode && c.target_speedup == target)
    }

    /// Strategies as rows, `speedup x mode` as columns, median test accuracy
    /// in percent.
    pub fn table(&self) -> Table {
        let mut columns = vec!["strategy".to_string()];
        for &s in &self.config.speedups {
            for m in &self.config.modes {
                columns.push(format!("{}x {m}", fmt_f64(s)));
            }
        }
        let mut t = Table::new(columns);
        for &st in &self.config.strategies {
            let mut row = vec![Some(st.to_string())];
            for &s in &self.config.speedups {
                for &m in &self.config.modes {
                    row.push(self.cell(st, m, s).map(|c| format!("{:.2}", 100.0 * c.median_accuracy())));
                }
            }
            t.push(row);
        }
        t
    }
}

pub fn run_ablation(cfg: &AblationConfig) -> Result<Ablation> {
    if cfg.strategies.is_empty() || cfg.speedups.is_empty() || cfg.modes.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one strategy, speedup, mode and seed".into()));
    }
    if let Some(&s) = cfg.speedups.iter().find(|&&s| !(s >= 1.0 && s.is_finite())) {
        return Err(Error::Config(format!("speedup {s} must be >= 1")));
    }
    let e = &cfg.experiment;
    let mut cells: Vec<AblationCell> = Vec::new();
    for &st in &cfg.strategies {
        for &s in &cfg.speedups {
            for &m in &cfg.modes {
                cells.push(AblationCell { strategy: st, mode: m, target_speedup: s, speedups: Vec::new(), accuracies: Vec::new() });
            }
        }
    }
    let mut base_accuracies = Vec::new();
    for &seed in &cfg.seeds {
        let p = prepare(e, seed)?;
        base_accuracies.push(accuracy(&p.ir, &p.test)?);
        for &st in &cfg.strategies {
            let (sparse_ir, _) = sparse_phase(&p, e, st, seed)?;
            for &s in &cfg.speedups {
                for &m in &cfg.modes {
                    let ratio = uniform_ratio_for(&sparse_ir, &p.groups, s, e.min_keep)?;
                    let pc = PruneConfig {
                        ratio,
                        mode: m,
                        strategy: st,
                        topn: e.topn,
                        min_keep: e.min_keep,
                        target_speedup: (m == PruneMode::Learned).then_some(s),
                        seed,
                    };
                    let out = end_to_end_prune(&sparse_ir, &p.groups, &pc)?;
                    let mut pruned = out.ir;
                    if e.finetune_epochs > 0 {
                        let groups = extract_groups(&build_depgraph(&pruned), &pruned)?;
                        train_sparse(&mut pruned, &groups, &p.train, &dense(e, e.finetune_epochs, seed.wrapping_add(2)))?;
                    }
                    let acc = accuracy(&pruned, &p.test)?;
                    let cell = cells
                        .iter_mut()
                        .find(|c| c.strategy == st && c.mode == m && c.target_speedup == s)
                        .expect("cell exists");
                    cell.speedups.push(out.report.speedup);
                    cell.accuracies.push(acc);
                }
            }
        }
    }
    Ok(Ablation { config: cfg.clone(), base_accuracies, cells })
}
