//! Command-line front end: argument types and subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::{self, Dataset};
use crate::depgraph::{build_depgraph, export_depgraph};
use crate::error::{Error, Result};
use crate::experiment::{run_ablation, AblationConfig, ExperimentConfig};
use crate::grouping::{derive_grouping_matrix, export_grouping, extract_groups, group_report};
use crate::importance::{group_l2_importance, write_importance_csv, Strategy};
use crate::ir::{decompose, serialize, NetworkIR};
use crate::pruner::{end_to_end_prune, prune, prune_report, PruneConfig, PruneMode, PrunePlan};
use crate::report::{emit_sparsity_histogram, emit_table};
use crate::sparse::{accuracy, train_sparse, SparseConfig};
use crate::zoo;

#[derive(Debug, Parser)]
#[command(name = "structprune", version, about = "Dependency-graph structural pruning for small networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dependency graph, grouping matrix and group listing of a model.
    Inspect(InspectArgs),
    /// Sparse training on a built-in dataset.
    Train(TrainArgs),
    /// Prune a model and report the speedup.
    Prune(PruneArgs),
    /// Accuracy table over grouping strategies, speedups and prune modes.
    Ablate(AblateArgs),
    /// Write the bundled example models.
    Zoo(ZooArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DataKind {
    Spiral,
    Shapes,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Trained model path; the trace and histogram are written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON sparse-training config; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset; inferred from the model input shape when omitted.
    #[arg(long, value_enum)]
    pub data: Option<DataKind>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long = "reg-weight")]
    pub reg_weight: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Pruned model path; plan and report are written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub ratio: f64,
    #[arg(long, default_value = "uniform")]
    pub mode: String,
    #[arg(long, default_value = "full-grouping")]
    pub strategy: String,
    #[arg(long)]
    pub topn: Option<usize>,
    #[arg(long = "min-keep", default_value_t = 1)]
    pub min_keep: usize,
    /// Learned mode: target speedup instead of the uniform plan's.
    #[arg(long = "target-speedup")]
    pub target_speedup: Option<f64>,
    /// Apply an existing plan instead of building one.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated strategies.
    #[arg(long, default_value = "random,no-grouping,conv-only,full-grouping")]
    pub strategy: String,
    /// Comma-separated target speedups.
    #[arg(long, default_value = "2")]
    pub speedups: String,
    /// Comma-separated prune modes.
    #[arg(long, default_value = "uniform,learned")]
    pub mode: String,
    /// Number of seeds, starting at `--seed`.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long = "reg-weight")]
    pub reg_weight: Option<f64>,
    #[arg(long)]
    pub topn: Option<usize>,
    #[arg(long = "finetune-epochs")]
    pub finetune_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ZooArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn list<T>(s: &str, parse: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(parse).collect()
}

/// Writes `depgraph.csv`, `grouping.csv`, `groups.txt` and `importance.csv`
/// into `args.out` and returns the group listing.
pub fn cmd_inspect(args: &InspectArgs) -> Result<String> {
    let ir = decompose(&args.model)?;
    let d = build_depgraph(&ir);
    let groups = extract_groups(&d, &ir)?;
    create_dir(&args.out)?;
    export_depgraph(&d, args.out.join("depgraph.csv"))?;
    export_grouping(&derive_grouping_matrix(&d), args.out.join("grouping.csv"))?;
    let report = group_report(&ir, &groups);
    write_text(&args.out.join("groups.txt"), &report)?;
    let imps: Vec<_> = groups.iter().filter(|g| g.width > 0).map(|g| group_l2_importance(&ir, g)).collect();
    write_importance_csv(args.out.join("importance.csv"), &imps, None)?;
    Ok(report)
}

fn dataset_for(ir: &NetworkIR<f32>, kind: Option<DataKind>, samples: Option<usize>, seed: u64) -> Result<Dataset<f32>> {
    let kind = match kind {
        Some(k) => k,
        None if ir.input_shape == [2] => DataKind::Spiral,
        None if ir.input_shape == [1, data::SHAPE_SIDE, data::SHAPE_SIDE] => DataKind::Shapes,
        None => {
            return Err(Error::Config(format!("no built-in dataset matches input shape {:?}", ir.input_shape)));
        }
    };
    Ok(match kind {
        DataKind::Spiral => data::spiral(samples.unwrap_or(512) / 2, 0.02, seed),
        DataKind::Shapes => data::shapes(samples.unwrap_or(1024), 0.3, seed),
    })
}

/// Trains `args.model`, writing the model, `<out>.trace.csv` and
/// `<out>.hist.csv`. Returns a one-line summary.
pub fn cmd_train(args: &TrainArgs) -> Result<String> {
    let mut cfg = match &args.config {
        Some(p) => SparseConfig::load(p)?,
        None => SparseConfig::default(),
    };
    if let Some(s) = &args.strategy {
        cfg.strategy = s.parse()?;
    }
    if let Some(a) = args.alpha {
        cfg.alpha = a;
    }
    if let Some(l) = args.reg_weight {
        cfg.reg_weight = l;
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = args.lr {
        cfg.lr = lr;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let mut ir = decompose(&args.model)?;
    let data = dataset_for(&ir, args.data, args.samples, cfg.seed)?;
    let groups = extract_groups(&build_depgraph(&ir), &ir)?;
    let trace = train_sparse(&mut ir, &groups, &data, &cfg)?;
    serialize(&ir, &args.out)?;
    trace.write_csv(sibling(&args.out, ".trace.csv"))?;
    if !trace.epochs.is_empty() {
        emit_sparsity_histogram(&trace, sibling(&args.out, ".hist.csv"), true)?;
    }
    let last = trace.last().map(|e| (e.loss, e.accuracy)).unwrap_or((f64::NAN, accuracy(&ir, &data)?));
    Ok(format!(
        "trained {} epochs ({}, alpha {}, reg-weight {}): loss {:.4}, train accuracy {:.2}%",
        cfg.epochs,
        cfg.strategy,
        cfg.alpha,
        cfg.reg_weight,
        last.0,
        100.0 * last.1
    ))
}

/// Prunes `args.model`, writing the model, `<out>.plan.json`,
/// `<out>.report.txt` and `<out>.report.csv`. Returns the text report.
pub fn cmd_prune(args: &PruneArgs) -> Result<String> {
    let mode: PruneMode = args.mode.parse()?;
    let strategy: Strategy = args.strategy.parse()?;
    let ir = decompose(&args.model)?;
    let groups = extract_groups(&build_depgraph(&ir), &ir)?;
    let (pruned, plan, report) = match &args.plan {
        Some(p) => {
            let plan = PrunePlan::load(p)?;
            let pruned = prune(&ir, &groups, &plan)?;
            let report = prune_report(&ir, &pruned, &groups, &plan, &[])?;
            (pruned, plan, report)
        }
        None => {
            let cfg = PruneConfig {
                ratio: args.ratio,
                mode,
                strategy,
                topn: args.topn,
                min_keep: args.min_keep,
                target_speedup: args.target_speedup,
                seed: args.seed,
            };
            let out = end_to_end_prune(&ir, &groups, &cfg)?;
            (out.ir, out.plan, out.report)
        }
    };
    serialize(&pruned, &args.out)?;
    plan.save(sibling(&args.out, ".plan.json"))?;
    let text = report.to_text();
    write_text(&sibling(&args.out, ".report.txt"), &text)?;
    report.write_csv(sibling(&args.out, ".report.csv"))?;
    Ok(text)
}

/// Runs the ablation and writes `ablation.csv` and `ablation.json`.
pub fn cmd_ablate(args: &AblateArgs) -> Result<String> {
    let strategies = list(&args.strategy, |s| s.parse::<Strategy>())?;
    let speedups = list(&args.speedups, |s| {
        s.trim_end_matches('x').parse::<f64>().map_err(|_| Error::Config(format!("bad speedup `{s}`")))
    })?;
    let modes = list(&args.mode, |s| s.parse::<PruneMode>())?;
    let mut experiment = ExperimentConfig::default();
    if let Some(a) = args.alpha {
        experiment.sparse.alpha = a;
    }
    if let Some(l) = args.reg_weight {
        experiment.sparse.reg_weight = l;
    }
    if let Some(f) = args.finetune_epochs {
        experiment.finetune_epochs = f;
    }
    experiment.topn = args.topn;
    experiment.sparse.validate()?;
    let cfg = AblationConfig {
        strategies,
        speedups,
        modes,
        seeds: (args.seed..args.seed + args.seeds).collect(),
        experiment,
    };
    let result = run_ablation(&cfg)?;
    create_dir(&args.out)?;
    let table = result.table();
    emit_table(&table, args.out.join("ablation.csv"))?;
    let json = serde_json::to_string_pretty(&result).expect("ablation serializes") + "\n";
    write_text(&args.out.join("ablation.json"), &json)?;
    Ok(table.to_text())
}

/// Writes every bundled model as `<name>.json` + `<name>.bin`.
pub fn cmd_zoo(args: &ZooArgs) -> Result<String> {
    create_dir(&args.out)?;
    let mut lines = String::new();
    for name in zoo::MODEL_NAMES {
        let ir: NetworkIR<f32> = zoo::by_name(name, args.seed)?;
        let path = args.out.join(format!("{name}.json"));
        serialize(&ir, &path)?;
        lines.push_str(&format!("{}\n", path.display()));
    }
    Ok(lines)
}

pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Inspect(a) => cmd_inspect(a),
        Command::Train(a) => cmd_train(a),
        Command::Prune(a) => cmd_prune(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Zoo(a) => cmd_zoo(a),
    }
}
