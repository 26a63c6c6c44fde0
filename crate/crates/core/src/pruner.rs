//! Physical removal of grouped parameters.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::count_macs;
use crate::error::{Error, Result};
use crate::grouping::Group;
use crate::importance::{default_topn, relative_score, select_prune_indices, strategy_importance, Selection, Strategy};
use crate::ir::{infer_shapes_from, owned_slices, ComponentKind, HalfId, NetworkIR, Side};
use crate::report::{self, fmt_f64};
use crate::scalar::Scalar;

pub const PLAN_FORMAT: &str = "structprune-plan";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanEntry {
    pub group: usize,
    /// Canonical indices to remove, ascending.
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub criterion: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrunePlan {
    pub format: String,
    /// Digest of the group structure the plan was made for.
    pub signature: String,
    pub min_keep: usize,
    pub provenance: Provenance,
    pub groups: Vec<PlanEntry>,
}

impl PrunePlan {
    pub fn empty(groups: &[Group]) -> Self {
        Self {
            format: PLAN_FORMAT.into(),
            signature: group_signature(groups),
            min_keep: 1,
            provenance: Provenance { criterion: "none".into(), config_hash: String::new() },
            groups: Vec::new(),
        }
    }

    pub fn removed(&self) -> usize {
        self.groups.iter().map(|e| e.indices.len()).sum()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plan serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let plan: Self = serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        if plan.format != PLAN_FORMAT {
            return Err(Error::field(path.display().to_string(), format!("format `{}` is not {PLAN_FORMAT}", plan.format)));
        }
        Ok(plan)
    }
}

/// Hex SHA-256 over group ids, widths, members and index maps.
pub fn group_signature(groups: &[Group]) -> String {
    let mut h = Sha256::new();
    for g in groups {
        h.update(format!("g{}:{}:{}\n", g.id, g.width, g.prunable));
        for m in &g.members {
            h.update(format!("{}:{}:{:?}\n", m.half.0, m.channels, m.index_map));
        }
    }
    hex::encode(h.finalize())
}

/// Smallest width a group may be pruned to.
pub fn group_min_keep(group: &Group, min_keep: usize) -> usize {
    if group.feeds_output {
        min_keep.max(2)
    } else {
        min_keep.max(1)
    }
}

/// Channel ranges of a half-node that must each keep at least one channel:
/// the pieces of a split output, the parts of a concat input, otherwise the
/// whole half.
fn segments<T: Scalar>(ir: &NetworkIR<T>, h: HalfId) -> Vec<Range<usize>> {
    let sizes = match (&ir.components[h.component()].kind, h.side()) {
        (ComponentKind::Split { sizes }, Side::Output) | (ComponentKind::Concat { sizes }, Side::Input) => sizes.clone(),
        _ => vec![ir.channels(h)],
    };
    let mut start = 0;
    sizes
        .into_iter()
        .map(|s| {
            start += s;
            start - s..start
        })
        .collect()
}

/// Local channels removed from every half-node by `plan`.
fn removals<T: Scalar>(ir: &NetworkIR<T>, groups: &[Group], plan: &PrunePlan) -> Result<Vec<BTreeSet<usize>>> {
    let mut out = vec![BTreeSet::new(); ir.half_count()];
    let mut seen = BTreeSet::new();
    for e in &plan.groups {
        let g = groups
            .get(e.group)
            .ok_or_else(|| Error::Plan(format!("group {} does not exist ({} groups)", e.group, groups.len())))?;
        if !seen.insert(e.group) {
            return Err(Error::Plan(format!("group {} listed twice", e.group)));
        }
        if e.indices.is_empty() {
            continue;
        }
        if !g.prunable {
            return Err(Error::Plan(format!("group {} touches the network input or output and cannot be pruned", g.id)));
        }
        let set: BTreeSet<usize> = e.indices.iter().copied().collect();
        if set.len() != e.indices.len() {
            return Err(Error::Plan(format!("group {} lists an index twice", g.id)));
        }
        if let Some(&k) = set.iter().find(|&&k| k >= g.width) {
            return Err(Error::Plan(format!("index {k} outside group {} of width {}", g.id, g.width)));
        }
        let keep = group_min_keep(g, plan.min_keep);
        if g.width - set.len() < keep {
            return Err(Error::Plan(format!(
                "group {} would keep {} of {} indices, fewer than min_keep {keep}",
                g.id,
                g.width - set.len(),
                g.width
            )));
        }
        for m in &g.members {
            let r = &mut out[m.half.index()];
            for &k in &set {
                r.extend(m.local(k).iter().copied());
            }
            if segments(ir, m.half).iter().any(|seg| r.range(seg.clone()).count() >= seg.len()) {
                return Err(Error::Plan(format!("group {} would remove every channel of {}", g.id, ir.half_label(m.half))));
            }
        }
    }
    Ok(out)
}

fn shrink_sizes(sizes: &[usize], removed: &BTreeSet<usize>) -> Vec<usize> {
    let mut start = 0;
    sizes
        .iter()
        .map(|&s| {
            let gone = removed.range(start..start + s).count();
            start += s;
            s - gone
        })
        .collect()
}

/// Removes every member slice selected by `plan`. `groups` must be the
/// groups of `ir`; a plan made for a different group structure is rejected.
pub fn prune<T: Scalar>(ir: &NetworkIR<T>, groups: &[Group], plan: &PrunePlan) -> Result<NetworkIR<T>> {
    if plan.signature != group_signature(groups) {
        return Err(Error::Plan("plan was made for a different network (group signature mismatch)".into()));
    }
    let rem = removals(ir, groups, plan)?;
    let mut out = ir.clone();
    for (ci, c) in ir.components.iter().enumerate() {
        let rin = &rem[HalfId::new(ci, Side::Input).index()];
        let rout = &rem[HalfId::new(ci, Side::Output).index()];
        if rin.is_empty() && rout.is_empty() {
            continue;
        }
        for side in [Side::Input, Side::Output] {
            let r = if side == Side::Input { rin } else { rout };
            if r.is_empty() {
                continue;
            }
            let idx: Vec<usize> = r.iter().copied().collect();
            for s in owned_slices(ir, HalfId::new(ci, side)) {
                let w = out.weights.get_mut(&s.param).ok_or_else(|| Error::Plan(format!("missing parameter `{}`", s.param)))?;
                *w = w.remove_indices(s.axis, &idx);
            }
        }
        let nc = &mut out.components[ci];
        nc.in_channels -= rin.len();
        nc.out_channels -= rout.len();
        match &mut nc.kind {
            ComponentKind::Conv2d { groups: g, .. } if *g > 1 => {
                let out_block = c.out_channels / *g;
                *g -= rout.len() / out_block;
            }
            ComponentKind::Concat { sizes } => *sizes = shrink_sizes(sizes, rin),
            ComponentKind::Split { sizes } => *sizes = shrink_sizes(sizes, rin),
            _ => {}
        }
    }
    out.validate().map_err(Error::Validation)?;
    Ok(out)
}

/// `MACs(base) / MACs(pruned)`.
pub fn speedup<T: Scalar>(base: &NetworkIR<T>, pruned: &NetworkIR<T>, input_shape: &[usize]) -> Result<f64> {
    let b = count_macs(base, input_shape)?;
    let p = count_macs(pruned, input_shape)?;
    if p == 0 {
        return Err(Error::Plan("pruned network has no multiply-accumulates".into()));
    }
    Ok(b as f64 / p as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneMode {
    /// The same ratio in every group.
    Uniform,
    /// Lowest relative scores across all groups until a MACs target is met.
    Learned,
}

impl std::str::FromStr for PruneMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(PruneMode::Uniform),
            "learned" => Ok(PruneMode::Learned),
            _ => Err(Error::Config(format!("unknown prune mode `{s}` (expected uniform or learned)"))),
        }
    }
}

impl std::fmt::Display for PruneMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PruneMode::Uniform => "uniform",
            PruneMode::Learned => "learned",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneConfig {
    pub ratio: f64,
    pub mode: PruneMode,
    pub strategy: Strategy,
    /// TopN size for relative scores; `None` means half the group width.
    pub topn: Option<usize>,
    pub min_keep: usize,
    /// Learned mode only: stop once this speedup is reached. Defaults to the
    /// speedup of the uniform plan at `ratio`.
    pub target_speedup: Option<f64>,
    pub seed: u64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            ratio: 0.5,
            mode: PruneMode::Uniform,
            strategy: Strategy::FullGrouping,
            topn: None,
            min_keep: 1,
            target_speedup: None,
            seed: 0,
        }
    }
}

impl PruneConfig {
    fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.ratio) {
            return Err(Error::Config(format!("prune ratio {} outside [0, 1)", self.ratio)));
        }
        if let Some(s) = self.target_speedup {
            if !(s >= 1.0 && s.is_finite()) {
                return Err(Error::Config(format!("target speedup {s} must be >= 1")));
            }
        }
        if self.topn == Some(0) {
            return Err(Error::Config("topn must be positive".into()));
        }
        Ok(())
    }
}

/// Remaining channels per half-node while a plan is assembled.
struct Budget<'a> {
    groups: &'a [Group],
    remaining: Vec<usize>,
    segments: Vec<Vec<Range<usize>>>,
    /// Remaining channels per segment of each half-node.
    seg_left: Vec<Vec<usize>>,
    kept: Vec<usize>,
    min_keep: usize,
}

impl<'a> Budget<'a> {
    fn new<T: Scalar>(ir: &NetworkIR<T>, groups: &'a [Group], min_keep: usize) -> Self {
        let segments: Vec<Vec<Range<usize>>> = (0..ir.half_count()).map(|h| segments(ir, HalfId(h))).collect();
        Self {
            groups,
            remaining: (0..ir.half_count()).map(|h| ir.channels(HalfId(h))).collect(),
            seg_left: segments.iter().map(|s| s.iter().map(|r| r.len()).collect()).collect(),
            segments,
            kept: groups.iter().map(|g| g.width).collect(),
            min_keep,
        }
    }

    fn hits(&self, h: HalfId, locals: &[usize]) -> Vec<usize> {
        let segs = &self.segments[h.index()];
        let mut n = vec![0; segs.len()];
        for &i in locals {
            if let Some(s) = segs.iter().position(|r| r.contains(&i)) {
                n[s] += 1;
            }
        }
        n
    }

    fn allows(&self, g: usize, k: usize) -> bool {
        let group = &self.groups[g];
        group.prunable
            && self.kept[g] > group_min_keep(group, self.min_keep)
            && group.members.iter().all(|m| {
                let left = &self.seg_left[m.half.index()];
                self.hits(m.half, m.local(k)).iter().zip(left).all(|(&n, &l)| n == 0 || l > n)
            })
    }

    fn take(&mut self, g: usize, k: usize) {
        self.kept[g] -= 1;
        for m in &self.groups[g].members {
            let hits = self.hits(m.half, m.local(k));
            for (l, n) in self.seg_left[m.half.index()].iter_mut().zip(hits) {
                *l -= n;
            }
            self.remaining[m.half.index()] -= m.local(k).len();
        }
    }
}

/// MACs as a function of the remaining channels of each half-node.
struct MacModel {
    /// (component, spatial factor, grouped-conv input block or 0)
    layers: Vec<(usize, u64, u64)>,
}

impl MacModel {
    fn new<T: Scalar>(ir: &NetworkIR<T>) -> Result<Self> {
        let shapes = infer_shapes_from(ir, &ir.input_shape).map_err(Error::Validation)?;
        let layers = ir
            .components
            .iter()
            .enumerate()
            .filter_map(|(ci, c)| match c.kind {
                ComponentKind::Linear { .. } => Some((ci, 1, 0)),
                ComponentKind::Conv2d { kernel, groups, .. } => {
                    let spatial: usize = shapes[ci][1..].iter().product();
                    let block = if groups > 1 { c.in_channels / groups } else { 0 };
                    Some((ci, (kernel * kernel * spatial) as u64, block as u64))
                }
                _ => None,
            })
            .collect();
        Ok(Self { layers })
    }

    fn macs(&self, remaining: &[usize]) -> u64 {
        self.layers
            .iter()
            .map(|&(ci, f, block)| {
                let cin = remaining[2 * ci] as u64;
                let cout = remaining[2 * ci + 1] as u64;
                if block > 0 {
                    block * cout * f
                } else {
                    cin * cout * f
                }
            })
            .sum()
    }
}

/// Scores used to rank indices of every group under `strategy`; random
/// scores for the random strategy. Non-prunable groups get an empty vector.
fn ranking_scores<T: Scalar>(ir: &NetworkIR<T>, groups: &[Group], cfg: &PruneConfig) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    groups
        .iter()
        .map(|g| {
            if !g.prunable || g.width == 0 {
                return Ok(Vec::new());
            }
            if cfg.strategy == Strategy::Random {
                return Ok((0..g.width).map(|_| rng.gen::<f64>()).collect());
            }
            let imp = strategy_importance(ir, g, cfg.strategy);
            let n = cfg.topn.unwrap_or_else(|| default_topn(g.width)).min(g.width);
            relative_score(&imp.scores, n)
        })
        .collect()
}

fn uniform_plan(groups: &[Group], scores: &[Vec<f64>], budget: &mut Budget, ratio: f64) -> Result<(Vec<PlanEntry>, Vec<usize>)> {
    let mut entries = Vec::new();
    let mut clamped = Vec::new();
    for (g, sc) in groups.iter().zip(scores) {
        if sc.is_empty() {
            continue;
        }
        let sel = select_prune_indices(sc, Selection::Ratio(ratio), group_min_keep(g, budget.min_keep))?;
        let mut order: Vec<usize> = (0..g.width).collect();
        order.sort_by(|&a, &b| sc[a].total_cmp(&sc[b]).then(a.cmp(&b)));
        let mut picked = Vec::new();
        for k in order {
            if picked.len() == sel.indices.len() {
                break;
            }
            if budget.allows(g.id, k) {
                budget.take(g.id, k);
                picked.push(k);
            }
        }
        if sel.clamped || picked.len() < sel.requested {
            clamped.push(g.id);
        }
        picked.sort_unstable();
        if !picked.is_empty() {
            entries.push(PlanEntry { group: g.id, indices: picked });
        }
    }
    Ok((entries, clamped))
}

/// Builds a plan for `ir` according to `cfg`.
pub fn make_plan<T: Scalar>(ir: &NetworkIR<T>, groups: &[Group], cfg: &PruneConfig) -> Result<(PrunePlan, Vec<usize>)> {
    cfg.validate()?;
    let scores = ranking_scores(ir, groups, cfg)?;
    let mut budget = Budget::new(ir, groups, cfg.min_keep);
    let (entries, clamped) = match cfg.mode {
        PruneMode::Uniform => uniform_plan(groups, &scores, &mut budget, cfg.ratio)?,
        PruneMode::Learned => {
            let model = MacModel::new(ir)?;
            let base = model.macs(&budget.remaining);
            let target = match cfg.target_speedup {
                Some(s) => (base as f64 / s).ceil() as u64,
                None => {
                    let mut trial = Budget::new(ir, groups, cfg.min_keep);
                    uniform_plan(groups, &scores, &mut trial, cfg.ratio)?;
                    model.macs(&trial.remaining)
                }
            };
            let mut cands: Vec<(f64, usize, usize)> = scores
                .iter()
                .enumerate()
                .flat_map(|(g, sc)| sc.iter().enumerate().map(move |(k, &s)| (s, g, k)))
                .collect();
            cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut picked: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            let mut macs = base;
            for (_, g, k) in cands {
                if macs <= target {
                    break;
                }
                if budget.allows(g, k) {
                    budget.take(g, k);
                    picked.entry(g).or_default().push(k);
                    macs = model.macs(&budget.remaining);
                }
            }
            let entries = picked
                .into_iter()
                .map(|(group, mut indices)| {
                    indices.sort_unstable();
                    PlanEntry { group, indices }
                })
                .collect();
            (entries, Vec::new())
        }
    };
    let plan = PrunePlan {
        format: PLAN_FORMAT.into(),
        signature: group_signature(groups),
        min_keep: cfg.min_keep,
        provenance: Provenance {
            criterion: format!("{}/{}/ratio={}", cfg.strategy, cfg.mode, fmt_f64(cfg.ratio)),
            config_hash: cfg.hash(),
        },
        groups: entries,
    };
    Ok((plan, clamped))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupWidth {
    pub group: usize,
    pub components: String,
    pub before: usize,
    pub after: usize,
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub base_macs: u64,
    pub pruned_macs: u64,
    pub speedup: f64,
    pub base_params: usize,
    pub pruned_params: usize,
    pub groups: Vec<GroupWidth>,
}

impl PruneReport {
    /// One summary line in the `MACs base -> pruned, speed up` style.
    pub fn summary(&self) -> String {
        format!(
            "MACs {} -> {}  params {} -> {}  speed up {:.2}x",
            self.base_macs, self.pruned_macs, self.base_params, self.pruned_params, self.speedup
        )
    }

    pub fn to_text(&self) -> String {
        let mut s = self.summary();
        s.push('\n');
        for g in &self.groups {
            let _ = writeln!(
                s,
                "group {:<3} {:>4} -> {:<4}{} [{}]",
                g.group,
                g.before,
                g.after,
                if g.clamped { " (clamped by min_keep)" } else { "" },
                g.components
            );
        }
        s
    }

    /// `group,components,before,after,clamped` rows followed by a totals row
    /// with MACs and speedup in the `before`/`after` columns.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = ["group", "components", "before", "after", "clamped"].map(String::from).to_vec();
        let mut rows: Vec<Vec<String>> = self
            .groups
            .iter()
            .map(|g| {
                vec![g.group.to_string(), g.components.clone(), g.before.to_string(), g.after.to_string(), g.clamped.to_string()]
            })
            .collect();
        rows.push(vec!["macs".into(), String::new(), self.base_macs.to_string(), self.pruned_macs.to_string(), String::new()]);
        rows.push(vec!["speedup".into(), String::new(), String::new(), fmt_f64(self.speedup), String::new()]);
        report::write_csv(path, &header, &rows)
    }
}

pub fn prune_report<T: Scalar>(
    base: &NetworkIR<T>,
    pruned: &NetworkIR<T>,
    groups: &[Group],
    plan: &PrunePlan,
    clamped: &[usize],
) -> Result<PruneReport> {
    let removed: BTreeMap<usize, usize> = plan.groups.iter().map(|e| (e.group, e.indices.len())).collect();
    Ok(PruneReport {
        base_macs: count_macs(base, &base.input_shape)?,
        pruned_macs: count_macs(pruned, &pruned.input_shape)?,
        speedup: speedup(base, pruned, &base.input_shape)?,
        base_params: base.param_count(),
        pruned_params: pruned.param_count(),
        groups: groups
            .iter()
            .filter(|g| g.prunable && g.width > 0)
            .map(|g| GroupWidth {
                group: g.id,
                components: g.components().iter().map(|&c| base.components[c].id.as_str()).collect::<Vec<_>>().join(" "),
                before: g.width,
                after: g.width - removed.get(&g.id).copied().unwrap_or(0),
                clamped: clamped.contains(&g.id),
            })
            .collect(),
    })
}

#[derive(Debug, Clone)]
pub struct PruneOutcome<T> {
    pub ir: NetworkIR<T>,
    pub plan: PrunePlan,
    pub report: PruneReport,
}

/// Scores, plans and prunes in one go.
pub fn end_to_end_prune<T: Scalar>(ir: &NetworkIR<T>, groups: &[Group], cfg: &PruneConfig) -> Result<PruneOutcome<T>> {
    let (plan, clamped) = make_plan(ir, groups, cfg)?;
    let pruned = prune(ir, groups, &plan)?;
    let report = prune_report(ir, &pruned, groups, &plan, &clamped)?;
    Ok(PruneOutcome { ir: pruned, plan, report })
}
