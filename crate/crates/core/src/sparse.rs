//! Group-level sparse training.
//!
//! The task loss is augmented with `R = lambda * sum_k gamma_k * I_k` per
//! regularized group, where `gamma_k = 2^(alpha (I_max - I_k) / (I_max - I_min))`
//! pushes the least important indices hardest.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::engine::{self, cross_entropy, forward, update_running_stats, Gradients, Mode, Sgd};
use crate::error::{Error, Result};
use crate::grouping::Group;
use crate::importance::{group_l2_importance, scoped_slices, GroupImportance, Strategy};
use crate::ir::{owned_slices, ComponentKind, NetworkIR, Side};
use crate::report::{self, fmt_f64};
use crate::scalar::Scalar;

fn default_alpha() -> f64 {
    4.0
}
fn default_reg_weight() -> f64 {
    1e-4
}
fn default_epochs() -> usize {
    10
}
fn default_lr() -> f64 {
    0.05
}
fn default_momentum() -> f64 {
    0.9
}
fn default_batch_size() -> usize {
    32
}
fn default_refresh() -> usize {
    100
}
fn default_strategy() -> Strategy {
    Strategy::FullGrouping
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparseConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_reg_weight")]
    pub reg_weight: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Optimizer steps between gamma refreshes.
    #[serde(default = "default_refresh")]
    pub refresh_period: usize,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SparseConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl SparseConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be finite and >= 0, got {}", self.alpha));
        }
        if !(self.reg_weight >= 0.0 && self.reg_weight.is_finite()) {
            return bad(format!("reg_weight must be finite and >= 0, got {}", self.reg_weight));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 || self.refresh_period == 0 {
            return bad("batch_size and refresh_period must be positive".into());
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `gamma_k = 2^(alpha (I_max - I_k) / (I_max - I_min))`, or 1 everywhere
/// when all scores are equal.
pub fn compute_gamma(scores: &[f64], alpha: f64) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let span = max - min;
    if !(span > 0.0) {
        return vec![1.0; scores.len()];
    }
    scores.iter().map(|&i| 2f64.powf((alpha * (max - i) / span).clamp(0.0, alpha))).collect()
}

/// One parameter slice under regularization, with its own index map from
/// the regularized group's indices to slice positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegTerm {
    pub param: String,
    pub axis: usize,
    pub index_map: Vec<Vec<usize>>,
}

/// A set of slices sparsified together under one gamma vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegGroup {
    pub group: usize,
    pub width: usize,
    pub terms: Vec<RegTerm>,
}

/// Regularized groups for `strategy`. Only prunable groups are regularized.
///
/// Full grouping and conv-only regularize a group's scoped slices jointly.
/// No-grouping gives each conv or linear output layer its own pseudo-group
/// over its local channels. Random sparsifies nothing.
pub fn reg_groups<T: Scalar>(ir: &NetworkIR<T>, groups: &[Group], strategy: Strategy) -> Vec<RegGroup> {
    let mut out = Vec::new();
    for g in groups.iter().filter(|g| g.prunable && g.width > 0) {
        match strategy {
            Strategy::Random => {}
            Strategy::FullGrouping | Strategy::ConvOnly => {
                let terms: Vec<RegTerm> = scoped_slices(ir, g, strategy)
                    .into_iter()
                    .map(|ms| RegTerm {
                        param: ms.slice.param,
                        axis: ms.slice.axis,
                        index_map: g.members[ms.member].index_map.clone(),
                    })
                    .collect();
                if !terms.is_empty() {
                    out.push(RegGroup { group: g.id, width: g.width, terms });
                }
            }
            Strategy::NoGrouping => {
                for m in &g.members {
                    let kind = &ir.components[m.half.component()].kind;
                    let layer = kind.is_conv() || matches!(kind, ComponentKind::Linear { .. });
                    if !layer || m.half.side() != Side::Output {
                        continue;
                    }
                    let terms: Vec<RegTerm> = owned_slices(ir, m.half)
                        .into_iter()
                        .filter(|s| s.trainable)
                        .map(|s| RegTerm { param: s.param, axis: s.axis, index_map: (0..m.channels).map(|i| vec![i]).collect() })
                        .collect();
                    if !terms.is_empty() {
                        out.push(RegGroup { group: g.id, width: m.channels, terms });
                    }
                }
            }
        }
    }
    out
}

/// `I_k` of a regularized group.
pub fn reg_importance<T: Scalar>(ir: &NetworkIR<T>, rg: &RegGroup) -> Vec<f64> {
    let mut scores = vec![0.0; rg.width];
    for t in &rg.terms {
        let Some(w) = ir.weights.get(&t.param) else { continue };
        for (k, locals) in t.index_map.iter().enumerate() {
            for &i in locals {
                scores[k] += w.slice_sum_sq(t.axis, i).to_f64_lossy();
            }
        }
    }
    scores
}

/// `lambda * sum_g sum_k gamma_gk I_gk`.
pub fn regularizer_value<T: Scalar>(ir: &NetworkIR<T>, rgs: &[RegGroup], gammas: &[Vec<f64>], lambda: f64) -> f64 {
    rgs.iter()
        .zip(gammas)
        .map(|(rg, gam)| reg_importance(ir, rg).iter().zip(gam).map(|(i, g)| i * g).sum::<f64>())
        .sum::<f64>()
        * lambda
}

/// Adds `2 lambda gamma_k w[k]` to the gradient of every regularized slice.
pub fn regularizer_grad<T: Scalar>(
    ir: &NetworkIR<T>,
    rgs: &[RegGroup],
    gammas: &[Vec<f64>],
    lambda: f64,
    grads: &mut Gradients<T>,
) {
    if lambda == 0.0 {
        return;
    }
    for (rg, gam) in rgs.iter().zip(gammas) {
        for t in &rg.terms {
            let Some(w) = ir.weights.get(&t.param) else { continue };
            let g = grads.entry(t.param.clone()).or_insert_with(|| crate::Tensor::zeros(w.shape()));
            for (k, locals) in t.index_map.iter().enumerate() {
                let c = T::lit(2.0 * lambda * gam[k]);
                for &i in locals {
                    g.slice_axpy(w, t.axis, i, c);
                }
            }
        }
    }
}

pub fn refresh_gammas<T: Scalar>(ir: &NetworkIR<T>, rgs: &[RegGroup], alpha: f64) -> Vec<Vec<f64>> {
    rgs.iter().map(|rg| compute_gamma(&reg_importance(ir, rg), alpha)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    /// Full-group importance of every prunable group at the end of the epoch.
    pub groups: Vec<GroupImportance>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparsityTrace {
    pub epochs: Vec<EpochRecord>,
}

impl SparsityTrace {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// Indices whose importance is below `rel * max` of their group.
    pub fn near_zero_count(record: &EpochRecord, rel: f64) -> usize {
        near_zero_count(&record.groups, rel)
    }

    /// `epoch,group,k,importance` rows.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = ["epoch", "group", "k", "importance"].map(String::from).to_vec();
        let mut rows = Vec::new();
        for e in &self.epochs {
            for g in &e.groups {
                for (k, &i) in g.scores.iter().enumerate() {
                    rows.push(vec![e.epoch.to_string(), g.group.to_string(), k.to_string(), fmt_f64(i)]);
                }
            }
        }
        report::write_csv(path, &header, &rows)
    }
}

pub fn near_zero_count(groups: &[GroupImportance], rel: f64) -> usize {
    groups
        .iter()
        .map(|g| {
            let max = g.scores.iter().copied().fold(0.0, f64::max);
            g.scores.iter().filter(|&&i| i < rel * max).count()
        })
        .sum()
}

/// Full-group importance of every prunable group.
pub fn prunable_importance<T: Scalar>(ir: &NetworkIR<T>, groups: &[Group]) -> Vec<GroupImportance> {
    groups.iter().filter(|g| g.prunable && g.width > 0).map(|g| group_l2_importance(ir, g)).collect()
}

/// Classification accuracy in evaluation mode.
pub fn accuracy<T: Scalar>(ir: &NetworkIR<T>, data: &Dataset<T>) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("empty dataset".into()));
    }
    let mut correct = 0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(256) {
        let (x, y) = data.batch(chunk);
        let pred = engine::argmax_rows(&engine::predict(ir, &x)?);
        correct += pred.iter().zip(&y).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / data.len() as f64)
}

fn check_data<T: Scalar>(ir: &NetworkIR<T>, data: &Dataset<T>) -> Result<()> {
    if data.sample_shape() != ir.input_shape.as_slice() {
        return Err(Error::Shape(format!(
            "dataset samples of shape {:?}, network expects {:?}",
            data.sample_shape(),
            ir.input_shape
        )));
    }
    if data.is_empty() {
        return Err(Error::Empty("empty dataset".into()));
    }
    Ok(())
}

/// Task loss plus the group regularizer, optimised by momentum SGD.
///
/// `groups` must describe `ir`. Gamma is recomputed every
/// `cfg.refresh_period` steps; batch order is drawn from `cfg.seed`.
pub fn train_sparse<T: Scalar>(
    ir: &mut NetworkIR<T>,
    groups: &[Group],
    data: &Dataset<T>,
    cfg: &SparseConfig,
) -> Result<SparsityTrace> {
    cfg.validate()?;
    check_data(ir, data)?;
    let rgs = reg_groups(ir, groups, cfg.strategy);
    let mut gammas = refresh_gammas(ir, &rgs, cfg.alpha);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Sgd::new(T::lit(cfg.lr), T::lit(cfg.momentum));
    let mut trace = SparsityTrace::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = data.batch(chunk);
            let fwd = forward(ir, &x, Mode::Train)?;
            let (loss, dy) = cross_entropy(&fwd.output, &y)?;
            let loss = loss.to_f64_lossy();
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step, loss });
            }
            loss_sum += loss * chunk.len() as f64;
            correct += engine::argmax_rows(&fwd.output).iter().zip(&y).filter(|(p, l)| p == l).count();
            let mut tape = fwd.tape.expect("training forward records a tape");
            let mut grads = tape.backward(ir, &dy)?;
            regularizer_grad(ir, &rgs, &gammas, cfg.reg_weight, &mut grads);
            opt.step(ir, &grads);
            update_running_stats(ir, &tape);
            step += 1;
            if step % cfg.refresh_period == 0 {
                gammas = refresh_gammas(ir, &rgs, cfg.alpha);
            }
        }
        if ir.weights.values().any(|w| !w.is_finite()) {
            return Err(Error::Diverged { epoch, step, loss: f64::NAN });
        }
        trace.epochs.push(EpochRecord {
            epoch,
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
            groups: prunable_importance(ir, groups),
        });
    }
    Ok(trace)
}
