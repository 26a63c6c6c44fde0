//! Pruning schemes: which parameter slices disappear when a half-node loses
//! one of its channels.

use super::{ComponentKind, HalfId, NetworkIR, Side};
use crate::scalar::Scalar;

/// One parameter sliced along `axis` at the pruned channel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ParamSlice {
    pub param: String,
    pub axis: usize,
    /// False for buffers such as BN running statistics.
    pub trainable: bool,
}

impl ParamSlice {
    fn new(param: String, axis: usize) -> Self {
        Self { param, axis, trainable: true }
    }

    fn buffer(param: String, axis: usize) -> Self {
        Self { param, axis, trainable: false }
    }
}

#[derive(Debug, Clone, Eq)]
pub struct PruningScheme {
    pub id: String,
    pub owner: String,
    pub slices: Vec<ParamSlice>,
}

/// Two schemes are equal when they belong to the same component and slice
/// the same parameters along the same axes. The id is only a label.
impl PartialEq for PruningScheme {
    fn eq(&self, other: &Self) -> bool {
        self.owner == other.owner && self.slices == other.slices
    }
}

impl PruningScheme {
    pub fn is_pass_through(&self) -> bool {
        self.slices.is_empty()
    }
}

pub fn scheme_of<T: Scalar>(ir: &NetworkIR<T>, half: HalfId) -> PruningScheme {
    let c = &ir.components[half.component()];
    let p = |n: &str| c.param_name(n);
    let (tag, slices) = match (&c.kind, half.side()) {
        (ComponentKind::Linear { .. }, Side::Input) => ("in", vec![ParamSlice::new(p("weight"), 1)]),
        (ComponentKind::Conv2d { groups: 1, .. }, Side::Input) => ("in", vec![ParamSlice::new(p("weight"), 1)]),
        (ComponentKind::Linear { bias }, Side::Output) | (ComponentKind::Conv2d { groups: 1, bias, .. }, Side::Output) => {
            let mut v = vec![ParamSlice::new(p("weight"), 0)];
            if *bias {
                v.push(ParamSlice::new(p("bias"), 0));
            }
            ("out", v)
        }
        // Grouped convolution: removing a channel block on either side removes
        // the same filters, so both halves share one scheme.
        (ComponentKind::Conv2d { bias, .. }, _) => {
            let mut v = vec![ParamSlice::new(p("weight"), 0)];
            if *bias {
                v.push(ParamSlice::new(p("bias"), 0));
            }
            ("grouped", v)
        }
        (ComponentKind::BatchNorm, _) => (
            "channel",
            vec![
                ParamSlice::new(p("weight"), 0),
                ParamSlice::new(p("bias"), 0),
                ParamSlice::buffer(p("running_mean"), 0),
                ParamSlice::buffer(p("running_var"), 0),
            ],
        ),
        _ => ("pass", Vec::new()),
    };
    PruningScheme { id: format!("{}/{}", c.id, tag), owner: c.id.clone(), slices }
}

/// Slices a half-node is responsible for removing.
///
/// When both halves share a scheme the output half owns it, so each
/// parameter slice is attributed to exactly one half. Every owned slice is
/// indexed by the owning half's local channel.
pub fn owned_slices<T: Scalar>(ir: &NetworkIR<T>, half: HalfId) -> Vec<ParamSlice> {
    let c = &ir.components[half.component()];
    if c.kind.couples_halves() && half.side() == Side::Input {
        return Vec::new();
    }
    scheme_of(ir, half).slices
}
