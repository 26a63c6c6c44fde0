//! Network intermediate representation.
//!
//! A network is an ordered list of components wired by edges from a
//! producer's output to a consumer's input. Every component is split into an
//! input half and an output half; dependency analysis works on those halves.
//! Parameters live in a flat name-to-tensor store keyed `"<component>.<param>"`.

mod builder;
mod format;
mod scheme;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use builder::NetworkBuilder;
pub use format::{decompose, serialize, serialize_to_bytes, FORMAT_NAME, FORMAT_VERSION};
pub use scheme::{owned_slices, scheme_of, ParamSlice, PruningScheme};
pub use validate::{infer_shapes, infer_shapes_from, Violation};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryOp {
    Add,
    Mul,
}

/// Operation performed by a component together with its structural attributes.
///
/// Channel counts are stored on [`Component`]; the kind only holds what the
/// channel counts cannot express.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ComponentKind {
    Linear {
        bias: bool,
    },
    Conv2d {
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        bias: bool,
    },
    BatchNorm,
    ElementwiseBinary {
        op: BinaryOp,
    },
    /// Channel concatenation; `sizes[i]` is the width of the i-th input.
    Concat {
        sizes: Vec<usize>,
    },
    /// Channel split; consumers select a piece through [`Edge::piece`].
    Split {
        sizes: Vec<usize>,
    },
    /// `[C, H, W]` to `[C * spatial_size]`, channel-major.
    Flatten {
        spatial_size: usize,
    },
    /// ReLU.
    Activation,
    /// Non-overlapping average pooling with a square window.
    Pool {
        kernel: usize,
    },
}

impl ComponentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ComponentKind::Linear { .. } => "linear",
            ComponentKind::Conv2d { .. } => "conv2d",
            ComponentKind::BatchNorm => "batch_norm",
            ComponentKind::ElementwiseBinary { .. } => "elementwise_binary",
            ComponentKind::Concat { .. } => "concat",
            ComponentKind::Split { .. } => "split",
            ComponentKind::Flatten { .. } => "flatten",
            ComponentKind::Activation => "activation",
            ComponentKind::Pool { .. } => "pool",
        }
    }

    pub fn is_parameterized(&self) -> bool {
        matches!(self, ComponentKind::Linear { .. } | ComponentKind::Conv2d { .. } | ComponentKind::BatchNorm)
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, ComponentKind::Conv2d { .. })
    }

    /// Components whose input and output halves are pruned together.
    pub fn couples_halves(&self) -> bool {
        match self {
            ComponentKind::Linear { .. } => false,
            ComponentKind::Conv2d { groups, .. } => *groups > 1,
            _ => true,
        }
    }

    /// Number of inputs the component expects, `None` when variable.
    pub fn arity(&self) -> Option<usize> {
        match self {
            ComponentKind::ElementwiseBinary { .. } => Some(2),
            ComponentKind::Concat { sizes } => Some(sizes.len()),
            _ => Some(1),
        }
    }

    /// Local parameter names and shapes for the given channel counts.
    pub fn param_shapes(&self, in_channels: usize, out_channels: usize) -> Vec<(&'static str, Vec<usize>)> {
        match *self {
            ComponentKind::Linear { bias } => {
                let mut v = vec![("weight", vec![out_channels, in_channels])];
                if bias {
                    v.push(("bias", vec![out_channels]));
                }
                v
            }
            ComponentKind::Conv2d { kernel, groups, bias, .. } => {
                let per_group = if groups == 0 { 0 } else { in_channels / groups };
                let mut v = vec![("weight", vec![out_channels, per_group, kernel, kernel])];
                if bias {
                    v.push(("bias", vec![out_channels]));
                }
                v
            }
            ComponentKind::BatchNorm => vec![
                ("weight", vec![out_channels]),
                ("bias", vec![out_channels]),
                ("running_mean", vec![out_channels]),
                ("running_var", vec![out_channels]),
            ],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Component {
    pub id: String,
    pub kind: ComponentKind,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Component {
    pub fn param_name(&self, local: &str) -> String {
        format!("{}.{}", self.id, local)
    }

    pub fn param_names(&self) -> Vec<String> {
        self.kind
            .param_shapes(self.in_channels, self.out_channels)
            .into_iter()
            .map(|(n, _)| self.param_name(n))
            .collect()
    }

    pub fn channels(&self, side: Side) -> usize {
        match side {
            Side::Input => self.in_channels,
            Side::Output => self.out_channels,
        }
    }
}

/// Connection from `from`'s output half to `to`'s input half.
///
/// Edges into a component are ordered by their position in
/// [`NetworkIR::edges`]; for a concat that order is the concatenation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    /// Piece index when `from` is a split.
    pub piece: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Input,
    Output,
}

/// Index of a half-node: `2 * component + side`, input half first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HalfId(pub usize);

impl HalfId {
    pub fn new(component: usize, side: Side) -> Self {
        HalfId(2 * component + usize::from(side == Side::Output))
    }

    pub fn component(self) -> usize {
        self.0 / 2
    }

    pub fn side(self) -> Side {
        if self.0 % 2 == 0 {
            Side::Input
        } else {
            Side::Output
        }
    }

    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for HalfId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HalfNode {
    pub node_id: HalfId,
    pub component: usize,
    pub side: Side,
    pub channels: usize,
    pub scheme_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkIR<T> {
    pub components: Vec<Component>,
    pub edges: Vec<Edge>,
    /// Per-sample input shape, without the batch dimension.
    pub input_shape: Vec<usize>,
    pub weights: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> NetworkIR<T> {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn half_count(&self) -> usize {
        2 * self.components.len()
    }

    pub fn component_index(&self, id: &str) -> Option<usize> {
        self.components.iter().position(|c| c.id == id)
    }

    pub fn half(&self, id: HalfId) -> HalfNode {
        let c = &self.components[id.component()];
        HalfNode {
            node_id: id,
            component: id.component(),
            side: id.side(),
            channels: c.channels(id.side()),
            scheme_id: scheme_of(self, id).id,
        }
    }

    pub fn halves(&self) -> impl Iterator<Item = HalfNode> + '_ {
        (0..self.half_count()).map(move |i| self.half(HalfId(i)))
    }

    pub fn half_label(&self, id: HalfId) -> String {
        let side = match id.side() {
            Side::Input => "in",
            Side::Output => "out",
        };
        format!("{}.{}", self.components[id.component()].id, side)
    }

    pub fn channels(&self, id: HalfId) -> usize {
        self.components[id.component()].channels(id.side())
    }

    /// Incoming edges of `component`, in input order.
    pub fn inputs_of(&self, component: usize) -> impl Iterator<Item = &Edge> + '_ {
        self.edges.iter().filter(move |e| e.to == component)
    }

    pub fn outputs_of(&self, component: usize) -> impl Iterator<Item = &Edge> + '_ {
        self.edges.iter().filter(move |e| e.from == component)
    }

    /// The component fed by the network input (the one with no incoming edges).
    pub fn entry(&self) -> Option<usize> {
        let mut it = (0..self.len()).filter(|&c| self.inputs_of(c).next().is_none());
        match (it.next(), it.next()) {
            (Some(c), None) => Some(c),
            _ => None,
        }
    }

    /// The component producing the network output (the one with no consumers).
    pub fn exit(&self) -> Option<usize> {
        let mut it = (0..self.len()).filter(|&c| self.outputs_of(c).next().is_none());
        match (it.next(), it.next()) {
            (Some(c), None) => Some(c),
            _ => None,
        }
    }

    /// Channel range of the producer's output carried by `edge`.
    pub fn edge_source_range(&self, edge: &Edge) -> std::ops::Range<usize> {
        let producer = &self.components[edge.from];
        match (&producer.kind, edge.piece) {
            (ComponentKind::Split { sizes }, Some(p)) if p < sizes.len() => {
                let start: usize = sizes[..p].iter().sum();
                start..start + sizes[p]
            }
            _ => 0..producer.out_channels,
        }
    }

    /// Input slot of the edge at `edge_index` among its consumer's inputs.
    pub fn input_slot(&self, edge_index: usize) -> usize {
        let to = self.edges[edge_index].to;
        self.edges[..edge_index].iter().filter(|e| e.to == to).count()
    }

    /// Channel range of the consumer's input filled by the edge at `edge_index`.
    pub fn edge_target_range(&self, edge_index: usize) -> std::ops::Range<usize> {
        let edge = &self.edges[edge_index];
        let consumer = &self.components[edge.to];
        if let ComponentKind::Concat { sizes } = &consumer.kind {
            let slot = self.input_slot(edge_index);
            if slot < sizes.len() {
                let start: usize = sizes[..slot].iter().sum();
                return start..start + sizes[slot];
            }
        }
        0..consumer.in_channels
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.weights.get(name)
    }

    /// Names of parameters updated by gradient descent (BN running stats excluded).
    pub fn trainable_params(&self) -> Vec<String> {
        self.components
            .iter()
            .flat_map(|c| {
                c.kind
                    .param_shapes(c.in_channels, c.out_channels)
                    .into_iter()
                    .filter(|(n, _)| !n.starts_with("running_"))
                    .map(|(n, _)| c.param_name(n))
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        validate::validate(self)
    }

    /// Topological order of components; `None` if the edge set has a cycle.
    pub fn topo_order(&self) -> Option<Vec<usize>> {
        validate::topo_order(self).ok()
    }

    pub fn cast<U: Scalar>(&self) -> NetworkIR<U> {
        NetworkIR {
            components: self.components.clone(),
            edges: self.edges.clone(),
            input_shape: self.input_shape.clone(),
            weights: self.weights.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.values().map(|t| t.len()).sum()
    }
}
