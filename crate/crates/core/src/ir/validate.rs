use std::collections::VecDeque;
use std::fmt;

use super::{ComponentKind, NetworkIR};
use crate::scalar::Scalar;

/// A single structural problem found by [`NetworkIR::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Empty,
    DuplicateId(String),
    DanglingEdge { edge: usize },
    Cycle(Vec<String>),
    Entry(String),
    Exit(String),
    Attribute { component: String, message: String },
    Arity { component: String, expected: usize, found: usize },
    Channels { producer: String, consumer: String, produced: usize, expected: usize },
    Piece { producer: String, consumer: String, message: String },
    MissingParam(String),
    UnexpectedParam(String),
    ParamShape { param: String, expected: Vec<usize>, found: Vec<usize> },
    NonFinite(String),
    SpatialShape { component: String, message: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "no components"),
            Violation::DuplicateId(id) => write!(f, "duplicate component id `{id}`"),
            Violation::DanglingEdge { edge } => write!(f, "edge {edge} references an unknown component"),
            Violation::Cycle(ids) => write!(f, "cycle through components [{}]", ids.join(", ")),
            Violation::Entry(m) => write!(f, "network input: {m}"),
            Violation::Exit(m) => write!(f, "network output: {m}"),
            Violation::Attribute { component, message } => write!(f, "component `{component}`: {message}"),
            Violation::Arity { component, expected, found } => {
                write!(f, "component `{component}` expects {expected} inputs, has {found}")
            }
            Violation::Channels { producer, consumer, produced, expected } => write!(
                f,
                "channel mismatch between `{producer}` and `{consumer}`: {produced} produced, {expected} expected"
            ),
            Violation::Piece { producer, consumer, message } => {
                write!(f, "edge `{producer}` -> `{consumer}`: {message}")
            }
            Violation::MissingParam(p) => write!(f, "missing parameter `{p}`"),
            Violation::UnexpectedParam(p) => write!(f, "unexpected parameter `{p}`"),
            Violation::ParamShape { param, expected, found } => {
                write!(f, "parameter `{param}` has shape {found:?}, expected {expected:?}")
            }
            Violation::NonFinite(p) => write!(f, "parameter `{p}` contains non-finite values"),
            Violation::SpatialShape { component, message } => write!(f, "component `{component}`: {message}"),
        }
    }
}

pub(crate) fn topo_order<T: Scalar>(ir: &NetworkIR<T>) -> Result<Vec<usize>, Vec<usize>> {
    let n = ir.len();
    let mut indeg = vec![0usize; n];
    let mut succ = vec![Vec::new(); n];
    for e in &ir.edges {
        if e.from < n && e.to < n {
            indeg[e.to] += 1;
            succ[e.from].push(e.to);
        }
    }
    let mut queue: VecDeque<usize> = (0..n).filter(|&c| indeg[c] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(c) = queue.pop_front() {
        order.push(c);
        for &s in &succ[c] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                queue.push_back(s);
            }
        }
    }
    if order.len() == n {
        Ok(order)
    } else {
        Err((0..n).filter(|&c| indeg[c] > 0).collect())
    }
}

pub fn validate<T: Scalar>(ir: &NetworkIR<T>) -> Result<(), Vec<Violation>> {
    let mut v = Vec::new();
    if ir.is_empty() {
        return Err(vec![Violation::Empty]);
    }
    let n = ir.len();
    for (i, c) in ir.components.iter().enumerate() {
        if ir.components[..i].iter().any(|o| o.id == c.id) {
            v.push(Violation::DuplicateId(c.id.clone()));
        }
    }
    for (i, e) in ir.edges.iter().enumerate() {
        if e.from >= n || e.to >= n {
            v.push(Violation::DanglingEdge { edge: i });
        }
    }
    if !v.is_empty() {
        return Err(v);
    }

    if let Err(stuck) = topo_order(ir) {
        v.push(Violation::Cycle(stuck.iter().map(|&c| ir.components[c].id.clone()).collect()));
    }

    check_attributes(ir, &mut v);
    check_edges(ir, &mut v);
    check_params(ir, &mut v);

    if v.is_empty() {
        if let Err(mut s) = infer_shapes(ir) {
            v.append(&mut s);
        }
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

fn check_attributes<T: Scalar>(ir: &NetworkIR<T>, v: &mut Vec<Violation>) {
    for c in &ir.components {
        let bad = |m: String| Violation::Attribute { component: c.id.clone(), message: m };
        if c.in_channels == 0 || c.out_channels == 0 {
            v.push(bad("channel counts must be positive".into()));
            continue;
        }
        match &c.kind {
            ComponentKind::Linear { .. } => {}
            ComponentKind::Conv2d { kernel, stride, groups, .. } => {
                if *kernel == 0 || *stride == 0 {
                    v.push(bad("kernel and stride must be positive".into()));
                }
                if *groups == 0 || c.in_channels % groups != 0 || c.out_channels % groups != 0 {
                    v.push(bad(format!(
                        "groups {groups} must divide in_channels {} and out_channels {}",
                        c.in_channels, c.out_channels
                    )));
                }
            }
            ComponentKind::BatchNorm
            | ComponentKind::ElementwiseBinary { .. }
            | ComponentKind::Activation
            | ComponentKind::Pool { .. } => {
                if c.in_channels != c.out_channels {
                    v.push(bad(format!(
                        "in_channels {} must equal out_channels {}",
                        c.in_channels, c.out_channels
                    )));
                }
                if let ComponentKind::Pool { kernel: 0 } = c.kind {
                    v.push(bad("pool kernel must be positive".into()));
                }
            }
            ComponentKind::Concat { sizes } | ComponentKind::Split { sizes } => {
                let total: usize = sizes.iter().sum();
                if sizes.is_empty() || sizes.contains(&0) {
                    v.push(bad("sizes must be non-empty and positive".into()));
                }
                if total != c.in_channels || total != c.out_channels {
                    v.push(bad(format!(
                        "sizes {sizes:?} sum to {total}, channels are {} -> {}",
                        c.in_channels, c.out_channels
                    )));
                }
            }
            ComponentKind::Flatten { spatial_size } => {
                if *spatial_size == 0 || c.out_channels != c.in_channels * spatial_size {
                    v.push(bad(format!(
                        "flatten of {} channels with spatial size {spatial_size} cannot give {} features",
                        c.in_channels, c.out_channels
                    )));
                }
            }
        }
    }
}

fn check_edges<T: Scalar>(ir: &NetworkIR<T>, v: &mut Vec<Violation>) {
    let n = ir.len();
    let sources: Vec<usize> = (0..n).filter(|&c| ir.inputs_of(c).next().is_none()).collect();
    let sinks: Vec<usize> = (0..n).filter(|&c| ir.outputs_of(c).next().is_none()).collect();
    let ids = |cs: &[usize]| cs.iter().map(|&c| ir.components[c].id.clone()).collect::<Vec<_>>().join(", ");
    if sources.len() != 1 {
        v.push(Violation::Entry(format!("expected exactly one component without inputs, found [{}]", ids(&sources))));
    }
    if sinks.len() != 1 {
        v.push(Violation::Exit(format!("expected exactly one component without consumers, found [{}]", ids(&sinks))));
    }
    if let [entry] = sources[..] {
        let c = &ir.components[entry];
        if matches!(c.kind, ComponentKind::ElementwiseBinary { .. } | ComponentKind::Concat { .. }) {
            v.push(Violation::Entry(format!("`{}` needs several inputs and cannot consume the network input", c.id)));
        }
        if ir.input_shape.first() != Some(&c.in_channels) {
            v.push(Violation::Entry(format!(
                "input shape {:?} does not provide the {} channels `{}` expects",
                ir.input_shape, c.in_channels, c.id
            )));
        }
    }
    if let [exit] = sinks[..] {
        if let ComponentKind::Split { .. } = ir.components[exit].kind {
            v.push(Violation::Exit(format!("split `{}` cannot be the network output", ir.components[exit].id)));
        }
    }

    for (ci, c) in ir.components.iter().enumerate() {
        let found = ir.inputs_of(ci).count();
        if found == 0 {
            continue;
        }
        if let Some(expected) = c.kind.arity() {
            if found != expected {
                v.push(Violation::Arity { component: c.id.clone(), expected, found });
            }
        }
    }

    for (ei, e) in ir.edges.iter().enumerate() {
        let p = &ir.components[e.from];
        let q = &ir.components[e.to];
        match (&p.kind, e.piece) {
            (ComponentKind::Split { sizes }, Some(piece)) if piece >= sizes.len() => {
                v.push(Violation::Piece {
                    producer: p.id.clone(),
                    consumer: q.id.clone(),
                    message: format!("piece {piece} out of range for {} pieces", sizes.len()),
                });
                continue;
            }
            (ComponentKind::Split { .. }, None) => {
                v.push(Violation::Piece {
                    producer: p.id.clone(),
                    consumer: q.id.clone(),
                    message: "edges out of a split must select a piece".into(),
                });
                continue;
            }
            (ComponentKind::Split { .. }, Some(_)) => {}
            (_, Some(_)) => {
                v.push(Violation::Piece {
                    producer: p.id.clone(),
                    consumer: q.id.clone(),
                    message: "only splits have pieces".into(),
                });
                continue;
            }
            _ => {}
        }
        if let ComponentKind::Concat { sizes } = &q.kind {
            if ir.input_slot(ei) >= sizes.len() {
                continue;
            }
        }
        let produced = ir.edge_source_range(e).len();
        let expected = ir.edge_target_range(ei).len();
        if produced != expected {
            v.push(Violation::Channels { producer: p.id.clone(), consumer: q.id.clone(), produced, expected });
        }
    }
}

fn check_params<T: Scalar>(ir: &NetworkIR<T>, v: &mut Vec<Violation>) {
    let mut expected_names = std::collections::BTreeSet::new();
    for c in &ir.components {
        for (local, shape) in c.kind.param_shapes(c.in_channels, c.out_channels) {
            let name = c.param_name(local);
            match ir.weights.get(&name) {
                None => v.push(Violation::MissingParam(name.clone())),
                Some(t) if t.shape() != shape.as_slice() => v.push(Violation::ParamShape {
                    param: name.clone(),
                    expected: shape,
                    found: t.shape().to_vec(),
                }),
                Some(t) if !t.is_finite() => v.push(Violation::NonFinite(name.clone())),
                Some(_) => {}
            }
            expected_names.insert(name);
        }
    }
    for name in ir.weights.keys() {
        if !expected_names.contains(name) {
            v.push(Violation::UnexpectedParam(name.clone()));
        }
    }
}

/// Per-sample output shape of every component, propagated from the network
/// input shape. Requires an acyclic graph with consistent edges.
pub fn infer_shapes<T: Scalar>(ir: &NetworkIR<T>) -> Result<Vec<Vec<usize>>, Vec<Violation>> {
    infer_shapes_from(ir, &ir.input_shape)
}

/// [`infer_shapes`] for an explicit per-sample input shape.
pub fn infer_shapes_from<T: Scalar>(ir: &NetworkIR<T>, input_shape: &[usize]) -> Result<Vec<Vec<usize>>, Vec<Violation>> {
    let order = topo_order(ir).map_err(|stuck| {
        vec![Violation::Cycle(stuck.iter().map(|&c| ir.components[c].id.clone()).collect())]
    })?;
    let mut shapes: Vec<Vec<usize>> = vec![Vec::new(); ir.len()];
    let mut v = Vec::new();
    for &ci in &order {
        let c = &ir.components[ci];
        let mut inputs: Vec<Vec<usize>> = ir
            .edges
            .iter()
            .filter(|e| e.to == ci)
            .map(|e| {
                let mut s = shapes[e.from].clone();
                if !s.is_empty() {
                    s[0] = ir.edge_source_range(e).len();
                }
                s
            })
            .collect();
        if inputs.is_empty() {
            inputs.push(input_shape.to_vec());
        }
        let bad = |m: String| Violation::SpatialShape { component: c.id.clone(), message: m };
        let first = inputs[0].clone();
        if first.is_empty() || inputs.iter().any(|s| s.is_empty()) {
            // An upstream component already failed.
            continue;
        }
        let out = match &c.kind {
            ComponentKind::Linear { .. } => {
                if first.len() != 1 {
                    v.push(bad(format!("linear expects a flat input, got {first:?}")));
                    continue;
                }
                vec![c.out_channels]
            }
            ComponentKind::Conv2d { kernel, stride, padding, .. } => {
                if first.len() != 3 {
                    v.push(bad(format!("conv2d expects [C, H, W], got {first:?}")));
                    continue;
                }
                let (h, w) = (first[1] + 2 * padding, first[2] + 2 * padding);
                if h < *kernel || w < *kernel {
                    v.push(bad(format!("kernel {kernel} larger than padded input {h}x{w}")));
                    continue;
                }
                vec![c.out_channels, (h - kernel) / stride + 1, (w - kernel) / stride + 1]
            }
            ComponentKind::Pool { kernel } => {
                if first.len() != 3 || first[1] < *kernel || first[2] < *kernel {
                    v.push(bad(format!("pool kernel {kernel} does not fit input {first:?}")));
                    continue;
                }
                vec![c.out_channels, first[1] / kernel, first[2] / kernel]
            }
            ComponentKind::Flatten { spatial_size } => {
                if first.len() != 3 || first[1] * first[2] != *spatial_size {
                    v.push(bad(format!("flatten with spatial size {spatial_size} cannot take {first:?}")));
                    continue;
                }
                vec![c.out_channels]
            }
            ComponentKind::ElementwiseBinary { .. } => {
                if inputs.iter().any(|s| s[1..] != first[1..]) {
                    v.push(bad(format!("operand shapes differ: {inputs:?}")));
                    continue;
                }
                let mut s = first.clone();
                s[0] = c.out_channels;
                s
            }
            ComponentKind::Concat { .. } => {
                if inputs.iter().any(|s| s.len() != first.len() || s[1..] != first[1..]) {
                    v.push(bad(format!("concat inputs differ beyond the channel axis: {inputs:?}")));
                    continue;
                }
                let mut s = first.clone();
                s[0] = c.out_channels;
                s
            }
            _ => {
                let mut s = first.clone();
                s[0] = c.out_channels;
                s
            }
        };
        shapes[ci] = out;
    }
    if v.is_empty() {
        Ok(shapes)
    } else {
        Err(v)
    }
}
