use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BinaryOp, Component, ComponentKind, Edge, NetworkIR};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Incremental network construction with channel and spatial inference.
///
/// Inputs are referenced by component id, `"input"` for the network input,
/// or `"<split>:<piece>"` for one piece of a split.
#[derive(Debug, Clone)]
pub struct NetworkBuilder {
    input_shape: Vec<usize>,
    components: Vec<Component>,
    edges: Vec<Edge>,
    shapes: Vec<Vec<usize>>,
    errors: Vec<String>,
}

struct Source {
    component: Option<usize>,
    piece: Option<usize>,
    shape: Vec<usize>,
}

impl NetworkBuilder {
    pub fn new(input_shape: &[usize]) -> Self {
        Self {
            input_shape: input_shape.to_vec(),
            components: Vec::new(),
            edges: Vec::new(),
            shapes: Vec::new(),
            errors: Vec::new(),
        }
    }

    fn resolve(&mut self, name: &str) -> Option<Source> {
        if name == "input" {
            return Some(Source { component: None, piece: None, shape: self.input_shape.clone() });
        }
        let (id, piece) = match name.split_once(':') {
            Some((id, p)) => match p.parse::<usize>() {
                Ok(p) => (id, Some(p)),
                Err(_) => {
                    self.errors.push(format!("bad piece reference `{name}`"));
                    return None;
                }
            },
            None => (name, None),
        };
        let Some(ci) = self.components.iter().position(|c| c.id == id) else {
            self.errors.push(format!("unknown input `{name}`"));
            return None;
        };
        let mut shape = self.shapes[ci].clone();
        if let (ComponentKind::Split { sizes }, Some(p)) = (&self.components[ci].kind, piece) {
            match sizes.get(p) {
                Some(&s) => shape[0] = s,
                None => {
                    self.errors.push(format!("piece {p} out of range in `{name}`"));
                    return None;
                }
            }
        }
        Some(Source { component: Some(ci), piece, shape })
    }

    fn push(&mut self, id: &str, kind: ComponentKind, inputs: &[&str], out: impl FnOnce(&[Vec<usize>]) -> (usize, Vec<usize>)) -> &mut Self {
        let sources: Vec<Source> = inputs.iter().filter_map(|n| self.resolve(n)).collect();
        if sources.len() != inputs.len() || sources.is_empty() {
            if sources.is_empty() && inputs.is_empty() {
                self.errors.push(format!("component `{id}` has no inputs"));
            }
            return self;
        }
        let shapes: Vec<Vec<usize>> = sources.iter().map(|s| s.shape.clone()).collect();
        let in_channels = match &kind {
            ComponentKind::Concat { .. } => shapes.iter().map(|s| s[0]).sum(),
            _ => shapes[0][0],
        };
        let (out_channels, out_shape) = out(&shapes);
        let ci = self.components.len();
        for s in &sources {
            if let Some(from) = s.component {
                self.edges.push(Edge { from, to: ci, piece: s.piece });
            }
        }
        self.components.push(Component { id: id.to_string(), kind, in_channels, out_channels });
        self.shapes.push(out_shape);
        self
    }

    fn same(shapes: &[Vec<usize>]) -> (usize, Vec<usize>) {
        (shapes[0][0], shapes[0].clone())
    }

    pub fn linear(&mut self, id: &str, inputs: &[&str], out: usize, bias: bool) -> &mut Self {
        self.push(id, ComponentKind::Linear { bias }, inputs, |_| (out, vec![out]))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv2d(
        &mut self,
        id: &str,
        inputs: &[&str],
        out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        bias: bool,
    ) -> &mut Self {
        self.push(id, ComponentKind::Conv2d { kernel, stride, padding, groups, bias }, inputs, |s| {
            let s = &s[0];
            let dim = |d: usize| (d + 2 * padding).saturating_sub(kernel) / stride.max(1) + 1;
            let (h, w) = if s.len() == 3 { (dim(s[1]), dim(s[2])) } else { (0, 0) };
            (out, vec![out, h, w])
        })
    }

    pub fn batch_norm(&mut self, id: &str, inputs: &[&str]) -> &mut Self {
        self.push(id, ComponentKind::BatchNorm, inputs, Self::same)
    }

    pub fn relu(&mut self, id: &str, inputs: &[&str]) -> &mut Self {
        self.push(id, ComponentKind::Activation, inputs, Self::same)
    }

    pub fn binary(&mut self, id: &str, op: BinaryOp, inputs: &[&str]) -> &mut Self {
        self.push(id, ComponentKind::ElementwiseBinary { op }, inputs, Self::same)
    }

    pub fn add(&mut self, id: &str, inputs: &[&str]) -> &mut Self {
        self.binary(id, BinaryOp::Add, inputs)
    }

    pub fn pool(&mut self, id: &str, inputs: &[&str], kernel: usize) -> &mut Self {
        self.push(id, ComponentKind::Pool { kernel }, inputs, |s| {
            let s = &s[0];
            let k = kernel.max(1);
            let shape = if s.len() == 3 { vec![s[0], s[1] / k, s[2] / k] } else { s.clone() };
            (s[0], shape)
        })
    }

    pub fn concat(&mut self, id: &str, inputs: &[&str]) -> &mut Self {
        let sizes: Vec<usize> =
            inputs.iter().filter_map(|n| self.resolve(n)).map(|s| s.shape[0]).collect();
        self.push(id, ComponentKind::Concat { sizes }, inputs, |s| {
            let total = s.iter().map(|x| x[0]).sum();
            let mut shape = s[0].clone();
            shape[0] = total;
            (total, shape)
        })
    }

    pub fn split(&mut self, id: &str, inputs: &[&str], sizes: &[usize]) -> &mut Self {
        self.push(id, ComponentKind::Split { sizes: sizes.to_vec() }, inputs, Self::same)
    }

    pub fn flatten(&mut self, id: &str, inputs: &[&str]) -> &mut Self {
        let spatial = inputs
            .first()
            .and_then(|n| self.resolve(n))
            .map(|s| s.shape[1..].iter().product::<usize>())
            .unwrap_or(1);
        self.push(id, ComponentKind::Flatten { spatial_size: spatial }, inputs, |s| {
            let f = s[0].iter().product();
            (f, vec![f])
        })
    }

    /// Finishes the network with He-uniform weights, zero biases and identity
    /// batch norms, all drawn from `seed`.
    pub fn build<T: Scalar>(&self, seed: u64) -> Result<NetworkIR<T>> {
        if !self.errors.is_empty() {
            return Err(Error::Config(self.errors.join("; ")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = BTreeMap::new();
        for c in &self.components {
            for (local, shape) in c.kind.param_shapes(c.in_channels, c.out_channels) {
                let n: usize = shape.iter().product();
                let data: Vec<T> = match (local, &c.kind) {
                    ("weight", ComponentKind::BatchNorm) | ("running_var", _) => vec![T::one(); n],
                    ("weight", _) => {
                        let fan_in: usize = shape[1..].iter().product();
                        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
                        (0..n).map(|_| T::lit(rng.gen_range(-bound..bound))).collect()
                    }
                    _ => vec![T::zero(); n],
                };
                weights.insert(c.param_name(local), Tensor::from_parts(shape, data));
            }
        }
        let ir = NetworkIR {
            components: self.components.clone(),
            edges: self.edges.clone(),
            input_shape: self.input_shape.clone(),
            weights,
        };
        ir.validate().map_err(Error::Validation)?;
        Ok(ir)
    }
}
