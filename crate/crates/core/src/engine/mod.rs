//! Dense execution of a [`NetworkIR`]: forward pass, reverse-mode gradients,
//! losses, MAC counting and a momentum SGD optimiser.

mod ops;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::ir::{infer_shapes_from, BinaryOp, ComponentKind, NetworkIR, BN_EPS, BN_MOMENTUM};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use ops::ConvGeom;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Gradient per trainable parameter name.
pub type Gradients<T> = BTreeMap<String, Tensor<T>>;

#[derive(Debug, Clone)]
enum Saved<T> {
    None,
    BatchNorm { xhat: Tensor<T>, inv_std: Vec<T>, mean: Vec<T>, var: Vec<T>, count: usize },
}

/// Activations recorded by a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    order: Vec<usize>,
    inputs: Vec<Vec<Tensor<T>>>,
    outputs: Vec<Option<Tensor<T>>>,
    saved: Vec<Saved<T>>,
    consumed: bool,
}

#[derive(Debug, Clone)]
pub struct Forward<T> {
    pub output: Tensor<T>,
    pub tape: Option<Tape<T>>,
}

fn geom(kind: &ComponentKind) -> ConvGeom {
    match *kind {
        ComponentKind::Conv2d { kernel, stride, padding, groups, .. } => ConvGeom { kernel, stride, padding, groups },
        _ => unreachable!("geometry of a non-convolution"),
    }
}

fn param<'a, T: Scalar>(ir: &'a NetworkIR<T>, name: &str) -> Result<&'a Tensor<T>> {
    ir.weights.get(name).ok_or_else(|| Error::Shape(format!("missing parameter `{name}`")))
}

/// Runs the network on a batch `[N, ...input_shape]`.
///
/// Train mode normalises with batch statistics and records a tape; running
/// statistics are not touched here, see [`update_running_stats`].
pub fn forward<T: Scalar>(ir: &NetworkIR<T>, input: &Tensor<T>, mode: Mode) -> Result<Forward<T>> {
    if input.shape().len() != ir.input_shape.len() + 1 || input.shape()[1..] != ir.input_shape[..] {
        return Err(Error::Shape(format!(
            "input of shape {:?} does not match network input {:?}",
            input.shape(),
            ir.input_shape
        )));
    }
    if !input.is_finite() {
        return Err(Error::NonFinite("network input".into()));
    }
    let order = ir.topo_order().ok_or_else(|| Error::Shape("network has a cycle".into()))?;
    let entry = ir.entry().ok_or_else(|| Error::Shape("network has no unique input component".into()))?;
    let exit = ir.exit().ok_or_else(|| Error::Shape("network has no unique output component".into()))?;
    let l = ir.len();
    let mut outputs: Vec<Option<Tensor<T>>> = vec![None; l];
    let mut inputs_rec: Vec<Vec<Tensor<T>>> = vec![Vec::new(); l];
    let mut saved: Vec<Saved<T>> = vec![Saved::None; l];
    let eps = T::lit(BN_EPS);

    for &ci in &order {
        let c = &ir.components[ci];
        let xs: Vec<Tensor<T>> = if ci == entry {
            vec![input.clone()]
        } else {
            ir.inputs_of(ci)
                .map(|e| {
                    let src = outputs[e.from].as_ref().expect("producer evaluated first");
                    ops::slice_channels(src, ir.edge_source_range(e))
                })
                .collect()
        };
        let shape_err = |what: String| Error::Shape(format!("component `{}`: {what}", c.id));
        for x in &xs {
            if x.shape()[1] != if matches!(c.kind, ComponentKind::Concat { .. }) { x.shape()[1] } else { c.in_channels } {
                return Err(shape_err(format!("got {} channels, expected {}", x.shape()[1], c.in_channels)));
            }
        }
        let x = &xs[0];
        let y = match &c.kind {
            ComponentKind::Linear { bias } => {
                if x.shape().len() != 2 {
                    return Err(shape_err(format!("linear needs [N, C] input, got {:?}", x.shape())));
                }
                let b = if *bias { Some(param(ir, &c.param_name("bias"))?) } else { None };
                ops::linear_fwd(x, param(ir, &c.param_name("weight"))?, b)
            }
            ComponentKind::Conv2d { bias, .. } => {
                if x.shape().len() != 4 {
                    return Err(shape_err(format!("conv2d needs [N, C, H, W] input, got {:?}", x.shape())));
                }
                let b = if *bias { Some(param(ir, &c.param_name("bias"))?) } else { None };
                ops::conv2d_fwd(x, param(ir, &c.param_name("weight"))?, b, geom(&c.kind))
            }
            ComponentKind::BatchNorm => {
                let gamma = param(ir, &c.param_name("weight"))?;
                let beta = param(ir, &c.param_name("bias"))?;
                match mode {
                    Mode::Train => {
                        let (mean, var) = ops::channel_stats(x);
                        let (y, xhat, inv_std) = ops::batch_norm_fwd(x, gamma, beta, &mean, &var, eps);
                        let (n, _, inner) = ops::dims(x);
                        saved[ci] = Saved::BatchNorm { xhat, inv_std, mean, var, count: n * inner };
                        y
                    }
                    Mode::Eval => {
                        let rm = param(ir, &c.param_name("running_mean"))?;
                        let rv = param(ir, &c.param_name("running_var"))?;
                        ops::batch_norm_fwd(x, gamma, beta, rm.data(), rv.data(), eps).0
                    }
                }
            }
            ComponentKind::ElementwiseBinary { op } => {
                let b = &xs[1];
                if b.shape() != x.shape() {
                    return Err(shape_err(format!("operands {:?} and {:?}", x.shape(), b.shape())));
                }
                let data = x
                    .data()
                    .iter()
                    .zip(b.data())
                    .map(|(&p, &q)| match op {
                        BinaryOp::Add => p + q,
                        BinaryOp::Mul => p * q,
                    })
                    .collect();
                Tensor::from_parts(x.shape().to_vec(), data)
            }
            ComponentKind::Concat { .. } => {
                let parts: Vec<&Tensor<T>> = xs.iter().collect();
                ops::concat_channels(&parts)
            }
            ComponentKind::Split { .. } => x.clone(),
            ComponentKind::Flatten { spatial_size } => {
                let (n, ch, inner) = ops::dims(x);
                if inner != *spatial_size {
                    return Err(shape_err(format!("spatial size {inner}, expected {spatial_size}")));
                }
                x.clone().reshape(&[n, ch * inner])?
            }
            ComponentKind::Activation => ops::relu_fwd(x),
            ComponentKind::Pool { kernel } => {
                if x.shape().len() != 4 {
                    return Err(shape_err(format!("pool needs [N, C, H, W] input, got {:?}", x.shape())));
                }
                ops::avg_pool_fwd(x, *kernel)
            }
        };
        outputs[ci] = Some(y);
        if mode == Mode::Train {
            inputs_rec[ci] = xs;
        }
    }
    let output = outputs[exit].clone().expect("exit evaluated");
    let tape = (mode == Mode::Train).then(|| Tape { order, inputs: inputs_rec, outputs, saved, consumed: false });
    Ok(Forward { output, tape })
}

/// Evaluation-mode forward pass.
pub fn predict<T: Scalar>(ir: &NetworkIR<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(forward(ir, input, Mode::Eval)?.output)
}

/// Folds the batch statistics recorded in `tape` into the BN running
/// statistics (unbiased variance, momentum [`BN_MOMENTUM`]).
pub fn update_running_stats<T: Scalar>(ir: &mut NetworkIR<T>, tape: &Tape<T>) {
    let m = T::lit(BN_MOMENTUM);
    for (ci, s) in tape.saved.iter().enumerate() {
        if let Saved::BatchNorm { mean, var, count, .. } = s {
            let id = ir.components[ci].id.clone();
            let unbias = if *count > 1 { T::of_usize(*count) / T::of_usize(count - 1) } else { T::one() };
            if let Some(rm) = ir.weights.get_mut(&format!("{id}.running_mean")) {
                for (r, &v) in rm.data_mut().iter_mut().zip(mean) {
                    *r = (T::one() - m) * *r + m * v;
                }
            }
            if let Some(rv) = ir.weights.get_mut(&format!("{id}.running_var")) {
                for (r, &v) in rv.data_mut().iter_mut().zip(var) {
                    *r = (T::one() - m) * *r + m * v * unbias;
                }
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// Back-propagates `loss_grad` (gradient w.r.t. the network output).
    /// A tape can be consumed once.
    pub fn backward(&mut self, ir: &NetworkIR<T>, loss_grad: &Tensor<T>) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::Tape("tape already consumed by a previous backward pass".into()));
        }
        self.consumed = true;
        let exit = ir.exit().ok_or_else(|| Error::Shape("network has no unique output".into()))?;
        let out_shape = self.outputs[exit].as_ref().map(|t| t.shape().to_vec()).unwrap_or_default();
        if loss_grad.shape() != out_shape.as_slice() {
            return Err(Error::Shape(format!(
                "loss gradient shape {:?} does not match output {:?}",
                loss_grad.shape(),
                out_shape
            )));
        }
        let mut grads: Gradients<T> = ir
            .trainable_params()
            .into_iter()
            .filter_map(|n| ir.weights.get(&n).map(|t| (n, Tensor::zeros(t.shape()))))
            .collect();
        let mut gout: Vec<Option<Tensor<T>>> = vec![None; ir.len()];
        gout[exit] = Some(loss_grad.clone());
        let entry = ir.entry();

        for &ci in self.order.iter().rev() {
            let Some(dy) = gout[ci].take() else { continue };
            let c = &ir.components[ci];
            let xs = &self.inputs[ci];
            let x = &xs[0];
            let mut acc = |name: String, g: Tensor<T>| {
                if let Some(t) = grads.get_mut(&name) {
                    for (a, b) in t.data_mut().iter_mut().zip(g.data()) {
                        *a += *b;
                    }
                }
            };
            let dxs: Vec<Tensor<T>> = match &c.kind {
                ComponentKind::Linear { .. } => {
                    let (dx, dw, db) = ops::linear_bwd(x, param(ir, &c.param_name("weight"))?, &dy);
                    acc(c.param_name("weight"), dw);
                    acc(c.param_name("bias"), db);
                    vec![dx]
                }
                ComponentKind::Conv2d { .. } => {
                    let (dx, dw, db) = ops::conv2d_bwd(x, param(ir, &c.param_name("weight"))?, &dy, geom(&c.kind));
                    acc(c.param_name("weight"), dw);
                    acc(c.param_name("bias"), db);
                    vec![dx]
                }
                ComponentKind::BatchNorm => {
                    let Saved::BatchNorm { xhat, inv_std, .. } = &self.saved[ci] else {
                        return Err(Error::Tape(format!("no saved statistics for `{}`", c.id)));
                    };
                    let gamma = param(ir, &c.param_name("weight"))?;
                    let (dx, dg, db) = ops::batch_norm_bwd(xhat, inv_std, gamma, &dy, true);
                    acc(c.param_name("weight"), dg);
                    acc(c.param_name("bias"), db);
                    vec![dx]
                }
                ComponentKind::ElementwiseBinary { op } => match op {
                    BinaryOp::Add => vec![dy.clone(), dy],
                    BinaryOp::Mul => {
                        let b = &xs[1];
                        let da = dy.data().iter().zip(b.data()).map(|(&g, &v)| g * v).collect();
                        let db = dy.data().iter().zip(x.data()).map(|(&g, &v)| g * v).collect();
                        vec![Tensor::from_parts(dy.shape().to_vec(), da), Tensor::from_parts(dy.shape().to_vec(), db)]
                    }
                },
                ComponentKind::Concat { .. } => {
                    let mut off = 0;
                    xs.iter()
                        .map(|p| {
                            let w = p.shape()[1];
                            let s = ops::slice_channels(&dy, off..off + w);
                            off += w;
                            s
                        })
                        .collect()
                }
                ComponentKind::Split { .. } => vec![dy],
                ComponentKind::Flatten { .. } => vec![dy.reshape(x.shape())?],
                ComponentKind::Activation => vec![ops::relu_bwd(x, &dy)],
                ComponentKind::Pool { kernel } => vec![ops::avg_pool_bwd(x.shape(), &dy, *kernel)],
            };
            if Some(ci) == entry {
                continue;
            }
            for (e, dx) in ir.inputs_of(ci).zip(dxs) {
                let producer_out = self.outputs[e.from].as_ref().expect("recorded output");
                let slot = gout[e.from].get_or_insert_with(|| Tensor::zeros(producer_out.shape()));
                ops::add_into_channels(slot, &dx, ir.edge_source_range(e).start);
            }
        }
        Ok(grads)
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. logits.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let [n, k] = logits.shape()[..] else {
        return Err(Error::Shape(format!("logits must be [N, K], got {:?}", logits.shape())));
    };
    if labels.len() != n || labels.iter().any(|&l| l >= k) {
        return Err(Error::Shape(format!("{} labels for {n} rows of {k} classes", labels.len())));
    }
    let d = logits.data();
    let inv_n = T::one() / T::of_usize(n);
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); n * k];
    for s in 0..n {
        let row = &d[s * k..(s + 1) * k];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let z: T = row.iter().map(|&v| (v - max).exp()).sum();
        let lz = z.ln() + max;
        loss += lz - row[labels[s]];
        for j in 0..k {
            let p = (row[j] - lz).exp();
            grad[s * k + j] = (p - if j == labels[s] { T::one() } else { T::zero() }) * inv_n;
        }
    }
    Ok((loss * inv_n, Tensor::from_parts(vec![n, k], grad)))
}

/// Sum of squared errors and its gradient.
pub fn squared_error<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!("prediction {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    let diff: Vec<T> = pred.data().iter().zip(target.data()).map(|(&p, &t)| p - t).collect();
    let loss = diff.iter().map(|&d| d * d).sum();
    let grad = diff.iter().map(|&d| d + d).collect();
    Ok((loss, Tensor::from_parts(pred.shape().to_vec(), grad)))
}

pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .map(|r| {
            r.iter().enumerate().fold((0, T::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) }).0
        })
        .collect()
}

/// Multiply-accumulate count of one sample through linear and convolution
/// components.
pub fn count_macs<T: Scalar>(ir: &NetworkIR<T>, input_shape: &[usize]) -> Result<u64> {
    let shapes = infer_shapes_from(ir, input_shape).map_err(Error::Validation)?;
    Ok(ir
        .components
        .iter()
        .zip(&shapes)
        .map(|(c, out)| match c.kind {
            ComponentKind::Linear { .. } => (c.in_channels * c.out_channels) as u64,
            ComponentKind::Conv2d { kernel, groups, .. } => {
                let spatial: usize = out[1..].iter().product();
                ((c.in_channels / groups) * c.out_channels * kernel * kernel * spatial) as u64
            }
            _ => 0,
        })
        .sum())
}

/// Stochastic gradient descent with classical momentum.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub lr: T,
    pub momentum: T,
    velocity: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(lr: T, momentum: T) -> Self {
        Self { lr, momentum, velocity: BTreeMap::new() }
    }

    pub fn step(&mut self, ir: &mut NetworkIR<T>, grads: &Gradients<T>) {
        for (name, g) in grads {
            let Some(w) = ir.weights.get_mut(name) else { continue };
            let v = self.velocity.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            for ((wv, vv), &gv) in w.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vv = self.momentum * *vv + gv;
                *wv -= self.lr * *vv;
            }
        }
    }
}
