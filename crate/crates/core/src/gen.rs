//! Seeded random networks covering every component kind, for property tests.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ir::{BinaryOp, NetworkBuilder, NetworkIR};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
struct Tensor {
    name: String,
    /// `[C]` or `[C, H, W]`.
    shape: Vec<usize>,
    consumed: bool,
}

struct Gen {
    rng: ChaCha8Rng,
    b: NetworkBuilder,
    pool: Vec<Tensor>,
    count: usize,
}

impl Gen {
    fn fresh(&mut self, prefix: &str) -> String {
        self.count += 1;
        format!("{prefix}{}", self.count)
    }

    fn produce(&mut self, name: String, shape: Vec<usize>) {
        self.pool.push(Tensor { name, shape, consumed: false });
    }

    fn pick(&mut self, filter: impl Fn(&Tensor) -> bool) -> Option<usize> {
        let cands: Vec<usize> = (0..self.pool.len()).filter(|&i| filter(&self.pool[i])).collect();
        // Prefer recent tensors so networks get deep rather than wide.
        let tail = &cands[cands.len().saturating_sub(4)..];
        tail.choose(&mut self.rng).copied()
    }

    fn use_tensor(&mut self, i: usize) -> String {
        self.pool[i].consumed = true;
        self.pool[i].name.clone()
    }

    fn conv(&mut self, i: usize) {
        let shape = self.pool[i].shape.clone();
        let c = shape[0];
        let divisors: Vec<usize> = (1..=c).filter(|g| c % g == 0).collect();
        let groups = if self.rng.gen_bool(0.35) { *divisors.choose(&mut self.rng).unwrap() } else { 1 };
        let out = groups * self.rng.gen_range(1..=(6 / groups).max(1));
        let kernel = if self.rng.gen_bool(0.6) { 3 } else { 1 };
        let stride = if shape[1] >= 4 && self.rng.gen_bool(0.2) { 2 } else { 1 };
        let padding = kernel / 2;
        let dim = |d: usize| (d + 2 * padding - kernel) / stride + 1;
        let input = self.use_tensor(i);
        let id = self.fresh("conv");
        let bias = self.rng.gen_bool(0.5);
        self.b.conv2d(&id, &[&input], out, kernel, stride, padding, groups, bias);
        self.produce(id, vec![out, dim(shape[1]), dim(shape[2])]);
    }

    fn linear(&mut self, i: usize) {
        let out = self.rng.gen_range(1..=8);
        let input = self.use_tensor(i);
        let id = self.fresh("fc");
        let bias = self.rng.gen_bool(0.7);
        self.b.linear(&id, &[&input], out, bias);
        self.produce(id, vec![out]);
    }

    fn step(&mut self) {
        match self.rng.gen_range(0..10) {
            0 | 1 => {
                if let Some(i) = self.pick(|t| t.shape.len() == 3) {
                    self.conv(i)
                } else if let Some(i) = self.pick(|_| true) {
                    self.linear(i)
                }
            }
            2 => {
                if let Some(i) = self.pick(|t| t.shape.len() == 1) {
                    self.linear(i)
                }
            }
            3 | 4 => {
                if let Some(i) = self.pick(|_| true) {
                    let shape = self.pool[i].shape.clone();
                    let input = self.use_tensor(i);
                    let (id, relu) = if self.rng.gen_bool(0.5) { (self.fresh("bn"), false) } else { (self.fresh("relu"), true) };
                    if relu {
                        self.b.relu(&id, &[&input]);
                    } else {
                        self.b.batch_norm(&id, &[&input]);
                    }
                    self.produce(id, shape);
                }
            }
            5 => {
                if let Some(i) = self.pick(|t| t.shape.len() == 3 && t.shape[1] % 2 == 0 && t.shape[2] % 2 == 0) {
                    let s = self.pool[i].shape.clone();
                    let input = self.use_tensor(i);
                    let id = self.fresh("pool");
                    self.b.pool(&id, &[&input], 2);
                    self.produce(id, vec![s[0], s[1] / 2, s[2] / 2]);
                }
            }
            6 => {
                let Some(i) = self.pick(|_| true) else { return };
                let shape = self.pool[i].shape.clone();
                let Some(j) = self.pick(|t| t.shape == shape) else { return };
                let (a, b) = (self.use_tensor(i), self.use_tensor(j));
                let mul = self.rng.gen_bool(0.3);
                let id = self.fresh(if mul { "mul" } else { "add" });
                self.b.binary(&id, if mul { BinaryOp::Mul } else { BinaryOp::Add }, &[&a, &b]);
                self.produce(id, shape);
            }
            7 => {
                let Some(i) = self.pick(|_| true) else { return };
                let shape = self.pool[i].shape.clone();
                let parts = self.rng.gen_range(2..=3);
                let mut inputs = vec![self.use_tensor(i)];
                let mut channels = shape[0];
                for _ in 1..parts {
                    if let Some(j) = self.pick(|t| t.shape[1..] == shape[1..]) {
                        channels += self.pool[j].shape[0];
                        inputs.push(self.use_tensor(j));
                    }
                }
                let id = self.fresh("cat");
                let refs: Vec<&str> = inputs.iter().map(String::as_str).collect();
                self.b.concat(&id, &refs);
                let mut out = shape;
                out[0] = channels;
                self.produce(id, out);
            }
            8 => {
                let Some(i) = self.pick(|t| t.shape[0] >= 2) else { return };
                let shape = self.pool[i].shape.clone();
                let first = self.rng.gen_range(1..shape[0]);
                let mut sizes = vec![first, shape[0] - first];
                if sizes[1] >= 2 && self.rng.gen_bool(0.3) {
                    let s = self.rng.gen_range(1..sizes[1]);
                    sizes = vec![first, s, shape[0] - first - s];
                }
                let input = self.use_tensor(i);
                let id = self.fresh("split");
                self.b.split(&id, &[&input], &sizes);
                for (p, &s) in sizes.iter().enumerate() {
                    let mut ps = shape.clone();
                    ps[0] = s;
                    self.produce(format!("{id}:{p}"), ps);
                }
            }
            _ => {
                if let Some(i) = self.pick(|t| t.shape.len() == 3) {
                    let s = self.pool[i].shape.clone();
                    let input = self.use_tensor(i);
                    let id = self.fresh("flat");
                    self.b.flatten(&id, &[&input]);
                    self.produce(id, vec![s[0] * s[1] * s[2]]);
                }
            }
        }
    }

    /// Joins every unconsumed tensor into a single output.
    fn finish(&mut self) {
        let open: Vec<usize> = (0..self.pool.len()).filter(|&i| !self.pool[i].consumed).collect();
        if open.len() == 1 && !self.pool[open[0]].name.contains(':') {
            return;
        }
        let width = 3;
        let mut heads = Vec::new();
        for mut i in open {
            if self.pool[i].shape.len() == 3 {
                let s = self.pool[i].shape.clone();
                let input = self.use_tensor(i);
                let id = self.fresh("flat");
                self.b.flatten(&id, &[&input]);
                self.produce(id, vec![s.iter().product()]);
                i = self.pool.len() - 1;
            }
            let input = self.use_tensor(i);
            let id = self.fresh("head");
            self.b.linear(&id, &[&input], width, true);
            heads.push(id);
        }
        let mut acc = heads[0].clone();
        for h in &heads[1..] {
            let id = self.fresh("add");
            self.b.add(&id, &[&acc, h]);
            acc = id;
        }
    }
}

/// A valid random network with at most `max_components` components.
///
/// Every call with the same seed returns the same network. The mix covers
/// linear, dense/grouped/depthwise convolution, batch norm, activation,
/// pooling, add/mul, concat, split and flatten.
pub fn random_network<T: Scalar>(seed: u64, max_components: usize) -> NetworkIR<T> {
    let mut attempt = 0u64;
    loop {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9).wrapping_add(attempt));
        attempt += 1;
        let spatial = rng.gen_bool(0.8);
        let c = rng.gen_range(1..=4);
        let input_shape = if spatial { vec![c, 4, 4] } else { vec![c] };
        let mut g = Gen { rng, b: NetworkBuilder::new(&input_shape), pool: Vec::new(), count: 0 };
        let id = if spatial { "conv0" } else { "fc0" };
        if spatial {
            let out = g.rng.gen_range(2..=6);
            g.b.conv2d(id, &["input"], out, 3, 1, 1, 1, true);
            g.produce(id.into(), vec![out, 4, 4]);
        } else {
            let out = g.rng.gen_range(2..=6);
            g.b.linear(id, &["input"], out, true);
            g.produce(id.into(), vec![out]);
        }
        let steps = g.rng.gen_range(3..=max_components.saturating_sub(8).max(3));
        for _ in 0..steps {
            g.step();
        }
        g.finish();
        let Ok(ir) = g.b.build::<T>(seed) else { continue };
        if ir.len() <= max_components {
            return ir;
        }
    }
}
