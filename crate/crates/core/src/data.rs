//! Built-in synthetic classification datasets.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    /// `[N, ...sample_shape]`.
    pub inputs: Tensor<T>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(inputs: Tensor<T>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if inputs.shape().first() != Some(&labels.len()) {
            return Err(Error::Shape(format!("{} labels for inputs of shape {:?}", labels.len(), inputs.shape())));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Shape(format!("label {l} out of range for {classes} classes")));
        }
        Ok(Self { inputs, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    /// Rows `idx` as a batch.
    pub fn batch(&self, idx: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let per: usize = self.sample_shape().iter().product();
        let mut data = Vec::with_capacity(idx.len() * per);
        for &i in idx {
            data.extend_from_slice(&self.inputs.data()[i * per..(i + 1) * per]);
        }
        let mut shape = vec![idx.len()];
        shape.extend_from_slice(self.sample_shape());
        (Tensor::from_parts(shape, data), idx.iter().map(|&i| self.labels[i]).collect())
    }

    /// Deterministic split: the first `train` rows and the rest.
    pub fn split_at(&self, train: usize) -> (Self, Self) {
        let all: Vec<usize> = (0..self.len()).collect();
        let (a, b) = all.split_at(train.min(self.len()));
        let make = |idx: &[usize]| {
            let (x, y) = self.batch(idx);
            Self { inputs: x, labels: y, classes: self.classes }
        };
        (make(a), make(b))
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset { inputs: self.inputs.cast(), labels: self.labels.clone(), classes: self.classes }
    }
}

/// Two interleaved spirals in the plane, `n` points per class.
pub fn spiral<T: Scalar>(n: usize, noise: f64, seed: u64) -> Dataset<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(2 * n);
    for class in 0..2 {
        for i in 0..n {
            let t = 0.25 + 2.75 * i as f64 / n as f64;
            let angle = t * std::f64::consts::PI + class as f64 * std::f64::consts::PI;
            let r = t / 3.0;
            let x = r * angle.cos() + noise * rng.gen_range(-1.0..1.0);
            let y = r * angle.sin() + noise * rng.gen_range(-1.0..1.0);
            rows.push(([x, y], class));
        }
    }
    rows.shuffle(&mut rng);
    let data = rows.iter().flat_map(|(p, _)| p.iter().map(|&v| T::lit(v))).collect();
    let labels = rows.iter().map(|r| r.1).collect();
    Dataset { inputs: Tensor::from_parts(vec![2 * n, 2], data), labels, classes: 2 }
}

pub const SHAPE_SIDE: usize = 8;
pub const SHAPE_CLASSES: usize = 4;

/// Single-channel 8x8 images of four procedural shapes at random positions
/// with additive noise: horizontal bar, vertical bar, hollow square, diagonal.
pub fn shapes<T: Scalar>(n: usize, noise: f64, seed: u64) -> Dataset<T> {
    const S: usize = SHAPE_SIDE;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * S * S);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % SHAPE_CLASSES;
        let mut img = [[0.0f64; S]; S];
        let len = rng.gen_range(4..=6);
        match class {
            0 => {
                let (r, c) = (rng.gen_range(0..S), rng.gen_range(0..=S - len));
                (c..c + len).for_each(|x| img[r][x] = 1.0);
            }
            1 => {
                let (r, c) = (rng.gen_range(0..=S - len), rng.gen_range(0..S));
                (r..r + len).for_each(|y| img[y][c] = 1.0);
            }
            2 => {
                let side = rng.gen_range(3..=5);
                let (r, c) = (rng.gen_range(0..=S - side), rng.gen_range(0..=S - side));
                for d in 0..side {
                    img[r][c + d] = 1.0;
                    img[r + side - 1][c + d] = 1.0;
                    img[r + d][c] = 1.0;
                    img[r + d][c + side - 1] = 1.0;
                }
            }
            _ => {
                let (r, c) = (rng.gen_range(0..=S - len), rng.gen_range(0..=S - len));
                let anti = rng.gen_bool(0.5);
                for d in 0..len {
                    let x = if anti { c + len - 1 - d } else { c + d };
                    img[r + d][x] = 1.0;
                }
            }
        }
        for row in &img {
            for &v in row {
                data.push(T::lit(v + noise * rng.gen_range(-1.0..1.0)));
            }
        }
        labels.push(class);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let inputs = Tensor::from_parts(vec![n, 1, S, S], data);
    let ds = Dataset { inputs, labels, classes: SHAPE_CLASSES };
    let (x, y) = ds.batch(&order);
    Dataset { inputs: x, labels: y, classes: SHAPE_CLASSES }
}
