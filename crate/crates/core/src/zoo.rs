//! Bundled example networks.

use crate::error::{Error, Result};
use crate::ir::{NetworkBuilder, NetworkIR};
use crate::scalar::Scalar;

pub const MODEL_NAMES: [&str; 6] = ["resblock", "mlp", "mlp2", "resnet", "densenet", "depthwise"];

/// Two conv/BN pairs joined by a residual add. Every layer of the block
/// shares one pruning group.
pub fn resblock<T: Scalar>(seed: u64) -> Result<NetworkIR<T>> {
    let mut b = NetworkBuilder::new(&[4, 6, 6]);
    b.conv2d("conv1", &["input"], 4, 3, 1, 1, 1, false)
        .batch_norm("bn1", &["conv1"])
        .conv2d("conv2", &["bn1"], 4, 3, 1, 1, 1, false)
        .batch_norm("bn2", &["conv2"])
        .add("add", &["bn1", "bn2"]);
    b.build(seed)
}

/// 2 -> 16 -> 16 -> 2 perceptron for the spiral task.
pub fn mlp<T: Scalar>(seed: u64) -> Result<NetworkIR<T>> {
    let mut b = NetworkBuilder::new(&[2]);
    b.linear("fc1", &["input"], 16, true)
        .relu("relu1", &["fc1"])
        .linear("fc2", &["relu1"], 16, true)
        .relu("relu2", &["fc2"])
        .linear("fc3", &["relu2"], 2, true);
    b.build(seed)
}

/// Two linear layers around a single hidden group.
pub fn mlp2<T: Scalar>(seed: u64) -> Result<NetworkIR<T>> {
    let mut b = NetworkBuilder::new(&[2]);
    b.linear("fc1", &["input"], 32, true).relu("relu", &["fc1"]).linear("fc2", &["relu"], 2, true);
    b.build(seed)
}

/// Residual CNN for 8x8 single-channel images, 4 classes. Used by the
/// sparsity and ablation experiments.
pub fn resnet<T: Scalar>(seed: u64) -> Result<NetworkIR<T>> {
    let mut b = NetworkBuilder::new(&[1, 8, 8]);
    b.conv2d("stem", &["input"], 8, 3, 1, 1, 1, false)
        .batch_norm("stem_bn", &["stem"])
        .relu("stem_relu", &["stem_bn"])
        .conv2d("b1_conv1", &["stem_relu"], 8, 3, 1, 1, 1, false)
        .batch_norm("b1_bn1", &["b1_conv1"])
        .relu("b1_relu1", &["b1_bn1"])
        .conv2d("b1_conv2", &["b1_relu1"], 8, 3, 1, 1, 1, false)
        .batch_norm("b1_bn2", &["b1_conv2"])
        .add("b1_add", &["b1_bn2", "stem_relu"])
        .relu("b1_relu2", &["b1_add"])
        .pool("pool1", &["b1_relu2"], 2)
        .conv2d("conv3", &["pool1"], 16, 3, 1, 1, 1, false)
        .batch_norm("bn3", &["conv3"])
        .relu("relu3", &["bn3"])
        .pool("pool2", &["relu3"], 2)
        .flatten("flatten", &["pool2"])
        .linear("fc", &["flatten"], 4, true);
    b.build(seed)
}

/// Dense connectivity: each stage sees the concatenation of all earlier ones.
pub fn densenet<T: Scalar>(seed: u64) -> Result<NetworkIR<T>> {
    let mut b = NetworkBuilder::new(&[1, 8, 8]);
    b.conv2d("stem", &["input"], 4, 3, 1, 1, 1, false)
        .batch_norm("stem_bn", &["stem"])
        .relu("stem_relu", &["stem_bn"])
        .conv2d("d1", &["stem_relu"], 4, 3, 1, 1, 1, false)
        .batch_norm("d1_bn", &["d1"])
        .relu("d1_relu", &["d1_bn"])
        .concat("cat1", &["stem_relu", "d1_relu"])
        .conv2d("d2", &["cat1"], 4, 3, 1, 1, 1, false)
        .batch_norm("d2_bn", &["d2"])
        .relu("d2_relu", &["d2_bn"])
        .concat("cat2", &["cat1", "d2_relu"])
        .split("split", &["cat2"], &[6, 6])
        .conv2d("trans", &["split:0"], 6, 1, 1, 0, 1, false)
        .add("merge", &["trans", "split:1"])
        .pool("pool", &["merge"], 4)
        .flatten("flatten", &["pool"])
        .linear("fc", &["flatten"], 4, true);
    b.build(seed)
}

/// Depthwise-separable blocks.
pub fn depthwise<T: Scalar>(seed: u64) -> Result<NetworkIR<T>> {
    let mut b = NetworkBuilder::new(&[1, 8, 8]);
    b.conv2d("stem", &["input"], 8, 3, 1, 1, 1, false)
        .batch_norm("stem_bn", &["stem"])
        .relu("stem_relu", &["stem_bn"])
        .conv2d("dw1", &["stem_relu"], 8, 3, 1, 1, 8, false)
        .batch_norm("dw1_bn", &["dw1"])
        .relu("dw1_relu", &["dw1_bn"])
        .conv2d("pw1", &["dw1_relu"], 12, 1, 1, 0, 1, false)
        .batch_norm("pw1_bn", &["pw1"])
        .relu("pw1_relu", &["pw1_bn"])
        .conv2d("gc", &["pw1_relu"], 12, 3, 2, 1, 4, true)
        .relu("gc_relu", &["gc"])
        .pool("pool", &["gc_relu"], 4)
        .flatten("flatten", &["pool"])
        .linear("fc", &["flatten"], 4, true);
    b.build(seed)
}

pub fn by_name<T: Scalar>(name: &str, seed: u64) -> Result<NetworkIR<T>> {
    match name {
        "resblock" => resblock(seed),
        "mlp" => mlp(seed),
        "mlp2" => mlp2(seed),
        "resnet" => resnet(seed),
        "densenet" => densenet(seed),
        "depthwise" => depthwise(seed),
        _ => Err(Error::Config(format!("unknown model `{name}` (expected one of {})", MODEL_NAMES.join(", ")))),
    }
}
