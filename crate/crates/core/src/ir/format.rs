//! On-disk model format: a JSON descriptor plus a sidecar blob of
//! little-endian `f32` values, row-major, concatenated in descriptor order.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Component, ComponentKind, Edge, NetworkIR, Violation};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const FORMAT_NAME: &str = "structprune-model";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct Descriptor {
    pub format: String,
    pub version: u32,
    pub input_shape: Vec<usize>,
    pub components: Vec<ComponentRecord>,
    pub edges: Vec<EdgeRecord>,
    /// Blob file name, relative to the descriptor.
    pub blob: String,
    pub tensors: Vec<TensorRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct ComponentRecord {
    pub id: String,
    pub kind: ComponentKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub params: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct EdgeRecord {
    pub from: String,
    pub to: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub piece: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct TensorRecord {
    pub name: String,
    /// Byte offset into the blob.
    pub offset: u64,
    pub shape: Vec<usize>,
}

fn blob_path(descriptor: &Path) -> PathBuf {
    descriptor.with_extension("bin")
}

/// Encodes a network as `(descriptor JSON, blob bytes)`.
pub fn serialize_to_bytes<T: Scalar>(ir: &NetworkIR<T>, blob_name: &str) -> (String, Vec<u8>) {
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    let mut components = Vec::with_capacity(ir.len());
    for c in &ir.components {
        let params = c.param_names();
        for name in &params {
            if let Some(t) = ir.weights.get(name) {
                tensors.push(TensorRecord { name: name.clone(), offset: blob.len() as u64, shape: t.shape().to_vec() });
                for v in t.data() {
                    blob.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
                }
            }
        }
        components.push(ComponentRecord {
            id: c.id.clone(),
            kind: c.kind.clone(),
            in_channels: c.in_channels,
            out_channels: c.out_channels,
            params,
        });
    }
    let edges = ir
        .edges
        .iter()
        .map(|e| EdgeRecord {
            from: ir.components[e.from].id.clone(),
            to: ir.components[e.to].id.clone(),
            piece: e.piece,
        })
        .collect();
    let d = Descriptor {
        format: FORMAT_NAME.to_string(),
        version: FORMAT_VERSION,
        input_shape: ir.input_shape.clone(),
        components,
        edges,
        blob: blob_name.to_string(),
        tensors,
    };
    let mut json = serde_json::to_string_pretty(&d).expect("descriptor serializes");
    json.push('\n');
    (json, blob)
}

/// Writes `path` (descriptor) and its `.bin` sidecar.
pub fn serialize<T: Scalar>(ir: &NetworkIR<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let blob = blob_path(path);
    let blob_name = blob.file_name().and_then(|s| s.to_str()).unwrap_or("model.bin").to_string();
    let (json, bytes) = serialize_to_bytes(ir, &blob_name);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, json).map_err(|e| Error::io(path, e))?;
    fs::write(&blob, bytes).map_err(|e| Error::io(&blob, e))?;
    Ok(())
}

pub(crate) fn read_descriptor(path: &Path) -> Result<Descriptor> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let d: Descriptor = serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
    if d.format != FORMAT_NAME {
        return Err(Error::field(format!("{}: format", path.display()), format!("unknown format `{}`", d.format)));
    }
    if d.version != FORMAT_VERSION {
        return Err(Error::field(format!("{}: version", path.display()), format!("unsupported version {}", d.version)));
    }
    Ok(d)
}

/// Loads a model file into a validated network.
pub fn decompose(path: impl AsRef<Path>) -> Result<NetworkIR<f32>> {
    let path = path.as_ref();
    let d = read_descriptor(path)?;
    let blob_file = path.parent().unwrap_or(Path::new(".")).join(&d.blob);
    let blob = fs::read(&blob_file).map_err(|e| Error::io(&blob_file, e))?;
    from_parts(&d, &blob, &path.display().to_string())
}

pub(crate) fn from_parts(d: &Descriptor, blob: &[u8], ctx: &str) -> Result<NetworkIR<f32>> {
    let mut index = BTreeMap::new();
    for (i, c) in d.components.iter().enumerate() {
        if index.insert(c.id.as_str(), i).is_some() {
            return Err(Error::Validation(vec![Violation::DuplicateId(c.id.clone())]));
        }
    }
    let lookup = |id: &str, field: String| {
        index.get(id).copied().ok_or_else(|| Error::field(format!("{ctx}: {field}"), format!("unknown component `{id}`")))
    };
    let mut edges = Vec::with_capacity(d.edges.len());
    for (i, e) in d.edges.iter().enumerate() {
        edges.push(Edge {
            from: lookup(&e.from, format!("edges[{i}].from"))?,
            to: lookup(&e.to, format!("edges[{i}].to"))?,
            piece: e.piece,
        });
    }

    let mut weights = BTreeMap::new();
    for (i, t) in d.tensors.iter().enumerate() {
        let n: usize = t.shape.iter().product();
        let start = usize::try_from(t.offset).unwrap_or(usize::MAX);
        let end = start.checked_add(4 * n).filter(|&e| e <= blob.len()).ok_or_else(|| {
            Error::field(
                format!("{ctx}: tensors[{i}]"),
                format!("`{}` spans past the end of the {}-byte blob", t.name, blob.len()),
            )
        })?;
        let data: Vec<f32> = blob[start..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if weights.insert(t.name.clone(), Tensor::from_parts(t.shape.clone(), data)).is_some() {
            return Err(Error::field(format!("{ctx}: tensors[{i}]"), format!("duplicate tensor `{}`", t.name)));
        }
    }

    let mut violations = Vec::new();
    let components: Vec<Component> = d
        .components
        .iter()
        .map(|r| {
            let c = Component {
                id: r.id.clone(),
                kind: r.kind.clone(),
                in_channels: r.in_channels,
                out_channels: r.out_channels,
            };
            let expected = c.param_names();
            for p in &r.params {
                if !expected.contains(p) {
                    violations.push(Violation::UnexpectedParam(p.clone()));
                }
            }
            for p in &expected {
                if !r.params.contains(p) {
                    violations.push(Violation::MissingParam(p.clone()));
                }
            }
            c
        })
        .collect();
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    let ir = NetworkIR { components, edges, input_shape: d.input_shape.clone(), weights };
    ir.validate().map_err(Error::Validation)?;
    Ok(ir)
}
