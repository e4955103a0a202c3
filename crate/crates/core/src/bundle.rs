//! `WBND` weight bundles.
//!
//! Layout: magic `WBND`, `u16` version, `u32` manifest length, the UTF-8
//! JSON manifest, zero padding to an 8-byte boundary, the blob section
//! (little-endian `f32` tensors, each starting 8-byte aligned), and a `u32`
//! CRC-32 of the blob section. The manifest lists layers with their
//! activation coefficients and blob references, plus a blob table with
//! shapes, offsets and per-blob CRC-32s.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{BatchNorm, InputShape, Layer, LayerKind, ModelGraph, Shortcut};
use crate::packed::{ConvWeights, LinearWeights, PolyactCoeffs, SeWeights, SigmoidCoeffs};

pub const MAGIC: &[u8; 4] = b"WBND";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset within the blob section.
    pub offset: u64,
    pub crc32: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvEntry {
    pub stride: usize,
    pub bn_folded: bool,
    pub weight: String,
    pub bias: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormEntry {
    pub eps: f64,
    pub gamma: String,
    pub beta: String,
    pub mean: String,
    pub var: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortcutEntry {
    pub conv: ConvEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bn: Option<BatchNormEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerEntry {
    Conv {
        name: String,
        #[serde(flatten)]
        conv: ConvEntry,
    },
    BatchNorm {
        name: String,
        #[serde(flatten)]
        bn: BatchNormEntry,
    },
    Polyact {
        name: String,
        #[serde(flatten)]
        coeffs: PolyactCoeffs,
    },
    ApproxSigmoid {
        name: String,
        #[serde(flatten)]
        coeffs: SigmoidCoeffs,
    },
    GlobalAvgPool {
        name: String,
    },
    Linear {
        name: String,
        weight: String,
        bias: String,
    },
    ResidualBegin {
        name: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        shortcut: Option<ShortcutEntry>,
    },
    ResidualEnd {
        name: String,
    },
    Se {
        name: String,
        reduction: usize,
        fc1: String,
        fc2: String,
        act: PolyactCoeffs,
        gate: SigmoidCoeffs,
    },
}

impl LayerEntry {
    pub fn name(&self) -> &str {
        match self {
            LayerEntry::Conv { name, .. }
            | LayerEntry::BatchNorm { name, .. }
            | LayerEntry::Polyact { name, .. }
            | LayerEntry::ApproxSigmoid { name, .. }
            | LayerEntry::GlobalAvgPool { name }
            | LayerEntry::Linear { name, .. }
            | LayerEntry::ResidualBegin { name, .. }
            | LayerEntry::ResidualEnd { name }
            | LayerEntry::Se { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u16,
    pub name: String,
    pub input: InputShape,
    pub num_classes: usize,
    pub layers: Vec<LayerEntry>,
    pub blobs: Vec<BlobEntry>,
}

struct BlobWriter {
    table: Vec<BlobEntry>,
    data: Vec<u8>,
}

impl BlobWriter {
    fn put(&mut self, name: String, shape: Vec<usize>, values: &[f64]) -> String {
        while self.data.len() % 8 != 0 {
            self.data.push(0);
        }
        let offset = self.data.len() as u64;
        let start = self.data.len();
        for &v in values {
            self.data.extend_from_slice(&(v as f32).to_le_bytes());
        }
        self.table.push(BlobEntry {
            crc32: crc32fast::hash(&self.data[start..]),
            name: name.clone(),
            shape,
            offset,
        });
        name
    }

    fn conv(&mut self, prefix: &str, w: &ConvWeights) -> ConvEntry {
        ConvEntry {
            stride: w.stride,
            bn_folded: w.bn_folded,
            weight: self.put(
                format!("{prefix}.weight"),
                vec![w.out_channels, w.in_channels, w.kernel_h, w.kernel_w],
                &w.weights,
            ),
            bias: self.put(format!("{prefix}.bias"), vec![w.out_channels], &w.bias),
        }
    }

    fn bn(&mut self, prefix: &str, bn: &BatchNorm) -> BatchNormEntry {
        let c = bn.channels();
        BatchNormEntry {
            eps: bn.eps,
            gamma: self.put(format!("{prefix}.gamma"), vec![c], &bn.gamma),
            beta: self.put(format!("{prefix}.beta"), vec![c], &bn.beta),
            mean: self.put(format!("{prefix}.mean"), vec![c], &bn.mean),
            var: self.put(format!("{prefix}.var"), vec![c], &bn.var),
        }
    }
}

/// Serializes `graph`; weights are stored as `f32`.
pub fn to_bytes(graph: &ModelGraph) -> Result<Vec<u8>> {
    graph.shapes()?;
    let mut w = BlobWriter {
        table: Vec::new(),
        data: Vec::new(),
    };
    let layers = graph
        .layers
        .iter()
        .map(|l| {
            let name = l.name.clone();
            match &l.kind {
                LayerKind::Conv(c) => LayerEntry::Conv {
                    conv: w.conv(&name, c),
                    name,
                },
                LayerKind::BatchNorm(bn) => LayerEntry::BatchNorm {
                    bn: w.bn(&name, bn),
                    name,
                },
                LayerKind::Polyact(coeffs) => LayerEntry::Polyact { name, coeffs: *coeffs },
                LayerKind::ApproxSigmoid(coeffs) => LayerEntry::ApproxSigmoid { name, coeffs: *coeffs },
                LayerKind::GlobalAvgPool => LayerEntry::GlobalAvgPool { name },
                LayerKind::Linear(lw) => LayerEntry::Linear {
                    weight: w.put(format!("{name}.weight"), vec![lw.out_features, lw.in_features], &lw.weights),
                    bias: w.put(format!("{name}.bias"), vec![lw.out_features], &lw.bias),
                    name,
                },
                LayerKind::ResidualBegin { shortcut } => LayerEntry::ResidualBegin {
                    shortcut: shortcut.as_ref().map(|sc| ShortcutEntry {
                        conv: w.conv(&format!("{name}.shortcut"), &sc.conv),
                        bn: sc.bn.as_ref().map(|bn| w.bn(&format!("{name}.shortcut_bn"), bn)),
                    }),
                    name,
                },
                LayerKind::ResidualEnd => LayerEntry::ResidualEnd { name },
                LayerKind::Se(se) => {
                    let m = se.hidden();
                    LayerEntry::Se {
                        reduction: se.reduction,
                        fc1: w.put(format!("{name}.fc1"), vec![m, se.channels], &se.fc1),
                        fc2: w.put(format!("{name}.fc2"), vec![se.channels, m], &se.fc2),
                        act: se.act,
                        gate: se.gate,
                        name,
                    }
                }
            }
        })
        .collect();
    let manifest = Manifest {
        format_version: VERSION,
        name: graph.name.clone(),
        input: graph.input,
        num_classes: graph.num_classes,
        layers,
        blobs: w.table,
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Bundle(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + w.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    while out.len() % 8 != 0 {
        out.push(0);
    }
    out.extend_from_slice(&w.data);
    out.extend_from_slice(&crc32fast::hash(&w.data).to_le_bytes());
    Ok(out)
}

/// Splits a bundle into its manifest and blob section, checking framing and the trailer.
pub fn parse(bytes: &[u8]) -> Result<(Manifest, &[u8])> {
    if bytes.len() < 10 || &bytes[..4] != MAGIC {
        return Err(Error::Bundle("not a weight bundle (bad magic)".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Bundle(format!("unsupported bundle version {version}")));
    }
    let len = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let json_end = 10usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Bundle("truncated manifest".into()))?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes[10..json_end]).map_err(|e| Error::Bundle(format!("manifest: {e}")))?;
    if manifest.format_version != version {
        return Err(Error::Bundle("manifest and header versions differ".into()));
    }
    let blob_start = json_end.div_ceil(8) * 8;
    if bytes.len() < blob_start + 4 {
        return Err(Error::Bundle("truncated blob section".into()));
    }
    let blob_end = bytes.len() - 4;
    let data = &bytes[blob_start..blob_end];
    let crc = u32::from_le_bytes(bytes[blob_end..].try_into().expect("4 bytes"));
    if crc32fast::hash(data) != crc {
        let culprit = manifest.blobs.iter().find(|b| {
            let start = b.offset as usize;
            let end = start + 4 * b.shape.iter().product::<usize>();
            data.get(start..end).map_or(true, |s| crc32fast::hash(s) != b.crc32)
        });
        return Err(Error::Bundle(match culprit {
            Some(b) => format!("checksum mismatch in blob {} of layer {}", b.name, owner(&manifest, &b.name)),
            None => "checksum mismatch in the blob section".into(),
        }));
    }
    Ok((manifest, data))
}

fn owner<'a>(manifest: &'a Manifest, blob: &str) -> &'a str {
    manifest
        .layers
        .iter()
        .map(|l| l.name())
        .filter(|n| blob.starts_with(&format!("{n}.")))
        .max_by_key(|n| n.len())
        .unwrap_or("?")
}

struct Blobs<'a> {
    table: BTreeMap<&'a str, &'a BlobEntry>,
    data: &'a [u8],
    used: BTreeMap<&'a str, usize>,
}

impl<'a> Blobs<'a> {
    fn get(&mut self, layer: &str, name: &'a str, shape: &[usize]) -> Result<Vec<f64>> {
        let err = |msg: String| Error::Bundle(format!("layer {layer}: {msg}"));
        let entry = self.table.get(name).ok_or_else(|| err(format!("missing blob {name}")))?;
        if entry.shape != shape {
            return Err(err(format!(
                "blob {name} has shape {:?}, expected {shape:?}",
                entry.shape
            )));
        }
        *self.used.entry(name).or_default() += 1;
        let start = entry.offset as usize;
        let n: usize = shape.iter().product();
        let bytes = start
            .checked_add(4 * n)
            .and_then(|end| self.data.get(start..end))
            .ok_or_else(|| err(format!("blob {name} lies outside the blob section")))?;
        if crc32fast::hash(bytes) != entry.crc32 {
            return Err(err(format!("checksum mismatch in blob {name}")));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(err(format!("blob {name} has non-finite values")));
        }
        Ok(values)
    }

    fn shape_of(&self, layer: &str, name: &str) -> Result<&'a [usize]> {
        self.table
            .get(name)
            .map(|e| e.shape.as_slice())
            .ok_or_else(|| Error::Bundle(format!("layer {layer}: missing blob {name}")))
    }

    fn conv(&mut self, layer: &str, e: &'a ConvEntry) -> Result<ConvWeights> {
        let shape = self.shape_of(layer, &e.weight)?;
        let [out_channels, in_channels, kernel_h, kernel_w] = shape else {
            return Err(Error::Bundle(format!(
                "layer {layer}: blob {} has shape {shape:?}, expected 4 dimensions",
                e.weight
            )));
        };
        let w = ConvWeights {
            out_channels: *out_channels,
            in_channels: *in_channels,
            kernel_h: *kernel_h,
            kernel_w: *kernel_w,
            stride: e.stride,
            weights: self.get(layer, &e.weight, shape)?,
            bias: self.get(layer, &e.bias, &[*out_channels])?,
            bn_folded: e.bn_folded,
        };
        w.validate().map_err(|err| Error::Bundle(format!("layer {layer}: {err}")))?;
        Ok(w)
    }

    fn bn(&mut self, layer: &str, e: &'a BatchNormEntry, channels: usize) -> Result<BatchNorm> {
        Ok(BatchNorm {
            gamma: self.get(layer, &e.gamma, &[channels])?,
            beta: self.get(layer, &e.beta, &[channels])?,
            mean: self.get(layer, &e.mean, &[channels])?,
            var: self.get(layer, &e.var, &[channels])?,
            eps: e.eps,
        })
    }
}

/// Loads and shape-checks a graph from bundle bytes.
pub fn from_bytes(bytes: &[u8]) -> Result<ModelGraph> {
    let (manifest, data) = parse(bytes)?;
    let mut blobs = Blobs {
        table: manifest.blobs.iter().map(|b| (b.name.as_str(), b)).collect(),
        data,
        used: BTreeMap::new(),
    };
    if blobs.table.len() != manifest.blobs.len() {
        return Err(Error::Bundle("duplicate blob names".into()));
    }
    // channel count entering each layer, for batch-norm lengths
    let mut channels = manifest.input.channels;
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for entry in &manifest.layers {
        let name = entry.name();
        let kind = match entry {
            LayerEntry::Conv { conv, .. } => {
                let c = blobs.conv(name, conv)?;
                channels = c.out_channels;
                LayerKind::Conv(c)
            }
            LayerEntry::BatchNorm { bn, .. } => LayerKind::BatchNorm(blobs.bn(name, bn, channels)?),
            LayerEntry::Polyact { coeffs, .. } => LayerKind::Polyact(*coeffs),
            LayerEntry::ApproxSigmoid { coeffs, .. } => LayerKind::ApproxSigmoid(*coeffs),
            LayerEntry::GlobalAvgPool { .. } => LayerKind::GlobalAvgPool,
            LayerEntry::Linear { weight, bias, .. } => {
                let shape = blobs.shape_of(name, weight)?;
                let [out_features, in_features] = shape else {
                    return Err(Error::Bundle(format!("layer {name}: blob {weight} must be 2-dimensional")));
                };
                LayerKind::Linear(LinearWeights {
                    in_features: *in_features,
                    out_features: *out_features,
                    weights: blobs.get(name, weight, shape)?,
                    bias: blobs.get(name, bias, &[*out_features])?,
                })
            }
            LayerEntry::ResidualBegin { shortcut, .. } => LayerKind::ResidualBegin {
                shortcut: match shortcut {
                    None => None,
                    Some(sc) => {
                        let conv = blobs.conv(name, &sc.conv)?;
                        let bn = match &sc.bn {
                            Some(e) => Some(blobs.bn(name, e, conv.out_channels)?),
                            None => None,
                        };
                        Some(Shortcut { conv, bn })
                    }
                },
            },
            LayerEntry::ResidualEnd { .. } => LayerKind::ResidualEnd,
            LayerEntry::Se {
                reduction,
                fc1,
                fc2,
                act,
                gate,
                ..
            } => {
                if *reduction == 0 || channels % reduction != 0 {
                    return Err(Error::Bundle(format!(
                        "layer {name}: reduction {reduction} does not divide {channels} channels"
                    )));
                }
                let m = channels / reduction;
                LayerKind::Se(SeWeights {
                    channels,
                    reduction: *reduction,
                    fc1: blobs.get(name, fc1, &[m, channels])?,
                    fc2: blobs.get(name, fc2, &[channels, m])?,
                    act: *act,
                    gate: *gate,
                })
            }
        };
        layers.push(Layer::new(name, kind));
    }
    if let Some(b) = manifest.blobs.iter().find(|b| blobs.used.get(b.name.as_str()) != Some(&1)) {
        return Err(Error::Bundle(format!(
            "blob {} is referenced {} times (layer {})",
            b.name,
            blobs.used.get(b.name.as_str()).copied().unwrap_or(0),
            owner(&manifest, &b.name)
        )));
    }
    let graph = ModelGraph {
        name: manifest.name.clone(),
        input: manifest.input,
        layers,
        num_classes: manifest.num_classes,
        refresh_points: Vec::new(),
    };
    graph.shapes().map_err(|e| Error::Bundle(e.to_string()))?;
    Ok(graph)
}

pub fn write(path: &Path, graph: &ModelGraph) -> Result<()> {
    std::fs::write(path, to_bytes(graph)?)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<ModelGraph> {
    from_bytes(&std::fs::read(path)?)
}

/// Rounds every weight to `f32`, matching what a bundle stores.
pub fn quantize(graph: &ModelGraph) -> Result<ModelGraph> {
    from_bytes(&to_bytes(graph)?)
}
