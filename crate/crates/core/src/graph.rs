//! Model description, batch-norm folding, shape checking and the plaintext forward pass.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::LatentTensor;
use crate::layout::Layout;
use crate::packed::{cost, ConvWeights, LinearWeights, PolyactCoeffs, SeWeights, SigmoidCoeffs};
use crate::reference::{self, PlainTensor};

/// Inference-time batch normalisation statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub eps: f64,
}

impl BatchNorm {
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            eps: 0.0,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn validate(&self) -> Result<()> {
        let c = self.channels();
        if self.beta.len() != c || self.mean.len() != c || self.var.len() != c {
            return Err(Error::Shape("batch norm statistics differ in length".into()));
        }
        if self.var.iter().any(|&v| !(v + self.eps > 0.0)) {
            return Err(Error::Shape("batch norm variance must be positive".into()));
        }
        Ok(())
    }

    fn factor(&self, c: usize) -> f64 {
        self.gamma[c] / (self.var[c] + self.eps).sqrt()
    }

    fn apply(&self, c: usize, x: f64) -> f64 {
        (x - self.mean[c]) * self.factor(c) + self.beta[c]
    }

    /// Rewrites `conv` so that it computes `bn(conv(x))`.
    pub fn fold_into(&self, conv: &mut ConvWeights) -> Result<()> {
        self.validate()?;
        if self.channels() != conv.out_channels {
            return Err(Error::Shape(format!(
                "batch norm has {} channels, conv produces {}",
                self.channels(),
                conv.out_channels
            )));
        }
        let per_out = conv.in_channels * conv.kernel_h * conv.kernel_w;
        for o in 0..conv.out_channels {
            let f = self.factor(o);
            for w in &mut conv.weights[o * per_out..(o + 1) * per_out] {
                *w *= f;
            }
            conv.bias[o] = (conv.bias[o] - self.mean[o]) * f + self.beta[o];
        }
        conv.bn_folded = true;
        Ok(())
    }
}

/// Projection applied to the skip branch of a residual block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shortcut {
    pub conv: ConvWeights,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bn: Option<BatchNorm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv(ConvWeights),
    BatchNorm(BatchNorm),
    Polyact(PolyactCoeffs),
    ApproxSigmoid(SigmoidCoeffs),
    GlobalAvgPool,
    Linear(LinearWeights),
    ResidualBegin {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        shortcut: Option<Shortcut>,
    },
    ResidualEnd,
    Se(SeWeights),
}

impl LayerKind {
    pub fn tag(&self) -> &'static str {
        match self {
            LayerKind::Conv(_) => "conv",
            LayerKind::BatchNorm(_) => "batch_norm",
            LayerKind::Polyact(_) => "polyact",
            LayerKind::ApproxSigmoid(_) => "approx_sigmoid",
            LayerKind::GlobalAvgPool => "global_avg_pool",
            LayerKind::Linear(_) => "linear",
            LayerKind::ResidualBegin { .. } => "residual_begin",
            LayerKind::ResidualEnd => "residual_end",
            LayerKind::Se(_) => "se",
        }
    }

    /// Levels consumed on the main path.
    pub fn level_cost(&self) -> usize {
        match self {
            LayerKind::Conv(_) => cost::CONV,
            LayerKind::Polyact(_) => cost::POLYACT,
            LayerKind::ApproxSigmoid(_) => cost::APPROX_SIGMOID,
            LayerKind::GlobalAvgPool => cost::GLOBAL_AVG_POOL,
            LayerKind::Linear(_) => cost::LINEAR,
            LayerKind::Se(_) => cost::SE,
            LayerKind::BatchNorm(_) | LayerKind::ResidualBegin { .. } | LayerKind::ResidualEnd => {
                cost::RESIDUAL_ADD
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
}

impl Layer {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGraph {
    pub name: String,
    pub input: InputShape,
    pub layers: Vec<Layer>,
    pub num_classes: usize,
    /// Indices of layers preceded by a refresh; filled by the planner.
    #[serde(default)]
    pub refresh_points: Vec<usize>,
}

/// Geometry of the value flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Map { layout: Layout, channels: usize },
    Logits(usize),
}

impl ModelGraph {
    /// Output shape after every layer, checking names, channel counts,
    /// residual nesting and the final class count.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let mut names = HashSet::new();
        let mut cur = Shape::Map {
            layout: Layout::new(self.input.height, self.input.width),
            channels: self.input.channels,
        };
        let mut skip: Option<(Shape, &Option<Shortcut>)> = None;
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let bad = |msg: String| Error::Shape(format!("layer {}: {msg}", layer.name));
            if !names.insert(layer.name.as_str()) {
                return Err(bad("duplicate layer name".into()));
            }
            let Shape::Map { layout, channels } = cur else {
                return Err(bad("no layer may follow the linear head".into()));
            };
            cur = match &layer.kind {
                LayerKind::Conv(w) => {
                    w.validate().map_err(|e| bad(e.to_string()))?;
                    if w.in_channels != channels {
                        return Err(bad(format!("expects {} channels, receives {channels}", w.in_channels)));
                    }
                    let (layout, _) = layout.conv_taps(w.kernel_h, w.kernel_w, w.stride)?;
                    Shape::Map {
                        layout,
                        channels: w.out_channels,
                    }
                }
                LayerKind::BatchNorm(bn) => {
                    bn.validate().map_err(|e| bad(e.to_string()))?;
                    if bn.channels() != channels {
                        return Err(bad(format!("has {} channels, receives {channels}", bn.channels())));
                    }
                    cur
                }
                LayerKind::Polyact(_) | LayerKind::ApproxSigmoid(_) => cur,
                LayerKind::GlobalAvgPool => Shape::Map {
                    layout: Layout::new(1, 1),
                    channels,
                },
                LayerKind::Se(se) => {
                    se.validate().map_err(|e| bad(e.to_string()))?;
                    if se.channels != channels || layout.len() == 1 {
                        return Err(bad(format!("expects a spatial map with {} channels", se.channels)));
                    }
                    cur
                }
                LayerKind::Linear(lw) => {
                    lw.validate().map_err(|e| bad(e.to_string()))?;
                    if layout.len() != 1 || lw.in_features != channels {
                        return Err(bad(format!("expects a pooled 1x1x{} input", lw.in_features)));
                    }
                    Shape::Logits(lw.out_features)
                }
                LayerKind::ResidualBegin { shortcut } => {
                    if skip.is_some() {
                        return Err(bad("residual blocks cannot nest".into()));
                    }
                    skip = Some((cur, shortcut));
                    cur
                }
                LayerKind::ResidualEnd => {
                    let Some((skip_shape, shortcut)) = skip.take() else {
                        return Err(bad("residual end without a begin".into()));
                    };
                    let skip_shape = match (skip_shape, shortcut) {
                        (s, None) => s,
                        (Shape::Map { layout, channels }, Some(sc)) => {
                            sc.conv.validate().map_err(|e| bad(e.to_string()))?;
                            if sc.conv.in_channels != channels {
                                return Err(bad("shortcut channel mismatch".into()));
                            }
                            if let Some(bn) = &sc.bn {
                                bn.validate().map_err(|e| bad(e.to_string()))?;
                                if bn.channels() != sc.conv.out_channels {
                                    return Err(bad("shortcut batch norm channel mismatch".into()));
                                }
                            }
                            let (layout, _) = layout.conv_taps(sc.conv.kernel_h, sc.conv.kernel_w, sc.conv.stride)?;
                            Shape::Map {
                                layout,
                                channels: sc.conv.out_channels,
                            }
                        }
                        (Shape::Logits(_), Some(_)) => unreachable!("residual begins on a map"),
                    };
                    if skip_shape != cur {
                        return Err(bad("main and skip branches differ in shape".into()));
                    }
                    cur
                }
            };
            out.push(cur);
        }
        if skip.is_some() {
            return Err(Error::Shape("unterminated residual block".into()));
        }
        match cur {
            Shape::Logits(k) if k == self.num_classes => Ok(out),
            _ => Err(Error::Shape(format!(
                "graph must end in a linear layer with {} outputs",
                self.num_classes
            ))),
        }
    }

    /// Folds every batch norm into the conv right before it (and shortcut
    /// batch norms into their projection), removing the BN layers.
    pub fn fold_batch_norm(&self) -> Result<ModelGraph> {
        let mut layers: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            match &layer.kind {
                LayerKind::BatchNorm(bn) => match layers.last_mut().map(|l| &mut l.kind) {
                    Some(LayerKind::Conv(conv)) => bn
                        .fold_into(conv)
                        .map_err(|e| Error::Plan(format!("cannot fold {}: {e}", layer.name)))?,
                    _ => {
                        return Err(Error::Plan(format!(
                            "batch norm {} does not follow a conv",
                            layer.name
                        )))
                    }
                },
                LayerKind::ResidualBegin {
                    shortcut: Some(Shortcut { conv, bn: Some(bn) }),
                } => {
                    let mut conv = conv.clone();
                    bn.fold_into(&mut conv)
                        .map_err(|e| Error::Plan(format!("cannot fold shortcut of {}: {e}", layer.name)))?;
                    layers.push(Layer::new(
                        layer.name.clone(),
                        LayerKind::ResidualBegin {
                            shortcut: Some(Shortcut { conv, bn: None }),
                        },
                    ));
                }
                _ => layers.push(layer.clone()),
            }
        }
        Ok(ModelGraph {
            layers,
            refresh_points: Vec::new(),
            ..self.clone()
        })
    }

    pub fn has_unfolded_batch_norm(&self) -> bool {
        self.layers.iter().any(|l| {
            matches!(
                l.kind,
                LayerKind::BatchNorm(_)
                    | LayerKind::ResidualBegin {
                        shortcut: Some(Shortcut { bn: Some(_), .. })
                    }
            )
        })
    }

    /// Broadcast span of the pooling layer at `index`: narrow when the
    /// linear head follows directly, the whole slot vector otherwise.
    pub fn pool_broadcast_span(&self, index: usize, slot_count: usize) -> usize {
        match self.layers.get(index + 1).map(|l| &l.kind) {
            Some(LayerKind::Linear(lw)) => lw.out_features.next_power_of_two().min(slot_count),
            _ => slot_count,
        }
    }

    /// Rotation steps needed to run this graph on `slot_count` slots.
    pub fn rotation_steps(&self, slot_count: usize) -> Result<BTreeSet<i64>> {
        let shapes = self.shapes()?;
        let mut steps = BTreeSet::new();
        let pow2_up_to = |span: usize, sign: i64, steps: &mut BTreeSet<i64>| {
            let mut k = 1;
            while k < span {
                steps.insert(sign * k as i64);
                k <<= 1;
            }
        };
        let mut input = Layout::new(self.input.height, self.input.width);
        for (i, layer) in self.layers.iter().enumerate() {
            match &layer.kind {
                LayerKind::Conv(w) => {
                    let (_, taps) = input.conv_taps(w.kernel_h, w.kernel_w, w.stride)?;
                    steps.extend(taps.iter().map(|t| t.rotation).filter(|&r| r != 0));
                }
                LayerKind::ResidualBegin { shortcut } => {
                    if let Some(sc) = shortcut {
                        let (_, taps) = input.conv_taps(sc.conv.kernel_h, sc.conv.kernel_w, sc.conv.stride)?;
                        steps.extend(taps.iter().map(|t| t.rotation).filter(|&r| r != 0));
                    }
                }
                LayerKind::GlobalAvgPool => {
                    pow2_up_to(input.pool_span(), 1, &mut steps);
                    pow2_up_to(self.pool_broadcast_span(i, slot_count), -1, &mut steps);
                }
                LayerKind::Se(se) => {
                    pow2_up_to(input.pool_span(), 1, &mut steps);
                    pow2_up_to(se.hidden().next_power_of_two(), 1, &mut steps);
                    pow2_up_to(input.pool_span().max(se.hidden().next_power_of_two()), -1, &mut steps);
                }
                _ => {}
            }
            if let Shape::Map { layout, .. } = shapes[i] {
                input = layout;
            }
        }
        Ok(steps)
    }

    /// Plaintext logits using the same polynomial activations as the
    /// encrypted path. Unfolded batch norms are applied directly.
    pub fn plaintext_forward(&self, latent: &LatentTensor) -> Result<Vec<f64>> {
        self.check_input(latent)?;
        self.shapes()?;
        let mut x = PlainTensor::from_latent(latent);
        let mut skip: Option<(PlainTensor, &Option<Shortcut>)> = None;
        for layer in &self.layers {
            let at = |e: Error| Error::Shape(format!("layer {}: {e}", layer.name));
            x = match &layer.kind {
                LayerKind::Conv(w) => reference::conv2d(&x, w).map_err(at)?,
                LayerKind::BatchNorm(bn) => reference::map_valid(&x, |c, v| bn.apply(c, v)),
                LayerKind::Polyact(k) => reference::polyact(&x, k),
                LayerKind::ApproxSigmoid(k) => reference::approx_sigmoid(&x, k),
                LayerKind::GlobalAvgPool => reference::global_avg_pool(&x),
                LayerKind::Se(se) => reference::se_block(&x, se).map_err(at)?,
                LayerKind::Linear(lw) => return reference::linear(&x, lw).map_err(at),
                LayerKind::ResidualBegin { shortcut } => {
                    skip = Some((x.clone(), shortcut));
                    x
                }
                LayerKind::ResidualEnd => {
                    let (s, shortcut) = skip.take().expect("shape-checked");
                    let s = match shortcut {
                        None => s,
                        Some(sc) => {
                            let y = reference::conv2d(&s, &sc.conv).map_err(at)?;
                            match &sc.bn {
                                Some(bn) => reference::map_valid(&y, |c, v| bn.apply(c, v)),
                                None => y,
                            }
                        }
                    };
                    reference::residual_add(&x, &s).map_err(at)?
                }
            };
        }
        Err(Error::Shape("graph has no linear head".into()))
    }

    pub fn check_input(&self, latent: &LatentTensor) -> Result<()> {
        if latent.geometry() != (self.input.height, self.input.width, self.input.channels) {
            return Err(Error::Shape(format!(
                "model {} expects {}x{}x{} latents, got {}x{}x{}",
                self.name,
                self.input.height,
                self.input.width,
                self.input.channels,
                latent.height,
                latent.width,
                latent.channels
            )));
        }
        Ok(())
    }
}
