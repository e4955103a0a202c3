//! Shipped model graphs with seeded synthetic weights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::graph::{BatchNorm, InputShape, Layer, LayerKind, ModelGraph, Shortcut};
use crate::packed::{ConvWeights, LinearWeights, PolyactCoeffs, SeWeights, SigmoidCoeffs};

/// Latent geometry of the default preset (`f = 8` on 256x256 images).
pub const LATENT_SHAPE: InputShape = InputShape {
    height: 32,
    width: 32,
    channels: 4,
};

pub const NUM_CLASSES: usize = 14;

#[derive(Debug, Clone, PartialEq)]
pub struct ResnetConfig {
    pub input: InputShape,
    pub widths: [usize; 3],
    pub blocks_per_stage: usize,
    pub se: bool,
    pub se_reduction: usize,
    pub num_classes: usize,
    pub seed: u64,
}

impl Default for ResnetConfig {
    fn default() -> Self {
        Self {
            input: LATENT_SHAPE,
            widths: [8, 16, 32],
            blocks_per_stage: 3,
            se: false,
            se_reduction: 2,
            num_classes: NUM_CLASSES,
            seed: 20,
        }
    }
}

struct Init(ChaCha20Rng);

impl Init {
    fn uniform(&mut self, n: usize, lim: f64) -> Vec<f64> {
        (0..n).map(|_| self.0.gen_range(-lim..=lim)).collect()
    }

    fn conv(&mut self, cin: usize, cout: usize, k: usize, stride: usize, gain: f64) -> ConvWeights {
        let lim = gain * (3.0 / (cin * k * k) as f64).sqrt();
        ConvWeights {
            weights: self.uniform(cout * cin * k * k, lim),
            bias: self.uniform(cout, 0.05),
            ..ConvWeights::zeros(cout, cin, k, stride)
        }
    }

    fn bn(&mut self, c: usize) -> BatchNorm {
        BatchNorm {
            gamma: (0..c).map(|_| self.0.gen_range(0.6..1.0)).collect(),
            beta: self.uniform(c, 0.1),
            mean: self.uniform(c, 0.1),
            var: (0..c).map(|_| self.0.gen_range(0.8..1.2)).collect(),
            eps: BatchNorm::DEFAULT_EPS,
        }
    }

    fn polyact(&mut self) -> PolyactCoeffs {
        PolyactCoeffs {
            a: self.0.gen_range(0.02..0.08),
            b: self.0.gen_range(0.8..1.0),
            c: self.0.gen_range(-0.05..0.05),
        }
    }

    fn se(&mut self, c: usize, r: usize) -> SeWeights {
        let m = c / r;
        SeWeights {
            channels: c,
            reduction: r,
            fc1: self.uniform(m * c, (3.0 / c as f64).sqrt()),
            fc2: self.uniform(c * m, (3.0 / m as f64).sqrt()),
            act: self.polyact(),
            gate: SigmoidCoeffs::least_squares(-5.0, 5.0),
        }
    }
}

/// ResNet-20 on latent maps: stem, three stages of basic blocks with
/// polynomial activations (optionally with squeeze-and-excitation), pooling
/// and a linear head. Batch norms are left unfolded.
pub fn resnet20_latent(cfg: &ResnetConfig) -> ModelGraph {
    let mut init = Init(ChaCha20Rng::seed_from_u64(cfg.seed));
    let mut layers = Vec::new();
    let w = cfg.widths;
    layers.push(Layer::new("stem.conv", LayerKind::Conv(init.conv(cfg.input.channels, w[0], 3, 1, 1.0))));
    layers.push(Layer::new("stem.bn", LayerKind::BatchNorm(init.bn(w[0]))));
    layers.push(Layer::new("stem.act", LayerKind::Polyact(init.polyact())));
    let mut cin = w[0];
    for (s, &width) in w.iter().enumerate() {
        for b in 0..cfg.blocks_per_stage {
            let p = format!("stage{}.block{}", s + 1, b);
            let stride = if s > 0 && b == 0 { 2 } else { 1 };
            let shortcut = (stride != 1 || cin != width).then(|| Shortcut {
                conv: init.conv(cin, width, 1, stride, 1.0),
                bn: Some(init.bn(width)),
            });
            layers.push(Layer::new(format!("{p}.begin"), LayerKind::ResidualBegin { shortcut }));
            layers.push(Layer::new(format!("{p}.conv1"), LayerKind::Conv(init.conv(cin, width, 3, stride, 1.0))));
            layers.push(Layer::new(format!("{p}.bn1"), LayerKind::BatchNorm(init.bn(width))));
            layers.push(Layer::new(format!("{p}.act1"), LayerKind::Polyact(init.polyact())));
            layers.push(Layer::new(format!("{p}.conv2"), LayerKind::Conv(init.conv(width, width, 3, 1, 0.5))));
            layers.push(Layer::new(format!("{p}.bn2"), LayerKind::BatchNorm(init.bn(width))));
            if cfg.se {
                layers.push(Layer::new(format!("{p}.se"), LayerKind::Se(init.se(width, cfg.se_reduction))));
            }
            layers.push(Layer::new(format!("{p}.end"), LayerKind::ResidualEnd));
            layers.push(Layer::new(format!("{p}.act2"), LayerKind::Polyact(init.polyact())));
            cin = width;
        }
    }
    layers.push(Layer::new("pool", LayerKind::GlobalAvgPool));
    layers.push(Layer::new(
        "head",
        LayerKind::Linear(LinearWeights {
            in_features: cin,
            out_features: cfg.num_classes,
            weights: init.uniform(cfg.num_classes * cin, (3.0 / cin as f64).sqrt()),
            bias: init.uniform(cfg.num_classes, 0.1),
        }),
    ));
    ModelGraph {
        name: if cfg.se { "resnet20-se-latent" } else { "resnet20-latent" }.into(),
        input: cfg.input,
        layers,
        num_classes: cfg.num_classes,
        refresh_points: Vec::new(),
    }
}

/// Fixed small graph used for timing across latent geometries:
/// 3x3 conv to four channels, polyact, pooling, linear head.
pub fn bench_graph(input: InputShape, seed: u64) -> ModelGraph {
    let mut init = Init(ChaCha20Rng::seed_from_u64(seed));
    ModelGraph {
        name: format!("bench-{}x{}x{}", input.height, input.width, input.channels),
        input,
        layers: vec![
            Layer::new("conv", LayerKind::Conv(init.conv(input.channels, 4, 3, 1, 1.0))),
            Layer::new("act", LayerKind::Polyact(init.polyact())),
            Layer::new("pool", LayerKind::GlobalAvgPool),
            Layer::new(
                "head",
                LayerKind::Linear(LinearWeights {
                    in_features: 4,
                    out_features: NUM_CLASSES,
                    weights: init.uniform(4 * NUM_CLASSES, 0.8),
                    bias: init.uniform(NUM_CLASSES, 0.1),
                }),
            ),
        ],
        num_classes: NUM_CLASSES,
        refresh_points: Vec::new(),
    }
}
