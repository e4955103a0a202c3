#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::Arc;

use latent_ckks::{keygen, keygen_mock, CkksContext, CkksParams, Decryptor, Encryptor, Evaluator};
use latent_he::graph::{BatchNorm, InputShape, Layer, LayerKind, ModelGraph, Shortcut};
use latent_he::layout::Layout;
use latent_he::LatentTensor;
use latent_he::packed::{self, ConvWeights, LinearWeights, PackedTensor, PolyactCoeffs, SeWeights, SigmoidCoeffs};
use latent_he::reference::PlainTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub struct Fixture {
    pub enc: Encryptor,
    pub eval: Evaluator,
    pub dec: Decryptor,
}

/// Conv tap rotations for a map of width `w` at phases 1, 2 and 4, plus all
/// signed powers of two.
pub fn steps_for(w: usize, slots: usize) -> BTreeSet<i64> {
    let mut s = BTreeSet::new();
    for p in [1i64, 2, 4] {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let r = (dy * w as i64 + dx) * p;
                if r != 0 {
                    s.insert(r);
                }
            }
        }
    }
    let mut k = 1i64;
    while (k as usize) < slots {
        s.insert(k);
        s.insert(-k);
        k <<= 1;
    }
    s
}

impl Fixture {
    pub fn new(params: &CkksParams, mock: bool, w: usize) -> Self {
        let ctx = Arc::new(CkksContext::new(params).unwrap());
        let steps = steps_for(w, params.slot_count());
        let keys = if mock {
            keygen_mock(params, &steps).unwrap()
        } else {
            keygen(&ctx, &steps, 21).unwrap()
        };
        Self {
            enc: Encryptor::new(ctx.clone(), keys.public_keys()).unwrap(),
            eval: Evaluator::new(ctx.clone(), Arc::new(keys.public_keys().clone())).unwrap(),
            dec: Decryptor::new(ctx, &keys).unwrap(),
        }
    }

    /// Small ring with ten levels, sized for 8x8 maps.
    pub fn test(mock: bool) -> Self {
        Self::new(&CkksParams::preset_test(), mock, 8)
    }

    pub fn pack(&self, x: &PlainTensor, seed: u64) -> PackedTensor {
        packed::pack_planes(&self.enc, &x.planes, x.layout, &mut ChaCha20Rng::seed_from_u64(seed)).unwrap()
    }

    pub fn unpack(&self, x: &PackedTensor) -> Vec<Vec<f64>> {
        packed::unpack(&self.dec, x).unwrap()
    }

    /// Decrypts all slots of every channel.
    pub fn slots(&self, x: &PackedTensor) -> Vec<Vec<f64>> {
        x.channels.iter().map(|c| self.dec.decrypt(c).unwrap()).collect()
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn planes_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| max_abs_diff(x, y)).fold(0.0, f64::max)
}

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn uniform<R: Rng>(rng: &mut R, n: usize, lim: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-lim..=lim)).collect()
}

/// Random map with zeros outside the valid slots of `layout`.
pub fn random_map<R: Rng>(rng: &mut R, layout: Layout, channels: usize, lim: f64) -> PlainTensor {
    let n = layout.valid_count();
    PlainTensor {
        planes: (0..channels).map(|_| layout.expand(&uniform(rng, n, lim))).collect(),
        layout,
    }
}

pub fn random_conv<R: Rng>(rng: &mut R, cin: usize, cout: usize, k: usize, stride: usize) -> ConvWeights {
    ConvWeights {
        weights: uniform(rng, cout * cin * k * k, 1.0),
        bias: uniform(rng, cout, 1.0),
        ..ConvWeights::zeros(cout, cin, k, stride)
    }
}

pub fn random_polyact<R: Rng>(rng: &mut R) -> PolyactCoeffs {
    PolyactCoeffs {
        a: rng.gen_range(-1.0..1.0),
        b: rng.gen_range(-1.0..1.0),
        c: rng.gen_range(-1.0..1.0),
    }
}

pub fn random_sigmoid<R: Rng>(rng: &mut R) -> SigmoidCoeffs {
    SigmoidCoeffs {
        alpha: rng.gen_range(-0.5..0.5),
        beta: rng.gen_range(-0.5..0.5),
        gamma: rng.gen_range(-1.0..1.0),
        d: rng.gen_range(-1.0..1.0),
    }
}

pub fn random_se<R: Rng>(rng: &mut R, c: usize, r: usize) -> SeWeights {
    let m = c / r;
    SeWeights {
        channels: c,
        reduction: r,
        fc1: uniform(rng, m * c, 1.0),
        fc2: uniform(rng, c * m, 1.0),
        act: random_polyact(rng),
        gate: random_sigmoid(rng),
    }
}

// ---- independent dense oracles on (y, x) coordinates ----

/// Direct zero-padded convolution on the compact grid of valid pixels,
/// scattered back to full resolution.
pub fn conv_oracle(x: &PlainTensor, w: &ConvWeights) -> Vec<Vec<f64>> {
    let l = x.layout;
    let p = l.stride_phase;
    let (ch, cw) = (l.height.div_ceil(p), l.width.div_ceil(p));
    let s = w.stride;
    let (oh, ow) = (ch.div_ceil(s), cw.div_ceil(s));
    let (ry, rx) = ((w.kernel_h / 2) as i64, (w.kernel_w / 2) as i64);
    let grid: Vec<Vec<f64>> = x.planes.iter().map(|pl| l.compact(pl)).collect();
    (0..w.out_channels)
        .map(|o| {
            let mut full = vec![0.0; l.len()];
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = w.bias[o];
                    for (c, g) in grid.iter().enumerate() {
                        for ky in 0..w.kernel_h {
                            for kx in 0..w.kernel_w {
                                let yy = (i * s) as i64 + ky as i64 - ry;
                                let xx = (j * s) as i64 + kx as i64 - rx;
                                if yy >= 0 && xx >= 0 && (yy as usize) < ch && (xx as usize) < cw {
                                    acc += g[yy as usize * cw + xx as usize] * w.weight(o, c, ky, kx);
                                }
                            }
                        }
                    }
                    full[(i * s * p) * l.width + j * s * p] = acc;
                }
            }
            full
        })
        .collect()
}

pub fn masked_map(x: &PlainTensor, f: impl Fn(f64) -> f64) -> Vec<Vec<f64>> {
    let mask = x.layout.valid_mask();
    x.planes
        .iter()
        .map(|p| p.iter().zip(&mask).map(|(&v, &m)| if m == 1.0 { f(v) } else { 0.0 }).collect())
        .collect()
}

pub fn mean_valid(plane: &[f64], layout: Layout) -> f64 {
    let vals = layout.compact(plane);
    vals.iter().sum::<f64>() / vals.len() as f64
}

pub fn se_oracle(x: &PlainTensor, se: &SeWeights) -> Vec<Vec<f64>> {
    let c = se.channels;
    let m = c / se.reduction;
    let s: Vec<f64> = x.planes.iter().map(|p| mean_valid(p, x.layout)).collect();
    let h: Vec<f64> = (0..m)
        .map(|j| {
            let z: f64 = (0..c).map(|k| se.fc1[j * c + k] * s[k]).sum();
            se.act.a * z * z + se.act.b * z + se.act.c
        })
        .collect();
    x.planes
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let z: f64 = (0..m).map(|j| se.fc2[k * m + j] * h[j]).sum();
            let g = se.gate.alpha * z.powi(3) + se.gate.beta * z * z + se.gate.gamma * z + se.gate.d;
            p.iter().map(|v| v * g).collect()
        })
        .collect()
}

pub fn linear_oracle(pooled: &[f64], lw: &LinearWeights) -> Vec<f64> {
    (0..lw.out_features)
        .map(|k| lw.bias[k] + (0..lw.in_features).map(|c| lw.weights[k * lw.in_features + c] * pooled[c]).sum::<f64>())
        .collect()
}

// ---- random graphs and an independent dense forward pass ----

pub fn random_bn<R: Rng>(rng: &mut R, c: usize) -> BatchNorm {
    BatchNorm {
        gamma: (0..c).map(|_| rng.gen_range(0.5..1.5)).collect(),
        beta: uniform(rng, c, 0.5),
        mean: uniform(rng, c, 0.5),
        var: (0..c).map(|_| rng.gen_range(0.5..2.0)).collect(),
        eps: BatchNorm::DEFAULT_EPS,
    }
}

fn small_conv<R: Rng>(rng: &mut R, cin: usize, cout: usize, k: usize, stride: usize) -> ConvWeights {
    let lim = (1.5 / (cin * k * k) as f64).sqrt();
    ConvWeights {
        weights: uniform(rng, cout * cin * k * k, lim),
        bias: uniform(rng, cout, 0.1),
        ..ConvWeights::zeros(cout, cin, k, stride)
    }
}

fn mild_polyact<R: Rng>(rng: &mut R) -> PolyactCoeffs {
    PolyactCoeffs {
        a: rng.gen_range(-0.2..0.2),
        b: rng.gen_range(0.5..1.0),
        c: rng.gen_range(-0.1..0.1),
    }
}

/// Random small network on an 8x8x2 input with batch norms, residual
/// blocks (some strided with projection shortcuts), optional SE stages and
/// approximate sigmoids, ending in a pooled three-class head.
pub fn random_net<R: Rng>(rng: &mut R, allow_se: bool) -> ModelGraph {
    let input = InputShape {
        height: 8,
        width: 8,
        channels: 2,
    };
    let mut layers = Vec::new();
    let mut c = rng.gen_range(2..=4);
    layers.push(Layer::new("stem", LayerKind::Conv(small_conv(rng, 2, c, 3, 1))));
    layers.push(Layer::new("stem.bn", LayerKind::BatchNorm(random_bn(rng, c))));
    layers.push(Layer::new("stem.act", LayerKind::Polyact(mild_polyact(rng))));
    let mut size = 8usize;
    for b in 0..rng.gen_range(1..=3) {
        let stride = if size > 2 && rng.gen_bool(0.4) { 2 } else { 1 };
        let cout = if rng.gen_bool(0.3) { c + 2 } else { c };
        let shortcut = (stride != 1 || cout != c).then(|| Shortcut {
            conv: small_conv(rng, c, cout, 1, stride),
            bn: rng.gen_bool(0.5).then(|| random_bn(rng, cout)),
        });
        let p = format!("block{b}");
        layers.push(Layer::new(format!("{p}.begin"), LayerKind::ResidualBegin { shortcut }));
        layers.push(Layer::new(format!("{p}.conv1"), LayerKind::Conv(small_conv(rng, c, cout, 3, stride))));
        layers.push(Layer::new(format!("{p}.bn1"), LayerKind::BatchNorm(random_bn(rng, cout))));
        layers.push(Layer::new(format!("{p}.act1"), LayerKind::Polyact(mild_polyact(rng))));
        let k = if rng.gen_bool(0.5) { 3 } else { 1 };
        layers.push(Layer::new(format!("{p}.conv2"), LayerKind::Conv(small_conv(rng, cout, cout, k, 1))));
        if allow_se && cout % 2 == 0 && rng.gen_bool(0.5) {
            let mut se = random_se(rng, cout, 2);
            se.gate = SigmoidCoeffs::least_squares(-5.0, 5.0);
            se.act = mild_polyact(rng);
            layers.push(Layer::new(format!("{p}.se"), LayerKind::Se(se)));
        }
        layers.push(Layer::new(format!("{p}.end"), LayerKind::ResidualEnd));
        if rng.gen_bool(0.3) {
            layers.push(Layer::new(
                format!("{p}.gate"),
                LayerKind::ApproxSigmoid(SigmoidCoeffs::least_squares(-5.0, 5.0)),
            ));
        } else {
            layers.push(Layer::new(format!("{p}.act2"), LayerKind::Polyact(mild_polyact(rng))));
        }
        c = cout;
        size = size.div_ceil(stride);
    }
    layers.push(Layer::new("pool", LayerKind::GlobalAvgPool));
    layers.push(Layer::new(
        "head",
        LayerKind::Linear(LinearWeights {
            in_features: c,
            out_features: 3,
            weights: uniform(rng, 3 * c, 1.0),
            bias: uniform(rng, 3, 0.5),
        }),
    ));
    ModelGraph {
        name: "random".into(),
        input,
        layers,
        num_classes: 3,
        refresh_points: Vec::new(),
    }
}

pub fn random_latent<R: Rng>(rng: &mut R, shape: InputShape) -> LatentTensor {
    let n = shape.height * shape.width * shape.channels;
    LatentTensor::new(
        shape.height,
        shape.width,
        shape.channels,
        (0..n).map(|_| rng.gen_range(-1.0f32..=1.0)).collect(),
    )
    .unwrap()
}

/// Dense feature map: `planes[c][y * w + x]`.
#[derive(Clone)]
struct Dense {
    h: usize,
    w: usize,
    planes: Vec<Vec<f64>>,
}

impl Dense {
    fn map(&self, f: impl Fn(usize, f64) -> f64) -> Dense {
        Dense {
            planes: self
                .planes
                .iter()
                .enumerate()
                .map(|(c, p)| p.iter().map(|&v| f(c, v)).collect())
                .collect(),
            ..*self
        }
    }
}

fn dense_conv(x: &Dense, k: &ConvWeights) -> Dense {
    let s = k.stride;
    let (oh, ow) = (x.h.div_ceil(s), x.w.div_ceil(s));
    let (ry, rx) = ((k.kernel_h / 2) as i64, (k.kernel_w / 2) as i64);
    let planes = (0..k.out_channels)
        .map(|o| {
            let mut out = vec![k.bias[o]; oh * ow];
            for i in 0..oh {
                for j in 0..ow {
                    for (c, p) in x.planes.iter().enumerate() {
                        for ky in 0..k.kernel_h {
                            for kx in 0..k.kernel_w {
                                let y = (i * s) as i64 + ky as i64 - ry;
                                let xx = (j * s) as i64 + kx as i64 - rx;
                                if (0..x.h as i64).contains(&y) && (0..x.w as i64).contains(&xx) {
                                    out[i * ow + j] += k.weight(o, c, ky, kx) * p[y as usize * x.w + xx as usize];
                                }
                            }
                        }
                    }
                }
            }
            out
        })
        .collect();
    Dense { h: oh, w: ow, planes }
}

fn dense_bn(x: &Dense, bn: &BatchNorm) -> Dense {
    x.map(|c, v| bn.gamma[c] * (v - bn.mean[c]) / (bn.var[c] + bn.eps).sqrt() + bn.beta[c])
}

fn cubic(k: &SigmoidCoeffs, v: f64) -> f64 {
    k.alpha * v.powi(3) + k.beta * v * v + k.gamma * v + k.d
}

fn quad(k: &PolyactCoeffs, v: f64) -> f64 {
    k.a * v * v + k.b * v + k.c
}

fn means(x: &Dense) -> Vec<f64> {
    x.planes.iter().map(|p| p.iter().sum::<f64>() / p.len() as f64).collect()
}

/// Forward pass on dense maps, written without the layout machinery.
pub fn dense_forward(g: &ModelGraph, latent: &LatentTensor) -> Vec<f64> {
    let (h, w, ch) = latent.geometry();
    let mut x = Dense {
        h,
        w,
        planes: (0..ch)
            .map(|c| (0..h * w).map(|i| latent.data[i * ch + c] as f64).collect())
            .collect(),
    };
    let mut skip: Option<(Dense, Option<Shortcut>)> = None;
    for layer in &g.layers {
        x = match &layer.kind {
            LayerKind::Conv(k) => dense_conv(&x, k),
            LayerKind::BatchNorm(bn) => dense_bn(&x, bn),
            LayerKind::Polyact(k) => x.map(|_, v| quad(k, v)),
            LayerKind::ApproxSigmoid(k) => x.map(|_, v| cubic(k, v)),
            LayerKind::GlobalAvgPool => Dense {
                h: 1,
                w: 1,
                planes: means(&x).into_iter().map(|m| vec![m]).collect(),
            },
            LayerKind::Se(se) => {
                let m = se.hidden();
                let s = means(&x);
                let hid: Vec<f64> = (0..m)
                    .map(|j| quad(&se.act, (0..se.channels).map(|k| se.fc1[j * se.channels + k] * s[k]).sum()))
                    .collect();
                let gates: Vec<f64> = (0..se.channels)
                    .map(|k| cubic(&se.gate, (0..m).map(|j| se.fc2[k * m + j] * hid[j]).sum()))
                    .collect();
                x.map(|c, v| v * gates[c])
            }
            LayerKind::Linear(lw) => {
                let pooled: Vec<f64> = x.planes.iter().map(|p| p[0]).collect();
                return linear_oracle(&pooled, lw);
            }
            LayerKind::ResidualBegin { shortcut } => {
                skip = Some((x.clone(), shortcut.clone()));
                x
            }
            LayerKind::ResidualEnd => {
                let (s, sc) = skip.take().unwrap();
                let s = match sc {
                    None => s,
                    Some(sc) => {
                        let y = dense_conv(&s, &sc.conv);
                        match &sc.bn {
                            Some(bn) => dense_bn(&y, bn),
                            None => y,
                        }
                    }
                };
                Dense {
                    planes: x
                        .planes
                        .iter()
                        .zip(&s.planes)
                        .map(|(a, b)| a.iter().zip(b).map(|(u, v)| u + v).collect())
                        .collect(),
                    ..x
                }
            }
        };
    }
    panic!("graph has no head")
}
