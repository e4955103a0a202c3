//! Encrypted feature maps (one ciphertext per channel) and the network operators.
//!
//! Every operator consumes a fixed number of levels, listed in [`cost`], on
//! either backend. Slots outside the valid region stay zero after each
//! operator, except for pooled outputs, which are replicated by design.

use latent_ckks::{Ciphertext, CkksError, Decryptor, Encryptor, Evaluator, MASK_SCALE};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::LatentTensor;
use crate::layout::Layout;

/// Levels consumed by each operator.
pub mod cost {
    pub const CONV: usize = 1;
    pub const POLYACT: usize = 2;
    pub const APPROX_SIGMOID: usize = 3;
    pub const GLOBAL_AVG_POOL: usize = 1;
    pub const SE: usize = 8;
    pub const RESIDUAL_ADD: usize = 0;
    pub const LINEAR: usize = 1;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvWeights {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    /// `[out][in][ky][kx]`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub bn_folded: bool,
}

impl ConvWeights {
    pub fn zeros(out_channels: usize, in_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            out_channels,
            in_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            weights: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
            bn_folded: false,
        }
    }

    #[inline]
    pub fn index(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_channels + i) * self.kernel_h + ky) * self.kernel_w + kx
    }

    #[inline]
    pub fn weight(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.weights[self.index(o, i, ky, kx)]
    }

    pub fn validate(&self) -> Result<()> {
        let want = self.out_channels * self.in_channels * self.kernel_h * self.kernel_w;
        if self.weights.len() != want {
            return Err(Error::Shape(format!(
                "conv weights have {} values, expected {}x{}x{}x{}",
                self.weights.len(),
                self.out_channels,
                self.in_channels,
                self.kernel_h,
                self.kernel_w
            )));
        }
        if self.bias.len() != self.out_channels {
            return Err(Error::Shape(format!(
                "conv bias has {} values, expected {}",
                self.bias.len(),
                self.out_channels
            )));
        }
        if !matches!((self.kernel_h, self.kernel_w), (1, 1) | (3, 3)) {
            return Err(Error::Shape(format!(
                "kernel {}x{} not supported (1x1 or 3x3)",
                self.kernel_h, self.kernel_w
            )));
        }
        if self.stride != 1 && self.stride != 2 {
            return Err(Error::Shape(format!("stride {} not supported", self.stride)));
        }
        finite(&self.weights, "conv weights")?;
        finite(&self.bias, "conv bias")
    }
}

/// `a x^2 + b x + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolyactCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl PolyactCoeffs {
    pub fn eval(&self, x: f64) -> f64 {
        ((x * x) * self.a + x * self.b) + self.c
    }
}

/// `alpha x^3 + beta x^2 + gamma x + d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmoidCoeffs {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub d: f64,
}

impl SigmoidCoeffs {
    /// Least-squares cubic fit of the logistic function on `[lo, hi]`,
    /// sampled at 1001 evenly spaced points.
    pub fn least_squares(lo: f64, hi: f64) -> Self {
        const POINTS: usize = 1001;
        // normal equations in the centred, rescaled variable t = (x - mid) / half
        let (mid, half) = ((lo + hi) / 2.0, (hi - lo) / 2.0);
        let mut ata = [[0.0f64; 4]; 4];
        let mut atb = [0.0f64; 4];
        for i in 0..POINTS {
            let x = lo + (hi - lo) * i as f64 / (POINTS - 1) as f64;
            let t = (x - mid) / half;
            let row = [1.0, t, t * t, t * t * t];
            let y = 1.0 / (1.0 + (-x).exp());
            for r in 0..4 {
                atb[r] += row[r] * y;
                for c in 0..4 {
                    ata[r][c] += row[r] * row[c];
                }
            }
        }
        let k = solve4(ata, atb);
        // expand k0 + k1 t + k2 t^2 + k3 t^3 with t = (x - mid) / half
        let (u, v) = (1.0 / half, -mid / half);
        let d = k[0] + k[1] * v + k[2] * v * v + k[3] * v * v * v;
        let gamma = k[1] * u + 2.0 * k[2] * u * v + 3.0 * k[3] * u * v * v;
        let beta = k[2] * u * u + 3.0 * k[3] * u * u * v;
        let alpha = k[3] * u * u * u;
        Self { alpha, beta, gamma, d }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let x2 = x * x;
        (((x2 * x) * self.alpha + x2 * self.beta) + x * self.gamma) + self.d
    }
}

/// Either activation family with its coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActivationCoeffs {
    Polyact(PolyactCoeffs),
    ApproxSigmoid(SigmoidCoeffs),
}

/// Squeeze-and-excitation weights. No biases in either projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeWeights {
    pub channels: usize,
    pub reduction: usize,
    /// `[C/r][C]`, row-major.
    pub fc1: Vec<f64>,
    /// `[C][C/r]`, row-major.
    pub fc2: Vec<f64>,
    pub act: PolyactCoeffs,
    pub gate: SigmoidCoeffs,
}

impl SeWeights {
    pub fn hidden(&self) -> usize {
        self.channels / self.reduction
    }

    pub fn validate(&self) -> Result<()> {
        if self.reduction == 0 || self.channels % self.reduction != 0 {
            return Err(Error::Shape(format!(
                "SE reduction {} does not divide {} channels",
                self.reduction, self.channels
            )));
        }
        let m = self.hidden();
        if self.fc1.len() != m * self.channels || self.fc2.len() != m * self.channels {
            return Err(Error::Shape(format!(
                "SE matrices must be {m}x{c} and {c}x{m}",
                c = self.channels
            )));
        }
        finite(&self.fc1, "SE fc1")?;
        finite(&self.fc2, "SE fc2")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearWeights {
    pub in_features: usize,
    pub out_features: usize,
    /// `[out][in]`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearWeights {
    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.in_features * self.out_features || self.bias.len() != self.out_features {
            return Err(Error::Shape(format!(
                "linear layer must be {}x{} with {} biases",
                self.out_features, self.in_features, self.out_features
            )));
        }
        finite(&self.weights, "linear weights")?;
        finite(&self.bias, "linear bias")
    }
}

/// Gaussian elimination with partial pivoting on a 4x4 system.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> [f64; 4] {
    for col in 0..4 {
        let piv = (col..4)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap_or(col);
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..4 {
            let f = a[r][col] / a[col][col];
            for c in col..4 {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for r in (0..4).rev() {
        let s: f64 = (r + 1..4).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

fn finite(v: &[f64], what: &str) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::Shape(format!("{what} has a non-finite value at {i}"))),
        None => Ok(()),
    }
}

/// An encrypted `H x W x C` feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedTensor {
    pub channels: Vec<Ciphertext>,
    pub layout: Layout,
}

impl PackedTensor {
    pub fn level(&self) -> usize {
        self.channels.first().map_or(0, |c| c.level())
    }

    pub fn scale(&self) -> f64 {
        self.channels.first().map_or(0.0, |c| c.scale())
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn height(&self) -> usize {
        self.layout.height
    }

    pub fn width(&self) -> usize {
        self.layout.width
    }

    pub fn stride_phase(&self) -> usize {
        self.layout.stride_phase
    }
}

fn require(x: &PackedTensor, needed: usize, op: &'static str) -> Result<()> {
    if x.level() < needed {
        return Err(CkksError::Depth {
            op,
            level: x.level(),
            needed,
        }
        .into());
    }
    Ok(())
}

/// Encrypts each channel plane of `latent` into its own ciphertext.
pub fn pack<R: Rng + ?Sized>(enc: &Encryptor, latent: &LatentTensor, rng: &mut R) -> Result<PackedTensor> {
    let layout = Layout::new(latent.height, latent.width);
    pack_planes(enc, &latent.planes(), layout, rng)
}

pub fn pack_planes<R: Rng + ?Sized>(
    enc: &Encryptor,
    planes: &[Vec<f64>],
    layout: Layout,
    rng: &mut R,
) -> Result<PackedTensor> {
    let channels = planes
        .iter()
        .map(|p| {
            if p.len() != layout.len() {
                return Err(Error::Shape(format!(
                    "plane has {} values, layout is {}x{}",
                    p.len(),
                    layout.height,
                    layout.width
                )));
            }
            Ok(enc.encrypt(p, rng)?)
        })
        .collect::<Result<_>>()?;
    Ok(PackedTensor { channels, layout })
}

/// Decrypts every channel to its `H*W` plane.
pub fn unpack(dec: &Decryptor, x: &PackedTensor) -> Result<Vec<Vec<f64>>> {
    x.channels
        .iter()
        .map(|c| {
            let mut v = dec.decrypt(c)?;
            v.truncate(x.layout.len());
            Ok(v)
        })
        .collect()
}

/// Zero-padded convolution. Stride 2 decimates lazily by doubling the stride phase.
pub fn conv2d(eval: &Evaluator, x: &PackedTensor, w: &ConvWeights) -> Result<PackedTensor> {
    w.validate()?;
    if w.in_channels != x.channel_count() {
        return Err(Error::Shape(format!(
            "conv expects {} input channels, tensor has {}",
            w.in_channels,
            x.channel_count()
        )));
    }
    require(x, cost::CONV, "conv2d")?;
    let (out_layout, taps) = x.layout.conv_taps(w.kernel_h, w.kernel_w, w.stride)?;
    let level = x.level();
    let masks = taps
        .iter()
        .map(|t| eval.encode(&t.mask, level, MASK_SCALE))
        .collect::<latent_ckks::Result<Vec<_>>>()?;
    let steps: Vec<i64> = taps.iter().map(|t| t.rotation).collect();

    let mut pending = Vec::with_capacity(w.in_channels * taps.len());
    for ct in &x.channels {
        let rotated = eval.rotate_hoisted(ct, &steps)?;
        for (r, m) in rotated.iter().zip(&masks) {
            pending.push(eval.premultiply(r, m)?);
        }
    }
    let refs: Vec<_> = pending.iter().collect();
    let bias_mask = out_layout.valid_mask();
    let channels = (0..w.out_channels)
        .map(|o| {
            let weights: Vec<f64> = (0..w.in_channels)
                .flat_map(|i| taps.iter().map(move |t| w.weight(o, i, t.ky, t.kx)))
                .collect();
            let acc = eval.weighted_sum(&refs, &weights)?;
            let bias: Vec<f64> = bias_mask.iter().map(|m| w.bias[o] * m).collect();
            Ok(eval.add_plain(&acc, &bias)?)
        })
        .collect::<Result<_>>()?;
    Ok(PackedTensor {
        channels,
        layout: out_layout,
    })
}

/// A polynomial coefficient: broadcast scalar or per-slot vector.
enum Coef<'a> {
    Scalar(f64),
    Slots(&'a [f64]),
}

fn scale_by(eval: &Evaluator, ct: &Ciphertext, c: &Coef) -> latent_ckks::Result<Ciphertext> {
    match c {
        Coef::Scalar(v) => eval.multiply_const(ct, *v),
        Coef::Slots(v) => eval.multiply_plain(ct, v),
    }
}

/// `((a * x^2) + (b * x)) + c_slots`; two levels.
fn quadratic(eval: &Evaluator, x: &Ciphertext, a: Coef, b: Coef, c: &[f64]) -> latent_ckks::Result<Ciphertext> {
    let sq = eval.multiply(x, x)?;
    let t2 = scale_by(eval, &sq, &a)?;
    let t1 = scale_by(eval, x, &b)?;
    let s = eval.add(&t2, &t1)?;
    eval.add_plain(&s, c)
}

/// `(((alpha * x^3) + (beta * x^2)) + (gamma * x)) + d_slots`; three levels.
fn cubic(
    eval: &Evaluator,
    x: &Ciphertext,
    alpha: Coef,
    beta: Coef,
    gamma: Coef,
    d: &[f64],
) -> latent_ckks::Result<Ciphertext> {
    let x2 = eval.multiply(x, x)?;
    let x3 = eval.multiply(&x2, x)?;
    let t3 = scale_by(eval, &x3, &alpha)?;
    let t2 = scale_by(eval, &x2, &beta)?;
    let t1 = scale_by(eval, x, &gamma)?;
    let s = eval.add(&eval.add(&t3, &t2)?, &t1)?;
    eval.add_plain(&s, d)
}

/// Slotwise `a x^2 + b x + c` with `c` added on valid slots only.
pub fn polyact(eval: &Evaluator, x: &PackedTensor, k: &PolyactCoeffs) -> Result<PackedTensor> {
    require(x, cost::POLYACT, "polyact")?;
    let c: Vec<f64> = x.layout.valid_mask().iter().map(|m| k.c * m).collect();
    let channels = x
        .channels
        .iter()
        .map(|ct| Ok(quadratic(eval, ct, Coef::Scalar(k.a), Coef::Scalar(k.b), &c)?))
        .collect::<Result<_>>()?;
    Ok(PackedTensor {
        channels,
        layout: x.layout,
    })
}

/// Slotwise `alpha x^3 + beta x^2 + gamma x + d` with `d` added on valid slots only.
pub fn approx_sigmoid(eval: &Evaluator, x: &PackedTensor, k: &SigmoidCoeffs) -> Result<PackedTensor> {
    require(x, cost::APPROX_SIGMOID, "approx_sigmoid")?;
    let d: Vec<f64> = x.layout.valid_mask().iter().map(|m| k.d * m).collect();
    let channels = x
        .channels
        .iter()
        .map(|ct| {
            Ok(cubic(
                eval,
                ct,
                Coef::Scalar(k.alpha),
                Coef::Scalar(k.beta),
                Coef::Scalar(k.gamma),
                &d,
            )?)
        })
        .collect::<Result<_>>()?;
    Ok(PackedTensor {
        channels,
        layout: x.layout,
    })
}

/// Leaves `sum(in[0..span])` in slot 0 (other slots hold partial sums).
fn sum_to_slot0(eval: &Evaluator, ct: &Ciphertext, span: usize) -> latent_ckks::Result<Ciphertext> {
    let mut acc = ct.clone();
    let mut k = 1;
    while k < span {
        acc = eval.add(&acc, &eval.rotate(&acc, k as i64)?)?;
        k <<= 1;
    }
    Ok(acc)
}

/// Copies slot 0 into slots `0..span` of a ciphertext that is zero elsewhere.
fn broadcast_slot0(eval: &Evaluator, ct: &Ciphertext, span: usize) -> latent_ckks::Result<Ciphertext> {
    let mut acc = ct.clone();
    let mut k = 1;
    while k < span {
        acc = eval.add(&acc, &eval.rotate(&acc, -(k as i64))?)?;
        k <<= 1;
    }
    Ok(acc)
}

/// Mean of the valid pixels, replicated into every slot.
pub fn global_avg_pool(eval: &Evaluator, x: &PackedTensor) -> Result<PackedTensor> {
    global_avg_pool_span(eval, x, eval.slot_count())
}

/// Mean of the valid pixels, replicated into slots `0..span` (`span` a power of two).
pub fn global_avg_pool_span(eval: &Evaluator, x: &PackedTensor, span: usize) -> Result<PackedTensor> {
    require(x, cost::GLOBAL_AVG_POOL, "global_avg_pool")?;
    if !span.is_power_of_two() || span > eval.slot_count() {
        return Err(Error::Shape(format!("broadcast span {span} is not a power of two within the slots")));
    }
    let inv = 1.0 / x.layout.valid_count() as f64;
    let pool = x.layout.pool_span();
    let channels = x
        .channels
        .iter()
        .map(|ct| {
            let total = sum_to_slot0(eval, ct, pool)?;
            let mean = eval.multiply_plain(&total, &[inv])?;
            Ok(broadcast_slot0(eval, &mean, span)?)
        })
        .collect::<Result<_>>()?;
    Ok(PackedTensor {
        channels,
        layout: Layout::new(1, 1),
    })
}

/// Squeeze-and-excitation with polynomial activations; eight levels.
///
/// Squeeze sums land in slot 0, the first projection (with the `1/count`
/// of the mean folded into its weights) places hidden unit `j` in slot `j`,
/// and each channel's gate is reduced back to slot 0, passed through the
/// cubic gate, broadcast over the plane, and multiplied in.
pub fn se_block(eval: &Evaluator, x: &PackedTensor, se: &SeWeights) -> Result<PackedTensor> {
    se.validate()?;
    if se.channels != x.channel_count() {
        return Err(Error::Shape(format!(
            "SE block expects {} channels, tensor has {}",
            se.channels,
            x.channel_count()
        )));
    }
    require(x, cost::SE, "se_block")?;
    let c_count = se.channels;
    let m = se.hidden();
    let hidden_span = m.next_power_of_two();
    if hidden_span > eval.slot_count() {
        return Err(Error::Shape("SE hidden width exceeds the slot count".into()));
    }
    let n = x.layout.valid_count() as f64;
    let pool = x.layout.pool_span();
    let level = x.level();

    let one_hot = eval.encode(&[1.0], level, MASK_SCALE)?;
    let squeezed = x
        .channels
        .iter()
        .map(|ct| Ok(eval.premultiply(&sum_to_slot0(eval, ct, pool)?, &one_hot)?))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<_> = squeezed.iter().collect();

    let mut hidden: Option<Ciphertext> = None;
    for j in 0..m {
        let w: Vec<f64> = (0..c_count).map(|c| se.fc1[j * c_count + c] / n).collect();
        let a = eval.weighted_sum(&refs, &w)?;
        let placed = eval.rotate(&a, -(j as i64))?;
        hidden = Some(match hidden {
            None => placed,
            Some(h) => eval.add(&h, &placed)?,
        });
    }
    let hidden = hidden.expect("reduction leaves at least one hidden unit");
    let c_mask = vec![se.act.c; m];
    let h = quadratic(eval, &hidden, Coef::Scalar(se.act.a), Coef::Scalar(se.act.b), &c_mask)?;

    let (ga, gb, gg) = ([se.gate.alpha], [se.gate.beta], [se.gate.gamma]);
    let channels = (0..c_count)
        .map(|c| {
            let row = &se.fc2[c * m..(c + 1) * m];
            let z = sum_to_slot0(eval, &eval.multiply_plain(&h, row)?, hidden_span)?;
            let g = cubic(
                eval,
                &z,
                Coef::Slots(&ga),
                Coef::Slots(&gb),
                Coef::Slots(&gg),
                &[se.gate.d],
            )?;
            let gate = broadcast_slot0(eval, &g, pool)?;
            Ok(eval.multiply(&x.channels[c], &gate)?)
        })
        .collect::<Result<_>>()?;
    Ok(PackedTensor {
        channels,
        layout: x.layout,
    })
}

/// Slotwise sum of two maps with identical geometry.
pub fn residual_add(eval: &Evaluator, x: &PackedTensor, skip: &PackedTensor) -> Result<PackedTensor> {
    if x.layout != skip.layout || x.channel_count() != skip.channel_count() {
        return Err(Error::Shape(format!(
            "residual add of {}x{}x{} (phase {}) and {}x{}x{} (phase {})",
            x.height(),
            x.width(),
            x.channel_count(),
            x.stride_phase(),
            skip.height(),
            skip.width(),
            skip.channel_count(),
            skip.stride_phase()
        )));
    }
    let channels = x
        .channels
        .iter()
        .zip(&skip.channels)
        .map(|(a, b)| Ok(eval.add(a, b)?))
        .collect::<Result<_>>()?;
    Ok(PackedTensor {
        channels,
        layout: x.layout,
    })
}

/// Dense head on pooled channels: logit `k` lands in slot `k` of one ciphertext.
///
/// Every input channel must carry its pooled value in slots `0..out_features`.
pub fn linear(eval: &Evaluator, x: &PackedTensor, lw: &LinearWeights) -> Result<Ciphertext> {
    lw.validate()?;
    if x.layout.len() != 1 || x.channel_count() != lw.in_features {
        return Err(Error::Shape(format!(
            "linear layer expects a pooled 1x1x{} input, got {}x{}x{}",
            lw.in_features,
            x.height(),
            x.width(),
            x.channel_count()
        )));
    }
    if lw.out_features > eval.slot_count() {
        return Err(Error::Shape("more classes than slots".into()));
    }
    require(x, cost::LINEAR, "linear")?;
    let column = |c: usize| -> Vec<f64> {
        (0..lw.out_features)
            .map(|k| lw.weights[k * lw.in_features + c])
            .collect()
    };
    let mut acc = eval.multiply_plain(&x.channels[0], &column(0))?;
    for c in 1..lw.in_features {
        acc = eval.add(&acc, &eval.multiply_plain(&x.channels[c], &column(c))?)?;
    }
    Ok(eval.add_plain(&acc, &lw.bias)?)
}
