//! Plaintext mirror of the encrypted operators.
//!
//! Each function performs the same floating-point operations in the same
//! order as its encrypted counterpart, so the mock backend reproduces these
//! results bit for bit.

use crate::error::{Error, Result};
use crate::latent::LatentTensor;
use crate::layout::{tree_sum, Layout};
use crate::packed::{ConvWeights, LinearWeights, PolyactCoeffs, SeWeights, SigmoidCoeffs};

/// A plaintext feature map in the packed slot layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PlainTensor {
    pub planes: Vec<Vec<f64>>,
    pub layout: Layout,
}

impl PlainTensor {
    pub fn from_latent(latent: &LatentTensor) -> Self {
        Self {
            planes: latent.planes(),
            layout: Layout::new(latent.height, latent.width),
        }
    }

    pub fn channel_count(&self) -> usize {
        self.planes.len()
    }
}

pub fn conv2d(x: &PlainTensor, w: &ConvWeights) -> Result<PlainTensor> {
    w.validate()?;
    if w.in_channels != x.channel_count() {
        return Err(Error::Shape(format!(
            "conv expects {} input channels, tensor has {}",
            w.in_channels,
            x.channel_count()
        )));
    }
    let (out, taps) = x.layout.conv_taps(w.kernel_h, w.kernel_w, w.stride)?;
    let n = x.layout.len() as i64;
    let valid = out.valid_mask();
    let planes = (0..w.out_channels)
        .map(|o| {
            (0..x.layout.len())
                .map(|i| {
                    let mut acc = 0.0f64;
                    for (c, plane) in x.planes.iter().enumerate() {
                        for t in &taps {
                            let wt = w.weight(o, c, t.ky, t.kx);
                            if wt == 0.0 || t.mask[i] == 0.0 {
                                continue;
                            }
                            let src = plane[(i as i64 + t.rotation).rem_euclid(n) as usize];
                            acc += (src * t.mask[i]) * wt;
                        }
                    }
                    acc + w.bias[o] * valid[i]
                })
                .collect()
        })
        .collect();
    Ok(PlainTensor { planes, layout: out })
}

pub fn polyact(x: &PlainTensor, k: &PolyactCoeffs) -> PlainTensor {
    let valid = x.layout.valid_mask();
    let planes = x
        .planes
        .iter()
        .map(|p| {
            p.iter()
                .zip(&valid)
                .map(|(&v, &m)| ((v * v) * k.a + v * k.b) + k.c * m)
                .collect()
        })
        .collect();
    PlainTensor {
        planes,
        layout: x.layout,
    }
}

pub fn approx_sigmoid(x: &PlainTensor, k: &SigmoidCoeffs) -> PlainTensor {
    let valid = x.layout.valid_mask();
    let planes = x
        .planes
        .iter()
        .map(|p| {
            p.iter()
                .zip(&valid)
                .map(|(&v, &m)| {
                    let v2 = v * v;
                    (((v2 * v) * k.alpha + v2 * k.beta) + v * k.gamma) + k.d * m
                })
                .collect()
        })
        .collect();
    PlainTensor {
        planes,
        layout: x.layout,
    }
}

/// Per-channel mean of the valid pixels as a `1 x 1` map.
pub fn global_avg_pool(x: &PlainTensor) -> PlainTensor {
    let inv = 1.0 / x.layout.valid_count() as f64;
    let span = x.layout.pool_span();
    PlainTensor {
        planes: x.planes.iter().map(|p| vec![tree_sum(p, span) * inv]).collect(),
        layout: Layout::new(1, 1),
    }
}

pub fn se_block(x: &PlainTensor, se: &SeWeights) -> Result<PlainTensor> {
    se.validate()?;
    if se.channels != x.channel_count() {
        return Err(Error::Shape(format!(
            "SE block expects {} channels, tensor has {}",
            se.channels,
            x.channel_count()
        )));
    }
    let (c_count, m) = (se.channels, se.hidden());
    let n = x.layout.valid_count() as f64;
    let span = x.layout.pool_span();
    let squeezed: Vec<f64> = x.planes.iter().map(|p| tree_sum(p, span)).collect();
    let hidden: Vec<f64> = (0..m)
        .map(|j| {
            let mut acc = 0.0f64;
            for (c, &s) in squeezed.iter().enumerate() {
                let w = se.fc1[j * c_count + c] / n;
                if w != 0.0 {
                    acc += s * w;
                }
            }
            se.act.eval(acc)
        })
        .collect();
    let hidden_span = m.next_power_of_two();
    let planes = x
        .planes
        .iter()
        .enumerate()
        .map(|(c, p)| {
            let row = &se.fc2[c * m..(c + 1) * m];
            let prods: Vec<f64> = hidden.iter().zip(row).map(|(h, w)| h * w).collect();
            let g = se.gate.eval(tree_sum(&prods, hidden_span));
            p.iter().map(|v| v * g).collect()
        })
        .collect();
    Ok(PlainTensor {
        planes,
        layout: x.layout,
    })
}

pub fn residual_add(x: &PlainTensor, skip: &PlainTensor) -> Result<PlainTensor> {
    if x.layout != skip.layout || x.channel_count() != skip.channel_count() {
        return Err(Error::Shape("residual operands differ in shape".into()));
    }
    let planes = x
        .planes
        .iter()
        .zip(&skip.planes)
        .map(|(a, b)| a.iter().zip(b).map(|(u, v)| u + v).collect())
        .collect();
    Ok(PlainTensor {
        planes,
        layout: x.layout,
    })
}

/// Logits from a pooled `1 x 1 x C` map.
pub fn linear(x: &PlainTensor, lw: &LinearWeights) -> Result<Vec<f64>> {
    lw.validate()?;
    if x.layout.len() != 1 || x.channel_count() != lw.in_features {
        return Err(Error::Shape(format!(
            "linear layer expects a pooled 1x1x{} input",
            lw.in_features
        )));
    }
    Ok((0..lw.out_features)
        .map(|k| {
            let row = &lw.weights[k * lw.in_features..(k + 1) * lw.in_features];
            let mut acc = x.planes[0][0] * row[0];
            for c in 1..lw.in_features {
                acc += x.planes[c][0] * row[c];
            }
            acc + lw.bias[k]
        })
        .collect())
}

/// Applies `f(channel, value)` to the valid slots; other slots stay zero.
pub(crate) fn map_valid(x: &PlainTensor, f: impl Fn(usize, f64) -> f64) -> PlainTensor {
    let valid = x.layout.valid_mask();
    let planes = x
        .planes
        .iter()
        .enumerate()
        .map(|(c, p)| {
            p.iter()
                .zip(&valid)
                .map(|(&v, &m)| if m == 1.0 { f(c, v) } else { 0.0 })
                .collect()
        })
        .collect();
    PlainTensor {
        planes,
        layout: x.layout,
    }
}
