//! Slot geometry of packed feature maps.
//!
//! Channel planes are stored row-major at full input resolution: pixel
//! `(y, x)` lives in slot `y * W + x`. After `k` stride-2 layers only pixels
//! with `y % p == 0 && x % p == 0` (`p = 2^k`, the stride phase) are valid;
//! every other slot holds zero.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub height: usize,
    pub width: usize,
    pub stride_phase: usize,
}

/// One kernel offset of a convolution: the slot rotation that brings the
/// source pixel under each output pixel, plus the 0/1 mask of output slots
/// whose source lies inside the image (zero padding) and that survive
/// output decimation.
#[derive(Debug, Clone, PartialEq)]
pub struct Tap {
    pub ky: usize,
    pub kx: usize,
    pub rotation: i64,
    pub mask: Vec<f64>,
}

impl Layout {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            stride_phase: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_valid(&self, y: usize, x: usize) -> bool {
        y % self.stride_phase == 0 && x % self.stride_phase == 0
    }

    /// Number of valid pixels.
    pub fn valid_count(&self) -> usize {
        self.height.div_ceil(self.stride_phase) * self.width.div_ceil(self.stride_phase)
    }

    /// `1.0` at valid slots, `0.0` elsewhere, over the `H*W` plane.
    pub fn valid_mask(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.is_valid(i / self.width, i % self.width) as u8 as f64)
            .collect()
    }

    /// Power-of-two window covering the plane, used by tree reductions.
    pub fn pool_span(&self) -> usize {
        self.len().next_power_of_two()
    }

    /// Valid pixels as a compact `(H/p) x (W/p)` row-major plane.
    pub fn compact(&self, plane: &[f64]) -> Vec<f64> {
        let p = self.stride_phase;
        (0..self.height)
            .step_by(p)
            .flat_map(|y| (0..self.width).step_by(p).map(move |x| plane[y * self.width + x]))
            .collect()
    }

    /// Inverse of [`Layout::compact`]: scatter a compact plane into full resolution.
    pub fn expand(&self, compact: &[f64]) -> Vec<f64> {
        let p = self.stride_phase;
        let cw = self.width.div_ceil(p);
        let mut out = vec![0.0; self.len()];
        for y in (0..self.height).step_by(p) {
            for x in (0..self.width).step_by(p) {
                out[y * self.width + x] = compact[(y / p) * cw + x / p];
            }
        }
        out
    }

    /// Output layout and taps of a `kh x kw` convolution with the given stride.
    ///
    /// Taps are ordered row-major over the kernel.
    pub fn conv_taps(&self, kh: usize, kw: usize, stride: usize) -> Result<(Layout, Vec<Tap>)> {
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Shape(format!("kernel {kh}x{kw} must have odd sides")));
        }
        if stride != 1 && stride != 2 {
            return Err(Error::Shape(format!("stride {stride} not supported (1 or 2)")));
        }
        let out = Layout {
            stride_phase: self.stride_phase * stride,
            ..*self
        };
        let (h, w, p) = (self.height as i64, self.width as i64, self.stride_phase as i64);
        let mut taps = Vec::with_capacity(kh * kw);
        for ky in 0..kh {
            for kx in 0..kw {
                let dy = ky as i64 - (kh / 2) as i64;
                let dx = kx as i64 - (kw / 2) as i64;
                let mask = (0..self.len())
                    .map(|i| {
                        let (y, x) = (i / self.width, i % self.width);
                        let (sy, sx) = (y as i64 + dy * p, x as i64 + dx * p);
                        let inside = (0..h).contains(&sy) && (0..w).contains(&sx);
                        (inside && out.is_valid(y, x)) as u8 as f64
                    })
                    .collect();
                taps.push(Tap {
                    ky,
                    kx,
                    rotation: (dy * w + dx) * p,
                    mask,
                });
            }
        }
        Ok((out, taps))
    }
}

/// Pairwise reduction `v'[j] = v[2j] + v[2j+1]` down to one value.
///
/// `values` is zero-padded to `span`, which must be a power of two.
pub fn tree_sum(values: &[f64], span: usize) -> f64 {
    debug_assert!(span.is_power_of_two() && values.len() <= span);
    let mut v = values.to_vec();
    v.resize(span, 0.0);
    while v.len() > 1 {
        v = v.chunks_exact(2).map(|p| p[0] + p[1]).collect();
    }
    v[0]
}
