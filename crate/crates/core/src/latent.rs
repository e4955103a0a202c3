//! `LTNT` latent tensor files: magic, `u16` version, `H, W, C` as `u32`, then
//! `H*W*C` little-endian `f32` values in row-major `HWC` order.

use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LTNT";
pub const VERSION: u16 = 1;
const HEADER: usize = 4 + 2 + 12;

/// A compressed image latent of shape `H x W x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Row-major `HWC`: element `(y, x, c)` is at `(y * W + x) * C + c`.
    pub data: Vec<f32>,
}

impl LatentTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "latent payload has {} values, expected {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn geometry(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    /// Channel `c` as a row-major `H*W` plane.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        (0..self.height * self.width)
            .map(|i| self.data[i * self.channels + c] as f64)
            .collect()
    }

    /// All channels as row-major planes.
    pub fn planes(&self) -> Vec<Vec<f64>> {
        (0..self.channels).map(|c| self.channel(c)).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for d in [self.height, self.width, self.channels] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER || &bytes[..4] != MAGIC {
            return Err(Error::Format("not an LTNT latent file".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported LTNT version {version}")));
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[6 + 4 * i..10 + 4 * i].try_into().unwrap()) as usize;
        let (h, w, c) = (dim(0), dim(1), dim(2));
        let count = h
            .checked_mul(w)
            .and_then(|x| x.checked_mul(c))
            .ok_or_else(|| Error::Format("latent dimensions overflow".into()))?;
        let payload = &bytes[HEADER..];
        if payload.len() != 4 * count {
            return Err(Error::Format(format!(
                "LTNT payload is {} bytes, expected {} for {h}x{w}x{c}",
                payload.len(),
                4 * count
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Self::new(h, w, c, data)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }
}
