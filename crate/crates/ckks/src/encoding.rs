//! Canonical-embedding encoder.
//!
//! Slot `j` of a plaintext polynomial `m` is `m(zeta^(5^j))` with
//! `zeta = exp(i*pi/N)`. Evaluating `m` at all odd powers of `zeta` is a
//! length-`N` DFT of the twisted coefficients `m_k * zeta^k`, so both
//! directions cost one complex FFT.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{CkksError, Result};

pub struct Encoder {
    n: usize,
    slot_index: Vec<usize>,
    conj_index: Vec<usize>,
    twist: Vec<Complex64>,
    untwist: Vec<Complex64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Encoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Encoder").field("n", &self.n).finish()
    }
}

/// Largest magnitude a scaled coefficient may take before encoding refuses.
const MAX_COEFF: f64 = 1.0e36;

impl Encoder {
    pub fn new(n: usize) -> Self {
        assert!(n.is_power_of_two() && n >= 4);
        let two_n = 2 * n;
        let slots = n / 2;
        let mut slot_index = Vec::with_capacity(slots);
        let mut conj_index = Vec::with_capacity(slots);
        let mut g = 1usize;
        for _ in 0..slots {
            slot_index.push((g - 1) / 2);
            conj_index.push((two_n - g - 1) / 2);
            g = (g * 5) % two_n;
        }
        let angle = std::f64::consts::PI / n as f64;
        let twist = (0..n)
            .map(|k| Complex64::from_polar(1.0, angle * k as f64))
            .collect();
        let untwist = (0..n)
            .map(|k| Complex64::from_polar(1.0, -angle * k as f64))
            .collect();
        let mut planner = FftPlanner::new();
        Self {
            n,
            slot_index,
            conj_index,
            twist,
            untwist,
            fft: planner.plan_fft_forward(n),
            ifft: planner.plan_fft_inverse(n),
        }
    }

    pub fn slot_count(&self) -> usize {
        self.n / 2
    }

    /// Real slot values to rounded integer coefficients of `scale * m(X)`.
    ///
    /// Missing trailing slots are zero.
    pub fn encode(&self, values: &[f64], scale: f64) -> Result<Vec<i128>> {
        let slots = self.slot_count();
        if values.len() > slots {
            return Err(CkksError::Capacity {
                len: values.len(),
                slots,
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(CkksError::NonFinite(i));
        }
        let mut evals = vec![Complex64::new(0.0, 0.0); self.n];
        for (j, &v) in values.iter().enumerate() {
            evals[self.slot_index[j]] = Complex64::new(v, 0.0);
            evals[self.conj_index[j]] = Complex64::new(v, 0.0);
        }
        self.fft.process(&mut evals);
        let norm = scale / self.n as f64;
        evals
            .iter()
            .zip(&self.untwist)
            .map(|(e, u)| {
                let c = (e * u).re * norm;
                if c.abs() > MAX_COEFF {
                    Err(CkksError::InvalidParams(format!(
                        "scaled coefficient {c:e} overflows the encoder"
                    )))
                } else {
                    Ok(c.round() as i128)
                }
            })
            .collect()
    }

    /// Coefficients of a constant polynomial holding `value` in every slot.
    pub fn encode_constant(&self, value: f64, scale: f64) -> Result<Vec<i128>> {
        if !value.is_finite() {
            return Err(CkksError::NonFinite(0));
        }
        let c = value * scale;
        if c.abs() > MAX_COEFF {
            return Err(CkksError::InvalidParams(format!(
                "scaled constant {c:e} overflows the encoder"
            )));
        }
        let mut out = vec![0i128; self.n];
        out[0] = c.round() as i128;
        Ok(out)
    }

    /// Centered real coefficients of `scale * m(X)` back to slot values.
    pub fn decode(&self, coeffs: &[f64], scale: f64) -> Vec<f64> {
        assert_eq!(coeffs.len(), self.n);
        let mut buf: Vec<Complex64> = coeffs
            .iter()
            .zip(&self.twist)
            .map(|(&c, t)| t * c)
            .collect();
        self.ifft.process(&mut buf);
        self.slot_index
            .iter()
            .map(|&t| buf[t].re / scale)
            .collect()
    }
}
