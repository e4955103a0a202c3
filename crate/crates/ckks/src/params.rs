//! Scheme parameters, presets, and deterministic prime selection.

use crate::arith::is_prime;
use crate::error::{CkksError, Result};

/// Ring and modulus-chain configuration.
///
/// `modulus_chain` lists prime bit-sizes. All entries except the last form the
/// ciphertext modulus chain `q_0 .. q_L` (`q_0` is the decryption prime and is
/// never consumed); the last entry is the special prime used only inside key
/// switching. A fresh ciphertext therefore sits at level `L = chain.len() - 2`
/// and supports exactly `L` rescaling multiplications.
#[derive(Debug, Clone, PartialEq)]
pub struct CkksParams {
    pub ring_degree: usize,
    pub modulus_chain: Vec<u32>,
    pub default_scale: f64,
    pub security_note: String,
}

pub const MIN_PRIME_BITS: u32 = 20;
pub const MAX_PRIME_BITS: u32 = 60;

impl CkksParams {
    pub fn new(ring_degree: usize, modulus_chain: Vec<u32>, default_scale: f64) -> Result<Self> {
        let p = Self {
            ring_degree,
            modulus_chain,
            default_scale,
            security_note: String::new(),
        };
        p.validate()?;
        let note = p.estimate_security();
        Ok(Self { security_note: note, ..p })
    }

    /// N=8192, chain [60, 40, 40, 40, 40, 60], scale 2^40: four usable levels.
    pub fn preset_default() -> Self {
        Self::new(8192, vec![60, 40, 40, 40, 40, 60], 2f64.powi(40)).expect("valid preset")
    }

    /// Twelve usable levels at N=8192, enough for a residual block carrying a
    /// squeeze-and-excitation stage in one segment. Not 128-bit secure.
    pub fn preset_deep() -> Self {
        let mut chain = vec![60];
        chain.extend(std::iter::repeat(40).take(12));
        chain.push(60);
        Self::new(8192, chain, 2f64.powi(40)).expect("valid preset")
    }

    /// Small ring with ten usable levels for fast operator tests on 8x8 maps.
    pub fn preset_test() -> Self {
        let mut chain = vec![60];
        chain.extend(std::iter::repeat(40).take(10));
        chain.push(60);
        Self::new(1024, chain, 2f64.powi(40)).expect("valid preset")
    }

    /// Default chain on the smallest ring whose slot count holds an `h x w` map.
    pub fn for_geometry(h: usize, w: usize) -> Self {
        let slots = (h * w).next_power_of_two().max(64);
        Self::new(2 * slots, vec![60, 40, 40, 40, 40, 60], 2f64.powi(40)).expect("valid preset")
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::preset_default()),
            "deep" => Ok(Self::preset_deep()),
            "test" => Ok(Self::preset_test()),
            other => Err(CkksError::InvalidParams(format!("unknown preset {other:?}"))),
        }
    }

    pub fn slot_count(&self) -> usize {
        self.ring_degree / 2
    }

    /// Number of ciphertext primes (excluding the special prime).
    pub fn data_prime_count(&self) -> usize {
        self.modulus_chain.len() - 1
    }

    /// Level of a fresh ciphertext, which equals the number of usable multiplications.
    pub fn max_level(&self) -> usize {
        self.modulus_chain.len() - 2
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.ring_degree;
        if !n.is_power_of_two() || n < 8 {
            return Err(CkksError::InvalidParams(format!(
                "ring_degree not a power of two (got {n}, minimum 8)"
            )));
        }
        if self.modulus_chain.len() < 2 {
            return Err(CkksError::InvalidParams(
                "modulus_chain length must be at least 2".into(),
            ));
        }
        for &b in &self.modulus_chain {
            if !(MIN_PRIME_BITS..=MAX_PRIME_BITS).contains(&b) {
                return Err(CkksError::InvalidParams(format!(
                    "prime bit-size {b} outside [{MIN_PRIME_BITS}, {MAX_PRIME_BITS}]"
                )));
            }
        }
        let s = self.default_scale;
        if !(s.is_finite() && s > 1.0 && s.log2().fract() == 0.0) {
            return Err(CkksError::InvalidParams(format!(
                "default_scale must be a power of two greater than 1 (got {s})"
            )));
        }
        let primes = self.primes();
        let data = &primes[..self.data_prime_count()];
        for pair in data.windows(2) {
            let prod = pair[0] as f64 * pair[1] as f64;
            if s * s >= prod {
                return Err(CkksError::InvalidParams(format!(
                    "default_scale^2 must be below the product of adjacent chain moduli ({} * {})",
                    pair[0], pair[1]
                )));
            }
        }
        if data.len() >= 2 && s >= data[0] as f64 / 2.0 {
            return Err(CkksError::InvalidParams(
                "default_scale leaves no headroom below the decryption prime".into(),
            ));
        }
        Ok(())
    }

    /// Deterministic primes for the chain: for each bit-size `b`, the smallest
    /// unused prime `p = 1 (mod 2N)` with `p > 2^b`, found by stepping upward.
    pub fn primes(&self) -> Vec<u64> {
        let step = 2 * self.ring_degree as u64;
        let mut used: Vec<u64> = Vec::with_capacity(self.modulus_chain.len());
        for &bits in &self.modulus_chain {
            let mut cand = (1u64 << bits) + 1;
            while !is_prime(cand) || used.contains(&cand) {
                cand += step;
            }
            used.push(cand);
        }
        used
    }

    fn estimate_security(&self) -> String {
        // HE-standard bounds for ternary secrets at 128-bit classical security.
        let bound = match self.ring_degree {
            1024 => 27,
            2048 => 54,
            4096 => 109,
            8192 => 218,
            16384 => 438,
            32768 => 881,
            _ => 0,
        };
        let total: u32 = self.modulus_chain.iter().sum::<u32>() + 1;
        if bound > 0 && total <= bound {
            format!("~128-bit (log2 PQ ~ {total} <= {bound} for N={})", self.ring_degree)
        } else {
            format!(
                "below 128-bit: log2 PQ ~ {total} exceeds the {bound}-bit bound for N={}; test/desk use only",
                self.ring_degree
            )
        }
    }
}
