use crate::context::RnsPoly;
use crate::keys::Backend;
use crate::params::CkksParams;

/// Stable 64-bit identifier of a parameter set (FNV-1a over its defining fields).
pub fn params_id(params: &CkksParams) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    feed(&(params.ring_degree as u64).to_le_bytes());
    feed(&(params.modulus_chain.len() as u32).to_le_bytes());
    for b in &params.modulus_chain {
        feed(&b.to_le_bytes());
    }
    feed(&params.default_scale.to_bits().to_le_bytes());
    h
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum CtBody {
    /// `(c0, c1)` in NTT form over `q_0..q_level`.
    Real(Vec<RnsPoly>),
    /// Slot values carried verbatim.
    Mock(Vec<f64>),
}

/// An encrypted slot vector with its level and scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Ciphertext {
    pub(crate) params_id: u64,
    pub(crate) level: usize,
    pub(crate) scale: f64,
    pub(crate) body: CtBody,
}

impl Ciphertext {
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn backend(&self) -> Backend {
        match self.body {
            CtBody::Real(_) => Backend::Real,
            CtBody::Mock(_) => Backend::Mock,
        }
    }

    pub fn params_id(&self) -> u64 {
        self.params_id
    }

    /// Number of ring elements (2 after relinearization).
    pub fn poly_count(&self) -> usize {
        match &self.body {
            CtBody::Real(p) => p.len(),
            CtBody::Mock(_) => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum PtBody {
    Real(RnsPoly),
    Mock(Vec<f64>),
}

/// An encoded (unencrypted) slot vector at a specific level and scale.
#[derive(Debug, Clone)]
pub struct Plaintext {
    pub(crate) level: usize,
    pub(crate) scale: f64,
    pub(crate) body: PtBody,
}

impl Plaintext {
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

/// A ciphertext multiplied by a mask plaintext but not yet rescaled.
///
/// Produced by `Evaluator::premultiply`; consumed by `Evaluator::weighted_sum`,
/// which scales, accumulates, and rescales once for a whole batch of terms.
#[derive(Debug, Clone)]
pub struct PendingProduct {
    pub(crate) params_id: u64,
    pub(crate) level: usize,
    pub(crate) scale: f64,
    pub(crate) body: CtBody,
}

impl PendingProduct {
    pub fn level(&self) -> usize {
        self.level
    }
}
