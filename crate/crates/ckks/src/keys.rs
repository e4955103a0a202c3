//! Key material and deterministic key generation.
//!
//! The secret key lives only in [`KeySet`]. Everything a server may hold is in
//! [`PublicKeySet`], which has no secret-bearing field.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::context::{CkksContext, RnsPoly};
use crate::error::{CkksError, Result};
use crate::params::CkksParams;

/// Which evaluation engine ciphertexts produced under these keys use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Backend {
    Real,
    Mock,
}

/// Ternary secret `s`, kept both as small coefficients and in NTT form over the full basis.
#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey {
    pub(crate) coeffs: Vec<i64>,
    pub(crate) ntt: RnsPoly,
}

impl std::fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

/// RLWE public key `(b, a)` with `b = -a*s + e` over the ciphertext primes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicKey {
    pub(crate) b: RnsPoly,
    pub(crate) a: RnsPoly,
}

/// Hybrid key-switching key: one `(b_i, a_i)` pair per ciphertext prime, each over `q_0..q_L, P`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeySwitchKey {
    pub(crate) parts: Vec<(RnsPoly, RnsPoly)>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum PublicKind {
    Real {
        public_key: PublicKey,
        relin_key: KeySwitchKey,
        rotation_keys: BTreeMap<i64, KeySwitchKey>,
    },
    Mock {
        rotation_steps: BTreeSet<i64>,
    },
}

/// Server-shareable key material: public key, relinearization key, rotation keys.
#[derive(Debug, Clone, PartialEq)]
pub struct PublicKeySet {
    pub(crate) params: CkksParams,
    pub(crate) kind: PublicKind,
}

impl PublicKeySet {
    pub fn params(&self) -> &CkksParams {
        &self.params
    }

    pub fn backend(&self) -> Backend {
        match self.kind {
            PublicKind::Real { .. } => Backend::Real,
            PublicKind::Mock { .. } => Backend::Mock,
        }
    }

    pub fn rotation_steps(&self) -> BTreeSet<i64> {
        match &self.kind {
            PublicKind::Real { rotation_keys, .. } => rotation_keys.keys().copied().collect(),
            PublicKind::Mock { rotation_steps } => rotation_steps.clone(),
        }
    }
}

/// Full client key set. Holds the secret key for the real backend.
#[derive(Debug, Clone, PartialEq)]
pub struct KeySet {
    pub(crate) secret_key: Option<SecretKey>,
    pub(crate) public: PublicKeySet,
}

impl KeySet {
    pub fn params(&self) -> &CkksParams {
        &self.public.params
    }

    pub fn backend(&self) -> Backend {
        self.public.backend()
    }

    pub fn public_keys(&self) -> &PublicKeySet {
        &self.public
    }

    pub fn rotation_steps(&self) -> BTreeSet<i64> {
        self.public.rotation_steps()
    }

    pub fn rotation_key_count(&self) -> usize {
        self.rotation_steps().len()
    }
}

/// Signed power-of-two steps `+-2^k` for `2^k <= slots/2`.
pub fn power_of_two_steps(slot_count: usize) -> BTreeSet<i64> {
    let mut out = BTreeSet::new();
    let mut k = 1usize;
    while k <= slot_count / 2 {
        out.insert(k as i64);
        out.insert(-(k as i64));
        k <<= 1;
    }
    out
}

/// Galois element `5^step mod 2N` realizing a left rotation by `step` slots.
pub fn galois_element(step: i64, ring_degree: usize) -> u64 {
    let slots = (ring_degree / 2) as i64;
    let two_n = 2 * ring_degree as u64;
    let mut e = step.rem_euclid(slots) as u64;
    let mut base = 5u64;
    let mut acc = 1u64;
    while e > 0 {
        if e & 1 == 1 {
            acc = acc * base % two_n;
        }
        base = base * base % two_n;
        e >>= 1;
    }
    acc
}

fn sample_ternary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<i64> {
    (0..n).map(|_| rng.gen_range(-1i64..=1)).collect()
}

/// Centered binomial with eta = 21 (standard deviation ~3.24).
pub(crate) fn sample_cbd<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<i64> {
    (0..n)
        .map(|_| {
            let a = (rng.gen::<u32>() & 0x1f_ffff).count_ones() as i64;
            let b = (rng.gen::<u32>() & 0x1f_ffff).count_ones() as i64;
            a - b
        })
        .collect()
}

pub(crate) fn sample_ternary_pub<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<i64> {
    sample_ternary(n, rng)
}

fn validate_steps(params: &CkksParams, steps: &BTreeSet<i64>) -> Result<()> {
    let slots = params.slot_count() as i64;
    for &s in steps {
        if s == 0 || s.rem_euclid(slots) == 0 {
            return Err(CkksError::InvalidParams(format!(
                "rotation step {s} is the identity and needs no key"
            )));
        }
    }
    Ok(())
}

/// Builds a key-switching key from `s_prime` (NTT form over the full basis) to `s`.
fn make_switch_key(
    ctx: &CkksContext,
    sk: &SecretKey,
    s_prime: &RnsPoly,
    rng: &mut ChaCha20Rng,
) -> KeySwitchKey {
    let n = ctx.degree();
    let full = ctx.basis(ctx.max_level(), true);
    let special = ctx.special_index();
    let p_value = ctx.modulus(special).value();
    let parts = (0..=ctx.max_level())
        .map(|i| {
            let a = ctx.sample_uniform(&full, rng);
            let e = ctx.from_small(&sample_cbd(n, rng), &full);
            let mut b = ctx.mul(&a, &sk.ntt);
            ctx.neg_assign(&mut b);
            ctx.add_assign(&mut b, &e);
            // + P * s' on limb i only
            let q = ctx.modulus(i);
            let p_mod = q.reduce(p_value);
            let ps = q.shoup(p_mod);
            for (x, &y) in b.limbs[i].iter_mut().zip(&s_prime.limbs[i]) {
                *x = q.add(*x, q.mul_shoup(y, p_mod, ps));
            }
            (b, a)
        })
        .collect();
    KeySwitchKey { parts }
}

/// Deterministic key generation: identical `(params, steps, seed)` give identical keys.
pub fn keygen(ctx: &CkksContext, rotation_steps: &BTreeSet<i64>, seed: u64) -> Result<KeySet> {
    let params = ctx.params();
    params.validate()?;
    validate_steps(params, rotation_steps)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = ctx.degree();
    let full = ctx.basis(ctx.max_level(), true);
    let data = ctx.basis(ctx.max_level(), false);

    let coeffs = sample_ternary(n, &mut rng);
    let sk = SecretKey {
        ntt: ctx.from_small(&coeffs, &full),
        coeffs,
    };

    let a = ctx.sample_uniform(&data, &mut rng);
    let e = ctx.from_small(&sample_cbd(n, &mut rng), &data);
    let mut s_data = sk.ntt.clone();
    s_data.truncate(data.len());
    let mut b = ctx.mul(&a, &s_data);
    ctx.neg_assign(&mut b);
    ctx.add_assign(&mut b, &e);
    let public_key = PublicKey { b, a };

    let s2 = ctx.mul(&sk.ntt, &sk.ntt);
    let relin_key = make_switch_key(ctx, &sk, &s2, &mut rng);

    let mut rotation_keys = BTreeMap::new();
    for &step in rotation_steps {
        let perm = ctx.galois_permutation(galois_element(step, n));
        let s_rot = ctx.apply_galois(&sk.ntt, &perm);
        rotation_keys.insert(step, make_switch_key(ctx, &sk, &s_rot, &mut rng));
    }

    Ok(KeySet {
        secret_key: Some(sk),
        public: PublicKeySet {
            params: params.clone(),
            kind: PublicKind::Real {
                public_key,
                relin_key,
                rotation_keys,
            },
        },
    })
}

/// Key set for the noise-free mock backend; records only the rotation step set.
pub fn keygen_mock(params: &CkksParams, rotation_steps: &BTreeSet<i64>) -> Result<KeySet> {
    params.validate()?;
    validate_steps(params, rotation_steps)?;
    Ok(KeySet {
        secret_key: None,
        public: PublicKeySet {
            params: params.clone(),
            kind: PublicKind::Mock {
                rotation_steps: rotation_steps.clone(),
            },
        },
    })
}
