use std::sync::Arc;

use rand::Rng;

use crate::ciphertext::{params_id, CtBody, Ciphertext};
use crate::context::CkksContext;
use crate::error::{CkksError, Result};
use crate::keys::{sample_cbd, sample_ternary_pub, Backend, KeySet, PublicKey, PublicKeySet, PublicKind, SecretKey};

/// Public-key encryption of slot vectors at the top of the modulus chain.
pub struct Encryptor {
    ctx: Arc<CkksContext>,
    id: u64,
    key: Option<PublicKey>,
}

impl Encryptor {
    pub fn new(ctx: Arc<CkksContext>, keys: &PublicKeySet) -> Result<Self> {
        if ctx.params() != keys.params() {
            return Err(CkksError::ParamsMismatch(
                "key set was generated for different parameters".into(),
            ));
        }
        let key = match &keys.kind {
            PublicKind::Real { public_key, .. } => Some(public_key.clone()),
            PublicKind::Mock { .. } => None,
        };
        Ok(Self {
            id: params_id(ctx.params()),
            ctx,
            key,
        })
    }

    pub fn backend(&self) -> Backend {
        if self.key.is_some() {
            Backend::Real
        } else {
            Backend::Mock
        }
    }

    /// Encrypts `values` (zero-padded to the slot count) at the default scale.
    pub fn encrypt<R: Rng + ?Sized>(&self, values: &[f64], rng: &mut R) -> Result<Ciphertext> {
        let slots = self.ctx.params().slot_count();
        if values.len() > slots {
            return Err(CkksError::Capacity {
                len: values.len(),
                slots,
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(CkksError::NonFinite(i));
        }
        let scale = self.ctx.params().default_scale;
        let level = self.ctx.max_level();
        let body = match &self.key {
            None => {
                let mut v = values.to_vec();
                v.resize(slots, 0.0);
                CtBody::Mock(v)
            }
            Some(pk) => {
                let ctx = &self.ctx;
                let n = ctx.degree();
                let basis = ctx.basis(level, false);
                let m = ctx.from_signed(&ctx.encoder().encode(values, scale)?, &basis);
                let v = ctx.from_small(&sample_ternary_pub(n, rng), &basis);
                let e0 = ctx.from_small(&sample_cbd(n, rng), &basis);
                let e1 = ctx.from_small(&sample_cbd(n, rng), &basis);
                let mut c0 = ctx.mul(&v, &pk.b);
                ctx.add_assign(&mut c0, &e0);
                ctx.add_assign(&mut c0, &m);
                let mut c1 = ctx.mul(&v, &pk.a);
                ctx.add_assign(&mut c1, &e1);
                CtBody::Real(vec![c0, c1])
            }
        };
        Ok(Ciphertext {
            params_id: self.id,
            level,
            scale,
            body,
        })
    }
}

/// Secret-key decryption. Client side only.
pub struct Decryptor {
    ctx: Arc<CkksContext>,
    id: u64,
    key: Option<SecretKey>,
}

impl Decryptor {
    pub fn new(ctx: Arc<CkksContext>, keys: &KeySet) -> Result<Self> {
        if ctx.params() != keys.params() {
            return Err(CkksError::ParamsMismatch(
                "key set was generated for different parameters".into(),
            ));
        }
        Ok(Self {
            id: params_id(ctx.params()),
            ctx,
            key: keys.secret_key.clone(),
        })
    }

    /// Decrypts and decodes all slots.
    pub fn decrypt(&self, ct: &Ciphertext) -> Result<Vec<f64>> {
        if ct.params_id != self.id {
            return Err(CkksError::ParamsMismatch(
                "ciphertext was produced under different parameters".into(),
            ));
        }
        match (&ct.body, &self.key) {
            (CtBody::Mock(v), None) => Ok(v.clone()),
            (CtBody::Real(polys), Some(sk)) => {
                if polys.len() != 2 {
                    return Err(CkksError::Malformed(format!(
                        "expected 2 ciphertext polynomials, found {}",
                        polys.len()
                    )));
                }
                let ctx = &self.ctx;
                let q = ctx.modulus(0);
                let m0: Vec<u64> = polys[0].limbs[0]
                    .iter()
                    .zip(&polys[1].limbs[0])
                    .zip(&sk.ntt.limbs[0])
                    .map(|((&c0, &c1), &s)| q.add(c0, q.mul(c1, s)))
                    .collect();
                let poly = crate::context::RnsPoly { limbs: vec![m0] };
                let coeffs: Vec<f64> = ctx
                    .centered_coeffs_limb0(&poly)
                    .into_iter()
                    .map(|c| c as f64)
                    .collect();
                Ok(ctx.encoder().decode(&coeffs, ct.scale))
            }
            (body, _) => Err(CkksError::Backend(format!(
                "cannot decrypt a {:?} ciphertext with this key set",
                match body {
                    CtBody::Real(_) => Backend::Real,
                    CtBody::Mock(_) => Backend::Mock,
                }
            ))),
        }
    }
}
