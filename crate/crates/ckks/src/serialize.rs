//! Versioned little-endian binary encoding of parameters, keys, and ciphertexts.
//!
//! Every object starts with the magic `CKKS`, a `u16` format version and a
//! `u8` object tag. Polynomial limbs are raw `u64` arrays in NTT form.

use std::collections::{BTreeMap, BTreeSet};

use crate::ciphertext::{CtBody, Ciphertext};
use crate::context::{CkksContext, RnsPoly};
use crate::error::{CkksError, Result};
use crate::keys::{KeySet, KeySwitchKey, PublicKey, PublicKeySet, PublicKind, SecretKey};
use crate::params::CkksParams;

pub const MAGIC: &[u8; 4] = b"CKKS";
pub const VERSION: u16 = 1;

pub const TAG_PARAMS: u8 = 1;
pub const TAG_PUBLIC_KEYS: u8 = 2;
pub const TAG_KEYSET: u8 = 3;
pub const TAG_CIPHERTEXT: u8 = 4;

const BACKEND_REAL: u8 = 0;
const BACKEND_MOCK: u8 = 1;

// Upper bound on any length prefix, guarding allocations on hostile input.
const MAX_LEN: usize = 1 << 28;

/// Types with a stable binary form.
pub trait Wire: Sized {
    fn to_bytes(&self) -> Vec<u8>;
    fn from_bytes(bytes: &[u8]) -> Result<Self>;
}

#[derive(Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn header(tag: u8) -> Self {
        let mut w = Self::default();
        w.buf.extend_from_slice(MAGIC);
        w.u16(VERSION);
        w.u8(tag);
        w
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn i64(&mut self, v: i64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn len(&mut self, n: usize) {
        self.u32(n as u32);
    }

    fn poly(&mut self, p: &RnsPoly) {
        self.len(p.limbs.len());
        for limb in &p.limbs {
            for &x in limb {
                self.u64(x);
            }
        }
    }

    fn params(&mut self, p: &CkksParams) {
        self.u32(p.ring_degree as u32);
        self.len(p.modulus_chain.len());
        for &b in &p.modulus_chain {
            self.u32(b);
        }
        self.f64(p.default_scale);
        self.len(p.security_note.len());
        self.buf.extend_from_slice(p.security_note.as_bytes());
    }

    fn switch_key(&mut self, k: &KeySwitchKey) {
        self.len(k.parts.len());
        for (b, a) in &k.parts {
            self.poly(b);
            self.poly(a);
        }
    }

    fn public(&mut self, k: &PublicKeySet) {
        self.params(&k.params);
        match &k.kind {
            PublicKind::Real {
                public_key,
                relin_key,
                rotation_keys,
            } => {
                self.u8(BACKEND_REAL);
                self.poly(&public_key.b);
                self.poly(&public_key.a);
                self.switch_key(relin_key);
                self.len(rotation_keys.len());
                for (&step, key) in rotation_keys {
                    self.i64(step);
                    self.switch_key(key);
                }
            }
            PublicKind::Mock { rotation_steps } => {
                self.u8(BACKEND_MOCK);
                self.len(rotation_steps.len());
                for &s in rotation_steps {
                    self.i64(s);
                }
            }
        }
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn header(buf: &'a [u8], tag: u8) -> Result<Self> {
        let mut r = Self { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CkksError::Malformed("bad magic".into()));
        }
        let v = r.u16()?;
        if v != VERSION {
            return Err(CkksError::Malformed(format!("unsupported format version {v}")));
        }
        let t = r.u8()?;
        if t != tag {
            return Err(CkksError::Malformed(format!("expected object tag {tag}, found {t}")));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| CkksError::Malformed("truncated input".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(CkksError::Malformed(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u32()? as usize;
        if n > MAX_LEN {
            return Err(CkksError::Malformed(format!("length {n} too large")));
        }
        Ok(n)
    }

    fn poly(&mut self, n: usize, primes: &[u64]) -> Result<RnsPoly> {
        let count = self.len()?;
        if count > primes.len() {
            return Err(CkksError::Malformed(format!("{count} limbs exceed the modulus chain")));
        }
        let limbs = primes[..count]
            .iter()
            .map(|&q| {
                (0..n)
                    .map(|_| {
                        let x = self.u64()?;
                        if x >= q {
                            return Err(CkksError::Malformed("limb value not reduced".into()));
                        }
                        Ok(x)
                    })
                    .collect::<Result<Vec<u64>>>()
            })
            .collect::<Result<_>>()?;
        Ok(RnsPoly { limbs })
    }

    fn params(&mut self) -> Result<CkksParams> {
        let n = self.u32()? as usize;
        let len = self.len()?;
        let chain = (0..len).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let scale = self.f64()?;
        let note_len = self.len()?;
        let note = std::str::from_utf8(self.take(note_len)?)
            .map_err(|_| CkksError::Malformed("security note is not UTF-8".into()))?
            .to_string();
        let mut p = CkksParams::new(n, chain, scale)?;
        p.security_note = note;
        Ok(p)
    }

    fn switch_key(&mut self, n: usize, full: &[u64]) -> Result<KeySwitchKey> {
        let count = self.len()?;
        let parts = (0..count)
            .map(|_| Ok((self.poly(n, full)?, self.poly(n, full)?)))
            .collect::<Result<_>>()?;
        Ok(KeySwitchKey { parts })
    }

    fn public(&mut self) -> Result<PublicKeySet> {
        let params = self.params()?;
        let n = params.ring_degree;
        let primes = params.primes();
        // key-switching keys list the special prime right after the data primes
        let kind = match self.u8()? {
            BACKEND_REAL => {
                let data = &primes[..params.data_prime_count()];
                let b = self.poly(n, data)?;
                let a = self.poly(n, data)?;
                let relin_key = self.switch_key(n, &primes)?;
                let count = self.len()?;
                let mut rotation_keys = BTreeMap::new();
                for _ in 0..count {
                    let step = self.i64()?;
                    rotation_keys.insert(step, self.switch_key(n, &primes)?);
                }
                PublicKind::Real {
                    public_key: PublicKey { b, a },
                    relin_key,
                    rotation_keys,
                }
            }
            BACKEND_MOCK => {
                let count = self.len()?;
                let rotation_steps = (0..count).map(|_| self.i64()).collect::<Result<BTreeSet<_>>>()?;
                PublicKind::Mock { rotation_steps }
            }
            b => return Err(CkksError::Malformed(format!("unknown backend tag {b}"))),
        };
        Ok(PublicKeySet { params, kind })
    }
}

impl Wire for CkksParams {
    fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::header(TAG_PARAMS);
        w.params(self);
        w.buf
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::header(bytes, TAG_PARAMS)?;
        let p = r.params()?;
        r.finish()?;
        Ok(p)
    }
}

impl Wire for PublicKeySet {
    fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::header(TAG_PUBLIC_KEYS);
        w.public(self);
        w.buf
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::header(bytes, TAG_PUBLIC_KEYS)?;
        let k = r.public()?;
        r.finish()?;
        Ok(k)
    }
}

impl Wire for KeySet {
    /// The secret key is stored as one signed byte per ternary coefficient.
    fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::header(TAG_KEYSET);
        match &self.secret_key {
            Some(sk) => {
                w.u8(1);
                w.len(sk.coeffs.len());
                w.buf.extend(sk.coeffs.iter().map(|&c| c as i8 as u8));
            }
            None => w.u8(0),
        }
        w.public(&self.public);
        w.buf
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::header(bytes, TAG_KEYSET)?;
        let coeffs = match r.u8()? {
            0 => None,
            1 => {
                let n = r.len()?;
                let raw = r.take(n)?;
                let c: Vec<i64> = raw.iter().map(|&b| b as i8 as i64).collect();
                if c.iter().any(|x| x.abs() > 1) {
                    return Err(CkksError::Malformed("secret key is not ternary".into()));
                }
                Some(c)
            }
            f => return Err(CkksError::Malformed(format!("bad secret-key flag {f}"))),
        };
        let public = r.public()?;
        r.finish()?;
        let secret_key = match coeffs {
            None => None,
            Some(c) => {
                if c.len() != public.params.ring_degree {
                    return Err(CkksError::Malformed("secret key length mismatch".into()));
                }
                let ctx = CkksContext::new(&public.params)?;
                let full = ctx.basis(ctx.max_level(), true);
                Some(SecretKey {
                    ntt: ctx.from_small(&c, &full),
                    coeffs: c,
                })
            }
        };
        Ok(KeySet { secret_key, public })
    }
}

impl Wire for Ciphertext {
    fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::header(TAG_CIPHERTEXT);
        w.u64(self.params_id);
        w.u32(self.level as u32);
        w.f64(self.scale);
        match &self.body {
            CtBody::Real(polys) => {
                w.u8(BACKEND_REAL);
                let n = polys.first().map_or(0, |p| p.limbs[0].len());
                w.u32(n as u32);
                w.len(polys.len());
                for p in polys {
                    w.poly(p);
                }
            }
            CtBody::Mock(v) => {
                w.u8(BACKEND_MOCK);
                w.len(v.len());
                for &x in v {
                    w.f64(x);
                }
            }
        }
        w.buf
    }

    /// Limb values are range-checked against the limb count only; the
    /// parameter fingerprint is checked when the ciphertext is evaluated.
    fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::header(bytes, TAG_CIPHERTEXT)?;
        let params_id = r.u64()?;
        let level = r.u32()? as usize;
        let scale = r.f64()?;
        if !(scale.is_finite() && scale > 0.0) {
            return Err(CkksError::Malformed(format!("invalid scale {scale}")));
        }
        let body = match r.u8()? {
            BACKEND_REAL => {
                let n = r.u32()? as usize;
                if !n.is_power_of_two() || n > 1 << 17 {
                    return Err(CkksError::Malformed(format!("invalid ring degree {n}")));
                }
                let count = r.len()?;
                if count != 2 {
                    return Err(CkksError::Malformed(format!("{count} polynomials, expected 2")));
                }
                let unbounded = vec![u64::MAX; level + 1];
                let polys = (0..count)
                    .map(|_| {
                        let p = r.poly(n, &unbounded)?;
                        if p.limb_count() != level + 1 {
                            return Err(CkksError::Malformed("limb count does not match level".into()));
                        }
                        Ok(p)
                    })
                    .collect::<Result<Vec<_>>>()?;
                CtBody::Real(polys)
            }
            BACKEND_MOCK => {
                let len = r.len()?;
                CtBody::Mock((0..len).map(|_| r.f64()).collect::<Result<_>>()?)
            }
            b => return Err(CkksError::Malformed(format!("unknown backend tag {b}"))),
        };
        r.finish()?;
        Ok(Ciphertext {
            params_id,
            level,
            scale,
            body,
        })
    }
}
