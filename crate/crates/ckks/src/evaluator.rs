//! Server-side homomorphic operations over real or mock ciphertexts.
//!
//! Every operation is pure: inputs are borrowed, a fresh ciphertext is
//! returned. Both backends share the level/scale bookkeeping, so a sequence of
//! operations yields identical level traces on either one.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::ciphertext::{params_id, CtBody, Ciphertext, PendingProduct, Plaintext, PtBody};
use crate::context::{CkksContext, RnsPoly};
use crate::error::{CkksError, Result};
use crate::keys::{galois_element, Backend, KeySwitchKey, PublicKeySet, PublicKind};
use crate::params::CkksParams;

/// Scale at which 0/1 (or other bounded) masks are encoded for `premultiply`.
///
/// Mask rounding error shrinks as this grows while the integer weight scale
/// used by `weighted_sum` (`default_scale * q / (scale * MASK_SCALE)`) shrinks,
/// so `2^23` roughly balances the two at 40-bit scales.
pub const MASK_SCALE: f64 = 8_388_608.0;

/// Operand scales within this relative distance are treated as equal.
///
/// NTT-friendly primes sit slightly above `2^bits`, so a ciphertext-ciphertext
/// product drifts from the default scale by a few parts per million.
pub const SCALE_TOLERANCE: f64 = 1e-4;

// Lazy u128 accumulation flushes after this many 122-bit products.
const ACC_FLUSH: usize = 32;

pub fn level_of(ct: &Ciphertext) -> usize {
    ct.level()
}

pub fn scale_of(ct: &Ciphertext) -> f64 {
    ct.scale()
}

/// Splits a rotation step into a sequence of available key steps.
///
/// Tries a direct key, then the non-adjacent form, then pure positive and pure
/// negative binary decompositions, keeping the shortest feasible one.
pub fn decompose_rotation(step: i64, slots: usize, available: &BTreeSet<i64>) -> Option<Vec<i64>> {
    let n = slots as i64;
    let s = step.rem_euclid(n);
    if s == 0 {
        return Some(Vec::new());
    }
    if let Some(&k) = available.iter().find(|&&k| k.rem_euclid(n) == s) {
        return Some(vec![k]);
    }
    let pick = |k: i64| -> Option<i64> {
        if available.contains(&k) {
            return Some(k);
        }
        available.iter().copied().find(|&a| a.rem_euclid(n) == k.rem_euclid(n))
    };
    let mut candidates: Vec<Vec<i64>> = Vec::new();

    let mut naf = Vec::new();
    let mut x = s;
    let mut bit = 1i64;
    while x != 0 {
        if x & 1 == 1 {
            let z = 2 - (x & 3);
            naf.push(z * bit);
            x -= z;
        }
        x >>= 1;
        bit <<= 1;
    }
    naf.retain(|k| k.rem_euclid(n) != 0);
    candidates.push(naf);

    let binary = |v: i64, sign: i64| {
        (0..63)
            .filter(|b| (v >> b) & 1 == 1)
            .map(|b| sign * (1i64 << b))
            .collect::<Vec<_>>()
    };
    candidates.push(binary(s, 1));
    candidates.push(binary(n - s, -1));

    candidates
        .into_iter()
        .filter_map(|c| c.into_iter().map(pick).collect::<Option<Vec<_>>>())
        .min_by_key(|c| c.len())
}

/// Evaluation engine bound to one parameter set and one public key set.
pub struct Evaluator {
    ctx: Arc<CkksContext>,
    keys: Arc<PublicKeySet>,
    id: u64,
    steps: BTreeSet<i64>,
    perms: BTreeMap<i64, Vec<usize>>,
}

impl std::fmt::Debug for Evaluator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Evaluator")
            .field("backend", &self.backend())
            .field("ring_degree", &self.ctx.degree())
            .field("steps", &self.steps)
            .finish()
    }
}

impl Evaluator {
    pub fn new(ctx: Arc<CkksContext>, keys: Arc<PublicKeySet>) -> Result<Self> {
        if ctx.params() != keys.params() {
            return Err(CkksError::ParamsMismatch(
                "key set was generated for different parameters".into(),
            ));
        }
        let steps = keys.rotation_steps();
        let perms = match keys.kind {
            PublicKind::Real { .. } => steps
                .iter()
                .map(|&s| (s, ctx.galois_permutation(galois_element(s, ctx.degree()))))
                .collect(),
            PublicKind::Mock { .. } => BTreeMap::new(),
        };
        Ok(Self {
            id: params_id(ctx.params()),
            ctx,
            keys,
            steps,
            perms,
        })
    }

    pub fn params(&self) -> &CkksParams {
        self.ctx.params()
    }

    pub fn context(&self) -> &Arc<CkksContext> {
        &self.ctx
    }

    pub fn backend(&self) -> Backend {
        self.keys.backend()
    }

    pub fn slot_count(&self) -> usize {
        self.ctx.params().slot_count()
    }

    pub fn max_level(&self) -> usize {
        self.ctx.max_level()
    }

    pub fn default_scale(&self) -> f64 {
        self.ctx.params().default_scale
    }

    pub fn rotation_steps(&self) -> &BTreeSet<i64> {
        &self.steps
    }

    fn check(&self, ct: &Ciphertext) -> Result<()> {
        if ct.params_id != self.id {
            return Err(CkksError::ParamsMismatch(
                "ciphertext was produced under different parameters".into(),
            ));
        }
        if ct.backend() != self.backend() {
            return Err(CkksError::Backend(format!(
                "{:?} ciphertext given to a {:?} evaluator",
                ct.backend(),
                self.backend()
            )));
        }
        Ok(())
    }

    /// Full structural check for ciphertexts arriving from outside the process.
    pub fn validate(&self, ct: &Ciphertext) -> Result<()> {
        self.check(ct)?;
        if ct.level > self.max_level() {
            return Err(CkksError::Malformed(format!("level {} above chain top", ct.level)));
        }
        match &ct.body {
            CtBody::Mock(v) => {
                if v.len() != self.slot_count() {
                    return Err(CkksError::Malformed(format!("{} mock slots", v.len())));
                }
            }
            CtBody::Real(polys) => {
                for p in polys {
                    if p.limb_count() != ct.level + 1 {
                        return Err(CkksError::Malformed("limb count does not match level".into()));
                    }
                    for (i, limb) in p.limbs.iter().enumerate() {
                        let q = self.ctx.modulus(i).value();
                        if limb.len() != self.ctx.degree() || limb.iter().any(|&x| x >= q) {
                            return Err(CkksError::Malformed(format!("limb {i} malformed")));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn relin_key(&self) -> &KeySwitchKey {
        match &self.keys.kind {
            PublicKind::Real { relin_key, .. } => relin_key,
            PublicKind::Mock { .. } => unreachable!("mock backend has no relinearization key"),
        }
    }

    fn rotation_key(&self, step: i64) -> &KeySwitchKey {
        match &self.keys.kind {
            PublicKind::Real { rotation_keys, .. } => &rotation_keys[&step],
            PublicKind::Mock { .. } => unreachable!("mock backend has no rotation keys"),
        }
    }

    /// Encodes `values` (zero-padded) at `level` and `scale`.
    pub fn encode(&self, values: &[f64], level: usize, scale: f64) -> Result<Plaintext> {
        let slots = self.slot_count();
        if values.len() > slots {
            return Err(CkksError::Capacity {
                len: values.len(),
                slots,
            });
        }
        if level > self.max_level() {
            return Err(CkksError::InvalidParams(format!("level {level} above chain top")));
        }
        let body = match self.backend() {
            Backend::Mock => {
                if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                    return Err(CkksError::NonFinite(i));
                }
                let mut v = values.to_vec();
                v.resize(slots, 0.0);
                PtBody::Mock(v)
            }
            Backend::Real => {
                let coeffs = self.ctx.encoder().encode(values, scale)?;
                PtBody::Real(self.ctx.from_signed(&coeffs, &self.ctx.basis(level, false)))
            }
        };
        Ok(Plaintext { level, scale, body })
    }

    /// Encodes `value` in every slot.
    pub fn encode_constant(&self, value: f64, level: usize, scale: f64) -> Result<Plaintext> {
        let body = match self.backend() {
            Backend::Mock => {
                if !value.is_finite() {
                    return Err(CkksError::NonFinite(0));
                }
                PtBody::Mock(vec![value; self.slot_count()])
            }
            Backend::Real => {
                let coeffs = self.ctx.encoder().encode_constant(value, scale)?;
                PtBody::Real(self.ctx.from_signed(&coeffs, &self.ctx.basis(level, false)))
            }
        };
        Ok(Plaintext { level, scale, body })
    }

    /// Drops primes until `ct` sits at `level`. Value and scale are unchanged.
    pub fn mod_switch_to(&self, ct: &Ciphertext, level: usize) -> Result<Ciphertext> {
        self.check(ct)?;
        if level > ct.level {
            return Err(CkksError::LevelMismatch {
                op: "mod_switch",
                a: ct.level,
                b: level,
            });
        }
        let mut out = ct.clone();
        out.level = level;
        if let CtBody::Real(polys) = &mut out.body {
            for p in polys.iter_mut() {
                p.truncate(level + 1);
            }
        }
        Ok(out)
    }

    /// Brings two operands to a common level and scale.
    ///
    /// The lower level wins. Scales that differ beyond `SCALE_TOLERANCE` are
    /// reconciled by multiplying the smaller-scale operand by a constant-1
    /// plaintext chosen to land exactly on the larger scale, which costs that
    /// operand one level.
    fn align<'a>(
        &self,
        a: &'a Ciphertext,
        b: &'a Ciphertext,
        op: &'static str,
    ) -> Result<(Cow<'a, Ciphertext>, Cow<'a, Ciphertext>)> {
        self.check(a)?;
        self.check(b)?;
        let mut a: Cow<Ciphertext> = Cow::Borrowed(a);
        let mut b: Cow<Ciphertext> = Cow::Borrowed(b);
        if (a.scale / b.scale - 1.0).abs() > SCALE_TOLERANCE {
            let (small, big) = if a.scale < b.scale { (&mut a, &b) } else { (&mut b, &a) };
            if small.level == 0 {
                return Err(CkksError::LevelMismatch {
                    op,
                    a: small.level,
                    b: big.level,
                });
            }
            let target = big.scale;
            let fixed = self.mul_const_to_scale(small, 1.0, target)?;
            *small = Cow::Owned(fixed);
        }
        let level = a.level.min(b.level);
        if a.level != level {
            a = Cow::Owned(self.mod_switch_to(&a, level)?);
        }
        if b.level != level {
            b = Cow::Owned(self.mod_switch_to(&b, level)?);
        }
        Ok((a, b))
    }

    pub fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        let (a, b) = self.align(a, b, "add")?;
        let body = match (&a.body, &b.body) {
            (CtBody::Real(x), CtBody::Real(y)) => {
                let polys = x
                    .iter()
                    .zip(y)
                    .map(|(p, q)| {
                        let mut r = p.clone();
                        self.ctx.add_assign(&mut r, q);
                        r
                    })
                    .collect();
                CtBody::Real(polys)
            }
            (CtBody::Mock(x), CtBody::Mock(y)) => {
                CtBody::Mock(x.iter().zip(y).map(|(u, v)| u + v).collect())
            }
            _ => unreachable!("backend checked"),
        };
        Ok(Ciphertext {
            params_id: self.id,
            level: a.level,
            scale: a.scale,
            body,
        })
    }

    pub fn sub(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        let (a, b) = self.align(a, b, "sub")?;
        let body = match (&a.body, &b.body) {
            (CtBody::Real(x), CtBody::Real(y)) => {
                let polys = x
                    .iter()
                    .zip(y)
                    .map(|(p, q)| {
                        let mut r = p.clone();
                        self.ctx.sub_assign(&mut r, q);
                        r
                    })
                    .collect();
                CtBody::Real(polys)
            }
            (CtBody::Mock(x), CtBody::Mock(y)) => {
                CtBody::Mock(x.iter().zip(y).map(|(u, v)| u - v).collect())
            }
            _ => unreachable!("backend checked"),
        };
        Ok(Ciphertext {
            params_id: self.id,
            level: a.level,
            scale: a.scale,
            body,
        })
    }

    /// Adds an encoded plaintext, which must match the ciphertext's level and scale.
    pub fn add_plaintext(&self, ct: &Ciphertext, pt: &Plaintext) -> Result<Ciphertext> {
        self.check(ct)?;
        if pt.level != ct.level {
            return Err(CkksError::LevelMismatch {
                op: "add_plain",
                a: ct.level,
                b: pt.level,
            });
        }
        if (pt.scale / ct.scale - 1.0).abs() > SCALE_TOLERANCE {
            return Err(CkksError::InvalidParams(format!(
                "plaintext scale {} does not match ciphertext scale {}",
                pt.scale, ct.scale
            )));
        }
        let body = match (&ct.body, &pt.body) {
            (CtBody::Real(polys), PtBody::Real(m)) => {
                let mut polys = polys.clone();
                self.ctx.add_assign(&mut polys[0], m);
                CtBody::Real(polys)
            }
            (CtBody::Mock(x), PtBody::Mock(m)) => {
                CtBody::Mock(x.iter().zip(m).map(|(u, v)| u + v).collect())
            }
            _ => return Err(CkksError::Backend("plaintext/ciphertext backend mismatch".into())),
        };
        Ok(Ciphertext {
            params_id: self.id,
            level: ct.level,
            scale: ct.scale,
            body,
        })
    }

    /// Slotwise `ct + values` (values zero-padded). No level is consumed.
    pub fn add_plain(&self, ct: &Ciphertext, values: &[f64]) -> Result<Ciphertext> {
        self.check(ct)?;
        let pt = self.encode(values, ct.level, ct.scale)?;
        self.add_plaintext(ct, &pt)
    }

    /// Slotwise `ct + value` in every slot.
    pub fn add_const(&self, ct: &Ciphertext, value: f64) -> Result<Ciphertext> {
        self.check(ct)?;
        let pt = self.encode_constant(value, ct.level, ct.scale)?;
        self.add_plaintext(ct, &pt)
    }

    fn depth_check(&self, op: &'static str, level: usize) -> Result<()> {
        if level == 0 {
            Err(CkksError::Depth { op, level, needed: 1 })
        } else {
            Ok(())
        }
    }

    fn rescale_body(&self, polys: &mut [RnsPoly]) {
        for p in polys.iter_mut() {
            self.ctx.rescale(p);
        }
    }

    /// Ciphertext-ciphertext product, relinearized and rescaled.
    pub fn multiply(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        self.check(a)?;
        self.check(b)?;
        let level = a.level.min(b.level);
        self.depth_check("multiply", level)?;
        let a = if a.level != level { Cow::Owned(self.mod_switch_to(a, level)?) } else { Cow::Borrowed(a) };
        let b = if b.level != level { Cow::Owned(self.mod_switch_to(b, level)?) } else { Cow::Borrowed(b) };
        let scale = a.scale * b.scale / self.ctx.modulus(level).value() as f64;
        let body = match (&a.body, &b.body) {
            (CtBody::Real(x), CtBody::Real(y)) => {
                let ctx = &self.ctx;
                let d0 = ctx.mul(&x[0], &y[0]);
                let mut d1 = ctx.mul(&x[0], &y[1]);
                ctx.add_assign(&mut d1, &ctx.mul(&x[1], &y[0]));
                let d2 = ctx.mul(&x[1], &y[1]);
                let (k0, k1) = ctx.key_switch(&d2, &self.relin_key().parts, level);
                let mut c0 = d0;
                ctx.add_assign(&mut c0, &k0);
                ctx.add_assign(&mut d1, &k1);
                let mut polys = vec![c0, d1];
                self.rescale_body(&mut polys);
                CtBody::Real(polys)
            }
            (CtBody::Mock(x), CtBody::Mock(y)) => {
                CtBody::Mock(x.iter().zip(y).map(|(u, v)| u * v).collect())
            }
            _ => unreachable!("backend checked"),
        };
        Ok(Ciphertext {
            params_id: self.id,
            level: level - 1,
            scale,
            body,
        })
    }

    fn mul_pt_rescale(&self, ct: &Ciphertext, pt: &Plaintext, target: f64) -> Ciphertext {
        let body = match (&ct.body, &pt.body) {
            (CtBody::Real(polys), PtBody::Real(m)) => {
                let mut out: Vec<RnsPoly> = polys.iter().map(|p| self.ctx.mul(p, m)).collect();
                self.rescale_body(&mut out);
                CtBody::Real(out)
            }
            (CtBody::Mock(x), PtBody::Mock(m)) => {
                CtBody::Mock(x.iter().zip(m).map(|(u, v)| u * v).collect())
            }
            _ => unreachable!("backend checked"),
        };
        Ciphertext {
            params_id: self.id,
            level: ct.level - 1,
            scale: target,
            body,
        }
    }

    fn mul_const_to_scale(&self, ct: &Ciphertext, value: f64, target: f64) -> Result<Ciphertext> {
        self.depth_check("multiply_plain", ct.level)?;
        let q = self.ctx.modulus(ct.level).value() as f64;
        let pt = self.encode_constant(value, ct.level, target * q / ct.scale)?;
        Ok(self.mul_pt_rescale(ct, &pt, target))
    }

    /// Slotwise product with a plaintext vector (zero-padded), rescaled so the
    /// result lands exactly on the default scale.
    pub fn multiply_plain(&self, ct: &Ciphertext, values: &[f64]) -> Result<Ciphertext> {
        self.check(ct)?;
        self.depth_check("multiply_plain", ct.level)?;
        let target = self.default_scale();
        let q = self.ctx.modulus(ct.level).value() as f64;
        let pt = self.encode(values, ct.level, target * q / ct.scale)?;
        Ok(self.mul_pt_rescale(ct, &pt, target))
    }

    /// Slotwise product with a scalar broadcast to every slot.
    pub fn multiply_const(&self, ct: &Ciphertext, value: f64) -> Result<Ciphertext> {
        self.check(ct)?;
        self.mul_const_to_scale(ct, value, self.default_scale())
    }

    fn rotate_once(&self, ct: &Ciphertext, step: i64) -> Ciphertext {
        let body = match &ct.body {
            CtBody::Real(polys) => {
                let perm = &self.perms[&step];
                let c0 = self.ctx.apply_galois(&polys[0], perm);
                let c1 = self.ctx.apply_galois(&polys[1], perm);
                let (k0, k1) = self
                    .ctx
                    .key_switch(&c1, &self.rotation_key(step).parts, ct.level);
                let mut c0 = c0;
                self.ctx.add_assign(&mut c0, &k0);
                CtBody::Real(vec![c0, k1])
            }
            CtBody::Mock(x) => {
                let n = x.len() as i64;
                let s = step.rem_euclid(n) as usize;
                let mut v = x.clone();
                v.rotate_left(s);
                CtBody::Mock(v)
            }
        };
        Ciphertext {
            params_id: self.id,
            level: ct.level,
            scale: ct.scale,
            body,
        }
    }

    /// Left rotation: `out[i] = in[(i + step) mod slots]`.
    pub fn rotate(&self, ct: &Ciphertext, step: i64) -> Result<Ciphertext> {
        self.check(ct)?;
        let plan = decompose_rotation(step, self.slot_count(), &self.steps)
            .ok_or(CkksError::MissingRotationKey(step))?;
        let mut out = ct.clone();
        for k in plan {
            out = self.rotate_once(&out, k);
        }
        Ok(out)
    }

    /// Rotates one ciphertext by several steps, sharing a single key-switch
    /// decomposition across all steps that have a direct key.
    ///
    /// Results equal `rotate(ct, step)` for each step, up to encryption noise.
    pub fn rotate_hoisted(&self, ct: &Ciphertext, steps: &[i64]) -> Result<Vec<Ciphertext>> {
        self.check(ct)?;
        let slots = self.slot_count() as i64;
        let direct = |s: i64| -> Option<i64> {
            if self.steps.contains(&s) {
                Some(s)
            } else {
                self.steps.iter().copied().find(|&k| k.rem_euclid(slots) == s.rem_euclid(slots))
            }
        };
        let polys = match &ct.body {
            CtBody::Mock(_) => return steps.iter().map(|&s| self.rotate(ct, s)).collect(),
            CtBody::Real(p) => p,
        };
        let needs_hoist = steps
            .iter()
            .filter(|&&s| s.rem_euclid(slots) != 0 && direct(s).is_some())
            .count()
            > 1;
        if !needs_hoist {
            return steps.iter().map(|&s| self.rotate(ct, s)).collect();
        }
        let dec = self.ctx.decompose(&polys[1], ct.level);
        steps
            .iter()
            .map(|&s| {
                if s.rem_euclid(slots) == 0 {
                    return Ok(ct.clone());
                }
                let Some(k) = direct(s) else {
                    return self.rotate(ct, s);
                };
                let perm = &self.perms[&k];
                let (k0, k1) = self.ctx.key_switch_decomposed(
                    &dec,
                    &self.rotation_key(k).parts,
                    Some(perm),
                );
                let mut c0 = self.ctx.apply_galois(&polys[0], perm);
                self.ctx.add_assign(&mut c0, &k0);
                Ok(Ciphertext {
                    params_id: self.id,
                    level: ct.level,
                    scale: ct.scale,
                    body: CtBody::Real(vec![c0, k1]),
                })
            })
            .collect()
    }

    /// Number of key switches `rotate(step)` performs.
    pub fn rotation_cost(&self, step: i64) -> Option<usize> {
        decompose_rotation(step, self.slot_count(), &self.steps).map(|p| p.len())
    }

    /// Multiplies by an encoded mask without rescaling. See [`PendingProduct`].
    pub fn premultiply(&self, ct: &Ciphertext, mask: &Plaintext) -> Result<PendingProduct> {
        self.check(ct)?;
        self.depth_check("premultiply", ct.level)?;
        if mask.level != ct.level {
            return Err(CkksError::LevelMismatch {
                op: "premultiply",
                a: ct.level,
                b: mask.level,
            });
        }
        let body = match (&ct.body, &mask.body) {
            (CtBody::Real(polys), PtBody::Real(m)) => {
                CtBody::Real(polys.iter().map(|p| self.ctx.mul(p, m)).collect())
            }
            (CtBody::Mock(x), PtBody::Mock(m)) => {
                CtBody::Mock(x.iter().zip(m).map(|(u, v)| u * v).collect())
            }
            _ => return Err(CkksError::Backend("plaintext/ciphertext backend mismatch".into())),
        };
        Ok(PendingProduct {
            params_id: self.id,
            level: ct.level,
            scale: ct.scale * mask.scale,
            body,
        })
    }

    /// `sum_k weights[k] * terms[k]`, rescaled once onto the default scale.
    ///
    /// All terms must share level and scale. Zero weights are skipped.
    pub fn weighted_sum(&self, terms: &[&PendingProduct], weights: &[f64]) -> Result<Ciphertext> {
        if terms.is_empty() || terms.len() != weights.len() {
            return Err(CkksError::InvalidParams(format!(
                "weighted_sum needs matching non-empty inputs ({} terms, {} weights)",
                terms.len(),
                weights.len()
            )));
        }
        let level = terms[0].level;
        let scale = terms[0].scale;
        for t in terms {
            if t.params_id != self.id {
                return Err(CkksError::ParamsMismatch("pending product from other parameters".into()));
            }
            if t.level != level || (t.scale / scale - 1.0).abs() > SCALE_TOLERANCE {
                return Err(CkksError::LevelMismatch {
                    op: "weighted_sum",
                    a: level,
                    b: t.level,
                });
            }
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(CkksError::NonFinite(i));
        }
        let target = self.default_scale();
        let body = match &terms[0].body {
            CtBody::Mock(first) => {
                let mut acc = vec![0.0f64; first.len()];
                for (t, &w) in terms.iter().zip(weights) {
                    if w == 0.0 {
                        continue;
                    }
                    let CtBody::Mock(v) = &t.body else {
                        return Err(CkksError::Backend("mixed backends in weighted_sum".into()));
                    };
                    for (a, x) in acc.iter_mut().zip(v) {
                        *a += x * w;
                    }
                }
                CtBody::Mock(acc)
            }
            CtBody::Real(_) => {
                let n = self.ctx.degree();
                let q_top = self.ctx.modulus(level).value() as f64;
                let weight_scale = target * q_top / scale;
                let ints: Vec<i128> = weights
                    .iter()
                    .map(|&w| (w * weight_scale).round() as i128)
                    .collect();
                let mut polys = Vec::with_capacity(2);
                for p in 0..2 {
                    let mut limbs = Vec::with_capacity(level + 1);
                    for j in 0..=level {
                        let q = self.ctx.modulus(j);
                        let mut acc = vec![0u128; n];
                        let mut pending = 0usize;
                        for (t, &wi) in terms.iter().zip(&ints) {
                            if wi == 0 {
                                continue;
                            }
                            let CtBody::Real(tp) = &t.body else {
                                return Err(CkksError::Backend("mixed backends in weighted_sum".into()));
                            };
                            let wr = q.reduce_i128(wi) as u128;
                            for (a, &x) in acc.iter_mut().zip(&tp[p].limbs[j]) {
                                *a += x as u128 * wr;
                            }
                            pending += 1;
                            if pending == ACC_FLUSH {
                                for a in acc.iter_mut() {
                                    *a = q.reduce_u128(*a) as u128;
                                }
                                pending = 1;
                            }
                        }
                        limbs.push(acc.iter().map(|&a| q.reduce_u128(a)).collect());
                    }
                    polys.push(RnsPoly { limbs });
                }
                self.rescale_body(&mut polys);
                CtBody::Real(polys)
            }
        };
        Ok(Ciphertext {
            params_id: self.id,
            level: level - 1,
            scale: target,
            body,
        })
    }
}
