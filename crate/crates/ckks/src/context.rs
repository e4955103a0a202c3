//! RNS ring context: NTT tables per prime, rescaling, and key switching.

use rand::Rng;

use crate::arith::Modulus;
use crate::encoding::Encoder;
use crate::error::Result;
use crate::ntt::{galois_permutation, NttTable};
use crate::params::CkksParams;

/// A ring element in RNS form, one limb per prime. Limb `i` uses basis prime `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RnsPoly {
    pub limbs: Vec<Vec<u64>>,
}

impl RnsPoly {
    pub fn zero(limbs: usize, n: usize) -> Self {
        Self {
            limbs: vec![vec![0u64; n]; limbs],
        }
    }

    pub fn limb_count(&self) -> usize {
        self.limbs.len()
    }

    pub fn truncate(&mut self, limbs: usize) {
        self.limbs.truncate(limbs);
    }
}

/// A polynomial split into per-prime digits, each lifted to every key-switching prime.
#[derive(Debug, Clone)]
pub struct Decomposed {
    level: usize,
    targets: Vec<usize>,
    // ext[target][digit], NTT form
    ext: Vec<Vec<Vec<u64>>>,
}

impl Decomposed {
    pub fn level(&self) -> usize {
        self.level
    }
}

/// Precomputed tables for one parameter set.
///
/// Basis index `i` in `0..=L` is the ciphertext prime `q_i`; index `L + 1` is
/// the special prime `P`.
#[derive(Debug)]
pub struct CkksContext {
    params: CkksParams,
    tables: Vec<NttTable>,
    // q_l^{-1} mod q_j for j < l
    rescale_inv: Vec<Vec<u64>>,
    // P^{-1} mod q_j
    special_inv: Vec<u64>,
    encoder: Encoder,
}

impl CkksContext {
    pub fn new(params: &CkksParams) -> Result<Self> {
        params.validate()?;
        let n = params.ring_degree;
        let primes = params.primes();
        let tables: Vec<NttTable> = primes
            .iter()
            .map(|&q| NttTable::new(Modulus::new(q), n))
            .collect();
        let data = params.data_prime_count();
        let rescale_inv = (0..data)
            .map(|l| {
                (0..l)
                    .map(|j| tables[j].modulus().inv(primes[l] % primes[j]))
                    .collect()
            })
            .collect();
        let special = primes[data];
        let special_inv = (0..data)
            .map(|j| tables[j].modulus().inv(special % primes[j]))
            .collect();
        Ok(Self {
            params: params.clone(),
            tables,
            rescale_inv,
            special_inv,
            encoder: Encoder::new(n),
        })
    }

    pub fn params(&self) -> &CkksParams {
        &self.params
    }

    pub fn degree(&self) -> usize {
        self.params.ring_degree
    }

    pub fn max_level(&self) -> usize {
        self.params.max_level()
    }

    pub fn special_index(&self) -> usize {
        self.params.data_prime_count()
    }

    pub fn modulus(&self, i: usize) -> &Modulus {
        self.tables[i].modulus()
    }

    pub fn table(&self, i: usize) -> &NttTable {
        &self.tables[i]
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    /// Basis indices for a ciphertext at `level`, optionally including the special prime.
    pub fn basis(&self, level: usize, with_special: bool) -> Vec<usize> {
        let mut b: Vec<usize> = (0..=level).collect();
        if with_special {
            b.push(self.special_index());
        }
        b
    }

    /// Lifts signed integer coefficients into NTT-form limbs over `basis`.
    pub fn from_signed(&self, coeffs: &[i128], basis: &[usize]) -> RnsPoly {
        let limbs = basis
            .iter()
            .map(|&i| {
                let t = &self.tables[i];
                let q = t.modulus();
                let mut limb: Vec<u64> = coeffs.iter().map(|&c| q.reduce_i128(c)).collect();
                t.forward(&mut limb);
                limb
            })
            .collect();
        RnsPoly { limbs }
    }

    pub fn from_small(&self, coeffs: &[i64], basis: &[usize]) -> RnsPoly {
        let limbs = basis
            .iter()
            .map(|&i| {
                let t = &self.tables[i];
                let q = t.modulus();
                let mut limb: Vec<u64> = coeffs.iter().map(|&c| q.reduce_i64(c)).collect();
                t.forward(&mut limb);
                limb
            })
            .collect();
        RnsPoly { limbs }
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, basis: &[usize], rng: &mut R) -> RnsPoly {
        let n = self.degree();
        let limbs = basis
            .iter()
            .map(|&i| {
                let q = self.tables[i].modulus().value();
                // uniform mod q is uniform in either domain
                (0..n).map(|_| rng.gen_range(0..q)).collect()
            })
            .collect();
        RnsPoly { limbs }
    }

    pub fn add_assign(&self, a: &mut RnsPoly, b: &RnsPoly) {
        for (i, (x, y)) in a.limbs.iter_mut().zip(&b.limbs).enumerate() {
            let q = self.tables[i].modulus();
            for (u, v) in x.iter_mut().zip(y) {
                *u = q.add(*u, *v);
            }
        }
    }

    pub fn sub_assign(&self, a: &mut RnsPoly, b: &RnsPoly) {
        for (i, (x, y)) in a.limbs.iter_mut().zip(&b.limbs).enumerate() {
            let q = self.tables[i].modulus();
            for (u, v) in x.iter_mut().zip(y) {
                *u = q.sub(*u, *v);
            }
        }
    }

    pub fn neg_assign(&self, a: &mut RnsPoly) {
        for (i, x) in a.limbs.iter_mut().enumerate() {
            let q = self.tables[i].modulus();
            for u in x.iter_mut() {
                *u = q.neg(*u);
            }
        }
    }

    /// Pointwise product of two NTT-form polynomials over a data-prime prefix basis.
    pub fn mul(&self, a: &RnsPoly, b: &RnsPoly) -> RnsPoly {
        let limbs = a
            .limbs
            .iter()
            .zip(&b.limbs)
            .enumerate()
            .map(|(i, (x, y))| {
                let q = self.tables[i].modulus();
                x.iter().zip(y).map(|(u, v)| q.mul(*u, *v)).collect()
            })
            .collect();
        RnsPoly { limbs }
    }

    /// Pointwise product where `b` carries limbs for an explicit `basis`.
    pub fn mul_on_basis(&self, a: &RnsPoly, b: &RnsPoly, basis: &[usize]) -> RnsPoly {
        let limbs = basis
            .iter()
            .enumerate()
            .map(|(k, &i)| {
                let q = self.tables[i].modulus();
                a.limbs[k]
                    .iter()
                    .zip(&b.limbs[k])
                    .map(|(u, v)| q.mul(*u, *v))
                    .collect()
            })
            .collect();
        RnsPoly { limbs }
    }

    /// Multiplies every limb by a per-limb constant already reduced mod that limb's prime.
    pub fn mul_scalar_assign(&self, a: &mut RnsPoly, scalars: &[u64]) {
        for (i, (x, &s)) in a.limbs.iter_mut().zip(scalars).enumerate() {
            let q = self.tables[i].modulus();
            let ss = q.shoup(s);
            for u in x.iter_mut() {
                *u = q.mul_shoup(*u, s, ss);
            }
        }
    }

    /// Divides by the last prime with rounding and drops that limb.
    ///
    /// Input and output are in NTT form over the data-prime prefix basis.
    pub fn rescale(&self, a: &mut RnsPoly) {
        let l = a.limb_count() - 1;
        assert!(l >= 1, "cannot rescale a single-limb polynomial");
        let mut last = a.limbs.pop().expect("non-empty");
        self.tables[l].inverse(&mut last);
        let ql = self.tables[l].modulus();
        let centered: Vec<i64> = last.iter().map(|&c| ql.center(c)).collect();
        for (j, limb) in a.limbs.iter_mut().enumerate() {
            let t = &self.tables[j];
            let q = t.modulus();
            let mut r: Vec<u64> = centered.iter().map(|&c| q.reduce_i64(c)).collect();
            t.forward(&mut r);
            let inv = self.rescale_inv[l][j];
            let inv_s = q.shoup(inv);
            for (u, v) in limb.iter_mut().zip(&r) {
                *u = q.mul_shoup(q.sub(*u, *v), inv, inv_s);
            }
        }
    }

    /// Applies `X -> X^g` to an NTT-form polynomial.
    pub fn apply_galois(&self, a: &RnsPoly, perm: &[usize]) -> RnsPoly {
        let limbs = a
            .limbs
            .iter()
            .map(|limb| perm.iter().map(|&k| limb[k]).collect())
            .collect();
        RnsPoly { limbs }
    }

    pub fn galois_permutation(&self, galois_elt: u64) -> Vec<usize> {
        galois_permutation(self.degree(), galois_elt)
    }

    /// Key switching of one NTT-form polynomial `c` at `level` under `key`.
    ///
    /// `key[i] = (b_i, a_i)` spans the full basis `q_0..q_L, P`. Returns
    /// `(k0, k1)` at `level` with `k0 + k1*s ~= c * s'`.
    pub fn key_switch(&self, c: &RnsPoly, key: &[(RnsPoly, RnsPoly)], level: usize) -> (RnsPoly, RnsPoly) {
        self.key_switch_decomposed(&self.decompose(c, level), key, None)
    }

    /// Splits `c` into one digit per ciphertext prime and lifts every digit
    /// to every target prime of the key-switching basis.
    pub fn decompose(&self, c: &RnsPoly, level: usize) -> Decomposed {
        let n = self.degree();
        let digits = level + 1;
        debug_assert_eq!(c.limb_count(), digits);
        let coeff: Vec<Vec<u64>> = c
            .limbs
            .iter()
            .enumerate()
            .map(|(i, limb)| {
                let mut v = limb.clone();
                self.tables[i].inverse(&mut v);
                v
            })
            .collect();
        let targets: Vec<usize> = (0..digits).chain(std::iter::once(self.special_index())).collect();
        let ext = targets
            .iter()
            .map(|&t| {
                let table = &self.tables[t];
                let q = table.modulus();
                coeff
                    .iter()
                    .enumerate()
                    .map(|(i, digit)| {
                        if i == t {
                            return c.limbs[i].clone();
                        }
                        let mut d: Vec<u64> = digit.iter().map(|&v| q.reduce(v)).collect();
                        debug_assert_eq!(d.len(), n);
                        table.forward(&mut d);
                        d
                    })
                    .collect()
            })
            .collect();
        Decomposed { level, targets, ext }
    }

    /// Inner product of decomposed digits with `key`, then division by `P`.
    ///
    /// With `perm`, the digits are first permuted by a Galois automorphism,
    /// which lets one decomposition serve several rotations.
    pub fn key_switch_decomposed(
        &self,
        d: &Decomposed,
        key: &[(RnsPoly, RnsPoly)],
        perm: Option<&[usize]>,
    ) -> (RnsPoly, RnsPoly) {
        let n = self.degree();
        let mut out0: Vec<Vec<u64>> = Vec::with_capacity(d.targets.len());
        let mut out1: Vec<Vec<u64>> = Vec::with_capacity(d.targets.len());
        let mut acc0 = vec![0u128; n];
        let mut acc1 = vec![0u128; n];
        for (&t, digits) in d.targets.iter().zip(&d.ext) {
            let q = self.tables[t].modulus();
            acc0.iter_mut().for_each(|x| *x = 0);
            acc1.iter_mut().for_each(|x| *x = 0);
            for (i, src) in digits.iter().enumerate() {
                let (kb, ka) = &key[i];
                let kb = &kb.limbs[t];
                let ka = &ka.limbs[t];
                match perm {
                    None => {
                        for k in 0..n {
                            let x = src[k] as u128;
                            acc0[k] += x * kb[k] as u128;
                            acc1[k] += x * ka[k] as u128;
                        }
                    }
                    Some(p) => {
                        for k in 0..n {
                            let x = src[p[k]] as u128;
                            acc0[k] += x * kb[k] as u128;
                            acc1[k] += x * ka[k] as u128;
                        }
                    }
                }
            }
            out0.push(acc0.iter().map(|&x| q.reduce_u128(x)).collect());
            out1.push(acc1.iter().map(|&x| q.reduce_u128(x)).collect());
        }
        (self.mod_down(out0), self.mod_down(out1))
    }

    /// Divides an NTT-form polynomial over `q_0..q_l, P` by `P` with rounding.
    fn mod_down(&self, mut limbs: Vec<Vec<u64>>) -> RnsPoly {
        let special = self.special_index();
        let mut last = limbs.pop().expect("special limb");
        self.tables[special].inverse(&mut last);
        let p = self.tables[special].modulus();
        let centered: Vec<i64> = last.iter().map(|&c| p.center(c)).collect();
        for (j, limb) in limbs.iter_mut().enumerate() {
            let t = &self.tables[j];
            let q = t.modulus();
            let mut r: Vec<u64> = centered.iter().map(|&c| q.reduce_i64(c)).collect();
            t.forward(&mut r);
            let inv = self.special_inv[j];
            let inv_s = q.shoup(inv);
            for (u, v) in limb.iter_mut().zip(&r) {
                *u = q.mul_shoup(q.sub(*u, *v), inv, inv_s);
            }
        }
        RnsPoly { limbs }
    }

    /// Centered coefficients of limb 0 after the inverse NTT.
    pub fn centered_coeffs_limb0(&self, a: &RnsPoly) -> Vec<i64> {
        let mut v = a.limbs[0].clone();
        self.tables[0].inverse(&mut v);
        let q = self.tables[0].modulus();
        v.iter().map(|&c| q.center(c)).collect()
    }
}
