//! Negacyclic number-theoretic transform over `Z_q[X]/(X^N + 1)`.
//!
//! The forward transform leaves evaluations in bit-reversed order: after
//! `forward`, index `k` holds `a(psi^(2*brv(k) + 1))` where `psi` is the table's
//! primitive `2N`-th root of unity.

use crate::arith::{primitive_root_of_unity, Modulus};

#[derive(Debug, Clone)]
pub struct NttTable {
    q: Modulus,
    n: usize,
    psi_rev: Vec<u64>,
    psi_rev_shoup: Vec<u64>,
    inv_psi_rev: Vec<u64>,
    inv_psi_rev_shoup: Vec<u64>,
    n_inv: u64,
    n_inv_shoup: u64,
}

pub(crate) fn bit_reverse(x: usize, bits: u32) -> usize {
    if bits == 0 {
        return 0;
    }
    x.reverse_bits() >> (usize::BITS - bits)
}

impl NttTable {
    pub fn new(q: Modulus, n: usize) -> Self {
        assert!(n.is_power_of_two() && n >= 2);
        let bits = n.trailing_zeros();
        let psi = primitive_root_of_unity(&q, 2 * n as u64);
        let psi_inv = q.inv(psi);
        let mut psi_rev = vec![0u64; n];
        let mut inv_psi_rev = vec![0u64; n];
        let (mut p, mut pi) = (1u64, 1u64);
        for i in 0..n {
            let r = bit_reverse(i, bits);
            psi_rev[r] = p;
            inv_psi_rev[r] = pi;
            p = q.mul(p, psi);
            pi = q.mul(pi, psi_inv);
        }
        let psi_rev_shoup = psi_rev.iter().map(|&w| q.shoup(w)).collect();
        let inv_psi_rev_shoup = inv_psi_rev.iter().map(|&w| q.shoup(w)).collect();
        let n_inv = q.inv(n as u64);
        Self {
            q,
            n,
            psi_rev,
            psi_rev_shoup,
            inv_psi_rev,
            inv_psi_rev_shoup,
            n_inv,
            n_inv_shoup: q.shoup(n_inv),
        }
    }

    pub fn modulus(&self) -> &Modulus {
        &self.q
    }

    pub fn degree(&self) -> usize {
        self.n
    }

    /// In-place forward transform. Butterflies keep values lazily in `[0, 4q)`.
    pub fn forward(&self, a: &mut [u64]) {
        debug_assert_eq!(a.len(), self.n);
        let q = self.q.value();
        let two_q = 2 * q;
        let n = self.n;
        let mut t = n;
        let mut m = 1;
        while m < n {
            t >>= 1;
            for i in 0..m {
                let j1 = 2 * i * t;
                let w = self.psi_rev[m + i];
                let ws = self.psi_rev_shoup[m + i];
                let (lo, hi) = a[j1..j1 + 2 * t].split_at_mut(t);
                for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                    let mut u = *x;
                    if u >= two_q {
                        u -= two_q;
                    }
                    let v = lazy_mul_shoup(*y, w, ws, q);
                    *x = u + v;
                    *y = u + two_q - v;
                }
            }
            m <<= 1;
        }
        for x in a.iter_mut() {
            let mut v = *x;
            if v >= two_q {
                v -= two_q;
            }
            if v >= q {
                v -= q;
            }
            *x = v;
        }
    }

    /// In-place inverse transform. Butterflies keep values lazily in `[0, 2q)`.
    pub fn inverse(&self, a: &mut [u64]) {
        debug_assert_eq!(a.len(), self.n);
        let q = self.q.value();
        let two_q = 2 * q;
        let n = self.n;
        let mut t = 1;
        let mut m = n;
        while m > 1 {
            let h = m >> 1;
            let mut j1 = 0;
            for i in 0..h {
                let w = self.inv_psi_rev[h + i];
                let ws = self.inv_psi_rev_shoup[h + i];
                let (lo, hi) = a[j1..j1 + 2 * t].split_at_mut(t);
                for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                    let u = *x;
                    let v = *y;
                    let mut s = u + v;
                    if s >= two_q {
                        s -= two_q;
                    }
                    *x = s;
                    *y = lazy_mul_shoup(u + two_q - v, w, ws, q);
                }
                j1 += 2 * t;
            }
            t <<= 1;
            m = h;
        }
        for x in a.iter_mut() {
            *x = self.q.mul_shoup(*x, self.n_inv, self.n_inv_shoup);
        }
    }
}

/// `a * w mod q` up to one extra `q`: the result lies in `[0, 2q)`.
#[inline(always)]
fn lazy_mul_shoup(a: u64, w: u64, w_shoup: u64, q: u64) -> u64 {
    let hi = ((a as u128 * w_shoup as u128) >> 64) as u64;
    a.wrapping_mul(w).wrapping_sub(hi.wrapping_mul(q))
}

/// Index permutation realizing `X -> X^g` on bit-reversed NTT evaluations.
///
/// `out[k] = in[perm[k]]`.
pub fn galois_permutation(n: usize, galois_elt: u64) -> Vec<usize> {
    let bits = n.trailing_zeros();
    let two_n = 2 * n as u64;
    (0..n)
        .map(|k| {
            let e = 2 * bit_reverse(k, bits) as u64 + 1;
            let target = (e * galois_elt) % two_n;
            bit_reverse(((target - 1) / 2) as usize, bits)
        })
        .collect()
}
