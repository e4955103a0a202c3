//! Word-sized modular arithmetic for NTT-friendly primes below 2^61.

/// An odd prime modulus together with the constants needed for fast reduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Modulus {
    value: u64,
    // floor(2^128 / value) split into 64-bit halves for Barrett reduction
    ratio_hi: u64,
    ratio_lo: u64,
}

impl Modulus {
    pub fn new(value: u64) -> Self {
        assert!(value > 2 && value < (1 << 61), "modulus out of range: {value}");
        let ratio = u128::MAX / value as u128;
        Self {
            value,
            ratio_hi: (ratio >> 64) as u64,
            ratio_lo: ratio as u64,
        }
    }

    #[inline]
    pub fn value(&self) -> u64 {
        self.value
    }

    #[inline]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        let s = a + b;
        if s >= self.value {
            s - self.value
        } else {
            s
        }
    }

    #[inline]
    pub fn sub(&self, a: u64, b: u64) -> u64 {
        if a >= b {
            a - b
        } else {
            a + self.value - b
        }
    }

    #[inline]
    pub fn neg(&self, a: u64) -> u64 {
        if a == 0 {
            0
        } else {
            self.value - a
        }
    }

    #[inline]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        self.reduce_u128(a as u128 * b as u128)
    }

    /// Barrett reduction of a full 128-bit value.
    #[inline]
    pub fn reduce_u128(&self, a: u128) -> u64 {
        let x0 = a as u64;
        let x1 = (a >> 64) as u64;
        let carry = ((x0 as u128 * self.ratio_lo as u128) >> 64) as u64;
        let t = x0 as u128 * self.ratio_hi as u128;
        let (t_lo, c1) = (t as u64).overflowing_add(carry);
        let t_hi = ((t >> 64) as u64).wrapping_add(c1 as u64);
        let u = x1 as u128 * self.ratio_lo as u128;
        let (_, c2) = (u as u64).overflowing_add(t_lo);
        let carry = ((u >> 64) as u64).wrapping_add(c2 as u64);
        let quot = x1
            .wrapping_mul(self.ratio_hi)
            .wrapping_add(t_hi)
            .wrapping_add(carry);
        // the quotient estimate is low by at most a few multiples of q
        let mut r = x0.wrapping_sub(quot.wrapping_mul(self.value));
        while r >= self.value {
            r -= self.value;
        }
        r
    }

    #[inline]
    pub fn reduce(&self, a: u64) -> u64 {
        if a < self.value {
            a
        } else {
            self.reduce_u128(a as u128)
        }
    }

    /// Reduces a signed integer into `[0, q)`.
    #[inline]
    pub fn reduce_i64(&self, a: i64) -> u64 {
        let r = self.reduce(a.unsigned_abs());
        if a < 0 {
            self.neg(r)
        } else {
            r
        }
    }

    #[inline]
    pub fn reduce_i128(&self, a: i128) -> u64 {
        let r = self.reduce_u128(a.unsigned_abs());
        if a < 0 {
            self.neg(r)
        } else {
            r
        }
    }

    /// Precomputes `floor(w * 2^64 / q)` for Shoup multiplication by the constant `w`.
    #[inline]
    pub fn shoup(&self, w: u64) -> u64 {
        (((w as u128) << 64) / self.value as u128) as u64
    }

    /// `a * w mod q` given the Shoup companion of `w`.
    #[inline]
    pub fn mul_shoup(&self, a: u64, w: u64, w_shoup: u64) -> u64 {
        let hi = ((a as u128 * w_shoup as u128) >> 64) as u64;
        let r = a.wrapping_mul(w).wrapping_sub(hi.wrapping_mul(self.value));
        if r >= self.value {
            r - self.value
        } else {
            r
        }
    }

    pub fn pow(&self, mut base: u64, mut exp: u64) -> u64 {
        let mut acc = 1u64;
        base %= self.value;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            exp >>= 1;
        }
        acc
    }

    /// Multiplicative inverse; the modulus is prime so Fermat applies.
    pub fn inv(&self, a: u64) -> u64 {
        let a = a % self.value;
        assert!(a != 0, "zero has no inverse");
        self.pow(a, self.value - 2)
    }

    /// Maps `a` in `[0, q)` to the centered representative in `(-q/2, q/2]`.
    #[inline]
    pub fn center(&self, a: u64) -> i64 {
        if a > self.value / 2 {
            a as i64 - self.value as i64
        } else {
            a as i64
        }
    }
}

/// Deterministic Miller-Rabin, exact for all 64-bit inputs.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for p in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if n % p == 0 {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    let mulmod = |a: u64, b: u64| ((a as u128 * b as u128) % n as u128) as u64;
    let powmod = |mut b: u64, mut e: u64| {
        let mut acc = 1u64;
        while e > 0 {
            if e & 1 == 1 {
                acc = mulmod(acc, b);
            }
            b = mulmod(b, b);
            e >>= 1;
        }
        acc
    };
    'witness: for a in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let mut x = powmod(a, d);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mulmod(x, x);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Finds a primitive `order`-th root of unity modulo the prime `q`.
///
/// `order` must be a power of two dividing `q - 1`.
pub fn primitive_root_of_unity(q: &Modulus, order: u64) -> u64 {
    let qv = q.value();
    assert_eq!((qv - 1) % order, 0, "order does not divide q - 1");
    let cofactor = (qv - 1) / order;
    for g in 2..qv {
        let cand = q.pow(g, cofactor);
        // order is a power of two, so it suffices that cand^(order/2) == -1
        if q.pow(cand, order / 2) == qv - 1 {
            return cand;
        }
    }
    unreachable!("a prime field always has a primitive root")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shoup_matches_plain_multiplication() {
        let q = Modulus::new((1u64 << 60) + 0x3_0001);
        let samples = [0u64, 1, 2, q.value() - 1, 123_456_789_012_345, 1 << 59];
        for &w in &samples {
            let ws = q.shoup(w % q.value());
            for &a in &samples {
                assert_eq!(q.mul_shoup(a, w % q.value(), ws), q.mul(a, w));
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn barrett_matches_remainder(hi in proptest::prelude::any::<u64>(), lo in proptest::prelude::any::<u64>()) {
            for q in [97u64, (1u64 << 40) + 0x4001, (1u64 << 60) + 0x3_0001] {
                let m = Modulus::new(q);
                let x = ((hi as u128) << 64) | lo as u128;
                proptest::prop_assert_eq!(m.reduce_u128(x), (x % q as u128) as u64);
            }
        }

        #[test]
        fn signed_reduction_matches_euclidean_remainder(a in proptest::prelude::any::<i64>(), b in proptest::prelude::any::<i128>()) {
            for q in [97u64, (1u64 << 40) + 0x4001, (1u64 << 60) + 0x3_0001] {
                let m = Modulus::new(q);
                proptest::prop_assert_eq!(m.reduce_i64(a), a.rem_euclid(q as i64) as u64);
                proptest::prop_assert_eq!(m.reduce_i128(b), b.rem_euclid(q as i128) as u64);
                proptest::prop_assert_eq!(m.reduce(a as u64), (a as u64) % q);
            }
        }
    }

    #[test]
    fn primality_of_known_values() {
        assert!(is_prime(2));
        assert!(is_prime(998_244_353));
        assert!(is_prime(0xffff_ffff_0000_0001));
        assert!(!is_prime(1));
        assert!(!is_prime(561));
        assert!(!is_prime(998_244_353u64 * 3));
    }

    #[test]
    fn root_of_unity_has_exact_order() {
        let q = Modulus::new(998_244_353);
        let w = primitive_root_of_unity(&q, 1 << 10);
        assert_eq!(q.pow(w, 1 << 10), 1);
        assert_ne!(q.pow(w, 1 << 9), 1);
    }

    #[test]
    fn inverse_and_center() {
        let q = Modulus::new(97);
        assert_eq!(q.mul(q.inv(13), 13), 1);
        assert_eq!(q.center(96), -1);
        assert_eq!(q.center(48), 48);
        assert_eq!(q.reduce_i64(-5), 92);
    }
}
