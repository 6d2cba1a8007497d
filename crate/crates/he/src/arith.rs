//! Word-sized modular arithmetic for NTT-friendly primes below 2^62.

/// A prime modulus with precomputed Barrett constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Modulus {
    value: u64,
    // floor(2^128 / value), split in two words.
    ratio_hi: u64,
    ratio_lo: u64,
}

impl Modulus {
    pub fn new(value: u64) -> Self {
        assert!(value > 1 && value < (1 << 62), "modulus out of range: {value}");
        let ratio = u128::MAX / value as u128;
        // u128::MAX / p == floor(2^128 / p) unless p divides 2^128, impossible for odd p > 1;
        // even moduli are only used in tests.
        Modulus {
            value,
            ratio_hi: (ratio >> 64) as u64,
            ratio_lo: ratio as u64,
        }
    }

    #[inline(always)]
    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn bits(&self) -> u32 {
        64 - self.value.leading_zeros()
    }

    /// Reduces a 128-bit value; valid for any `x < 2^64 * value`.
    #[inline(always)]
    pub fn reduce_u128(&self, x: u128) -> u64 {
        let x0 = x as u64;
        let x1 = (x >> 64) as u64;
        let p0 = x0 as u128 * self.ratio_lo as u128;
        let mid = x0 as u128 * self.ratio_hi as u128 + (p0 >> 64);
        let mid2 = (mid as u64) as u128 + x1 as u128 * self.ratio_lo as u128;
        let q = x1
            .wrapping_mul(self.ratio_hi)
            .wrapping_add((mid >> 64) as u64)
            .wrapping_add((mid2 >> 64) as u64);
        let mut r = x0.wrapping_sub(q.wrapping_mul(self.value));
        while r >= self.value {
            r -= self.value;
        }
        r
    }

    #[inline(always)]
    pub fn reduce(&self, x: u64) -> u64 {
        if x < self.value {
            x
        } else {
            self.reduce_u128(x as u128)
        }
    }

    #[inline(always)]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        self.reduce_u128(a as u128 * b as u128)
    }

    #[inline(always)]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        let s = a + b;
        if s >= self.value {
            s - self.value
        } else {
            s
        }
    }

    #[inline(always)]
    pub fn sub(&self, a: u64, b: u64) -> u64 {
        if a >= b {
            a - b
        } else {
            a + self.value - b
        }
    }

    #[inline(always)]
    pub fn neg(&self, a: u64) -> u64 {
        if a == 0 {
            0
        } else {
            self.value - a
        }
    }

    /// Maps a signed integer into `[0, value)`.
    #[inline(always)]
    pub fn from_i64(&self, a: i64) -> u64 {
        if a >= 0 {
            self.reduce(a as u64)
        } else {
            self.neg(self.reduce(a.unsigned_abs()))
        }
    }

    /// Centered representative in `(-value/2, value/2]`.
    #[inline(always)]
    pub fn center(&self, a: u64) -> i64 {
        if a > self.value / 2 {
            a as i64 - self.value as i64
        } else {
            a as i64
        }
    }

    pub fn pow(&self, mut base: u64, mut exp: u64) -> u64 {
        let mut acc = 1u64;
        base = self.reduce(base);
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            exp >>= 1;
        }
        acc
    }

    /// Inverse of a unit modulo a prime.
    pub fn inv(&self, a: u64) -> Option<u64> {
        let a = self.reduce(a);
        if a == 0 {
            return None;
        }
        Some(self.pow(a, self.value - 2))
    }

    /// Shoup companion `floor(w * 2^64 / p)` of a fixed multiplicand.
    #[inline(always)]
    pub fn shoup(&self, w: u64) -> u64 {
        (((w as u128) << 64) / self.value as u128) as u64
    }

    /// `a * w mod p` using the Shoup companion of `w`; result in `[0, p)`.
    #[inline(always)]
    pub fn mul_shoup(&self, a: u64, w: u64, w_shoup: u64) -> u64 {
        let r = self.mul_shoup_lazy(a, w, w_shoup);
        if r >= self.value {
            r - self.value
        } else {
            r
        }
    }

    /// Same as [`Modulus::mul_shoup`] but leaves the result in `[0, 2p)`.
    #[inline(always)]
    pub fn mul_shoup_lazy(&self, a: u64, w: u64, w_shoup: u64) -> u64 {
        let q = ((a as u128 * w_shoup as u128) >> 64) as u64;
        a.wrapping_mul(w).wrapping_sub(q.wrapping_mul(self.value))
    }
}

/// Deterministic Miller-Rabin for 64-bit integers.
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

/// Largest primes strictly below `2^bits` that are `1 mod 2n`, in descending order,
/// skipping anything listed in `exclude`.
pub fn ntt_primes(bits: u32, n: usize, count: usize, exclude: &[u64]) -> Vec<u64> {
    assert!((10..=61).contains(&bits), "prime size {bits} unsupported");
    let step = 2 * n as u64;
    let mut candidate = ((1u64 << bits) - 1) / step * step + 1;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        if candidate <= step {
            panic!("ran out of {bits}-bit primes for n={n}");
        }
        if candidate < (1u64 << bits) && is_prime(candidate) && !exclude.contains(&candidate) {
            out.push(candidate);
        }
        candidate -= step;
    }
    out
}

/// Smallest prime `t > 2^min_bits` with `t = 1 mod 2n`.
pub fn smallest_ntt_prime_above(min_bits: u32, n: usize) -> u64 {
    let step = 2 * n as u64;
    let mut candidate = (1u64 << min_bits) / step * step + 1;
    while candidate <= (1u64 << min_bits) || !is_prime(candidate) {
        candidate += step;
    }
    candidate
}

/// Deterministic primitive 2n-th root of unity modulo a prime `p = 1 mod 2n`.
pub fn primitive_root_2n(m: &Modulus, n: usize) -> u64 {
    let p = m.value();
    let order = 2 * n as u64;
    assert_eq!((p - 1) % order, 0, "{p} is not 1 mod {order}");
    let cofactor = (p - 1) / order;
    // g^cofactor has order dividing 2n; it is primitive iff its n-th power is -1.
    (2..p)
        .map(|g| m.pow(g, cofactor))
        .find(|&root| m.pow(root, n as u64) == p - 1)
        .expect("primitive root exists for prime modulus")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn primality_small() {
        let primes: Vec<u64> = (0..60).filter(|&n| is_prime(n)).collect();
        assert_eq!(primes, vec![2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59]);
        assert!(is_prime(65537));
        assert!(!is_prime(65537 * 65539));
        assert!(is_prime(0x1fffffffffe00001));
    }

    #[test]
    fn ntt_prime_search() {
        let ps = ntt_primes(52, 8192, 3, &[]);
        assert_eq!(ps.len(), 3);
        for p in ps {
            assert!(is_prime(p));
            assert_eq!(p % 16384, 1);
            assert_eq!(64 - p.leading_zeros(), 52);
        }
        assert_eq!(smallest_ntt_prime_above(16, 8192), 65537);
        assert_eq!(smallest_ntt_prime_above(16, 16), 65537);
    }

    #[test]
    fn root_has_order_2n() {
        let m = Modulus::new(65537);
        let psi = primitive_root_2n(&m, 16);
        assert_eq!(m.pow(psi, 16), 65536);
        assert_eq!(m.pow(psi, 32), 1);
    }

    proptest! {
        #[test]
        fn barrett_matches_u128(a in any::<u64>(), b in any::<u64>(), pick in 0usize..3) {
            let p = [65537u64, 0xfffffffffffc001, 0x3fffffffffffffff - 56][pick];
            let p = if is_prime(p) { p } else { 65537 };
            let m = Modulus::new(p);
            let (a, b) = (a % p, b % p);
            prop_assert_eq!(m.mul(a, b), ((a as u128 * b as u128) % p as u128) as u64);
            let w = b;
            prop_assert_eq!(m.mul_shoup(a, w, m.shoup(w)), m.mul(a, b));
        }

        #[test]
        fn reduce_wide(x in any::<u128>()) {
            let p = 0xfffffffffffc001u64;
            let m = Modulus::new(p);
            let x = x % ((p as u128) << 64);
            prop_assert_eq!(m.reduce_u128(x), (x % p as u128) as u64);
        }
    }
}
