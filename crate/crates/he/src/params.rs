use sha2::{Digest, Sha256};

use crate::arith::{is_prime, ntt_primes, smallest_ntt_prime_above};
use crate::error::{HeError, Result};
use crate::serialize::{Reader, Writer};

/// Security level tag for parameters that make no security claim.
pub const TOY_SECURITY: u32 = 0;

/// Maximum `log2(Q·P)` for 128-bit classical security with a ternary secret,
/// from the homomorphic encryption standardization tables.
pub fn max_modulus_bits_128(n: usize) -> Option<u32> {
    match n {
        1024 => Some(27),
        2048 => Some(54),
        4096 => Some(109),
        8192 => Some(218),
        16384 => Some(438),
        32768 => Some(881),
        _ => None,
    }
}

/// Minimum number of usable plaintext bits per slot.
pub const MIN_SLOT_BITS: u32 = 16;

/// The BFV plaintext modulus for ring degree `n`: the smallest prime `t > 2^16`
/// with `t = 1 mod 2n`.
pub fn plain_modulus_for(n: usize) -> u64 {
    smallest_ntt_prime_above(MIN_SLOT_BITS, n)
}

/// RLWE parameter set.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HeParams {
    pub ring_degree: usize,
    pub plain_modulus: u64,
    /// RNS primes of the ciphertext modulus `q`.
    pub ciphertext_moduli: Vec<u64>,
    /// Extra prime used only inside key switching; counts towards the security budget.
    pub special_modulus: Option<u64>,
    /// 128, or [`TOY_SECURITY`].
    pub security_level: u32,
}

impl HeParams {
    /// Builds a parameter set from prime bit sizes, picking the largest NTT-friendly primes
    /// of each size. Validates against the security table when `security_level` is 128.
    pub fn from_bit_sizes(
        ring_degree: usize,
        q_bits: &[u32],
        special_bits: Option<u32>,
        security_level: u32,
    ) -> Result<Self> {
        if !ring_degree.is_power_of_two() || ring_degree < 8 {
            return Err(HeError::InvalidParams(format!("ring degree {ring_degree} is not a power of two >= 8")));
        }
        let mut chosen: Vec<u64> = Vec::new();
        for &b in q_bits {
            let p = ntt_primes(b, ring_degree, 1, &chosen)[0];
            chosen.push(p);
        }
        let special = special_bits.map(|b| ntt_primes(b, ring_degree, 1, &chosen)[0]);
        let params = HeParams {
            ring_degree,
            plain_modulus: plain_modulus_for(ring_degree),
            ciphertext_moduli: chosen,
            special_modulus: special,
            security_level,
        };
        params.validate()?;
        Ok(params)
    }

    /// Toy parameters: three 50-bit primes plus a 60-bit special prime at any small degree.
    /// Always flagged insecure.
    pub fn toy(ring_degree: usize) -> Result<Self> {
        Self::from_bit_sizes(ring_degree, &[50, 50, 50], Some(60), TOY_SECURITY)
    }

    pub fn is_toy(&self) -> bool {
        self.security_level == TOY_SECURITY
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.ring_degree;
        let bad = |m: String| Err(HeError::InvalidParams(m));
        if !n.is_power_of_two() || n < 8 {
            return bad(format!("ring degree {n} is not a power of two >= 8"));
        }
        let t = self.plain_modulus;
        if !is_prime(t) || t % (2 * n as u64) != 1 {
            return bad(format!("plaintext modulus {t} is not an NTT-friendly prime for n={n}"));
        }
        if t >= 1 << 32 {
            return bad(format!("plaintext modulus {t} exceeds 32 bits"));
        }
        if self.ciphertext_moduli.is_empty() {
            return bad("empty ciphertext modulus chain".into());
        }
        let mut all = self.ciphertext_moduli.clone();
        all.extend(self.special_modulus);
        for &q in &all {
            if !is_prime(q) || q % (2 * n as u64) != 1 || q >= 1 << 61 {
                return bad(format!("modulus {q} is not an NTT-friendly prime below 2^61 for n={n}"));
            }
            if q <= t {
                return bad(format!("modulus {q} does not exceed the plaintext modulus"));
            }
        }
        let mut sorted = all.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != all.len() {
            return bad("duplicate primes in modulus chain".into());
        }
        if let Some(sp) = self.special_modulus {
            if self.ciphertext_moduli.iter().any(|&q| q > sp) {
                return bad("special modulus must be at least as large as every ciphertext prime".into());
            }
        }
        match self.security_level {
            TOY_SECURITY => {}
            128 => {
                let Some(max_bits) = max_modulus_bits_128(n) else {
                    return bad(format!("no 128-bit security entry for n={n}"));
                };
                let total = self.key_modulus_bits();
                if total > max_bits as f64 {
                    return bad(format!(
                        "log2(qp) = {total:.1} exceeds the 128-bit bound {max_bits} for n={n}"
                    ));
                }
            }
            other => return bad(format!("unsupported security level {other}")),
        }
        Ok(())
    }

    pub fn ciphertext_modulus_bits(&self) -> f64 {
        self.ciphertext_moduli.iter().map(|&q| (q as f64).log2()).sum()
    }

    /// `log2` of the full key-switching modulus (ciphertext primes plus special prime).
    pub fn key_modulus_bits(&self) -> f64 {
        self.ciphertext_modulus_bits() + self.special_modulus.map_or(0.0, |p| (p as f64).log2())
    }

    /// `floor(log2 t)`: bits of payload carried by one slot.
    pub fn slot_bits(&self) -> u32 {
        63 - self.plain_modulus.leading_zeros()
    }

    /// Payload bytes carried by one plaintext: `n * floor(log2 t) / 8`.
    pub fn plaintext_capacity_bytes(&self) -> usize {
        self.ring_degree * self.slot_bits() as usize / 8
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(crate::serialize::FORMAT_VERSION);
        w.u8(if self.is_toy() { crate::serialize::FLAG_TOY } else { 0 });
        w.u32(self.ring_degree as u32);
        w.u64(self.plain_modulus);
        w.u8(self.ciphertext_moduli.len() as u8);
        w.u64s(&self.ciphertext_moduli);
        match self.special_modulus {
            Some(p) => {
                w.u8(1);
                w.u64(p);
            }
            None => w.u8(0),
        }
        w.u32(self.security_level);
        w.finish()
    }

    pub fn read_from(r: &mut Reader<'_>) -> Result<Self> {
        let version = r.u8()?;
        if version != crate::serialize::FORMAT_VERSION {
            return Err(HeError::Deserialize(format!("unsupported params version {version}")));
        }
        let flags = r.u8()?;
        let ring_degree = r.u32()? as usize;
        let plain_modulus = r.u64()?;
        let count = r.u8()? as usize;
        let ciphertext_moduli = r.u64s(count)?;
        let special_modulus = match r.u8()? {
            0 => None,
            1 => Some(r.u64()?),
            other => return Err(HeError::Deserialize(format!("bad special-modulus tag {other}"))),
        };
        let security_level = r.u32()?;
        let params = HeParams {
            ring_degree,
            plain_modulus,
            ciphertext_moduli,
            special_modulus,
            security_level,
        };
        if (flags & crate::serialize::FLAG_TOY != 0) != params.is_toy() {
            return Err(HeError::Deserialize("toy flag disagrees with security level".into()));
        }
        params.validate().map_err(|e| HeError::Deserialize(e.to_string()))?;
        Ok(params)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let p = Self::read_from(&mut r)?;
        r.expect_end()?;
        Ok(p)
    }

    /// Stable identifier: the first eight bytes of SHA-256 over the canonical encoding.
    pub fn id(&self) -> u64 {
        let digest = Sha256::digest(self.to_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_modulus_is_65537_for_supported_degrees() {
        for n in [16, 32, 1024, 4096, 8192, 16384, 32768] {
            assert_eq!(plain_modulus_for(n), 65537);
        }
    }

    #[test]
    fn production_8192_fits_security_table() {
        let p = HeParams::from_bit_sizes(8192, &[52, 52, 52], Some(60), 128).unwrap();
        assert!(p.key_modulus_bits() <= 218.0);
        assert_eq!(p.slot_bits(), 16);
        assert_eq!(p.plaintext_capacity_bytes(), 16384);
    }

    #[test]
    fn oversized_modulus_rejected() {
        let err = HeParams::from_bit_sizes(4096, &[50, 50], Some(50), 128).unwrap_err();
        assert!(matches!(err, HeError::InvalidParams(_)));
    }

    #[test]
    fn non_ntt_friendly_t_rejected() {
        let mut p = HeParams::toy(16).unwrap();
        p.plain_modulus = 65539; // prime, but 65538 is not a multiple of 32
        assert!(matches!(p.validate(), Err(HeError::InvalidParams(_))));
        let mut p = HeParams::toy(16).unwrap();
        p.ring_degree = 24;
        assert!(matches!(p.validate(), Err(HeError::InvalidParams(_))));
    }

    #[test]
    fn bytes_roundtrip_and_toy_flag() {
        let p = HeParams::toy(32).unwrap();
        let bytes = p.to_bytes();
        assert_eq!(bytes[1] & crate::serialize::FLAG_TOY, crate::serialize::FLAG_TOY);
        assert_eq!(HeParams::from_bytes(&bytes).unwrap(), p);
        assert_eq!(p.id(), HeParams::from_bytes(&bytes).unwrap().id());
    }
}
