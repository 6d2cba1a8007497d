//! Residue-number-system helpers: fast base conversion with a floating-point
//! estimate of the CRT overflow count.

use crate::arith::Modulus;

/// Converts residues modulo `from = {q_i}` into residues modulo `to = {p_j}`.
///
/// For `x = sum_i y_i * (Q/q_i) - v * Q` with `y_i = x_i * (Q/q_i)^{-1} mod q_i`,
/// `v` is estimated as `sum_i y_i / q_i` in `f64`. The estimate can be off by one
/// when the fractional part sits within ~2^-50 of the rounding boundary; every caller
/// tolerates an additive `±Q` error on the converted value.
#[derive(Debug, Clone)]
pub struct BaseConverter {
    from: Vec<Modulus>,
    to: Vec<Modulus>,
    hat_inv: Vec<u64>,
    hat_inv_shoup: Vec<u64>,
    // hat_mod_to[j][i] = (Q / q_i) mod p_j
    hat_mod_to: Vec<Vec<u64>>,
    // Q mod p_j
    prod_mod_to: Vec<u64>,
}

impl BaseConverter {
    pub fn new(from: &[Modulus], to: &[Modulus]) -> Self {
        let hat_inv: Vec<u64> = from
            .iter()
            .enumerate()
            .map(|(i, qi)| {
                let hat = from
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k != i)
                    .fold(1u64, |acc, (_, qk)| qi.mul(acc, qi.reduce(qk.value())));
                qi.inv(hat).expect("coprime moduli")
            })
            .collect();
        let hat_inv_shoup = hat_inv.iter().zip(from).map(|(&h, q)| q.shoup(h)).collect();
        let hat_mod_to = to
            .iter()
            .map(|pj| {
                (0..from.len())
                    .map(|i| {
                        from.iter()
                            .enumerate()
                            .filter(|(k, _)| *k != i)
                            .fold(1u64, |acc, (_, qk)| pj.mul(acc, pj.reduce(qk.value())))
                    })
                    .collect()
            })
            .collect();
        let prod_mod_to = to
            .iter()
            .map(|pj| from.iter().fold(1u64, |acc, qk| pj.mul(acc, pj.reduce(qk.value()))))
            .collect();
        BaseConverter {
            from: from.to_vec(),
            to: to.to_vec(),
            hat_inv,
            hat_inv_shoup,
            hat_mod_to,
            prod_mod_to,
        }
    }

    /// `input` holds one residue slice of length `n` per source prime; `output` one slice per
    /// target prime. `centered` selects the representative in `[-Q/2, Q/2)` instead of `[0, Q)`.
    pub fn convert(&self, input: &[&[u64]], output: &mut [&mut [u64]], centered: bool) {
        debug_assert_eq!(input.len(), self.from.len());
        debug_assert_eq!(output.len(), self.to.len());
        let n = input[0].len();
        let l = self.from.len();
        let mut y = vec![0u64; l];
        let inv_q: Vec<f64> = self.from.iter().map(|q| 1.0 / q.value() as f64).collect();
        for k in 0..n {
            let mut frac = 0.0f64;
            for i in 0..l {
                let yi = self.from[i].mul_shoup(input[i][k], self.hat_inv[i], self.hat_inv_shoup[i]);
                y[i] = yi;
                frac += yi as f64 * inv_q[i];
            }
            let v = if centered { frac.round() } else { frac.floor() } as u64;
            for (j, pj) in self.to.iter().enumerate() {
                let hats = &self.hat_mod_to[j];
                let mut acc = 0u64;
                for i in 0..l {
                    acc = pj.add(acc, pj.mul(pj.reduce(y[i]), hats[i]));
                }
                let correction = pj.mul(pj.reduce(v), self.prod_mod_to[j]);
                output[j][k] = pj.sub(acc, correction);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arith::ntt_primes;
    use num_bigint::{BigInt, BigUint};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn conversion_matches_bigint_crt() {
        let qs: Vec<Modulus> = ntt_primes(50, 16, 3, &[]).into_iter().map(Modulus::new).collect();
        let ps: Vec<Modulus> = ntt_primes(60, 16, 2, &[]).into_iter().map(Modulus::new).collect();
        let conv = BaseConverter::new(&qs, &ps);
        let big_q: BigUint = qs.iter().map(|q| BigUint::from(q.value())).product();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let n = 64;
        let xs: Vec<BigUint> = (0..n)
            .map(|_| {
                let limbs: Vec<u32> = (0..6).map(|_| rng.random()).collect();
                BigUint::from_slice(&limbs) % &big_q
            })
            .collect();
        let residues: Vec<Vec<u64>> = qs
            .iter()
            .map(|q| xs.iter().map(|x| (x % q.value()).try_into().unwrap()).collect())
            .collect();
        let input: Vec<&[u64]> = residues.iter().map(|v| v.as_slice()).collect();
        for centered in [false, true] {
            let mut out = vec![vec![0u64; n]; ps.len()];
            {
                let mut refs: Vec<&mut [u64]> = out.iter_mut().map(|v| v.as_mut_slice()).collect();
                conv.convert(&input, &mut refs, centered);
            }
            for (k, x) in xs.iter().enumerate() {
                let mut val = BigInt::from(x.clone());
                if centered && x * 2u32 >= big_q {
                    val -= BigInt::from(big_q.clone());
                }
                for (j, p) in ps.iter().enumerate() {
                    let pv = BigInt::from(p.value());
                    let expect = ((&val % &pv) + &pv) % &pv;
                    assert_eq!(BigInt::from(out[j][k]), expect);
                }
            }
        }
    }
}
