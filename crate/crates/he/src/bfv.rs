//! Secret-key BFV over an RNS ciphertext modulus.
//!
//! Ciphertexts are stored in coefficient form. Multiplication lifts both operands to an
//! auxiliary basis large enough to hold the tensor exactly, multiplies in NTT form and
//! scales by `t/Q` with rounding. Key switching uses per-prime RNS digits and one special
//! prime that is divided out afterwards.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_bigint::BigUint;
use rand::{CryptoRng, Rng};

use crate::arith::{ntt_primes, Modulus};
use crate::encoding::{PlainPoly, Plaintext, SlotEncoder};
use crate::error::{HeError, Result};
use crate::keys::{EvalCircuit, EvalKeys, KeySwitchKey, SecretKey};
use crate::ntt::NttTable;
use crate::params::HeParams;
use crate::rns::BaseConverter;
use crate::serialize::{Reader, Writer};

/// Centered binomial parameter for error sampling (standard deviation ~3.24).
const CBD_ETA: u32 = 21;

/// Headroom, in bits, for the number of products summed before one tensor scale-down.
const TENSOR_TERMS_BITS: f64 = 20.0;

/// RLWE ciphertext: 2 polynomials, or 3 after an unrelinearized multiplication.
#[derive(Clone, PartialEq, Eq)]
pub struct Ciphertext {
    pub(crate) params_id: u64,
    pub(crate) toy: bool,
    pub(crate) polys: Vec<Vec<u64>>,
}

impl std::fmt::Debug for Ciphertext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Ciphertext")
            .field("params_id", &format_args!("{:016x}", self.params_id))
            .field("size", &self.polys.len())
            .finish()
    }
}

impl Ciphertext {
    /// Number of ring elements (2, or 3 before relinearization).
    pub fn size(&self) -> usize {
        self.polys.len()
    }

    pub fn is_relinearized(&self) -> bool {
        self.polys.len() == 2
    }

    pub fn params_id(&self) -> u64 {
        self.params_id
    }

    /// Canonical encoding: header, `[size u8][level u8]`, then each polynomial as
    /// one run of `n` little-endian u64 per RNS prime.
    pub fn to_bytes(&self) -> Vec<u8> {
        let total: usize = self.polys.iter().map(|p| p.len()).sum();
        let mut w = Writer::with_capacity(total * 8 + 12);
        w.header(self.toy, self.params_id);
        w.u8(self.polys.len() as u8);
        let level = if self.polys.is_empty() { 0 } else { self.polys[0].len() };
        w.u32(level as u32);
        for p in &self.polys {
            w.u64s(p);
        }
        w.finish()
    }

    pub fn serialized_len(&self) -> usize {
        10 + 1 + 4 + self.polys.iter().map(|p| p.len() * 8).sum::<usize>()
    }
}

/// A ciphertext in NTT form over the ciphertext primes, optionally carrying Shoup companions
/// so it can be reused as a fixed multiplicand.
#[derive(Debug, Clone)]
pub struct NttCiphertext {
    polys: Vec<Vec<u64>>,
    shoup: Option<Vec<Vec<u64>>>,
}

/// A ciphertext lifted to the extended basis `q ∪ aux` in NTT form, ready for tensoring.
#[derive(Debug, Clone)]
pub struct LiftedCiphertext {
    polys: [Vec<u64>; 2],
}

/// Running sum of tensor products in the extended basis.
#[derive(Debug, Clone)]
pub struct TensorAccumulator {
    polys: [Vec<u64>; 3],
    terms: usize,
}

impl TensorAccumulator {
    pub fn terms(&self) -> usize {
        self.terms
    }
}

/// Precomputed evaluator for one parameter set.
#[derive(Debug)]
pub struct Bfv {
    params: HeParams,
    id: u64,
    n: usize,
    t: Modulus,
    slots: SlotEncoder,
    q: Vec<Modulus>,
    q_ntt: Vec<NttTable>,
    // Ciphertext primes followed by the special prime, if any.
    key_basis: Vec<Modulus>,
    key_ntt: Vec<NttTable>,
    delta: Vec<u64>,
    q_hat_inv: Vec<u64>,
    big_q: BigUint,
    q_hats: Vec<BigUint>,
    // tensoring
    aux: Vec<Modulus>,
    aux_ntt: Vec<NttTable>,
    q_to_aux: BaseConverter,
    aux_to_q: BaseConverter,
    t_mod_ext: Vec<u64>,
    half_q_mod_ext: Vec<u64>,
    q_inv_mod_aux: Vec<u64>,
    // key switching
    sp_inv_mod_q: Vec<u64>,
}

impl Bfv {
    pub fn new(params: &HeParams) -> Result<Arc<Self>> {
        params.validate()?;
        let n = params.ring_degree;
        let t = Modulus::new(params.plain_modulus);
        let q: Vec<Modulus> = params.ciphertext_moduli.iter().map(|&v| Modulus::new(v)).collect();
        let q_ntt: Vec<NttTable> = q.iter().map(|&m| NttTable::new(n, m)).collect();
        let mut key_basis = q.clone();
        let mut key_ntt = q_ntt.clone();
        if let Some(sp) = params.special_modulus {
            let m = Modulus::new(sp);
            key_basis.push(m);
            key_ntt.push(NttTable::new(n, m));
        }

        let big_q: BigUint = q.iter().map(|m| BigUint::from(m.value())).product();
        let big_delta = &big_q / BigUint::from(t.value());
        let delta = q.iter().map(|m| mod_big(&big_delta, m.value())).collect();
        let q_hats: Vec<BigUint> = q.iter().map(|m| &big_q / BigUint::from(m.value())).collect();
        let q_hat_inv = q
            .iter()
            .zip(&q_hats)
            .map(|(m, hat)| m.inv(mod_big(hat, m.value())).expect("coprime"))
            .collect();

        // Auxiliary basis: P must exceed 2 * t * terms * n * Q/2 so the scaled tensor is
        // recovered exactly in P before moving back to Q.
        let q_bits = params.ciphertext_modulus_bits();
        let need = q_bits + (n as f64).log2() + (t.value() as f64).log2() + TENSOR_TERMS_BITS + 2.0;
        let aux_count = (need / 59.0).ceil() as usize;
        let mut exclude = params.ciphertext_moduli.clone();
        exclude.extend(params.special_modulus);
        let aux: Vec<Modulus> = ntt_primes(60, n, aux_count, &exclude).into_iter().map(Modulus::new).collect();
        let aux_ntt = aux.iter().map(|&m| NttTable::new(n, m)).collect();
        let q_to_aux = BaseConverter::new(&q, &aux);
        let aux_to_q = BaseConverter::new(&aux, &q);
        let ext: Vec<Modulus> = q.iter().chain(aux.iter()).copied().collect();
        let half_q = &big_q >> 1u32;
        let t_mod_ext = ext.iter().map(|m| m.reduce(t.value())).collect();
        let half_q_mod_ext = ext.iter().map(|m| mod_big(&half_q, m.value())).collect();
        let q_inv_mod_aux = aux
            .iter()
            .map(|m| m.inv(mod_big(&big_q, m.value())).expect("coprime"))
            .collect();

        let sp_inv_mod_q = match params.special_modulus {
            Some(sp) => q.iter().map(|m| m.inv(m.reduce(sp)).expect("coprime")).collect(),
            None => Vec::new(),
        };

        Ok(Arc::new(Bfv {
            id: params.id(),
            params: params.clone(),
            n,
            t,
            slots: SlotEncoder::new(n, t.value()),
            q,
            q_ntt,
            key_basis,
            key_ntt,
            delta,
            q_hat_inv,
            big_q,
            q_hats,
            aux,
            aux_ntt,
            q_to_aux,
            aux_to_q,
            t_mod_ext,
            half_q_mod_ext,
            q_inv_mod_aux,
            sp_inv_mod_q,
        }))
    }

    pub fn params(&self) -> &HeParams {
        &self.params
    }

    pub fn params_id(&self) -> u64 {
        self.id
    }

    pub fn degree(&self) -> usize {
        self.n
    }

    pub fn plain_modulus(&self) -> u64 {
        self.t.value()
    }

    pub fn slot_encoder(&self) -> &SlotEncoder {
        &self.slots
    }

    fn toy(&self) -> bool {
        self.params.is_toy()
    }

    fn check(&self, id: u64) -> Result<()> {
        if id == self.id {
            Ok(())
        } else {
            Err(HeError::ParamsMismatch)
        }
    }

    // ---------------------------------------------------------------- encoding

    pub fn encode(&self, pt: &Plaintext) -> Result<PlainPoly> {
        self.slots.encode(pt)
    }

    pub fn decode(&self, poly: &PlainPoly) -> Plaintext {
        self.slots.decode(poly)
    }

    fn check_poly(&self, m: &PlainPoly) -> Result<()> {
        if m.coeffs.len() != self.n {
            return Err(HeError::InvalidParams(format!(
                "plaintext polynomial of degree {} for ring degree {}",
                m.coeffs.len(),
                self.n
            )));
        }
        if m.coeffs.iter().any(|&c| c as u64 >= self.t.value()) {
            return Err(HeError::InvalidParams("plaintext coefficient not reduced mod t".into()));
        }
        Ok(())
    }

    // ---------------------------------------------------------------- keys

    pub fn keygen<R: Rng + CryptoRng + ?Sized>(&self, rng: &mut R) -> SecretKey {
        let coeffs: Vec<i8> = (0..self.n).map(|_| rng.random_range(-1i8..=1)).collect();
        self.secret_key_from_coeffs(coeffs)
    }

    fn secret_key_from_coeffs(&self, coeffs: Vec<i8>) -> SecretKey {
        let ntt = self.small_to_ntt(&coeffs, &self.key_basis, &self.key_ntt);
        SecretKey { params_id: self.id, toy: self.toy(), coeffs, ntt }
    }

    pub fn secret_key_from_bytes(&self, bytes: &[u8]) -> Result<SecretKey> {
        let (toy, id, coeffs) = SecretKey::parse(bytes)?;
        self.check(id)?;
        if toy != self.toy() || coeffs.len() != self.n {
            return Err(HeError::Deserialize("secret key does not match parameters".into()));
        }
        Ok(self.secret_key_from_coeffs(coeffs))
    }

    /// Generates evaluation keys for the operations listed in `circuit`.
    pub fn gen_evk<R: Rng + CryptoRng + ?Sized>(
        &self,
        sk: &SecretKey,
        circuit: &EvalCircuit,
        rng: &mut R,
    ) -> Result<EvalKeys> {
        self.check(sk.params_id)?;
        if !circuit.is_empty() && self.params.special_modulus.is_none() {
            return Err(HeError::InvalidParams("key switching requires a special modulus".into()));
        }
        let relin = if circuit.relinearization {
            let s2: Vec<u64> = self.pointwise(&sk.ntt, &sk.ntt, &self.key_basis);
            Some(self.gen_ksk(sk, &s2, rng))
        } else {
            None
        };
        let mut galois = BTreeMap::new();
        for &g in &circuit.galois_elements {
            if g % 2 == 0 || g >= 2 * self.n as u64 {
                return Err(HeError::InvalidParams(format!("invalid galois element {g}")));
            }
            let permuted = galois_small(&sk.coeffs, g as usize);
            let sp = self.small_to_ntt(&permuted, &self.key_basis, &self.key_ntt);
            galois.insert(g, self.gen_ksk(sk, &sp, rng));
        }
        Ok(EvalKeys { params_id: self.id, toy: self.toy(), relin, galois })
    }

    pub fn eval_keys_from_bytes(&self, bytes: &[u8]) -> Result<EvalKeys> {
        let keys = EvalKeys::parse(bytes, self.n * self.key_basis.len())?;
        self.check(keys.params_id)?;
        if keys.toy != self.toy() {
            return Err(HeError::Deserialize("toy flag disagrees with parameters".into()));
        }
        Ok(keys)
    }

    fn gen_ksk<R: Rng + CryptoRng + ?Sized>(&self, sk: &SecretKey, s_prime: &[u64], rng: &mut R) -> KeySwitchKey {
        let n = self.n;
        let sp_idx = self.q.len();
        let sp = self.key_basis[sp_idx];
        let parts = (0..self.q.len())
            .map(|i| {
                let a = self.uniform_ntt(&self.key_basis, rng);
                let e = self.error_ntt(&self.key_basis, &self.key_ntt, rng);
                let mut b = vec![0u64; a.len()];
                for (j, m) in self.key_basis.iter().enumerate() {
                    let r = j * n..(j + 1) * n;
                    for k in r.clone() {
                        b[k] = m.sub(e[k], m.mul(a[k], sk.ntt[k]));
                    }
                    if j == i {
                        let factor = m.reduce(sp.value());
                        for k in r {
                            b[k] = m.add(b[k], m.mul(factor, s_prime[k]));
                        }
                    }
                }
                (b, a)
            })
            .collect();
        KeySwitchKey { parts }
    }

    // ---------------------------------------------------------------- encryption

    pub fn encrypt<R: Rng + CryptoRng + ?Sized>(&self, sk: &SecretKey, pt: &Plaintext, rng: &mut R) -> Result<Ciphertext> {
        let poly = self.encode(pt)?;
        self.encrypt_poly(sk, &poly, rng)
    }

    /// Encrypts a plaintext given in coefficient form.
    pub fn encrypt_poly<R: Rng + CryptoRng + ?Sized>(
        &self,
        sk: &SecretKey,
        m: &PlainPoly,
        rng: &mut R,
    ) -> Result<Ciphertext> {
        self.check(sk.params_id)?;
        self.check_poly(m)?;
        let n = self.n;
        let l = self.q.len();
        let a_ntt = self.uniform_ntt(&self.q, rng);
        let e = self.sample_error(rng);
        let mut c0 = self.pointwise(&a_ntt, &sk.ntt[..l * n], &self.q);
        let mut c1 = a_ntt;
        for (i, (m_i, table)) in self.q.iter().zip(&self.q_ntt).enumerate() {
            let r = i * n..(i + 1) * n;
            table.inverse(&mut c0[r.clone()]);
            table.inverse(&mut c1[r.clone()]);
            let d = self.delta[i];
            for (k, idx) in r.enumerate() {
                let scaled = m_i.mul(d, m.coeffs[k] as u64);
                c0[idx] = m_i.add(m_i.sub(m_i.from_i64(e[k]), c0[idx]), scaled);
            }
        }
        Ok(Ciphertext { params_id: self.id, toy: self.toy(), polys: vec![c0, c1] })
    }

    /// Noiseless encryption `(Δm, 0)`: decryptable under any key of these parameters and
    /// provides no confidentiality.
    pub fn trivial_encrypt(&self, m: &PlainPoly) -> Result<Ciphertext> {
        self.check_poly(m)?;
        let n = self.n;
        let mut c0 = vec![0u64; self.q.len() * n];
        for (i, m_i) in self.q.iter().enumerate() {
            for k in 0..n {
                c0[i * n + k] = m_i.mul(self.delta[i], m.coeffs[k] as u64);
            }
        }
        Ok(Ciphertext { params_id: self.id, toy: self.toy(), polys: vec![c0, vec![0u64; self.q.len() * n]] })
    }

    pub fn decrypt(&self, sk: &SecretKey, ct: &Ciphertext) -> Result<Plaintext> {
        Ok(self.decode(&self.decrypt_poly(sk, ct)?))
    }

    pub fn decrypt_poly(&self, sk: &SecretKey, ct: &Ciphertext) -> Result<PlainPoly> {
        let v = self.phase(sk, ct)?;
        let n = self.n;
        let t = self.t.value() as u128;
        let inv_q: Vec<f64> = self.q.iter().map(|m| 1.0 / m.value() as f64).collect();
        let coeffs = (0..n)
            .map(|k| {
                // round(t * v / Q) mod t = round(sum_i t * y_i / q_i) mod t
                let mut whole: u64 = 0;
                let mut frac = 0.0f64;
                for (i, m) in self.q.iter().enumerate() {
                    let y = m.mul(v[i * n + k], self.q_hat_inv[i]) as u128;
                    let prod = t * y;
                    let q = m.value() as u128;
                    whole = self.t.add(whole, self.t.reduce((prod / q) as u64));
                    frac += (prod % q) as f64 * inv_q[i];
                }
                self.t.add(whole, self.t.reduce(frac.round() as u64)) as u32
            })
            .collect();
        Ok(PlainPoly { coeffs })
    }

    /// `c0 + c1 s + c2 s^2 mod q`, coefficient form.
    fn phase(&self, sk: &SecretKey, ct: &Ciphertext) -> Result<Vec<u64>> {
        self.check(sk.params_id)?;
        self.check(ct.params_id)?;
        let n = self.n;
        let l = self.q.len();
        let s = &sk.ntt[..l * n];
        let mut acc = ct.polys[0].clone();
        self.forward_q(&mut acc);
        let mut s_pow = s.to_vec();
        for (idx, poly) in ct.polys.iter().enumerate().skip(1) {
            if idx > 1 {
                s_pow = self.pointwise(&s_pow, s, &self.q);
            }
            let mut c = poly.clone();
            self.forward_q(&mut c);
            for (i, m) in self.q.iter().enumerate() {
                for k in i * n..(i + 1) * n {
                    acc[k] = m.add(acc[k], m.mul(c[k], s_pow[k]));
                }
            }
        }
        self.inverse_q(&mut acc);
        Ok(acc)
    }

    /// Remaining noise headroom in bits: `log2(Q) - 1 - log2 max |[t (c0 + c1 s + ...)]_Q|`.
    /// Zero once decryption is no longer guaranteed.
    pub fn noise_budget(&self, sk: &SecretKey, ct: &Ciphertext) -> Result<f64> {
        let v = self.phase(sk, ct)?;
        let n = self.n;
        let t = BigUint::from(self.t.value());
        let half_q = &self.big_q >> 1u32;
        let mut worst = BigUint::from(0u32);
        for k in 0..n {
            let mut x = BigUint::from(0u32);
            for (i, m) in self.q.iter().enumerate() {
                let y = m.mul(v[i * n + k], self.q_hat_inv[i]);
                x += &self.q_hats[i] * BigUint::from(y);
            }
            let w = (x * &t) % &self.big_q;
            let mag = if w > half_q { &self.big_q - &w } else { w };
            if mag > worst {
                worst = mag;
            }
        }
        let budget = log2_big(&self.big_q) - 1.0 - log2_big(&worst);
        Ok(budget.max(0.0))
    }

    // ---------------------------------------------------------------- arithmetic

    pub fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        self.check(a.params_id)?;
        self.check(b.params_id)?;
        let (long, short) = if a.size() >= b.size() { (a, b) } else { (b, a) };
        let mut out = long.clone();
        for (p, s) in out.polys.iter_mut().zip(&short.polys) {
            self.add_assign_q(p, s);
        }
        Ok(out)
    }

    pub fn sub(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        self.check(a.params_id)?;
        self.check(b.params_id)?;
        let mut out = a.clone();
        while out.polys.len() < b.polys.len() {
            out.polys.push(vec![0u64; self.q.len() * self.n]);
        }
        let n = self.n;
        for (p, s) in out.polys.iter_mut().zip(&b.polys) {
            for (i, m) in self.q.iter().enumerate() {
                for k in i * n..(i + 1) * n {
                    p[k] = m.sub(p[k], s[k]);
                }
            }
        }
        Ok(out)
    }

    pub fn add_assign(&self, acc: &mut Ciphertext, b: &Ciphertext) -> Result<()> {
        self.check(acc.params_id)?;
        self.check(b.params_id)?;
        while acc.polys.len() < b.polys.len() {
            acc.polys.push(vec![0u64; self.q.len() * self.n]);
        }
        for (p, s) in acc.polys.iter_mut().zip(&b.polys) {
            self.add_assign_q(p, s);
        }
        Ok(())
    }

    fn add_assign_q(&self, p: &mut [u64], s: &[u64]) {
        let n = self.n;
        for (i, m) in self.q.iter().enumerate() {
            for k in i * n..(i + 1) * n {
                p[k] = m.add(p[k], s[k]);
            }
        }
    }

    /// Multiplies by a plaintext given in slot form (slot-wise product).
    pub fn mul_plain(&self, ct: &Ciphertext, pt: &Plaintext) -> Result<Ciphertext> {
        let poly = self.encode(pt)?;
        self.mul_plain_poly(ct, &poly)
    }

    pub fn mul_plain_poly(&self, ct: &Ciphertext, m: &PlainPoly) -> Result<Ciphertext> {
        self.check(ct.params_id)?;
        self.check_poly(m)?;
        let mut pt = vec![0u64; self.q.len() * self.n];
        self.plain_to_ntt(m, &mut pt);
        let mut out = ct.clone();
        for p in out.polys.iter_mut() {
            self.forward_q(p);
            *p = self.pointwise(p, &pt, &self.q);
            self.inverse_q(p);
        }
        Ok(out)
    }

    /// Ciphertext-ciphertext product without relinearization (3 polynomials).
    pub fn mul(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        let la = self.lift(a)?;
        let lb = self.lift(b)?;
        let mut acc = self.tensor_accumulator();
        self.tensor_accumulate(&mut acc, &la, &lb);
        self.tensor_finish(&acc)
    }

    /// Ciphertext-ciphertext product followed by relinearization.
    pub fn mul_relin(&self, a: &Ciphertext, b: &Ciphertext, evk: &EvalKeys) -> Result<Ciphertext> {
        self.check(evk.params_id)?;
        evk.relin_key()?;
        let prod = self.mul(a, b)?;
        self.relinearize(&prod, evk)
    }

    pub fn relinearize(&self, ct: &Ciphertext, evk: &EvalKeys) -> Result<Ciphertext> {
        self.check(ct.params_id)?;
        self.check(evk.params_id)?;
        match ct.size() {
            2 => Ok(ct.clone()),
            3 => {
                let key = evk.relin_key()?;
                let (u0, u1) = self.key_switch(&ct.polys[2], key);
                let mut c0 = ct.polys[0].clone();
                let mut c1 = ct.polys[1].clone();
                self.add_assign_q(&mut c0, &u0);
                self.add_assign_q(&mut c1, &u1);
                Ok(Ciphertext { params_id: self.id, toy: self.toy(), polys: vec![c0, c1] })
            }
            s => Err(HeError::InvalidParams(format!("cannot relinearize a size-{s} ciphertext"))),
        }
    }

    /// Applies the automorphism `X -> X^g` and switches back to the original key.
    pub fn apply_galois(&self, ct: &Ciphertext, g: u64, evk: &EvalKeys) -> Result<Ciphertext> {
        self.check(ct.params_id)?;
        self.check(evk.params_id)?;
        if ct.size() != 2 {
            return Err(HeError::InvalidParams("galois automorphism needs a relinearized ciphertext".into()));
        }
        let key = evk.galois_key(g)?;
        let mut c0 = self.galois_q(&ct.polys[0], g as usize);
        let c1 = self.galois_q(&ct.polys[1], g as usize);
        let (u0, u1) = self.key_switch(&c1, key);
        self.add_assign_q(&mut c0, &u0);
        Ok(Ciphertext { params_id: self.id, toy: self.toy(), polys: vec![c0, u1] })
    }

    /// Multiplies by the monomial `X^e`, `0 <= e < 2n` (`X^n = -1`).
    pub fn mul_monomial(&self, ct: &Ciphertext, e: usize) -> Ciphertext {
        let n = self.n;
        let e = e % (2 * n);
        let mut out = ct.clone();
        for (p, src) in out.polys.iter_mut().zip(&ct.polys) {
            for (i, m) in self.q.iter().enumerate() {
                let base = i * n;
                for k in 0..n {
                    let j = (k + e) % (2 * n);
                    let v = src[base + k];
                    if j < n {
                        p[base + j] = v;
                    } else {
                        p[base + j - n] = m.neg(v);
                    }
                }
            }
        }
        out
    }

    /// Obliviously expands `ct`, encrypting `sum_j m_j X^j`, into `count` ciphertexts where
    /// output `j` encrypts the constant `2^levels * m_j`, `levels = ceil(log2 count)`.
    /// Needs the Galois keys of [`crate::keys::expansion_galois_elements`].
    pub fn expand(&self, ct: &Ciphertext, count: usize, evk: &EvalKeys) -> Result<Vec<Ciphertext>> {
        self.check(ct.params_id)?;
        if count == 0 || count > self.n {
            return Err(HeError::InvalidParams(format!("cannot expand into {count} ciphertexts at n={}", self.n)));
        }
        let levels = expansion_levels(count);
        let mut current = vec![ct.clone()];
        for k in 0..levels {
            let g = (self.n as u64 >> k) + 1;
            let step = 1usize << k;
            let mut next = vec![ct.clone(); 2 * step];
            for (j, c) in current.iter().enumerate() {
                let rotated = self.apply_galois(c, g, evk)?;
                next[j] = self.add(c, &rotated)?;
                let diff = self.sub(c, &rotated)?;
                next[j + step] = self.mul_monomial(&diff, 2 * self.n - step);
            }
            current = next;
        }
        current.truncate(count);
        Ok(current)
    }

    // ---------------------------------------------------------------- batched building blocks

    /// Converts a ciphertext to NTT form; `with_shoup` prepares it as a fixed multiplicand.
    pub fn to_ntt(&self, ct: &Ciphertext, with_shoup: bool) -> Result<NttCiphertext> {
        self.check(ct.params_id)?;
        let polys: Vec<Vec<u64>> = ct
            .polys
            .iter()
            .map(|p| {
                let mut p = p.clone();
                self.forward_q(&mut p);
                p
            })
            .collect();
        let shoup = with_shoup.then(|| {
            polys
                .iter()
                .map(|p| {
                    let n = self.n;
                    let mut s = vec![0u64; p.len()];
                    for (i, m) in self.q.iter().enumerate() {
                        for k in i * n..(i + 1) * n {
                            s[k] = m.shoup(p[k]);
                        }
                    }
                    s
                })
                .collect()
        });
        Ok(NttCiphertext { polys, shoup })
    }

    pub fn zero_ntt(&self) -> NttCiphertext {
        NttCiphertext { polys: vec![vec![0u64; self.q.len() * self.n]; 2], shoup: None }
    }

    /// Writes the NTT form of `m` (centered lift into each ciphertext prime) into `out`,
    /// which must have length `n * |q|`.
    pub fn plain_to_ntt(&self, m: &PlainPoly, out: &mut [u64]) {
        let n = self.n;
        let t = self.t.value();
        let half_t = t / 2;
        for (i, (qm, table)) in self.q.iter().zip(&self.q_ntt).enumerate() {
            let dst = &mut out[i * n..(i + 1) * n];
            for (d, &c) in dst.iter_mut().zip(&m.coeffs) {
                let c = c as u64;
                *d = if c > half_t { qm.value() - (t - c) } else { c };
            }
            table.forward(dst);
        }
    }

    /// `acc += sel * pt` for a plaintext already in NTT form; `sel` must carry Shoup companions.
    pub fn mul_plain_accumulate(&self, acc: &mut NttCiphertext, sel: &NttCiphertext, pt_ntt: &[u64]) {
        let shoup = sel.shoup.as_ref().expect("selector prepared with Shoup companions");
        let n = self.n;
        for ((a, s), ss) in acc.polys.iter_mut().zip(&sel.polys).zip(shoup) {
            for (i, m) in self.q.iter().enumerate() {
                let r = i * n..(i + 1) * n;
                for ((dst, &x), (&w, &ws)) in a[r.clone()].iter_mut().zip(&pt_ntt[r.clone()]).zip(s[r.clone()].iter().zip(&ss[r])) {
                    *dst = m.add(*dst, m.mul_shoup(x, w, ws));
                }
            }
        }
    }

    /// `acc += other` for partial sums produced on different threads.
    pub fn ntt_add_assign(&self, acc: &mut NttCiphertext, other: &NttCiphertext) {
        for (a, b) in acc.polys.iter_mut().zip(&other.polys) {
            self.add_assign_q(a, b);
        }
    }

    pub fn from_ntt(&self, mut acc: NttCiphertext) -> Ciphertext {
        for p in acc.polys.iter_mut() {
            self.inverse_q(p);
        }
        Ciphertext { params_id: self.id, toy: self.toy(), polys: acc.polys }
    }

    /// Lifts a relinearized ciphertext to the extended basis (NTT form).
    pub fn lift(&self, ct: &Ciphertext) -> Result<LiftedCiphertext> {
        self.check(ct.params_id)?;
        if ct.size() != 2 {
            return Err(HeError::InvalidParams("tensoring expects relinearized ciphertexts".into()));
        }
        let lift_one = |p: &[u64]| {
            let n = self.n;
            let l = self.q.len();
            let mut out = vec![0u64; (l + self.aux.len()) * n];
            out[..l * n].copy_from_slice(p);
            {
                let input: Vec<&[u64]> = p.chunks(n).collect();
                let (_, tail) = out.split_at_mut(l * n);
                let mut outs: Vec<&mut [u64]> = tail.chunks_mut(n).collect();
                self.q_to_aux.convert(&input, &mut outs, true);
            }
            self.forward_ext(&mut out);
            out
        };
        Ok(LiftedCiphertext { polys: [lift_one(&ct.polys[0]), lift_one(&ct.polys[1])] })
    }

    pub fn tensor_accumulator(&self) -> TensorAccumulator {
        let len = (self.q.len() + self.aux.len()) * self.n;
        TensorAccumulator { polys: [vec![0u64; len], vec![0u64; len], vec![0u64; len]], terms: 0 }
    }

    /// `acc += a ⊗ b`.
    pub fn tensor_accumulate(&self, acc: &mut TensorAccumulator, a: &LiftedCiphertext, b: &LiftedCiphertext) {
        let n = self.n;
        let [d0, d1, d2] = &mut acc.polys;
        for (i, m) in self.q.iter().chain(self.aux.iter()).enumerate() {
            for k in i * n..(i + 1) * n {
                let (a0, a1, b0, b1) = (a.polys[0][k], a.polys[1][k], b.polys[0][k], b.polys[1][k]);
                d0[k] = m.add(d0[k], m.mul(a0, b0));
                d1[k] = m.add(d1[k], m.add(m.mul(a0, b1), m.mul(a1, b0)));
                d2[k] = m.add(d2[k], m.mul(a1, b1));
            }
        }
        acc.terms += 1;
    }

    pub fn tensor_merge(&self, acc: &mut TensorAccumulator, other: &TensorAccumulator) {
        let n = self.n;
        for (a, b) in acc.polys.iter_mut().zip(&other.polys) {
            for (i, m) in self.q.iter().chain(self.aux.iter()).enumerate() {
                for k in i * n..(i + 1) * n {
                    a[k] = m.add(a[k], b[k]);
                }
            }
        }
        acc.terms += other.terms;
    }

    /// Scales the accumulated tensor by `t/Q` with rounding, giving a size-3 ciphertext.
    pub fn tensor_finish(&self, acc: &TensorAccumulator) -> Result<Ciphertext> {
        if acc.terms as f64 > 2f64.powf(TENSOR_TERMS_BITS) {
            return Err(HeError::InvalidParams(format!("{} tensor terms exceed the auxiliary basis", acc.terms)));
        }
        let n = self.n;
        let l = self.q.len();
        let polys = acc
            .polys
            .iter()
            .map(|z| {
                let mut w = z.clone();
                self.inverse_ext(&mut w);
                for (i, m) in self.q.iter().chain(self.aux.iter()).enumerate() {
                    let (tm, hq) = (self.t_mod_ext[i], self.half_q_mod_ext[i]);
                    for x in &mut w[i * n..(i + 1) * n] {
                        *x = m.add(m.mul(*x, tm), hq);
                    }
                }
                let (wq, waux) = w.split_at_mut(l * n);
                let mut r = vec![0u64; self.aux.len() * n];
                {
                    let input: Vec<&[u64]> = wq.chunks(n).collect();
                    let mut outs: Vec<&mut [u64]> = r.chunks_mut(n).collect();
                    self.q_to_aux.convert(&input, &mut outs, false);
                }
                for (j, m) in self.aux.iter().enumerate() {
                    let qi = self.q_inv_mod_aux[j];
                    for k in j * n..(j + 1) * n {
                        waux[k] = m.mul(m.sub(waux[k], r[k]), qi);
                    }
                }
                let mut out = vec![0u64; l * n];
                {
                    let input: Vec<&[u64]> = waux.chunks(n).collect();
                    let mut outs: Vec<&mut [u64]> = out.chunks_mut(n).collect();
                    self.aux_to_q.convert(&input, &mut outs, true);
                }
                out
            })
            .collect();
        Ok(Ciphertext { params_id: self.id, toy: self.toy(), polys })
    }

    // ---------------------------------------------------------------- serialization

    pub fn ciphertext_from_bytes(&self, bytes: &[u8]) -> Result<Ciphertext> {
        let mut r = Reader::new(bytes);
        let ct = self.read_ciphertext(&mut r)?;
        r.expect_end()?;
        Ok(ct)
    }

    pub fn read_ciphertext(&self, r: &mut Reader<'_>) -> Result<Ciphertext> {
        let (toy, id) = r.header()?;
        self.check(id).map_err(|_| HeError::Deserialize("ciphertext params id mismatch".into()))?;
        if toy != self.toy() {
            return Err(HeError::Deserialize("toy flag disagrees with parameters".into()));
        }
        let size = r.u8()? as usize;
        if !(2..=3).contains(&size) {
            return Err(HeError::Deserialize(format!("ciphertext size {size}")));
        }
        let len = r.u32()? as usize;
        if len != self.q.len() * self.n {
            return Err(HeError::Deserialize(format!("polynomial length {len}")));
        }
        let mut polys = Vec::with_capacity(size);
        for _ in 0..size {
            let p = r.u64s(len)?;
            for (i, m) in self.q.iter().enumerate() {
                if p[i * self.n..(i + 1) * self.n].iter().any(|&c| c >= m.value()) {
                    return Err(HeError::Deserialize("coefficient not reduced".into()));
                }
            }
            polys.push(p);
        }
        Ok(Ciphertext { params_id: id, toy, polys })
    }

    // ---------------------------------------------------------------- internals

    fn forward_q(&self, p: &mut [u64]) {
        for (chunk, table) in p.chunks_mut(self.n).zip(&self.q_ntt) {
            table.forward(chunk);
        }
    }

    fn inverse_q(&self, p: &mut [u64]) {
        for (chunk, table) in p.chunks_mut(self.n).zip(&self.q_ntt) {
            table.inverse(chunk);
        }
    }

    fn forward_ext(&self, p: &mut [u64]) {
        for (chunk, table) in p.chunks_mut(self.n).zip(self.q_ntt.iter().chain(&self.aux_ntt)) {
            table.forward(chunk);
        }
    }

    fn inverse_ext(&self, p: &mut [u64]) {
        for (chunk, table) in p.chunks_mut(self.n).zip(self.q_ntt.iter().chain(&self.aux_ntt)) {
            table.inverse(chunk);
        }
    }

    fn pointwise(&self, a: &[u64], b: &[u64], basis: &[Modulus]) -> Vec<u64> {
        let n = self.n;
        let mut out = vec![0u64; basis.len() * n];
        for (i, m) in basis.iter().enumerate() {
            for k in i * n..(i + 1) * n {
                out[k] = m.mul(a[k], b[k]);
            }
        }
        out
    }

    fn small_to_ntt(&self, coeffs: &[i8], basis: &[Modulus], tables: &[NttTable]) -> Vec<u64> {
        let n = self.n;
        let mut out = vec![0u64; basis.len() * n];
        for (i, (m, table)) in basis.iter().zip(tables).enumerate() {
            let dst = &mut out[i * n..(i + 1) * n];
            for (d, &c) in dst.iter_mut().zip(coeffs) {
                *d = m.from_i64(c as i64);
            }
            table.forward(dst);
        }
        out
    }

    fn uniform_ntt<R: Rng + ?Sized>(&self, basis: &[Modulus], rng: &mut R) -> Vec<u64> {
        let n = self.n;
        let mut out = vec![0u64; basis.len() * n];
        for (i, m) in basis.iter().enumerate() {
            for x in &mut out[i * n..(i + 1) * n] {
                *x = rng.random_range(0..m.value());
            }
        }
        out
    }

    fn sample_error<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<i64> {
        let mask = (1u64 << CBD_ETA) - 1;
        (0..self.n)
            .map(|_| {
                let a = rng.random::<u64>() & mask;
                let b = rng.random::<u64>() & mask;
                a.count_ones() as i64 - b.count_ones() as i64
            })
            .collect()
    }

    fn error_ntt<R: Rng + ?Sized>(&self, basis: &[Modulus], tables: &[NttTable], rng: &mut R) -> Vec<u64> {
        let e = self.sample_error(rng);
        let n = self.n;
        let mut out = vec![0u64; basis.len() * n];
        for (i, (m, table)) in basis.iter().zip(tables).enumerate() {
            let dst = &mut out[i * n..(i + 1) * n];
            for (d, &c) in dst.iter_mut().zip(&e) {
                *d = m.from_i64(c);
            }
            table.forward(dst);
        }
        out
    }

    fn galois_q(&self, p: &[u64], g: usize) -> Vec<u64> {
        let n = self.n;
        let mut out = vec![0u64; p.len()];
        for (i, m) in self.q.iter().enumerate() {
            let base = i * n;
            for k in 0..n {
                let j = (k * g) % (2 * n);
                let v = p[base + k];
                if j < n {
                    out[base + j] = v;
                } else {
                    out[base + j - n] = m.neg(v);
                }
            }
        }
        out
    }

    /// Returns `(u0, u1)` over `q` with `u0 + u1 s ≈ x s'` for the key's `s'`.
    fn key_switch(&self, x: &[u64], key: &KeySwitchKey) -> (Vec<u64>, Vec<u64>) {
        let n = self.n;
        let kb = self.key_basis.len();
        let l = self.q.len();
        let mut acc0 = vec![0u64; kb * n];
        let mut acc1 = vec![0u64; kb * n];
        let mut digit = vec![0u64; n];
        for (i, (b, a)) in key.parts.iter().enumerate() {
            let src = &x[i * n..(i + 1) * n];
            for (j, (m, table)) in self.key_basis.iter().zip(&self.key_ntt).enumerate() {
                for (d, &s) in digit.iter_mut().zip(src) {
                    *d = m.reduce(s);
                }
                table.forward(&mut digit);
                for k in 0..n {
                    let idx = j * n + k;
                    acc0[idx] = m.add(acc0[idx], m.mul(digit[k], b[idx]));
                    acc1[idx] = m.add(acc1[idx], m.mul(digit[k], a[idx]));
                }
            }
        }
        let mod_down = |mut acc: Vec<u64>| {
            for (chunk, table) in acc.chunks_mut(n).zip(&self.key_ntt) {
                table.inverse(chunk);
            }
            let sp = self.key_basis[l];
            let (lo, hi) = acc.split_at_mut(l * n);
            for (i, m) in self.q.iter().enumerate() {
                let inv = self.sp_inv_mod_q[i];
                for k in 0..n {
                    let r = m.from_i64(sp.center(hi[k]));
                    let idx = i * n + k;
                    lo[idx] = m.mul(m.sub(lo[idx], r), inv);
                }
            }
            acc.truncate(l * n);
            acc
        };
        (mod_down(acc0), mod_down(acc1))
    }
}

/// `ceil(log2 count)`, the number of doubling rounds needed to expand into `count` outputs.
pub fn expansion_levels(count: usize) -> u32 {
    count.max(1).next_power_of_two().trailing_zeros()
}

fn galois_small(coeffs: &[i8], g: usize) -> Vec<i8> {
    let n = coeffs.len();
    let mut out = vec![0i8; n];
    for (k, &c) in coeffs.iter().enumerate() {
        let j = (k * g) % (2 * n);
        if j < n {
            out[j] = c;
        } else {
            out[j - n] = -c;
        }
    }
    out
}

fn mod_big(x: &BigUint, m: u64) -> u64 {
    let r = x % BigUint::from(m);
    r.iter_u64_digits().next().unwrap_or(0)
}

fn log2_big(x: &BigUint) -> f64 {
    let bits = x.bits();
    if bits == 0 {
        return 0.0;
    }
    if bits <= 64 {
        return (x.iter_u64_digits().next().unwrap() as f64).log2();
    }
    let shift = bits - 64;
    let top = (x >> shift).iter_u64_digits().next().unwrap();
    (top as f64).log2() + shift as f64
}
