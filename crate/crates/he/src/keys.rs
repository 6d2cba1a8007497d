use std::collections::BTreeMap;

use crate::error::{HeError, Result};
use crate::serialize::{Reader, Writer};

/// Ternary secret key. `ntt` holds the key in NTT form over the key-switching basis
/// (ciphertext primes followed by the special prime, when present).
#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey {
    pub(crate) params_id: u64,
    pub(crate) toy: bool,
    pub(crate) coeffs: Vec<i8>,
    pub(crate) ntt: Vec<u64>,
}

impl std::fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SecretKey").field("params_id", &format_args!("{:016x}", self.params_id)).finish_non_exhaustive()
    }
}

impl SecretKey {
    pub fn params_id(&self) -> u64 {
        self.params_id
    }

    pub fn coefficients(&self) -> &[i8] {
        &self.coeffs
    }

    /// Serializes only the ternary coefficients; the NTT form is recomputed on load.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(self.coeffs.len() + 16);
        w.header(self.toy, self.params_id);
        w.u32(self.coeffs.len() as u32);
        w.raw(&self.coeffs.iter().map(|&c| c as u8).collect::<Vec<u8>>());
        w.finish()
    }

    /// Parses the coefficient encoding; the caller must rebuild the NTT form with
    /// [`crate::Bfv::secret_key_from_bytes`].
    pub(crate) fn parse(bytes: &[u8]) -> Result<(bool, u64, Vec<i8>)> {
        let mut r = Reader::new(bytes);
        let (toy, id) = r.header()?;
        let n = r.u32()? as usize;
        let mut coeffs = Vec::with_capacity(n);
        for _ in 0..n {
            let c = r.u8()? as i8;
            if !(-1..=1).contains(&c) {
                return Err(HeError::Deserialize(format!("non-ternary secret coefficient {c}")));
            }
            coeffs.push(c);
        }
        r.expect_end()?;
        Ok((toy, id, coeffs))
    }
}

/// Key-switching key from some `s'` to `s`, one `(b_i, a_i)` pair per ciphertext prime,
/// each in NTT form over the key basis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeySwitchKey {
    pub(crate) parts: Vec<(Vec<u64>, Vec<u64>)>,
}

impl KeySwitchKey {
    fn write(&self, w: &mut Writer) {
        w.u8(self.parts.len() as u8);
        for (b, a) in &self.parts {
            w.u64s(b);
            w.u64s(a);
        }
    }

    fn read(r: &mut Reader<'_>, poly_len: usize) -> Result<Self> {
        let count = r.u8()? as usize;
        let mut parts = Vec::with_capacity(count);
        for _ in 0..count {
            let b = r.u64s(poly_len)?;
            let a = r.u64s(poly_len)?;
            parts.push((b, a));
        }
        Ok(KeySwitchKey { parts })
    }
}

/// Galois elements `n/2^k + 1`, `k = 0..levels`, used by oblivious query expansion.
pub fn expansion_galois_elements(n: usize, levels: u32) -> Vec<u64> {
    (0..levels).map(|k| (n as u64 >> k) + 1).collect()
}

/// The set of homomorphic operations an evaluator must be able to perform,
/// i.e. the input of evaluation-key generation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EvalCircuit {
    pub relinearization: bool,
    pub galois_elements: Vec<u64>,
}

impl EvalCircuit {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with_relinearization(mut self) -> Self {
        self.relinearization = true;
        self
    }

    /// Adds the automorphisms needed to expand a packed query into `2^levels` ciphertexts.
    pub fn with_expansion(mut self, n: usize, levels: u32) -> Self {
        for g in expansion_galois_elements(n, levels) {
            if !self.galois_elements.contains(&g) {
                self.galois_elements.push(g);
            }
        }
        self.galois_elements.sort_unstable();
        self
    }

    pub fn is_empty(&self) -> bool {
        !self.relinearization && self.galois_elements.is_empty()
    }
}

/// Relinearization and Galois keys.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalKeys {
    pub(crate) params_id: u64,
    pub(crate) toy: bool,
    pub(crate) relin: Option<KeySwitchKey>,
    pub(crate) galois: BTreeMap<u64, KeySwitchKey>,
}

impl EvalKeys {
    pub fn params_id(&self) -> u64 {
        self.params_id
    }

    pub fn has_relinearization(&self) -> bool {
        self.relin.is_some()
    }

    pub fn galois_elements(&self) -> Vec<u64> {
        self.galois.keys().copied().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.relin.is_none() && self.galois.is_empty()
    }

    pub(crate) fn relin_key(&self) -> Result<&KeySwitchKey> {
        self.relin.as_ref().ok_or_else(|| HeError::MissingEvalKey("relinearization".into()))
    }

    pub(crate) fn galois_key(&self, g: u64) -> Result<&KeySwitchKey> {
        self.galois.get(&g).ok_or_else(|| HeError::MissingEvalKey(format!("galois element {g}")))
    }

    /// Canonical encoding; `poly_len` is `n * |key basis|`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.header(self.toy, self.params_id);
        match &self.relin {
            Some(k) => {
                w.u8(1);
                k.write(&mut w);
            }
            None => w.u8(0),
        }
        w.u32(self.galois.len() as u32);
        for (g, k) in &self.galois {
            w.u64(*g);
            k.write(&mut w);
        }
        w.finish()
    }

    pub(crate) fn parse(bytes: &[u8], poly_len: usize) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let (toy, params_id) = r.header()?;
        let relin = match r.u8()? {
            0 => None,
            1 => Some(KeySwitchKey::read(&mut r, poly_len)?),
            other => return Err(HeError::Deserialize(format!("bad relinearization tag {other}"))),
        };
        let count = r.u32()? as usize;
        let mut galois = BTreeMap::new();
        for _ in 0..count {
            let g = r.u64()?;
            galois.insert(g, KeySwitchKey::read(&mut r, poly_len)?);
        }
        r.expect_end()?;
        Ok(EvalKeys { params_id, toy, relin, galois })
    }
}
