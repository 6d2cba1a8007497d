//! Weakly-private keyword retrieval over the hyper-rectangle.
//!
//! A query discloses the first ε cell coordinates in the clear (the hint) and encrypts a
//! one-hot selector for each remaining dimension, packed as a single coefficient of one
//! ciphertext. The server expands each selector, contracts the last residual dimension
//! with plaintext products and folds the others in with ciphertext products.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::{CryptoRng, Rng};
use rayon::prelude::*;
use sparsewpir_he::serialize::{Reader, Writer, FORMAT_VERSION};
use sparsewpir_he::{
    expansion_levels, Bfv, Ciphertext, EvalKeys, LiftedCiphertext, NttCiphertext, PlainPoly, Plaintext, SecretKey,
    TensorAccumulator,
};

use crate::agreement::{Context, LoadedProfile, Profile, ProfileId};
use crate::db::{map_keyword, CellAddress, DbSnapshot};
use crate::error::{CoreError, Result};
use crate::event::{IcfEvent, KeywordType};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WpirQuery {
    pub profile_id: ProfileId,
    pub context_version: u64,
    /// Leading cell coordinates disclosed in the clear.
    pub hint: Vec<u32>,
    /// One packed one-hot selector per residual dimension.
    pub selectors: Vec<Ciphertext>,
}

impl WpirQuery {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(FORMAT_VERSION);
        w.raw(&self.profile_id.0);
        w.u64(self.context_version);
        w.u8(self.hint.len() as u8);
        for &h in &self.hint {
            w.u32(h);
        }
        w.u8(self.selectors.len() as u8);
        for s in &self.selectors {
            w.bytes(&s.to_bytes());
        }
        w.finish()
    }

    /// The profile a serialized query refers to, readable before its ciphertexts.
    pub fn peek_profile_id(bytes: &[u8]) -> Result<ProfileId> {
        if bytes.len() < 33 || bytes[0] != FORMAT_VERSION {
            return Err(CoreError::Malformed("query header".into()));
        }
        Ok(ProfileId(bytes[1..33].try_into().unwrap()))
    }

    pub fn from_bytes(bytes: &[u8], bfv: &Bfv) -> Result<Self> {
        let profile_id = Self::peek_profile_id(bytes)?;
        let mut r = Reader::new(&bytes[33..]);
        let context_version = r.u64()?;
        let hint_len = r.u8()? as usize;
        let hint = (0..hint_len).map(|_| r.u32()).collect::<std::result::Result<Vec<_>, _>>()?;
        let count = r.u8()? as usize;
        let selectors = (0..count)
            .map(|_| bfv.ciphertext_from_bytes(r.bytes()?))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        r.expect_end()?;
        Ok(WpirQuery { profile_id, context_version, hint, selectors })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WpirAnswer {
    pub context_version: u64,
    /// Exactly θ ciphertexts, one per plaintext of the addressed cell.
    pub ciphertexts: Vec<Ciphertext>,
}

impl WpirAnswer {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(FORMAT_VERSION);
        w.u64(self.context_version);
        w.u8(self.ciphertexts.len() as u8);
        for c in &self.ciphertexts {
            w.bytes(&c.to_bytes());
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8], bfv: &Bfv) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.u8()? != FORMAT_VERSION {
            return Err(CoreError::Malformed("answer format version".into()));
        }
        let context_version = r.u64()?;
        let count = r.u8()? as usize;
        let ciphertexts = (0..count)
            .map(|_| bfv.ciphertext_from_bytes(r.bytes()?))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        r.expect_end()?;
        Ok(WpirAnswer { context_version, ciphertexts })
    }
}

/// Server-side work of one answer. Every field depends only on the context and ε.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AnswerStats {
    pub partition_cells: u64,
    /// Plaintext-ciphertext products: `partition_cells · θ`.
    pub plaintext_products: u64,
    pub ciphertext_products: u64,
    pub relinearizations: u64,
    pub automorphisms: u64,
}

impl AnswerStats {
    /// The scan workload, which scales exactly with the partition size.
    pub fn homomorphic_ops(&self) -> u64 {
        self.plaintext_products
    }

    pub fn total_ops(&self) -> u64 {
        self.plaintext_products + self.ciphertext_products + self.relinearizations + self.automorphisms
    }
}

#[derive(Debug, Default)]
struct Counters {
    plaintext_products: AtomicU64,
    ciphertext_products: AtomicU64,
    relinearizations: AtomicU64,
    automorphisms: AtomicU64,
}

impl Counters {
    fn add(c: &AtomicU64, v: usize) {
        c.fetch_add(v as u64, Ordering::Relaxed);
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AnswerOptions {
    /// Spread the partition scan across the rayon pool.
    pub parallel: bool,
}

/// Builds the query for keyword `w` of type `kind`; also returns the cell it addresses.
pub fn query<R: Rng + CryptoRng + ?Sized>(
    ctx: &Context,
    profile: &Profile,
    bfv: &Bfv,
    sk: &SecretKey,
    kind: KeywordType,
    w: &str,
    rng: &mut R,
) -> Result<(WpirQuery, CellAddress)> {
    if w.is_empty() {
        return Err(CoreError::Malformed("empty keyword".into()));
    }
    profile.check_compatible(ctx)?;
    if sk.params_id() != bfv.params_id() || bfv.params() != &profile.params {
        return Err(CoreError::ProfileMismatch("secret key or evaluator belongs to another profile".into()));
    }
    let eps = profile.epsilon;
    let addr = map_keyword(kind, w, &ctx.dims);
    let n = bfv.degree();
    let t = bfv.plain_modulus();
    let mut selectors = Vec::with_capacity(ctx.d() - eps);
    for (&k, &coord) in ctx.dims[eps..].iter().zip(&addr.coords[eps..]) {
        if k > n {
            return Err(CoreError::ProfileMismatch(format!("dimension of {k} cells exceeds ring degree {n}")));
        }
        // Expansion multiplies by 2^levels; pre-scale by its inverse mod t.
        let scale = pow_mod(inverse_mod(2, t), expansion_levels(k) as u64, t);
        let mut coeffs = vec![0u32; n];
        coeffs[coord as usize] = scale as u32;
        selectors.push(bfv.encrypt_poly(sk, &PlainPoly::from_coefficients(coeffs), rng)?);
    }
    let q = WpirQuery {
        profile_id: profile.id(),
        context_version: ctx.version,
        hint: addr.coords[..eps].to_vec(),
        selectors,
    };
    Ok((q, addr))
}

/// Answers `q` against `db`. Fails with a context mismatch carrying the current context
/// when the query was built for another version.
pub fn answer(db: &DbSnapshot, q: &WpirQuery, profile: &LoadedProfile, opts: AnswerOptions) -> Result<(WpirAnswer, AnswerStats)> {
    let ctx = db.context();
    if q.context_version != ctx.version {
        return Err(CoreError::ContextMismatch { got: q.context_version, current: Box::new(ctx.clone()) });
    }
    if q.profile_id != profile.id {
        return Err(CoreError::UnknownProfile(q.profile_id.to_hex()));
    }
    profile.profile.check_compatible(ctx)?;
    let eps = profile.profile.epsilon;
    if q.hint.len() != eps || q.selectors.len() != ctx.d() - eps {
        return Err(CoreError::Malformed(format!(
            "query with {} hint coordinates and {} selectors for ε = {eps}, d = {}",
            q.hint.len(),
            q.selectors.len(),
            ctx.d()
        )));
    }
    let geom = db.geometry();
    let range = geom.partition(&q.hint)?;
    let bfv = &profile.bfv;
    let evk = &profile.profile.evk;
    let theta = geom.theta;
    let counters = Counters::default();

    let ciphertexts = if q.selectors.is_empty() {
        // The hint pins a single cell: return it without evaluation.
        Counters::add(&counters.plaintext_products, theta);
        (0..theta)
            .map(|p| {
                let zero;
                let pt = match db.plaintext(range.start, p) {
                    Some(pt) => pt,
                    None => {
                        zero = PlainPoly::constant(bfv.degree(), 0);
                        &zero
                    }
                };
                bfv.trivial_encrypt(pt)
            })
            .collect::<std::result::Result<Vec<_>, _>>()?
    } else {
        let residual = &geom.dims[eps..];
        let expanded: Vec<Vec<Ciphertext>> = q
            .selectors
            .iter()
            .zip(residual)
            .map(|(s, &k)| {
                Counters::add(&counters.automorphisms, (1usize << expansion_levels(k)) - 1);
                bfv.expand(s, k, evk)
            })
            .collect::<std::result::Result<_, _>>()?;
        let last = expanded.len() - 1;
        let scan_selectors: Vec<NttCiphertext> =
            expanded[last].iter().map(|c| bfv.to_ntt(c, true)).collect::<std::result::Result<_, _>>()?;
        let lifted: Vec<Vec<LiftedCiphertext>> = expanded[..last]
            .iter()
            .map(|v| v.iter().map(|c| bfv.lift(c)).collect::<std::result::Result<Vec<_>, _>>())
            .collect::<std::result::Result<_, _>>()?;
        let eval = Evaluator { db, bfv, evk, residual, scan_selectors, lifted, theta, counters: &counters, opts };
        eval.contract(0, range.start)?
    };

    let stats = AnswerStats {
        partition_cells: range.len() as u64,
        plaintext_products: counters.plaintext_products.into_inner(),
        ciphertext_products: counters.ciphertext_products.into_inner(),
        relinearizations: counters.relinearizations.into_inner(),
        automorphisms: counters.automorphisms.into_inner(),
    };
    Ok((WpirAnswer { context_version: ctx.version, ciphertexts }, stats))
}

struct Evaluator<'a> {
    db: &'a DbSnapshot,
    bfv: &'a Arc<Bfv>,
    evk: &'a EvalKeys,
    residual: &'a [usize],
    scan_selectors: Vec<NttCiphertext>,
    lifted: Vec<Vec<LiftedCiphertext>>,
    theta: usize,
    counters: &'a Counters,
    opts: AnswerOptions,
}

impl Evaluator<'_> {
    /// θ ciphertexts for the sub-block of residual dimensions `level..` starting at cell `offset`.
    fn contract(&self, level: usize, offset: usize) -> Result<Vec<Ciphertext>> {
        let k = self.residual[level];
        if level + 1 == self.residual.len() {
            return Ok(self.scan(offset, k));
        }
        let stride: usize = self.residual[level + 1..].iter().product();
        let fold = |mut accs: Vec<TensorAccumulator>, j: usize| -> Result<Vec<TensorAccumulator>> {
            let sub = self.contract(level + 1, offset + j * stride)?;
            for (acc, c) in accs.iter_mut().zip(&sub) {
                self.bfv.tensor_accumulate(acc, &self.bfv.lift(c)?, &self.lifted[level][j]);
            }
            Counters::add(&self.counters.ciphertext_products, self.theta);
            Ok(accs)
        };
        let fresh = || (0..self.theta).map(|_| self.bfv.tensor_accumulator()).collect::<Vec<_>>();
        let accs = if self.opts.parallel && level == 0 {
            (0..k)
                .into_par_iter()
                .try_fold(fresh, fold)
                .try_reduce(fresh, |mut a, b| {
                    for (x, y) in a.iter_mut().zip(&b) {
                        self.bfv.tensor_merge(x, y);
                    }
                    Ok(a)
                })?
        } else {
            (0..k).try_fold(fresh(), fold)?
        };
        Counters::add(&self.counters.relinearizations, self.theta);
        accs.iter()
            .map(|acc| Ok(self.bfv.relinearize(&self.bfv.tensor_finish(acc)?, self.evk)?))
            .collect()
    }

    /// Inner products of the last expanded selector with `k` consecutive cells.
    fn scan(&self, offset: usize, k: usize) -> Vec<Ciphertext> {
        let n = self.bfv.degree();
        let len = self.bfv.params().ciphertext_moduli.len() * n;
        let fresh = || ((0..self.theta).map(|_| self.bfv.zero_ntt()).collect::<Vec<_>>(), vec![0u64; len]);
        let step = |(mut accs, mut buf): (Vec<NttCiphertext>, Vec<u64>), j: usize| {
            for (p, acc) in accs.iter_mut().enumerate() {
                match self.db.plaintext(offset + j, p) {
                    Some(pt) => self.bfv.plain_to_ntt(pt, &mut buf),
                    None => buf.fill(0),
                }
                self.bfv.mul_plain_accumulate(acc, &self.scan_selectors[j], &buf);
            }
            (accs, buf)
        };
        let accs = if self.opts.parallel && self.residual.len() == 1 {
            (0..k)
                .into_par_iter()
                .fold(fresh, step)
                .map(|(a, _)| a)
                .reduce(|| fresh().0, |mut a, b| {
                    for (x, y) in a.iter_mut().zip(&b) {
                        self.bfv.ntt_add_assign(x, y);
                    }
                    a
                })
        } else {
            (0..k).fold(fresh(), step).0
        };
        Counters::add(&self.counters.plaintext_products, k * self.theta);
        accs.into_iter().map(|a| self.bfv.from_ntt(a)).collect()
    }
}

/// Decrypts an answer and returns the events of the cell whose keyword of type `kind` is `w`.
pub fn extract(
    answer: &WpirAnswer,
    bfv: &Bfv,
    sk: &SecretKey,
    ctx: &Context,
    kind: KeywordType,
    w: &str,
) -> Result<Vec<IcfEvent>> {
    if answer.ciphertexts.len() != ctx.theta {
        return Err(CoreError::Malformed(format!("answer with {} ciphertexts, expected θ = {}", answer.ciphertexts.len(), ctx.theta)));
    }
    let codec = ctx.codec()?;
    let t = bfv.plain_modulus();
    let mut out = Vec::new();
    for ct in &answer.ciphertexts {
        let poly = bfv.decrypt_poly(sk, ct)?;
        let pt = Plaintext::new(poly.coefficients().iter().map(|&c| c as u64).collect(), t)?;
        let records = codec.decode(&pt).map_err(|e| CoreError::DecryptionFailure(e.to_string()))?;
        for rec in records {
            let (&tag, body) = rec.split_first().ok_or_else(|| CoreError::DecryptionFailure("empty record".into()))?;
            if tag != kind.tag() {
                continue;
            }
            let ev = IcfEvent::from_bytes(body).map_err(|e| CoreError::DecryptionFailure(e.to_string()))?;
            if ev.keyword(kind) == Some(w) {
                out.push(ev);
            }
        }
    }
    Ok(out)
}

fn pow_mod(mut b: u64, mut e: u64, m: u64) -> u64 {
    let mut r = 1u64;
    b %= m;
    while e > 0 {
        if e & 1 == 1 {
            r = (r as u128 * b as u128 % m as u128) as u64;
        }
        b = (b as u128 * b as u128 % m as u128) as u64;
        e >>= 1;
    }
    r
}

/// Inverse modulo a prime `m`.
fn inverse_mod(a: u64, m: u64) -> u64 {
    pow_mod(a, m - 2, m)
}
