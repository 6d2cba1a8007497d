//! Agreement phase: server context generation, client profile generation and the
//! server's content-addressed profile cache.

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use rand::{CryptoRng, Rng};
use sha2::{Digest, Sha256};
use sparsewpir_he::serialize::{Reader, Writer, FORMAT_VERSION};
use sparsewpir_he::{
    expansion_levels, plain_modulus_for, Bfv, EvalCircuit, EvalKeys, HeParams,
    RecordCodec, SecretKey, TOY_SECURITY,
};

use crate::db::{estimate_worst_collisions, Geometry};
use crate::error::{CoreError, Result};

/// Server-published geometry of the database.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Context {
    pub dims: Vec<usize>,
    pub ring_degree: usize,
    /// Incremented on every resize.
    pub version: u64,
    /// Frame size of one record in bytes.
    pub record_bytes: usize,
    pub theta: usize,
    /// Record count the geometry was sized for.
    pub provisioned: u64,
    /// Toy (insecure) homomorphic parameters are in use.
    pub toy: bool,
}

impl Context {
    pub fn d(&self) -> usize {
        self.dims.len()
    }

    pub fn codec(&self) -> Result<RecordCodec> {
        let t = plain_modulus_for(self.ring_degree);
        Ok(RecordCodec::new(self.ring_degree, 63 - t.leading_zeros(), self.record_bytes)?)
    }

    pub fn records_per_plaintext(&self) -> Result<usize> {
        Ok(self.codec()?.records_per_plaintext())
    }

    pub fn geometry(&self) -> Result<Geometry> {
        Ok(Geometry {
            dims: self.dims.clone(),
            theta: self.theta,
            records_per_plaintext: self.records_per_plaintext()?,
        })
    }

    /// Two contexts accept the same profiles iff their shapes agree.
    pub fn same_geometry(&self, other: &Context) -> bool {
        self.dims == other.dims
            && self.ring_degree == other.ring_degree
            && self.record_bytes == other.record_bytes
            && self.theta == other.theta
            && self.toy == other.toy
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(FORMAT_VERSION);
        w.u8(self.toy as u8);
        w.u8(self.dims.len() as u8);
        for &k in &self.dims {
            w.u32(k as u32);
        }
        w.u32(self.ring_degree as u32);
        w.u32(self.record_bytes as u32);
        w.u32(self.theta as u32);
        w.u64(self.version);
        w.u64(self.provisioned);
        w.finish()
    }

    pub fn read_from(r: &mut Reader<'_>) -> Result<Self> {
        let version = r.u8()?;
        if version != FORMAT_VERSION {
            return Err(CoreError::Malformed(format!("context format version {version}")));
        }
        let toy = match r.u8()? {
            0 => false,
            1 => true,
            other => return Err(CoreError::Malformed(format!("toy flag {other}"))),
        };
        let d = r.u8()? as usize;
        let dims = (0..d).map(|_| r.u32().map(|k| k as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        let ctx = Context {
            dims,
            ring_degree: r.u32()? as usize,
            record_bytes: r.u32()? as usize,
            theta: r.u32()? as usize,
            version: r.u64()?,
            provisioned: r.u64()?,
            toy,
        };
        if ctx.dims.iter().any(|&k| k == 0) || ctx.theta == 0 || !ctx.ring_degree.is_power_of_two() {
            return Err(CoreError::Malformed("degenerate context".into()));
        }
        Ok(ctx)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let ctx = Self::read_from(&mut r)?;
        r.expect_end()?;
        Ok(ctx)
    }
}

/// Sizes a hyper-cube for `n_records` records of `record_bytes` bytes: the smallest `K` with
/// `K^d >= ceil(N/M)`. Rejects when the `θ·M` records a cell can hold fall below the
/// collision bound for `N` records in `K^d` cells.
pub fn context_generation(
    n_records: u64,
    record_bytes: usize,
    d: usize,
    ring_degree: usize,
    theta: usize,
    toy: bool,
) -> Result<Context> {
    if d < 2 {
        return Err(CoreError::InvalidParams(format!("need at least 2 dimensions, got {d}")));
    }
    if !ring_degree.is_power_of_two() || ring_degree < 8 {
        return Err(CoreError::InvalidParams(format!("ring degree {ring_degree} is not a power of two")));
    }
    if theta == 0 {
        return Err(CoreError::InvalidParams("θ must be at least 1".into()));
    }
    let mut ctx = Context {
        dims: Vec::new(),
        ring_degree,
        version: 0,
        record_bytes,
        theta,
        provisioned: n_records,
        toy,
    };
    let m = ctx.records_per_plaintext()? as u64;
    if m == 0 {
        return Err(CoreError::InvalidParams(format!("{record_bytes}-byte records do not fit a plaintext")));
    }
    let cells = n_records.div_ceil(m).max(1);
    let k = hypercube_side(cells, d);
    ctx.dims = vec![k as usize; d];
    let bound = estimate_worst_collisions(n_records, (k as u64).pow(d as u32));
    let budget = theta as u64 * m;
    if budget < bound {
        return Err(CoreError::ContextRejected { budget: budget as usize, bound: bound as usize });
    }
    Ok(ctx)
}

/// Smallest `k` with `k^d >= cells`.
fn hypercube_side(cells: u64, d: usize) -> u64 {
    let mut k = (cells as f64).powf(1.0 / d as f64).floor().max(1.0) as u64;
    while k.checked_pow(d as u32).is_some_and(|v| v > cells) && k > 1 {
        k -= 1;
    }
    while k.checked_pow(d as u32).is_some_and(|v| v < cells) {
        k += 1;
    }
    k
}

/// RNS prime sizes for a residual recursion depth `r` (dimensions still answered
/// homomorphically). `r = 0` answers without evaluation and needs one prime and no keys.
/// Each further dimension needs one multiplication's worth of modulus.
pub fn parameter_table(ring_degree: usize, residual: usize, toy: bool) -> Option<(Vec<u32>, Option<u32>)> {
    if toy {
        return Some(match residual {
            0 => (vec![50], None),
            r => (vec![50; r + 1], Some(60)),
        });
    }
    let entry = match (ring_degree, residual) {
        (n, 0) if n >= 4096 => (vec![50], None),
        (4096, 1) => (vec![36, 36], Some(37)),
        (8192, 1) => (vec![52, 52], Some(60)),
        (8192, 2 | 3) => (vec![52, 52, 52], Some(60)),
        (16384, 1) => (vec![52, 52], Some(60)),
        (16384, 2) => (vec![52, 52, 52], Some(60)),
        (16384, r @ 3..=5) => (vec![54; r + 1], Some(60)),
        _ => return None,
    };
    Some(entry)
}

pub fn params_for_epsilon(ctx: &Context, epsilon: usize) -> Result<HeParams> {
    if epsilon > ctx.d() {
        return Err(CoreError::InvalidParams(format!("ε = {epsilon} exceeds d = {}", ctx.d())));
    }
    let residual = ctx.d() - epsilon;
    let (q, sp) = parameter_table(ctx.ring_degree, residual, ctx.toy)
        .ok_or(CoreError::NoParameterSet { n: ctx.ring_degree, depth: residual })?;
    let security = if ctx.toy { TOY_SECURITY } else { 128 };
    Ok(HeParams::from_bit_sizes(ctx.ring_degree, &q, sp, security)?)
}

/// Operations the answer circuit performs for residual dimensions `dims[epsilon..]`.
pub fn answer_circuit(ctx: &Context, epsilon: usize) -> EvalCircuit {
    let residual = &ctx.dims[epsilon..];
    let mut circuit = EvalCircuit::empty();
    if residual.len() >= 2 {
        circuit = circuit.with_relinearization();
    }
    if let Some(levels) = residual.iter().map(|&k| expansion_levels(k)).max() {
        circuit = circuit.with_expansion(ctx.ring_degree, levels);
    }
    circuit
}

/// Content hash of a serialized profile.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProfileId(pub [u8; 32]);

impl ProfileId {
    pub fn of(bytes: &[u8]) -> Self {
        ProfileId(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        if s.len() != 64 || !s.is_ascii() {
            return Err(CoreError::Malformed(format!("profile id {s:?}")));
        }
        let mut out = [0u8; 32];
        for (i, b) in out.iter_mut().enumerate() {
            *b = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|_| CoreError::Malformed(format!("profile id {s:?}")))?;
        }
        Ok(ProfileId(out))
    }
}

impl fmt::Display for ProfileId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for ProfileId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ProfileId({})", &self.to_hex()[..16])
    }
}

/// Client bundle uploaded once per (geometry, ε): parameters and evaluation keys.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Profile {
    pub epsilon: usize,
    pub dims: Vec<usize>,
    pub params: HeParams,
    pub evk: EvalKeys,
}

impl Profile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(FORMAT_VERSION);
        w.u8(self.epsilon as u8);
        w.u8(self.dims.len() as u8);
        for &k in &self.dims {
            w.u32(k as u32);
        }
        w.bytes(&self.params.to_bytes());
        w.bytes(&self.evk.to_bytes());
        w.finish()
    }

    pub fn id(&self) -> ProfileId {
        ProfileId::of(&self.to_bytes())
    }

    /// Parses a profile and builds the evaluator for its parameters.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, Arc<Bfv>)> {
        let mut r = Reader::new(bytes);
        let version = r.u8()?;
        if version != FORMAT_VERSION {
            return Err(CoreError::Malformed(format!("profile format version {version}")));
        }
        let epsilon = r.u8()? as usize;
        let d = r.u8()? as usize;
        let dims = (0..d).map(|_| r.u32().map(|k| k as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        let params = HeParams::from_bytes(r.bytes()?)?;
        let bfv = Bfv::new(&params)?;
        let evk = bfv.eval_keys_from_bytes(r.bytes()?)?;
        r.expect_end()?;
        if epsilon > d {
            return Err(CoreError::Malformed(format!("profile ε = {epsilon} exceeds d = {d}")));
        }
        Ok((Profile { epsilon, dims, params, evk }, bfv))
    }

    /// Whether the profile can serve queries against `ctx`.
    pub fn check_compatible(&self, ctx: &Context) -> Result<()> {
        if self.dims != ctx.dims {
            return Err(CoreError::ProfileMismatch(format!("profile dims {:?}, context {:?}", self.dims, ctx.dims)));
        }
        if self.params.ring_degree != ctx.ring_degree {
            return Err(CoreError::ProfileMismatch(format!(
                "profile ring degree {}, context {}",
                self.params.ring_degree, ctx.ring_degree
            )));
        }
        if self.params.is_toy() != ctx.toy {
            return Err(CoreError::ProfileMismatch("toy mode disagrees".into()));
        }
        Ok(())
    }
}

/// Runs key generation for leakage parameter ε against `ctx`.
pub fn profile_generation<R: Rng + CryptoRng + ?Sized>(
    ctx: &Context,
    epsilon: usize,
    rng: &mut R,
) -> Result<(SecretKey, Profile, Arc<Bfv>)> {
    let params = params_for_epsilon(ctx, epsilon)?;
    let bfv = Bfv::new(&params)?;
    let sk = bfv.keygen(rng);
    let evk = bfv.gen_evk(&sk, &answer_circuit(ctx, epsilon), rng)?;
    let profile = Profile { epsilon, dims: ctx.dims.clone(), params, evk };
    Ok((sk, profile, bfv))
}

/// A parsed, cached profile with its evaluator.
#[derive(Debug)]
pub struct LoadedProfile {
    pub id: ProfileId,
    pub profile: Profile,
    pub bfv: Arc<Bfv>,
    pub size_bytes: usize,
}

/// Content-addressed profile store: concurrent reads, atomic inserts.
#[derive(Debug, Default)]
pub struct ProfileCache {
    profiles: RwLock<HashMap<ProfileId, Arc<LoadedProfile>>>,
    evaluators: Mutex<HashMap<u64, Arc<Bfv>>>,
    hits: AtomicU64,
    inserts: AtomicU64,
}

impl ProfileCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores a serialized profile. Returns its id and whether it was already cached.
    pub fn put(&self, bytes: &[u8]) -> Result<(ProfileId, bool)> {
        let id = ProfileId::of(bytes);
        if self.profiles.read().contains_key(&id) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok((id, true));
        }
        let (profile, fresh) = Profile::from_bytes(bytes)?;
        let bfv = Arc::clone(self.evaluators.lock().entry(fresh.params_id()).or_insert(fresh));
        let loaded = Arc::new(LoadedProfile { id, profile, bfv, size_bytes: bytes.len() });
        let mut map = self.profiles.write();
        if map.contains_key(&id) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok((id, true));
        }
        map.insert(id, loaded);
        self.inserts.fetch_add(1, Ordering::Relaxed);
        Ok((id, false))
    }

    pub fn get(&self, id: &ProfileId) -> Result<Arc<LoadedProfile>> {
        self.profiles.read().get(id).cloned().ok_or_else(|| CoreError::NotFound(id.to_hex()))
    }

    pub fn contains(&self, id: &ProfileId) -> bool {
        self.profiles.read().contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.profiles.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Puts of an already-cached profile.
    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn inserts(&self) -> u64 {
        self.inserts.load(Ordering::Relaxed)
    }
}
