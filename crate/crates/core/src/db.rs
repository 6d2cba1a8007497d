//! Keyword-addressed hyper-rectangle of cells, each packed into at most θ plaintexts.

use std::collections::BTreeSet;
use std::ops::Range;
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use sha2::{Digest, Sha256};
use sparsewpir_he::{PlainPoly, Plaintext, RecordCodec};

use crate::agreement::{context_generation, Context};
use crate::error::{CoreError, Result};
use crate::event::{EventKind, IcfEvent, KeywordType};

const KEYWORD_DOMAIN: &[u8] = b"sparsewpir/keyword/v1";

/// Failure probability targeted by [`estimate_worst_collisions`].
pub const MAX_LOAD_FAILURE_PROBABILITY: f64 = 1e-3;

/// Shape of the database: `dims[0]` is the most significant coordinate.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Geometry {
    pub dims: Vec<usize>,
    pub theta: usize,
    pub records_per_plaintext: usize,
}

impl Geometry {
    pub fn d(&self) -> usize {
        self.dims.len()
    }

    pub fn cells(&self) -> usize {
        self.dims.iter().product()
    }

    /// Records a cell can hold, `θ·M`.
    pub fn cell_capacity(&self) -> usize {
        self.theta * self.records_per_plaintext
    }

    /// Cells in the partition selected by a hint of `hint_len` coordinates.
    pub fn partition_cells(&self, hint_len: usize) -> usize {
        self.dims[hint_len..].iter().product()
    }

    /// Number of partitions for a hint of `hint_len` coordinates.
    pub fn partitions(&self, hint_len: usize) -> usize {
        self.dims[..hint_len].iter().product()
    }

    pub fn linear_index(&self, addr: &CellAddress) -> usize {
        addr.coords.iter().zip(&self.dims).fold(0, |acc, (&c, &k)| acc * k + c as usize)
    }

    pub fn address(&self, mut index: usize) -> CellAddress {
        let mut coords = vec![0u32; self.dims.len()];
        for (c, &k) in coords.iter_mut().zip(&self.dims).rev() {
            *c = (index % k) as u32;
            index /= k;
        }
        CellAddress { coords }
    }

    /// Contiguous range of linear cell indices whose leading coordinates equal `hint`.
    pub fn partition(&self, hint: &[u32]) -> Result<Range<usize>> {
        if hint.len() > self.dims.len() {
            return Err(CoreError::Malformed(format!("hint of {} coordinates for d={}", hint.len(), self.d())));
        }
        let mut prefix = 0usize;
        for (dim, (&h, &k)) in hint.iter().zip(&self.dims).enumerate() {
            if h as usize >= k {
                return Err(CoreError::HintOutOfRange { dim, value: h, size: k });
            }
            prefix = prefix * k + h as usize;
        }
        let size = self.partition_cells(hint.len());
        Ok(prefix * size..(prefix + 1) * size)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellAddress {
    pub coords: Vec<u32>,
}

/// Hashes a keyword to a cell. Coordinate `i` is the `i`-th 8-byte chunk of
/// `SHA-256(domain || type tag || block || w)`, reduced mod `dims[i]`.
pub fn map_keyword(kind: KeywordType, w: &str, dims: &[usize]) -> CellAddress {
    let mut coords = Vec::with_capacity(dims.len());
    for (block, chunk) in dims.chunks(4).enumerate() {
        let digest = Sha256::new()
            .chain_update(KEYWORD_DOMAIN)
            .chain_update([kind.tag()])
            .chain_update((block as u32).to_le_bytes())
            .chain_update(w.as_bytes())
            .finalize();
        for (i, &k) in chunk.iter().enumerate() {
            let v = u64::from_le_bytes(digest[8 * i..8 * i + 8].try_into().unwrap());
            coords.push((v % k as u64) as u32);
        }
    }
    CellAddress { coords }
}

/// High-probability bound on the fullest of `c` bins after throwing `n` balls:
/// `P(max load > M') <= 1e-3`, from a Bernstein tail bound per bin and a union bound.
pub fn estimate_worst_collisions(n: u64, c: u64) -> u64 {
    assert!(c >= 1, "at least one bin");
    if n == 0 {
        return 0;
    }
    if c == 1 {
        return n;
    }
    let mean = n as f64 / c as f64;
    let l = (c as f64 / MAX_LOAD_FAILURE_PROBABILITY).ln();
    let bound = mean + l / 3.0 + ((l / 3.0).powi(2) + 2.0 * mean * l).sqrt();
    let floor = n.div_ceil(c);
    (bound.ceil() as u64).clamp(floor, n)
}

/// Asymptotic expected maximum load (Raab and Steger): `N/C + sqrt(2 (N/C) ln C)` when
/// heavily loaded, `ln C / ln ln C` scaled by 3 otherwise. Typical value, not a bound.
pub fn expected_max_load(n: u64, c: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    if c <= 2 {
        return n as f64;
    }
    let mean = n as f64 / c as f64;
    let ln_c = (c as f64).ln();
    if mean >= ln_c {
        mean + (2.0 * mean * ln_c).sqrt()
    } else {
        3.0 * ln_c / ln_c.ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Retention {
    pub t_max: Duration,
    pub t_short: Duration,
}

impl Default for Retention {
    fn default() -> Self {
        Retention { t_max: Duration::minutes(54), t_short: Duration::minutes(27) }
    }
}

impl Retention {
    /// Instant after which `ev` must no longer be served.
    pub fn expiry(&self, ev: &IcfEvent) -> DateTime<Utc> {
        let hard = ev.assoc_start + self.t_max;
        let end = match (ev.assoc_end, ev.event_kind) {
            (Some(end), _) => Some(end),
            (None, EventKind::Disassociation) => Some(ev.assoc_start),
            (None, EventKind::Association) => None,
        };
        end.map_or(hard, |e| hard.min(e + self.t_short))
    }
}

/// Over-provisioning hysteresis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResizePolicy {
    /// Grow (multiply provisioned size by `2^d`) when live records exceed the provisioned size.
    pub auto_grow: bool,
    /// Shrink when live records stay below this fraction of the provisioned size for `t_max`.
    pub shrink_below: f64,
    /// Provisioned size is never shrunk below this value.
    pub shrink_floor: u64,
}

impl Default for ResizePolicy {
    fn default() -> Self {
        ResizePolicy { auto_grow: true, shrink_below: 0.25, shrink_floor: 1 }
    }
}

#[derive(Debug, Clone)]
struct Entry {
    keyword: Box<str>,
    assoc_start: DateTime<Utc>,
    expires_at: DateTime<Utc>,
    // keyword tag followed by the event bytes
    record: Box<[u8]>,
}

/// A cell's plaintexts. Trailing zero plaintexts up to θ are implicit.
#[derive(Debug, Clone)]
pub struct PackedCell {
    pub records: usize,
    pub plaintexts: Vec<PlainPoly>,
}

/// Immutable view of the database used to answer queries.
#[derive(Debug, Clone)]
pub struct DbSnapshot {
    context: Context,
    geometry: Geometry,
    kind: KeywordType,
    cells: Arc<Vec<Option<Arc<PackedCell>>>>,
}

impl DbSnapshot {
    pub fn context(&self) -> &Context {
        &self.context
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn keyword_type(&self) -> KeywordType {
        self.kind
    }

    pub fn cell(&self, index: usize) -> Option<&PackedCell> {
        self.cells[index].as_deref()
    }

    /// Plaintext `p` of cell `index`, `None` when it is all-zero padding.
    pub fn plaintext(&self, index: usize, p: usize) -> Option<&PlainPoly> {
        self.cells[index].as_ref().and_then(|c| c.plaintexts.get(p))
    }

    pub fn records_in(&self, range: Range<usize>) -> usize {
        self.cells[range].iter().flatten().map(|c| c.records).sum()
    }

    pub fn live(&self) -> usize {
        self.records_in(0..self.cells.len())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TickReport {
    pub evicted: usize,
    pub resized: bool,
}

/// The cache: single writer, snapshot readers.
#[derive(Debug)]
pub struct HyperDb {
    kind: KeywordType,
    context: Context,
    geometry: Geometry,
    codec: RecordCodec,
    retention: Retention,
    policy: ResizePolicy,
    cells: Vec<Vec<Entry>>,
    packed: Arc<Vec<Option<Arc<PackedCell>>>>,
    dirty: BTreeSet<usize>,
    live: usize,
    low_since: Option<DateTime<Utc>>,
    resizes: u64,
}

impl HyperDb {
    pub fn new(kind: KeywordType, context: Context, retention: Retention, policy: ResizePolicy) -> Result<Self> {
        let geometry = context.geometry()?;
        let codec = context.codec()?;
        let cells = geometry.cells();
        Ok(HyperDb {
            kind,
            context,
            geometry,
            codec,
            retention,
            policy,
            cells: vec![Vec::new(); cells],
            packed: Arc::new(vec![None; cells]),
            dirty: BTreeSet::new(),
            live: 0,
            low_since: None,
            resizes: 0,
        })
    }

    pub fn keyword_type(&self) -> KeywordType {
        self.kind
    }

    pub fn context(&self) -> &Context {
        &self.context
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn retention(&self) -> Retention {
        self.retention
    }

    pub fn policy(&self) -> ResizePolicy {
        self.policy
    }

    pub fn live(&self) -> usize {
        self.live
    }

    pub fn resizes(&self) -> u64 {
        self.resizes
    }

    pub fn max_cell_load(&self) -> usize {
        self.cells.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Encoded record: keyword tag byte followed by the event's binary form.
    pub fn encode_record(&self, ev: &IcfEvent) -> Result<Vec<u8>> {
        let mut rec = vec![self.kind.tag()];
        rec.extend(ev.to_bytes()?);
        let max = self.codec.max_record_len();
        if rec.len() > max {
            return Err(CoreError::RecordTooLarge { len: rec.len(), max });
        }
        Ok(rec)
    }

    /// Places `ev` in the cell of its indexed keyword.
    pub fn insert(&mut self, ev: &IcfEvent) -> Result<CellAddress> {
        ev.validate()?;
        let keyword = ev.keyword(self.kind).ok_or(CoreError::MissingKeyword(self.kind))?;
        let record = self.encode_record(ev)?;
        let addr = map_keyword(self.kind, keyword, &self.geometry.dims);
        let idx = self.geometry.linear_index(&addr);
        let capacity = self.geometry.cell_capacity();
        if self.cells[idx].len() >= capacity {
            return Err(CoreError::CellOverflow { cell: idx, capacity });
        }
        self.cells[idx].push(Entry {
            keyword: keyword.into(),
            assoc_start: ev.assoc_start,
            expires_at: self.retention.expiry(ev),
            record: record.into_boxed_slice(),
        });
        self.dirty.insert(idx);
        self.live += 1;
        Ok(addr)
    }

    /// Inserts under the resize policy: grows first when the insert would exceed the
    /// provisioned size, and once more if the target cell is full. Returns whether a resize happened.
    pub fn ingest(&mut self, ev: &IcfEvent) -> Result<bool> {
        let mut resized = false;
        if self.policy.auto_grow && self.live as u64 + 1 > self.context.provisioned {
            self.grow()?;
            resized = true;
        }
        match self.insert(ev) {
            Err(CoreError::CellOverflow { .. }) if self.policy.auto_grow => {
                self.grow()?;
                self.insert(ev)?;
                Ok(true)
            }
            other => other.map(|_| resized),
        }
    }

    fn grow(&mut self) -> Result<()> {
        let factor = 1u64 << self.geometry.d().min(16);
        let target = self.context.provisioned.max(1).saturating_mul(factor);
        self.resize(target).map(|_| ())
    }

    /// Removes every record past its retention window.
    pub fn evict_expired(&mut self, now: DateTime<Utc>) -> usize {
        let mut evicted = 0;
        for (idx, cell) in self.cells.iter_mut().enumerate() {
            let before = cell.len();
            cell.retain(|e| e.expires_at > now);
            if cell.len() != before {
                evicted += before - cell.len();
                self.dirty.insert(idx);
            }
        }
        self.live -= evicted;
        evicted
    }

    /// Evicts, then shrinks the geometry if it stayed under-used for a full `t_max` window.
    pub fn tick(&mut self, now: DateTime<Utc>) -> Result<TickReport> {
        let evicted = self.evict_expired(now);
        let prov = self.context.provisioned;
        let half = (prov / 2).max(self.policy.shrink_floor);
        let low = (self.live as f64) < self.policy.shrink_below * prov as f64 && half < prov;
        if !low {
            self.low_since = None;
            return Ok(TickReport { evicted, resized: false });
        }
        let since = *self.low_since.get_or_insert(now);
        if now - since < self.retention.t_max {
            return Ok(TickReport { evicted, resized: false });
        }
        self.resize(half)?;
        Ok(TickReport { evicted, resized: true })
    }

    /// Rebuilds the database for a new provisioned size; every live record is rehashed.
    /// On failure the current geometry is kept.
    pub fn resize(&mut self, provisioned: u64) -> Result<&Context> {
        let c = &self.context;
        let mut next = context_generation(provisioned, c.record_bytes, c.dims.len(), c.ring_degree, c.theta, c.toy)?;
        next.version = c.version + 1;
        let geometry = next.geometry()?;
        let capacity = geometry.cell_capacity();
        let mut cells: Vec<Vec<Entry>> = vec![Vec::new(); geometry.cells()];
        for e in self.cells.iter().flatten() {
            let idx = geometry.linear_index(&map_keyword(self.kind, &e.keyword, &geometry.dims));
            if cells[idx].len() >= capacity {
                return Err(CoreError::CellOverflow { cell: idx, capacity });
            }
            cells[idx].push(e.clone());
        }
        self.dirty = (0..cells.len()).filter(|&i| !cells[i].is_empty()).collect();
        self.packed = Arc::new(vec![None; cells.len()]);
        self.cells = cells;
        self.context = next;
        self.geometry = geometry;
        self.low_since = None;
        self.resizes += 1;
        log::info!(
            "resized {} index to {:?} (provisioned {}, version {})",
            self.kind,
            self.geometry.dims,
            self.context.provisioned,
            self.context.version
        );
        Ok(&self.context)
    }

    /// Plaintext lookup, the reference for private retrieval.
    pub fn lookup(&self, w: &str) -> Vec<IcfEvent> {
        let idx = self.geometry.linear_index(&map_keyword(self.kind, w, &self.geometry.dims));
        let mut entries: Vec<&Entry> = self.cells[idx].iter().filter(|e| &*e.keyword == w).collect();
        entries.sort_by(|a, b| (&a.keyword, a.assoc_start, &a.record).cmp(&(&b.keyword, b.assoc_start, &b.record)));
        entries.iter().map(|e| IcfEvent::from_bytes(&e.record[1..]).expect("stored records decode")).collect()
    }

    /// Every live event, in cell order.
    pub fn events(&self) -> impl Iterator<Item = IcfEvent> + '_ {
        self.cells.iter().flatten().map(|e| IcfEvent::from_bytes(&e.record[1..]).expect("stored records decode"))
    }

    /// Live records in the partition selected by `hint`.
    pub fn records_in_partition(&self, hint: &[u32]) -> Result<usize> {
        let range = self.geometry.partition(hint)?;
        Ok(self.cells[range].iter().map(Vec::len).sum())
    }

    fn pack(&self, idx: usize) -> Result<Option<PackedCell>> {
        let cell = &self.cells[idx];
        if cell.is_empty() {
            return Ok(None);
        }
        let mut order: Vec<&Entry> = cell.iter().collect();
        order.sort_by(|a, b| (&a.keyword, a.assoc_start, &a.record).cmp(&(&b.keyword, b.assoc_start, &b.record)));
        let plaintexts = order
            .chunks(self.geometry.records_per_plaintext)
            .map(|chunk| {
                let recs: Vec<&[u8]> = chunk.iter().map(|e| &*e.record).collect();
                let pt = self.codec.encode(&recs)?;
                Ok(PlainPoly::from_coefficients(pt.slots().iter().map(|&s| s as u32).collect()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Some(PackedCell { records: cell.len(), plaintexts }))
    }

    /// Exactly θ plaintexts for the cell at `addr`, zero-padded, records in canonical order.
    pub fn pack_cell(&self, addr: &CellAddress) -> Result<Vec<Plaintext>> {
        let idx = self.geometry.linear_index(addr);
        let n = self.context.ring_degree;
        let t = sparsewpir_he::plain_modulus_for(n);
        let mut out: Vec<Plaintext> = match self.pack(idx)? {
            Some(c) => c
                .plaintexts
                .iter()
                .map(|p| Plaintext::new(p.coefficients().iter().map(|&c| c as u64).collect(), t))
                .collect::<std::result::Result<_, _>>()?,
            None => Vec::new(),
        };
        out.resize(self.geometry.theta, Plaintext::zero(n));
        Ok(out)
    }

    /// Repacks changed cells and returns a consistent view; earlier snapshots are unaffected.
    pub fn snapshot(&mut self) -> Result<DbSnapshot> {
        if !self.dirty.is_empty() {
            let dirty = std::mem::take(&mut self.dirty);
            let repacked: Vec<(usize, Option<PackedCell>)> =
                dirty.into_iter().map(|i| self.pack(i).map(|p| (i, p))).collect::<Result<_>>()?;
            let cells = Arc::make_mut(&mut self.packed);
            for (i, p) in repacked {
                cells[i] = p.map(Arc::new);
            }
        }
        Ok(DbSnapshot {
            context: self.context.clone(),
            geometry: self.geometry.clone(),
            kind: self.kind,
            cells: Arc::clone(&self.packed),
        })
    }
}
