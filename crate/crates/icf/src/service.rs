use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::net::{SocketAddr, ToSocketAddrs};
use std::sync::atomic::Ordering;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use sparsewpir_core::{
    answer, context_generation, AnswerOptions, Context, CoreError, DbSnapshot, HyperDb, IcfEvent, KeywordType, ProfileCache,
    ProfileId, Retention, WpirQuery,
};

use crate::client::IcfClient;
use crate::config::{ServerConfig, Strategy};
use crate::error::{IcfError, Result};
use crate::metrics::{Counters, Stats};
use crate::wire::{ErrorCode, Request, Response};

const PEER_TIMEOUT: Duration = Duration::from_secs(2);

struct SingleHash {
    db: HyperDb,
    /// Events without the currently indexed keyword, kept for the next re-encode.
    unindexed: Vec<(DateTime<Utc>, IcfEvent)>,
    past_resizes: u64,
}

struct MultiHash {
    indexes: Vec<HyperDb>,
    expiries: BinaryHeap<Reverse<DateTime<Utc>>>,
}

enum Backend {
    Single(Mutex<SingleHash>),
    Multi(Mutex<MultiHash>),
    Distributed(Vec<(KeywordType, SocketAddr)>),
}

/// The cache service behind the wire protocol.
pub struct Icf {
    config: ServerConfig,
    backend: Backend,
    profiles: ProfileCache,
    counters: Counters,
}

impl Icf {
    pub fn new(config: ServerConfig) -> Result<Self> {
        config.validate()?;
        let backend = match config.strategy {
            Strategy::Distributed => {
                let peers = config
                    .keyword_types
                    .iter()
                    .zip(&config.peers)
                    .map(|(&k, addr)| {
                        let sock = addr
                            .to_socket_addrs()?
                            .next()
                            .ok_or_else(|| IcfError::Config(format!("peer address {addr:?} does not resolve")))?;
                        Ok((k, sock))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Backend::Distributed(peers)
            }
            strategy => {
                let ctx = context_generation(
                    config.provisioned,
                    config.record_bytes,
                    config.d,
                    config.ring_degree,
                    config.theta,
                    config.toy,
                )?;
                let new_db = |k| HyperDb::new(k, ctx.clone(), config.retention(), config.resize_policy());
                if strategy == Strategy::SingleHash {
                    let db = new_db(config.keyword_types[0])?;
                    Backend::Single(Mutex::new(SingleHash { db, unindexed: Vec::new(), past_resizes: 0 }))
                } else {
                    let indexes = config.keyword_types.iter().map(|&k| new_db(k)).collect::<std::result::Result<_, _>>()?;
                    Backend::Multi(Mutex::new(MultiHash { indexes, expiries: BinaryHeap::new() }))
                }
            }
        };
        log::info!("cache service up: {:?} over {:?}", config.strategy, config.keyword_types);
        Ok(Icf { config, backend, profiles: ProfileCache::new(), counters: Counters::default() })
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    pub fn profiles(&self) -> &ProfileCache {
        &self.profiles
    }

    fn check_kind(&self, kind: KeywordType) -> Result<()> {
        if self.config.keyword_types.contains(&kind) {
            Ok(())
        } else {
            Err(IcfError::Remote { code: ErrorCode::UnsupportedKeyword, message: format!("{kind} is not served here") })
        }
    }

    fn peer(&self, kind: KeywordType) -> Result<IcfClient> {
        let Backend::Distributed(peers) = &self.backend else { unreachable!("peer lookup on a local backend") };
        let addr = peers.iter().find(|(k, _)| *k == kind).map(|(_, a)| *a).expect("kind checked");
        IcfClient::connect_timeout(&addr, PEER_TIMEOUT).map_err(|e| IcfError::PeerUnreachable { kind, reason: e.to_string() })
    }

    /// The current context of the index serving `kind`.
    pub fn context(&self, kind: KeywordType) -> Result<Context> {
        self.check_kind(kind)?;
        match &self.backend {
            Backend::Single(s) => Ok(s.lock().db.context().clone()),
            Backend::Multi(m) => Ok(index(&m.lock().indexes, kind).context().clone()),
            Backend::Distributed(_) => self.peer(kind)?.get_context(kind).map_err(|e| reachability(kind, e)),
        }
    }

    pub fn put_profile(&self, bytes: &[u8]) -> Result<(ProfileId, bool)> {
        let Backend::Distributed(peers) = &self.backend else {
            return Ok(self.profiles.put(bytes)?);
        };
        let mut acked = None;
        let mut all_cached = true;
        let mut last_err = None;
        for &(kind, _) in peers {
            match self.peer(kind).and_then(|mut c| c.put_profile(bytes)) {
                Ok((id, cached)) => {
                    all_cached &= cached;
                    acked = Some(id);
                }
                Err(e @ IcfError::Remote { .. }) => return Err(e),
                Err(e) => {
                    log::warn!("profile upload to the {kind} peer failed: {e}");
                    last_err = Some(reachability(kind, e));
                }
            }
        }
        match (acked, last_err) {
            (Some(id), _) => Ok((id, all_cached)),
            (None, Some(e)) => Err(e),
            (None, None) => Err(IcfError::Config("no peers".into())),
        }
    }

    fn snapshot(&self, kind: KeywordType) -> Result<DbSnapshot> {
        match &self.backend {
            Backend::Single(s) => {
                let mut s = s.lock();
                if s.db.keyword_type() != kind {
                    s.reencode(kind)?;
                    Counters::bump(&self.counters.re_encodes);
                }
                Ok(s.db.snapshot()?)
            }
            Backend::Multi(m) => Ok(index_mut(&mut m.lock().indexes, kind).snapshot()?),
            Backend::Distributed(_) => unreachable!("distributed queries are forwarded"),
        }
    }

    /// Answers a serialized query against the index of `kind`.
    pub fn query(&self, kind: KeywordType, bytes: &[u8]) -> Result<Vec<u8>> {
        self.check_kind(kind)?;
        if let Backend::Distributed(_) = self.backend {
            return self.peer(kind)?.query(kind, bytes).map_err(|e| reachability(kind, e));
        }
        let res = self.answer_local(kind, bytes);
        Counters::bump(&self.counters.queries);
        match &res {
            Err(IcfError::Core(CoreError::ContextMismatch { .. })) => Counters::bump(&self.counters.context_mismatches),
            Err(_) => Counters::bump(&self.counters.query_errors),
            Ok(_) => {}
        }
        res
    }

    fn answer_local(&self, kind: KeywordType, bytes: &[u8]) -> Result<Vec<u8>> {
        let id = WpirQuery::peek_profile_id(bytes)?;
        let loaded = self.profiles.get(&id).map_err(|_| CoreError::UnknownProfile(id.to_hex()))?;
        let q = WpirQuery::from_bytes(bytes, &loaded.bfv)?;
        let snap = self.snapshot(kind)?;
        let start = Instant::now();
        let (ans, _) = answer(&snap, &q, &loaded, AnswerOptions { parallel: self.config.parallel_answer })?;
        self.counters.answer_us.fetch_add(start.elapsed().as_micros() as u64, Ordering::Relaxed);
        Ok(ans.to_bytes())
    }

    /// Adds an event to every index; returns whether any index was resized.
    pub fn ingest(&self, ev: &IcfEvent) -> Result<bool> {
        ev.validate()?;
        let resized = match &self.backend {
            Backend::Single(s) => s.lock().ingest(ev)?,
            Backend::Multi(m) => {
                let mut m = m.lock();
                let mut resized = false;
                let mut placed = false;
                for db in &mut m.indexes {
                    if ev.keyword(db.keyword_type()).is_some() {
                        resized |= db.ingest(ev)?;
                        placed = true;
                    }
                }
                if !placed {
                    return Err(CoreError::MissingKeyword(m.indexes[0].keyword_type()).into());
                }
                let expiry = m.indexes[0].retention().expiry(ev);
                m.expiries.push(Reverse(expiry));
                resized
            }
            Backend::Distributed(peers) => {
                let mut resized = false;
                let mut first_err = None;
                for &(kind, _) in peers {
                    match self.peer(kind).and_then(|mut c| c.ingest(ev)) {
                        Ok(r) => resized |= r,
                        Err(e) => {
                            first_err.get_or_insert(reachability(kind, e));
                        }
                    }
                }
                if let Some(e) = first_err {
                    return Err(e);
                }
                resized
            }
        };
        Counters::bump(&self.counters.ingested);
        Ok(resized)
    }

    pub fn ingest_json(&self, line: &str) -> Result<bool> {
        self.ingest(&IcfEvent::from_json(line)?)
    }

    /// Evicts expired events and applies the shrink policy. Returns the number of events evicted.
    pub fn tick(&self, now: DateTime<Utc>) -> Result<usize> {
        match &self.backend {
            Backend::Single(s) => {
                let mut s = s.lock();
                let before = s.unindexed.len();
                s.unindexed.retain(|(exp, _)| *exp > now);
                Ok(before - s.unindexed.len() + s.db.tick(now)?.evicted)
            }
            Backend::Multi(m) => {
                let mut m = m.lock();
                for db in &mut m.indexes {
                    db.tick(now)?;
                }
                let mut evicted = 0;
                while m.expiries.peek().is_some_and(|Reverse(t)| *t <= now) {
                    m.expiries.pop();
                    evicted += 1;
                }
                Ok(evicted)
            }
            Backend::Distributed(_) => Ok(0),
        }
    }

    /// Rebuilds the index of `kind` for a new provisioned size, bumping its context version.
    pub fn force_resize(&self, kind: KeywordType, provisioned: u64) -> Result<Context> {
        self.check_kind(kind)?;
        match &self.backend {
            Backend::Single(s) => {
                let mut s = s.lock();
                if s.db.keyword_type() != kind {
                    s.reencode(kind)?;
                    Counters::bump(&self.counters.re_encodes);
                }
                Ok(s.db.resize(provisioned)?.clone())
            }
            Backend::Multi(m) => Ok(index_mut(&mut m.lock().indexes, kind).resize(provisioned)?.clone()),
            Backend::Distributed(_) => Err(IcfError::Config("resize the peers directly".into())),
        }
    }

    /// Plaintext lookup on the local index of `kind`, for verification.
    pub fn lookup(&self, kind: KeywordType, w: &str) -> Result<Vec<IcfEvent>> {
        self.check_kind(kind)?;
        match &self.backend {
            Backend::Single(s) => {
                let mut s = s.lock();
                if s.db.keyword_type() != kind {
                    s.reencode(kind)?;
                    Counters::bump(&self.counters.re_encodes);
                }
                Ok(s.db.lookup(w))
            }
            Backend::Multi(m) => Ok(index(&m.lock().indexes, kind).lookup(w)),
            Backend::Distributed(_) => Err(IcfError::Config("lookup is local only".into())),
        }
    }

    pub fn stats(&self) -> Stats {
        let c = &self.counters;
        let mut s = Stats {
            queries: Counters::get(&c.queries),
            query_errors: Counters::get(&c.query_errors),
            context_mismatches: Counters::get(&c.context_mismatches),
            answer_ms_total: Counters::get(&c.answer_us) as f64 / 1000.0,
            re_encodes: Counters::get(&c.re_encodes),
            ingested: Counters::get(&c.ingested),
            profiles: self.profiles.len() as u64,
            profile_hits: self.profiles.hits(),
            ..Stats::default()
        };
        match &self.backend {
            Backend::Single(h) => {
                let h = h.lock();
                s.live_events = (h.db.live() + h.unindexed.len()) as u64;
                s.stored_records = h.db.live() as u64;
                s.resizes = h.past_resizes + h.db.resizes();
                s.max_cell_load = h.db.max_cell_load() as u64;
            }
            Backend::Multi(m) => {
                let m = m.lock();
                s.live_events = m.expiries.len() as u64;
                for db in &m.indexes {
                    s.stored_records += db.live() as u64;
                    s.resizes += db.resizes();
                    s.max_cell_load = s.max_cell_load.max(db.max_cell_load() as u64);
                }
            }
            Backend::Distributed(peers) => {
                for &(kind, _) in peers {
                    match self.peer(kind).and_then(|mut p| p.stats()) {
                        Ok(p) => s.merge(&p),
                        Err(e) => log::warn!("no stats from the {kind} peer: {e}"),
                    }
                }
            }
        }
        s
    }

    /// Serves one decoded request.
    pub fn handle(&self, req: Request) -> Response {
        let res = match req {
            Request::GetContext(kind) => self.context(kind).map(Response::Context),
            Request::PutProfile(bytes) => self.put_profile(&bytes).map(|(id, cached)| Response::ProfileAck { id, cached }),
            Request::Query { kind, query } => self.query(kind, &query).map(Response::Answer),
            Request::Ingest(line) => self.ingest_json(&line).map(|resized| Response::Ingested { resized }),
            Request::Stats => Ok(Response::Stats(serde_json::to_string(&self.stats()).expect("stats serialize"))),
        };
        res.unwrap_or_else(error_response)
    }
}

impl SingleHash {
    fn ingest(&mut self, ev: &IcfEvent) -> Result<bool> {
        if ev.keyword(self.db.keyword_type()).is_some() {
            return Ok(self.db.ingest(ev)?);
        }
        self.unindexed.push((self.db.retention().expiry(ev), ev.clone()));
        Ok(false)
    }

    /// Replaces the index with one keyed on `kind`, keeping the geometry unless it must grow.
    fn reencode(&mut self, kind: KeywordType) -> Result<()> {
        let retention: Retention = self.db.retention();
        let mut next = HyperDb::new(kind, self.db.context().clone(), retention, self.db.policy())?;
        let mut unindexed = Vec::new();
        let all: Vec<IcfEvent> = self.db.events().chain(self.unindexed.iter().map(|(_, e)| e.clone())).collect();
        for ev in all {
            if ev.keyword(kind).is_some() {
                next.ingest(&ev)?;
            } else {
                unindexed.push((retention.expiry(&ev), ev));
            }
        }
        log::info!("re-encoded {} events from {} to {kind}", next.live(), self.db.keyword_type());
        self.past_resizes += self.db.resizes();
        self.db = next;
        self.unindexed = unindexed;
        Ok(())
    }
}

fn index(indexes: &[HyperDb], kind: KeywordType) -> &HyperDb {
    indexes.iter().find(|d| d.keyword_type() == kind).expect("kind checked")
}

fn index_mut(indexes: &mut [HyperDb], kind: KeywordType) -> &mut HyperDb {
    indexes.iter_mut().find(|d| d.keyword_type() == kind).expect("kind checked")
}

/// Connection failures on a forwarded request mean the peer is gone.
fn reachability(kind: KeywordType, e: IcfError) -> IcfError {
    match e {
        IcfError::Io(io) => IcfError::PeerUnreachable { kind, reason: io.to_string() },
        other => other,
    }
}

pub(crate) fn error_response(e: IcfError) -> Response {
    let (code, context) = match &e {
        IcfError::ContextMismatch(c) => (ErrorCode::ContextMismatch, Some((**c).clone())),
        IcfError::Core(CoreError::ContextMismatch { current, .. }) => (ErrorCode::ContextMismatch, Some((**current).clone())),
        IcfError::Core(CoreError::UnknownProfile(_) | CoreError::NotFound(_)) => (ErrorCode::UnknownProfile, None),
        IcfError::Core(CoreError::ProfileMismatch(_)) => (ErrorCode::ProfileMismatch, None),
        IcfError::Core(
            CoreError::Malformed(_)
            | CoreError::HintOutOfRange { .. }
            | CoreError::MissingKeyword(_)
            | CoreError::RecordTooLarge { .. }
            | CoreError::He(_),
        )
        | IcfError::Protocol(_) => (ErrorCode::Malformed, None),
        IcfError::Remote { code, .. } => (*code, None),
        IcfError::PeerUnreachable { .. } => (ErrorCode::PeerUnreachable, None),
        _ => (ErrorCode::Internal, None),
    };
    let message = match &e {
        IcfError::Remote { message, .. } => message.clone(),
        IcfError::PeerUnreachable { kind, reason } => format!("{kind}: {reason}"),
        other => other.to_string(),
    };
    Response::Error { code, message, context }
}
