use std::collections::{HashMap, HashSet};
use std::net::ToSocketAddrs;
use std::time::{Duration, Instant};

use p3li5_icf::wire::ErrorCode;
use p3li5_icf::{IcfClient, IcfError};
use rand::rngs::StdRng;
use rand::SeedableRng;
use sparsewpir_core::{
    extract, leakage_report, profile_generation, query, Context, IcfEvent, KeywordType, LeakageReport, ProfileId, WpirAnswer,
};

use crate::capture::Capture;
use crate::error::{LeaError, Result};
use crate::keystore::{slot, KeyStore, Session};

#[derive(Debug, Clone)]
pub struct Resolution {
    pub events: Vec<IcfEvent>,
    /// Context the successful query was built for.
    pub context: Context,
    /// Queries sent, including ones refused for a stale context.
    pub attempts: usize,
    pub uploaded_profile: bool,
    pub query_bytes: usize,
    pub answer_bytes: usize,
    pub elapsed: Duration,
}

/// Drives the agreement and retrieval phases over one server connection.
pub struct LeaClient {
    conn: IcfClient,
    store: KeyStore,
    rng: StdRng,
    contexts: HashMap<KeywordType, Context>,
    sessions: HashMap<String, Session>,
    uploaded: HashSet<ProfileId>,
    max_attempts: usize,
}

impl LeaClient {
    pub fn connect(addr: impl ToSocketAddrs, store: KeyStore) -> Result<Self> {
        Ok(Self::new(IcfClient::connect(addr)?, store, StdRng::from_os_rng()))
    }

    pub fn new(conn: IcfClient, store: KeyStore, rng: StdRng) -> Self {
        LeaClient {
            conn,
            store,
            rng,
            contexts: HashMap::new(),
            sessions: HashMap::new(),
            uploaded: HashSet::new(),
            max_attempts: 2,
        }
    }

    pub fn connection(&mut self) -> &mut IcfClient {
        &mut self.conn
    }

    pub fn store(&self) -> &KeyStore {
        &self.store
    }

    /// The last context seen for `kind`, fetched on first use.
    pub fn context(&mut self, kind: KeywordType) -> Result<Context> {
        if let Some(c) = self.contexts.get(&kind) {
            return Ok(c.clone());
        }
        self.refresh_context(kind)
    }

    pub fn refresh_context(&mut self, kind: KeywordType) -> Result<Context> {
        let c = self.conn.get_context(kind)?;
        self.contexts.insert(kind, c.clone());
        Ok(c)
    }

    /// Loads or generates the profile for `(ctx, eps)`; returns its slot.
    fn ensure_session(&mut self, ctx: &Context, eps: usize) -> Result<String> {
        let key = slot(ctx, eps);
        if !self.sessions.contains_key(&key) {
            let s = match self.store.load(ctx, eps)? {
                Some(s) => s,
                None => {
                    let start = Instant::now();
                    let (sk, profile, bfv) = profile_generation(ctx, eps, &mut self.rng)?;
                    let s = Session { id: profile.id(), profile, sk, bfv };
                    self.store.save(ctx, &s)?;
                    log::info!("generated profile {} for {key} in {:.1?}", s.id, start.elapsed());
                    s
                }
            };
            self.sessions.insert(key.clone(), s);
        }
        Ok(key)
    }

    /// Uploads the profile once per connection; returns whether bytes were sent.
    fn ensure_uploaded(&mut self, key: &str) -> Result<bool> {
        let s = &self.sessions[key];
        if self.uploaded.contains(&s.id) {
            return Ok(false);
        }
        let (id, _) = self.conn.put_profile(&s.profile.to_bytes())?;
        if id != s.id {
            return Err(LeaError::KeyStore(format!("server stored profile as {id}, expected {}", s.id)));
        }
        self.uploaded.insert(id);
        Ok(true)
    }

    pub fn resolve(&mut self, capture: &Capture, eps: usize, kind: KeywordType) -> Result<Resolution> {
        let w = capture.keyword(kind).ok_or(LeaError::KeywordMissing(kind))?.to_owned();
        self.resolve_keyword(kind, &w, eps)
    }

    /// Retrieves every event whose identifier of type `kind` equals `w`. A stale context is
    /// refreshed and the query rebuilt once.
    pub fn resolve_keyword(&mut self, kind: KeywordType, w: &str, eps: usize) -> Result<Resolution> {
        let start = Instant::now();
        let mut uploaded_profile = false;
        let mut reuploaded = false;
        let mut attempts = 0;
        while attempts < self.max_attempts {
            let ctx = self.context(kind)?;
            if eps > ctx.d() {
                return Err(LeaError::EpsilonOutOfRange { eps, d: ctx.d() });
            }
            let key = self.ensure_session(&ctx, eps)?;
            uploaded_profile |= self.ensure_uploaded(&key)?;
            let s = &self.sessions[&key];
            let (q, _) = query(&ctx, &s.profile, &s.bfv, &s.sk, kind, w, &mut self.rng)?;
            let qb = q.to_bytes();
            attempts += 1;
            match self.conn.query(kind, &qb) {
                Ok(ab) => {
                    let a = WpirAnswer::from_bytes(&ab, &s.bfv)?;
                    let events = extract(&a, &s.bfv, &s.sk, &ctx, kind, w)?;
                    return Ok(Resolution {
                        events,
                        context: ctx,
                        attempts,
                        uploaded_profile,
                        query_bytes: qb.len(),
                        answer_bytes: ab.len(),
                        elapsed: start.elapsed(),
                    });
                }
                Err(IcfError::ContextMismatch(fresh)) => {
                    log::info!("context for {kind} moved to version {}; retrying", fresh.version);
                    self.contexts.insert(kind, *fresh);
                }
                Err(IcfError::Remote { code: ErrorCode::UnknownProfile, .. }) if !reuploaded => {
                    // The server lost the profile, e.g. after a restart.
                    self.uploaded.remove(&s.id);
                    reuploaded = true;
                    attempts -= 1;
                }
                Err(e) => return Err(e.into()),
            }
        }
        Err(LeaError::RetryExhausted(self.max_attempts))
    }

    /// Leakage of a query at `eps` given the server's current live event count.
    pub fn leakage(&mut self, kind: KeywordType, eps: usize) -> Result<LeakageReport> {
        let ctx = self.context(kind)?;
        let live = self.conn.stats()?.live_events.max(1);
        Ok(leakage_report(live, &ctx.geometry()?, eps)?)
    }
}
