#![allow(dead_code)]

use std::sync::Arc;

use chrono::{Duration, TimeZone, Utc};
use p3li5_icf::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sparsewpir_core::he::{Bfv, SecretKey};
use sparsewpir_core::*;

pub fn event(i: u64) -> IcfEvent {
    IcfEvent {
        supi: format!("imsi-00101{i:010}"),
        suci: Some(format!("suci-0-001-01-0-0-0-{:012x}", i.wrapping_mul(0x9e37_79b9_7f4a_7c15) >> 16)),
        guti_5g: Some(format!("5g-guti-00101-cafe-{i:08x}")),
        tmsi_5g: Some(format!("{:08x}", (i as u32).wrapping_mul(2_654_435_761))),
        assoc_start: Utc.with_ymd_and_hms(2024, 5, 1, 12, 0, 0).unwrap() + Duration::seconds(i as i64),
        assoc_end: None,
        cell_id: Some(format!("cell-{}", i % 17)),
        event_kind: EventKind::Association,
    }
}

pub fn toy_config(strategy: Strategy, kinds: &[KeywordType]) -> ServerConfig {
    ServerConfig {
        listen: "127.0.0.1:0".into(),
        provisioned: 200,
        record_bytes: 128,
        d: 2,
        ring_degree: 256,
        theta: 6,
        strategy,
        keyword_types: kinds.to_vec(),
        toy: true,
        tick_interval_ms: 0,
        ..ServerConfig::default()
    }
}

pub fn start(cfg: ServerConfig) -> ServerHandle {
    let listen = cfg.listen.clone();
    serve(Arc::new(Icf::new(cfg).unwrap()), &listen).unwrap()
}

/// Client-side key material for one context and ε.
pub struct Querier {
    pub ctx: Context,
    pub sk: SecretKey,
    pub profile: Profile,
    pub bfv: Arc<Bfv>,
    rng: ChaCha20Rng,
}

impl Querier {
    pub fn new(ctx: Context, eps: usize, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (sk, profile, bfv) = profile_generation(&ctx, eps, &mut rng).unwrap();
        Querier { ctx, sk, profile, bfv, rng }
    }

    pub fn upload(&self, c: &mut IcfClient) -> bool {
        let (id, cached) = c.put_profile(&self.profile.to_bytes()).unwrap();
        assert_eq!(id, self.profile.id());
        cached
    }

    pub fn encode(&mut self, kind: KeywordType, w: &str) -> Vec<u8> {
        query(&self.ctx, &self.profile, &self.bfv, &self.sk, kind, w, &mut self.rng).unwrap().0.to_bytes()
    }

    /// A query for a profile the server has never seen.
    pub fn encode_unuploaded(mut self) -> Vec<u8> {
        self.encode(KeywordType::Suci, "nobody")
    }

    pub fn decode(&self, answer: &[u8], kind: KeywordType, w: &str) -> Vec<IcfEvent> {
        let a = WpirAnswer::from_bytes(answer, &self.bfv).unwrap();
        extract(&a, &self.bfv, &self.sk, &self.ctx, kind, w).unwrap()
    }

    pub fn resolve(&mut self, c: &mut IcfClient, kind: KeywordType, w: &str) -> p3li5_icf::Result<Vec<IcfEvent>> {
        let q = self.encode(kind, w);
        let a = c.query(kind, &q)?;
        Ok(self.decode(&a, kind, w))
    }
}
