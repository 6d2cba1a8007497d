use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::Arc;
use std::thread;

use chrono::{Duration, TimeZone, Utc};
use p3li5_icf::wire::{self, Request};
use p3li5_icf::{serve, Icf, IcfClient, ServerConfig, ServerHandle, Strategy};
use p3li5_lea::*;
use parking_lot::Mutex;
use rand::rngs::StdRng;
use rand::SeedableRng;
use sparsewpir_core::{EventKind, IcfEvent, KeywordType, WpirQuery};

const SUCI: KeywordType = KeywordType::Suci;
const SUPI: KeywordType = KeywordType::Supi;
const TMSI: KeywordType = KeywordType::Tmsi;

fn event(i: u64) -> IcfEvent {
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

fn capture_of(ev: &IcfEvent, kind: KeywordType) -> Capture {
    let mut c = Capture { cell_id: ev.cell_id.clone(), timestamp: Some(ev.assoc_start), ..Capture::default() };
    let v = Some(ev.keyword(kind).unwrap().to_owned());
    match kind {
        KeywordType::Supi => c.supi = v,
        KeywordType::Suci => c.suci = v,
        KeywordType::Guti => c.guti_5g = v,
        KeywordType::Tmsi => c.tmsi_5g = v,
    }
    c
}

fn server(strategy: Strategy, kinds: &[KeywordType], events: u64) -> ServerHandle {
    let cfg = ServerConfig {
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
    };
    let h = serve(Arc::new(Icf::new(cfg).unwrap()), "127.0.0.1:0").unwrap();
    for i in 0..events {
        h.icf().ingest(&event(i)).unwrap();
    }
    h
}

fn lea(addr: SocketAddr, store: &tempfile::TempDir, seed: u64) -> LeaClient {
    LeaClient::new(IcfClient::connect(addr).unwrap(), KeyStore::open(store.path()).unwrap(), StdRng::seed_from_u64(seed))
}

#[test]
fn suci_capture_resolves_to_its_subscriber() {
    let s = server(Strategy::SingleHash, &[SUCI], 30);
    let dir = tempfile::tempdir().unwrap();
    let mut c = lea(s.local_addr(), &dir, 1);
    let r = c.resolve(&capture_of(&event(7), SUCI), 0, SUCI).unwrap();
    assert_eq!(r.events, vec![event(7)]);
    assert_eq!(r.events[0].supi, "imsi-001010000000007");
    assert_eq!(r.attempts, 1);
    assert!(r.uploaded_profile);
    let absent = Capture { suci: Some("suci-0-001-01-0-0-0-ffffffffffff".into()), ..Capture::default() };
    assert!(c.resolve(&absent, 0, SUCI).unwrap().events.is_empty());
    assert!(matches!(c.resolve(&absent, 0, TMSI), Err(LeaError::KeywordMissing(TMSI))));
    assert!(matches!(c.resolve(&capture_of(&event(1), SUCI), 3, SUCI), Err(LeaError::EpsilonOutOfRange { eps: 3, d: 2 })));
    s.shutdown();
}

#[test]
fn reverse_lookup_returns_temporary_identifiers() {
    let s = server(Strategy::MultiHash, &[SUCI, SUPI], 30);
    let dir = tempfile::tempdir().unwrap();
    let mut c = lea(s.local_addr(), &dir, 2);
    let ev = event(11);
    let r = c.resolve(&capture_of(&ev, SUPI), 1, SUPI).unwrap();
    assert_eq!(r.events.len(), 1);
    assert_eq!(r.events[0].tmsi_5g, ev.tmsi_5g);
    assert_eq!(r.events[0].guti_5g, ev.guti_5g);
    assert_eq!(r.events[0].suci, ev.suci);
    s.shutdown();
}

#[test]
fn profiles_are_uploaded_once_and_reused_from_disk() {
    let s = server(Strategy::SingleHash, &[SUCI], 20);
    let dir = tempfile::tempdir().unwrap();
    let mut c = lea(s.local_addr(), &dir, 3);
    for i in 0..5 {
        let r = c.resolve(&capture_of(&event(i), SUCI), 1, SUCI).unwrap();
        assert_eq!(r.uploaded_profile, i == 0);
    }
    let st = s.icf().stats();
    assert_eq!((st.profiles, st.profile_hits), (1, 0));
    assert_eq!(c.store().len(), 1);
    drop(c);
    // A new session finds the profile on disk; the server recognises the upload.
    let mut c = lea(s.local_addr(), &dir, 4);
    c.resolve(&capture_of(&event(9), SUCI), 1, SUCI).unwrap();
    let st = s.icf().stats();
    assert_eq!((st.profiles, st.profile_hits), (1, 1));
    assert_eq!(c.store().len(), 1);
    let key_files = std::fs::read_dir(dir.path()).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "key")).count();
    assert_eq!(key_files, 1);
    s.shutdown();
}

#[test]
fn resize_between_fetch_and_query_costs_one_retry() {
    let s = server(Strategy::SingleHash, &[SUCI], 20);
    let dir = tempfile::tempdir().unwrap();
    let mut c = lea(s.local_addr(), &dir, 5);
    let before = c.context(SUCI).unwrap();
    s.icf().force_resize(SUCI, 800).unwrap();
    let r = c.resolve(&capture_of(&event(3), SUCI), 0, SUCI).unwrap();
    assert_eq!(r.events, vec![event(3)]);
    assert_eq!(r.attempts, 2);
    assert_eq!(r.context.version, before.version + 1);
    assert_eq!(s.icf().stats().context_mismatches, 1);
    s.shutdown();
}

#[test]
fn batch_of_a_hundred() {
    let s = server(Strategy::SingleHash, &[SUCI], 100);
    let dir = tempfile::tempdir().unwrap();
    let mut c = lea(s.local_addr(), &dir, 6);
    let caps: Vec<Capture> = (0..100).map(|i| capture_of(&event(i), SUCI)).collect();
    let report = batch_resolve(&mut c, &caps, 0, SUCI);
    assert_eq!(report.resolved(), 100);
    assert_eq!(report.errors(), 0);
    let leak = report.leakage.clone().unwrap();
    assert_eq!((leak.records, leak.eta, leak.max_leakage_bits), (100, 1, 0.0));
    let mut out = Vec::new();
    report.write_rows(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().count(), 101);
    assert!(text.lines().next().unwrap().starts_with("index,keyword_type,epsilon,status"));
    assert!(report.summary_csv().lines().nth(1).unwrap().starts_with("100,100,0,0,0,100,1,"));
    s.shutdown();
}

#[test]
fn batch_counts_match_the_oracle() {
    let s = server(Strategy::MultiHash, &[SUCI, TMSI], 40);
    let dir = tempfile::tempdir().unwrap();
    let mut c = lea(s.local_addr(), &dir, 7);
    let caps: Vec<Capture> = (20..60).map(|i| capture_of(&event(i), TMSI)).collect();
    let oracle = caps.iter().filter(|cap| !s.icf().lookup(TMSI, cap.keyword(TMSI).unwrap()).unwrap().is_empty()).count();
    assert_eq!(oracle, 20);
    let mut with_bad = caps.clone();
    with_bad.push(capture_of(&event(1), SUCI));
    let report = batch_resolve(&mut c, &with_bad, 1, TMSI);
    assert_eq!(report.resolved(), oracle);
    assert_eq!(report.count(Status::NotFound), 20);
    assert_eq!(report.errors(), 1);
    let empty = batch_resolve(&mut c, &[], 0, TMSI);
    assert!(empty.rows.is_empty() && empty.leakage.is_none());
    assert_eq!(empty.summary_csv(), "queries,resolved,not_found,errors\n0,0,0,0\n");
    s.shutdown();
}

/// Forwards one connection to `upstream`, recording what the client sends.
fn tap(upstream: SocketAddr) -> (SocketAddr, Arc<Mutex<Vec<u8>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        let (mut down, _) = listener.accept().unwrap();
        let mut up = TcpStream::connect(upstream).unwrap();
        let (mut down2, mut up2) = (down.try_clone().unwrap(), up.try_clone().unwrap());
        thread::spawn(move || {
            let _ = std::io::copy(&mut up2, &mut down2);
        });
        let mut buf = [0u8; 1 << 16];
        loop {
            match down.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    log.lock().extend_from_slice(&buf[..n]);
                    if up.write_all(&buf[..n]).is_err() {
                        break;
                    }
                }
            }
        }
        let _ = up.shutdown(std::net::Shutdown::Both);
    });
    (addr, seen)
}

#[test]
fn only_hints_and_selectors_leave_the_client() {
    let s = server(Strategy::SingleHash, &[SUCI], 20);
    let (addr, seen) = tap(s.local_addr());
    let dir = tempfile::tempdir().unwrap();
    let mut c = lea(addr, &dir, 8);
    let ev = event(4);
    let cap = capture_of(&ev, SUCI);
    assert_eq!(c.resolve(&cap, 1, SUCI).unwrap().events, vec![ev.clone()]);
    drop(c);
    thread::sleep(std::time::Duration::from_millis(50));
    let bytes = seen.lock().clone();
    let contains = |needle: &[u8]| bytes.windows(needle.len()).any(|w| w == needle);
    for field in [cap.suci.as_deref().unwrap(), ev.supi.as_str(), ev.cell_id.as_deref().unwrap()] {
        assert!(!contains(field.as_bytes()), "{field} crossed the wire");
    }
    assert!(!contains(&ev.assoc_start.timestamp_micros().to_le_bytes()));
    let mut r = bytes.as_slice();
    let mut types = Vec::new();
    while let Some((ty, body)) = wire::read_frame(&mut r).unwrap() {
        if let Request::Query { query, .. } = Request::decode(ty, body.clone()).unwrap() {
            let dir_store = KeyStore::open(dir.path()).unwrap();
            let ctx = s.icf().context(SUCI).unwrap();
            let session = dir_store.load(&ctx, 1).unwrap().unwrap();
            let q = WpirQuery::from_bytes(&query, &session.bfv).unwrap();
            assert_eq!(q.to_bytes(), query);
            assert_eq!(q.hint.len(), 1);
            assert_eq!(q.selectors.len(), 1);
        }
        types.push(ty);
    }
    assert_eq!(types, vec![wire::msg::GET_CONTEXT, wire::msg::PUT_PROFILE, wire::msg::QUERY]);
    s.shutdown();
}
