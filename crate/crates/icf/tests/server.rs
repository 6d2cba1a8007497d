mod common;

use std::io::{Read, Write};
use std::net::TcpStream;
use std::thread;

use common::*;
use p3li5_icf::wire::{self, ErrorCode, Request, Response};
use p3li5_icf::*;
use sparsewpir_core::{IcfEvent, KeywordType};

const SUCI: KeywordType = KeywordType::Suci;
const SUPI: KeywordType = KeywordType::Supi;
const TMSI: KeywordType = KeywordType::Tmsi;

fn key(ev: &IcfEvent, kind: KeywordType) -> String {
    ev.keyword(kind).unwrap().to_owned()
}

#[test]
fn context_version_follows_resizes() {
    let server = start(toy_config(Strategy::SingleHash, &[SUCI]));
    let mut c = IcfClient::connect(server.local_addr()).unwrap();
    let v = c.get_context(SUCI).unwrap();
    server.icf().force_resize(SUCI, 400).unwrap();
    let w = c.get_context(SUCI).unwrap();
    assert_eq!(w.version, v.version + 1);
    assert!(w.provisioned >= 400);
    let err = c.get_context(TMSI).unwrap_err();
    assert!(matches!(err, IcfError::Remote { code: ErrorCode::UnsupportedKeyword, .. }));
    server.shutdown();
}

#[test]
fn stale_query_returns_the_fresh_context() {
    let server = start(toy_config(Strategy::SingleHash, &[SUCI]));
    let mut c = IcfClient::connect(server.local_addr()).unwrap();
    c.ingest(&event(1)).unwrap();
    let ctx = c.get_context(SUCI).unwrap();
    let mut q = Querier::new(ctx, 0, 1);
    q.upload(&mut c);
    let bytes = q.encode(SUCI, &key(&event(1), SUCI));
    let fresh = server.icf().force_resize(SUCI, 800).unwrap();
    match c.query(SUCI, &bytes) {
        Err(IcfError::ContextMismatch(cur)) => assert_eq!(*cur, fresh),
        other => panic!("expected a mismatch, got {other:?}"),
    }
    assert_eq!(server.icf().stats().context_mismatches, 1);
    server.shutdown();
}

#[test]
fn hundred_subscribers_by_suci() {
    let server = start(toy_config(Strategy::SingleHash, &[SUCI]));
    let mut c = IcfClient::connect(server.local_addr()).unwrap();
    let events: Vec<IcfEvent> = (0..100).map(event).collect();
    for ev in &events {
        c.ingest(ev).unwrap();
    }
    let mut q = Querier::new(c.get_context(SUCI).unwrap(), 0, 2);
    assert!(!q.upload(&mut c));
    let resolved = events.iter().filter(|ev| q.resolve(&mut c, SUCI, &key(ev, SUCI)).unwrap() == vec![(*ev).clone()]).count();
    assert_eq!(resolved, 100);
    let stats = c.stats().unwrap();
    assert_eq!(stats.queries, 100);
    assert_eq!(stats.re_encodes, 0);
    assert_eq!(stats.live_events, 100);
    server.shutdown();
}

#[test]
fn single_hash_reencodes_once_per_switch() {
    let server = start(toy_config(Strategy::SingleHash, &[SUCI, TMSI, SUPI]));
    let mut c = IcfClient::connect(server.local_addr()).unwrap();
    let events: Vec<IcfEvent> = (0..30).map(event).collect();
    for ev in &events {
        c.ingest(ev).unwrap();
    }
    let mut q = Querier::new(c.get_context(SUCI).unwrap(), 1, 3);
    q.upload(&mut c);
    assert_eq!(q.resolve(&mut c, SUCI, &key(&events[0], SUCI)).unwrap(), vec![events[0].clone()]);
    assert_eq!(c.stats().unwrap().re_encodes, 0);
    assert_eq!(q.resolve(&mut c, TMSI, &key(&events[1], TMSI)).unwrap(), vec![events[1].clone()]);
    assert_eq!(c.stats().unwrap().re_encodes, 1);
    assert_eq!(q.resolve(&mut c, TMSI, &key(&events[2], TMSI)).unwrap(), vec![events[2].clone()]);
    assert_eq!(c.stats().unwrap().re_encodes, 1);
    let order = [SUPI, SUCI, SUPI, TMSI];
    for (i, kind) in order.into_iter().enumerate() {
        let ev = &events[3 + i];
        assert_eq!(q.resolve(&mut c, kind, &key(ev, kind)).unwrap(), vec![ev.clone()]);
    }
    let stats = c.stats().unwrap();
    assert_eq!(stats.re_encodes, 5);
    assert_eq!(stats.stored_records, 30);
    server.shutdown();
}

#[test]
fn single_hash_keeps_events_missing_the_indexed_type() {
    let server = start(toy_config(Strategy::SingleHash, &[TMSI, SUCI]));
    let mut c = IcfClient::connect(server.local_addr()).unwrap();
    let mut ev = event(5);
    ev.tmsi_5g = None;
    c.ingest(&ev).unwrap();
    let stats = c.stats().unwrap();
    assert_eq!((stats.live_events, stats.stored_records), (1, 0));
    let mut q = Querier::new(c.get_context(SUCI).unwrap(), 0, 4);
    q.upload(&mut c);
    assert_eq!(q.resolve(&mut c, SUCI, &key(&ev, SUCI)).unwrap(), vec![ev.clone()]);
    server.shutdown();
}

#[test]
fn multi_hash_stores_one_record_per_type() {
    let server = start(toy_config(Strategy::MultiHash, &[SUCI, TMSI, SUPI]));
    let mut c = IcfClient::connect(server.local_addr()).unwrap();
    let events: Vec<IcfEvent> = (0..40).map(event).collect();
    for ev in &events {
        c.ingest(ev).unwrap();
    }
    let stats = c.stats().unwrap();
    assert_eq!(stats.stored_records, 120);
    assert_eq!(stats.live_events, 40);
    for (i, kind) in [SUCI, TMSI, SUPI, TMSI].into_iter().enumerate() {
        let mut q = Querier::new(c.get_context(kind).unwrap(), 1, 10 + i as u64);
        q.upload(&mut c);
        let ev = &events[i * 7];
        assert_eq!(q.resolve(&mut c, kind, &key(ev, kind)).unwrap(), vec![ev.clone()]);
    }
    assert_eq!(c.stats().unwrap().re_encodes, 0);
    server.shutdown();
}

#[test]
fn one_type_stores_one_record_per_event() {
    let server = start(toy_config(Strategy::SingleHash, &[SUPI]));
    let mut c = IcfClient::connect(server.local_addr()).unwrap();
    for i in 0..40 {
        c.ingest(&event(i)).unwrap();
    }
    assert_eq!(c.stats().unwrap().stored_records, 40);
    server.shutdown();
}

fn distributed(kinds: &[KeywordType]) -> (ServerHandle, Vec<ServerHandle>) {
    let peers: Vec<ServerHandle> = kinds.iter().map(|&k| start(toy_config(Strategy::SingleHash, &[k]))).collect();
    let mut cfg = toy_config(Strategy::Distributed, kinds);
    cfg.peers = peers.iter().map(|p| p.local_addr().to_string()).collect();
    (start(cfg), peers)
}

#[test]
fn distributed_fans_out_and_routes_by_type() {
    let (front, peers) = distributed(&[SUCI, TMSI]);
    let mut c = IcfClient::connect(front.local_addr()).unwrap();
    let events: Vec<IcfEvent> = (0..25).map(event).collect();
    for ev in &events {
        c.ingest(ev).unwrap();
    }
    for p in &peers {
        assert_eq!(p.icf().stats().live_events, 25);
    }
    let addr = front.local_addr();
    let workers: Vec<_> = [SUCI, TMSI]
        .into_iter()
        .enumerate()
        .map(|(i, kind)| {
            let events = events.clone();
            thread::spawn(move || {
                let mut c = IcfClient::connect(addr).unwrap();
                let mut q = Querier::new(c.get_context(kind).unwrap(), 0, 20 + i as u64);
                q.upload(&mut c);
                events[..5].iter().all(|ev| q.resolve(&mut c, kind, &key(ev, kind)).unwrap() == vec![ev.clone()])
            })
        })
        .collect();
    for w in workers {
        assert!(w.join().unwrap());
    }
    let stats = c.stats().unwrap();
    assert_eq!(stats.re_encodes, 0);
    assert_eq!(stats.queries, 10);
    front.shutdown();
    for p in peers {
        p.shutdown();
    }
}

#[test]
fn distributed_isolates_a_dead_peer() {
    let (front, mut peers) = distributed(&[SUCI, TMSI]);
    let mut c = IcfClient::connect(front.local_addr()).unwrap();
    c.ingest(&event(1)).unwrap();
    let mut q = Querier::new(c.get_context(SUCI).unwrap(), 0, 30);
    q.upload(&mut c);
    peers.pop().unwrap().shutdown();
    assert!(matches!(c.get_context(TMSI), Err(IcfError::PeerUnreachable { kind: TMSI, .. })));
    let tmsi = key(&event(1), TMSI);
    let bytes = q.encode(SUCI, &tmsi);
    assert!(matches!(c.query(TMSI, &bytes), Err(IcfError::PeerUnreachable { .. })));
    assert_eq!(q.resolve(&mut c, SUCI, &key(&event(1), SUCI)).unwrap(), vec![event(1)]);
    assert!(matches!(c.ingest(&event(2)), Err(IcfError::PeerUnreachable { kind: TMSI, .. })));
    front.shutdown();
    for p in peers {
        p.shutdown();
    }
}

#[test]
fn strategies_agree_on_results() {
    let script: Vec<(KeywordType, u64)> = vec![(SUPI, 3), (TMSI, 4), (SUPI, 9), (TMSI, 99), (SUPI, 12), (TMSI, 3)];
    let mut outcomes = Vec::new();
    let (front, peers) = distributed(&[SUPI, TMSI]);
    let servers = vec![
        start(toy_config(Strategy::SingleHash, &[SUPI, TMSI])),
        start(toy_config(Strategy::MultiHash, &[SUPI, TMSI])),
        front,
    ];
    for s in &servers {
        let mut c = IcfClient::connect(s.local_addr()).unwrap();
        for i in 0..20 {
            c.ingest(&event(i)).unwrap();
        }
        let mut out = Vec::new();
        for &(kind, i) in &script {
            let mut q = Querier::new(c.get_context(kind).unwrap(), 1, i);
            q.upload(&mut c);
            out.push(q.resolve(&mut c, kind, &key(&event(i), kind)).unwrap());
        }
        outcomes.push(out);
    }
    assert!(outcomes[0].iter().filter(|r| r.is_empty()).count() == 1);
    assert_eq!(outcomes[0], outcomes[1]);
    assert_eq!(outcomes[1], outcomes[2]);
    for s in servers.into_iter().chain(peers) {
        s.shutdown();
    }
}

#[test]
fn queries_proceed_during_ingestion() {
    let server = start(toy_config(Strategy::SingleHash, &[SUCI]));
    let addr = server.local_addr();
    let mut c = IcfClient::connect(addr).unwrap();
    for i in 0..20 {
        c.ingest(&event(i)).unwrap();
    }
    let feeder = thread::spawn(move || {
        let mut c = IcfClient::connect(addr).unwrap();
        for i in 20..150 {
            c.ingest(&event(i)).unwrap();
        }
    });
    let mut q = Querier::new(c.get_context(SUCI).unwrap(), 0, 5);
    q.upload(&mut c);
    for i in 0..20 {
        let ev = event(i);
        assert_eq!(q.resolve(&mut c, SUCI, &key(&ev, SUCI)).unwrap(), vec![ev]);
    }
    feeder.join().unwrap();
    assert_eq!(c.stats().unwrap().live_events, 150);
    server.shutdown();
}

#[test]
fn protocol_errors_are_reported_in_band() {
    let server = start(toy_config(Strategy::SingleHash, &[SUCI]));
    let mut s = TcpStream::connect(server.local_addr()).unwrap();
    wire::write_frame(&mut s, 0x7f, b"junk").unwrap();
    let (ty, body) = wire::read_frame(&mut s).unwrap().unwrap();
    assert!(matches!(Response::decode(ty, body).unwrap(), Response::Error { code: ErrorCode::Malformed, .. }));
    let (ty, body) = Request::Query { kind: SUCI, query: vec![0xee; 64] }.encode();
    wire::write_frame(&mut s, ty, &body).unwrap();
    let (ty, body) = wire::read_frame(&mut s).unwrap().unwrap();
    assert!(matches!(Response::decode(ty, body).unwrap(), Response::Error { code: ErrorCode::Malformed, .. }));
    let mut c = IcfClient::connect(server.local_addr()).unwrap();
    let q = Querier::new(c.get_context(SUCI).unwrap(), 0, 6).encode_unuploaded();
    assert!(matches!(c.query(SUCI, &q), Err(IcfError::Remote { code: ErrorCode::UnknownProfile, .. })));
    assert!(matches!(c.ingest_line("{\"supi\":\"\"}"), Err(IcfError::Remote { code: ErrorCode::Malformed, .. })));
    // A partial frame followed by a hang-up must not take the server down.
    let mut s = TcpStream::connect(server.local_addr()).unwrap();
    s.write_all(&[0, 0, 1]).unwrap();
    drop(s);
    let mut s = TcpStream::connect(server.local_addr()).unwrap();
    s.write_all(&[0, 0, 0, 1, wire::msg::STATS]).unwrap();
    let mut head = [0u8; 5];
    s.read_exact(&mut head).unwrap();
    assert_eq!(head[4], wire::msg::STATS_REPORT);
    server.shutdown();
}

#[test]
fn metrics_are_logged_as_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.csv");
    let mut cfg = toy_config(Strategy::MultiHash, &[SUCI, SUPI]);
    cfg.metrics_csv = Some(path.clone());
    cfg.metrics_interval_ms = 50;
    let server = start(cfg);
    let mut c = IcfClient::connect(server.local_addr()).unwrap();
    for i in 0..5 {
        c.ingest(&event(i)).unwrap();
    }
    thread::sleep(std::time::Duration::from_millis(200));
    server.shutdown();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert!(header.contains(&"re_encodes") && header.contains(&"live_events"));
    let last: Vec<&str> = text.lines().last().unwrap().split(',').collect();
    assert_eq!(last.len(), header.len());
    let col = header.iter().position(|h| *h == "stored_records").unwrap();
    assert_eq!(last[col], "10");
}

#[test]
fn eviction_ticks_remove_expired_events() {
    let server = start(toy_config(Strategy::MultiHash, &[SUCI, SUPI]));
    let icf = server.icf();
    for i in 0..10 {
        icf.ingest(&event(i)).unwrap();
    }
    let late = event(0).assoc_start + chrono::Duration::hours(2);
    assert_eq!(icf.tick(late).unwrap(), 10);
    let s = icf.stats();
    assert_eq!((s.live_events, s.stored_records), (0, 0));
    server.shutdown();
}
